//! Report rendering: every experiment emits a column-ordered table that can
//! be written as CSV (header row first) or JSON lines (one record per row).
//! Rendering is deterministic: same rows in, same bytes out.

use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

impl Report {
    pub fn new(columns: Vec<&'static str>) -> Self {
        Report {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row arity mismatch");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(csv_cell).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            // serde_json maps iterate sorted, so key order is stable.
            let record: serde_json::Map<String, Value> = self
                .columns
                .iter()
                .zip(row)
                .map(|(c, v)| (c.to_string(), v.clone()))
                .collect();
            out.push_str(&Value::Object(record).to_string());
            out.push('\n');
        }
        out
    }
}

fn csv_cell(v: &Value) -> String {
    let raw = match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    if raw.contains(',') || raw.contains('"') || raw.contains('\n') {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn csv_and_jsonl_render_stably() {
        let mut r = Report::new(vec!["variant", "outcome", "window"]);
        r.push_row(vec![json!("pte-us"), json!("Y"), json!(145)]);
        r.push_row(vec![json!("ds,null"), json!("N"), json!(0)]);
        assert_eq!(
            r.to_csv(),
            "variant,outcome,window\npte-us,Y,145\n\"ds,null\",N,0\n"
        );
        assert_eq!(
            r.to_jsonl(),
            "{\"outcome\":\"Y\",\"variant\":\"pte-us\",\"window\":145}\n{\"outcome\":\"N\",\"variant\":\"ds,null\",\"window\":0}\n"
        );
        // Byte-identical on re-render.
        assert_eq!(r.to_csv(), r.to_csv());
        assert_eq!(r.to_jsonl(), r.to_jsonl());
    }
}
