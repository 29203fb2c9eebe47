//! Textual sequence format for fixtures: one micro-op per line, AT&T-like
//! operand order (sources first, destination last). `#` starts a comment,
//! `name:` defines a label. Parse errors carry the 1-based line number.
//!
//! ```text
//! entry:
//!     add $1, %gp2
//!     sub %gp1, %gp2
//!     load 8(%gp0,%gp1,4), %gp3
//!     load %ss:(%gp0), %gp1
//!     store $0x42000, (%gp4)
//!     movapd %fp0, %fp1
//!     cpuid
//!     bound %gp1, $256
//!     privread %cr4, %gp1
//!     brc %gp1, next, done
//! ```

use std::collections::BTreeMap;

use super::{InstrSeq, IsaError, MemOperand, MicroOp, PrivReg, Register};

/// Selector ids used by the textual form; environments map them to
/// descriptors.
pub const SEL_DS: u16 = 1;
pub const SEL_SS: u16 = 2;
pub const SEL_CS: u16 = 3;
pub const SEL_ES: u16 = 4;

pub fn parse_seq(text: &str) -> Result<InstrSeq, IsaError> {
    // First pass: strip comments, collect labels against op indices.
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    let mut lines: Vec<(usize, String)> = Vec::new();
    let mut op_index = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim().to_string();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_suffix(':') {
            let name = name.trim();
            if name.is_empty() {
                return err(lineno + 1, "empty label");
            }
            labels.insert(name.to_string(), op_index);
            continue;
        }
        lines.push((lineno + 1, line));
        op_index += 1;
    }

    let resolve = |lineno: usize, name: &str| -> Result<usize, IsaError> {
        labels.get(name).copied().ok_or_else(|| IsaError::Parse {
            line: lineno,
            msg: format!("unknown label `{name}`"),
        })
    };

    let mut ops = Vec::with_capacity(lines.len());
    for (lineno, line) in &lines {
        let lineno = *lineno;
        let (mnemonic, rest) = match line.split_once(char::is_whitespace) {
            Some((m, r)) => (m, r.trim()),
            None => (line.as_str(), ""),
        };
        let args = split_args(rest);
        let op = match mnemonic {
            "add" | "sub" => {
                let [src, dst] = two(lineno, &args)?;
                let dst = parse_reg(lineno, dst)?;
                if let Some(imm) = parse_imm_opt(lineno, src)? {
                    if mnemonic == "add" {
                        MicroOp::add_imm(dst, imm)
                    } else {
                        MicroOp::sub_imm(dst, imm)
                    }
                } else {
                    let src = parse_reg(lineno, src)?;
                    if mnemonic == "add" {
                        MicroOp::add(dst, dst, src)
                    } else {
                        MicroOp::sub(dst, dst, src)
                    }
                }
            }
            "load" => {
                let [mem, dst] = two(lineno, &args)?;
                MicroOp::load(parse_reg(lineno, dst)?, parse_mem(lineno, mem)?)
            }
            "store" => {
                let [src, mem] = two(lineno, &args)?;
                let mem = parse_mem(lineno, mem)?;
                if let Some(imm) = parse_imm_opt(lineno, src)? {
                    MicroOp::store_imm(imm, mem)
                } else {
                    MicroOp::store_reg(parse_reg(lineno, src)?, mem)
                }
            }
            "movapd" => {
                let [src, dst] = two(lineno, &args)?;
                MicroOp::fp_movapd(parse_reg(lineno, dst)?, parse_reg(lineno, src)?)
            }
            "addpd" | "mulpd" => {
                let [src, dst] = two(lineno, &args)?;
                let src = parse_reg(lineno, src)?;
                let dst = parse_reg(lineno, dst)?;
                if mnemonic == "addpd" {
                    MicroOp::fp_addpd(dst, dst, src)
                } else {
                    MicroOp::fp_mulpd(dst, dst, src)
                }
            }
            "cpuid" => {
                if !args.is_empty() {
                    return err(lineno, "cpuid takes no operands");
                }
                MicroOp::cpuid()
            }
            "bound" => {
                let [idx, limit] = two(lineno, &args)?;
                let limit = parse_imm_opt(lineno, limit)?.ok_or_else(|| IsaError::Parse {
                    line: lineno,
                    msg: "bound limit must be an immediate".into(),
                })?;
                MicroOp::bound_check(parse_reg(lineno, idx)?, limit as u64)
            }
            "privread" => {
                let [which, dst] = two(lineno, &args)?;
                let which = match which {
                    "%cr4" => PrivReg::Cr4,
                    "%msr" => PrivReg::Msr,
                    other => {
                        return err(lineno, &format!("unknown privileged register `{other}`"));
                    }
                };
                MicroOp::priv_read(parse_reg(lineno, dst)?, which)
            }
            "brc" => {
                let [cond, pred, actual] = three(lineno, &args)?;
                MicroOp::branch_cond(
                    parse_reg(lineno, cond)?,
                    resolve(lineno, pred)?,
                    resolve(lineno, actual)?,
                )
            }
            "bri" => {
                let [target, pred] = two(lineno, &args)?;
                MicroOp::branch_indirect(parse_reg(lineno, target)?, resolve(lineno, pred)?)
            }
            other => return err(lineno, &format!("unknown mnemonic `{other}`")),
        };
        ops.push(op);
    }

    InstrSeq::with_labels(ops, labels)
}

fn err<T>(line: usize, msg: &str) -> Result<T, IsaError> {
    Err(IsaError::Parse {
        line,
        msg: msg.to_string(),
    })
}

/// Split on commas that are not inside parentheses (memory operands carry
/// commas of their own).
fn split_args(rest: &str) -> Vec<&str> {
    if rest.is_empty() {
        return Vec::new();
    }
    let mut args = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    for (i, c) in rest.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                args.push(rest[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    args.push(rest[start..].trim());
    args
}

fn two<'a>(line: usize, args: &[&'a str]) -> Result<[&'a str; 2], IsaError> {
    match args {
        [a, b] => Ok([a, b]),
        _ => err(line, &format!("expected 2 operands, found {}", args.len())),
    }
}

fn three<'a>(line: usize, args: &[&'a str]) -> Result<[&'a str; 3], IsaError> {
    match args {
        [a, b, c] => Ok([a, b, c]),
        _ => err(line, &format!("expected 3 operands, found {}", args.len())),
    }
}

fn parse_reg(line: usize, s: &str) -> Result<Register, IsaError> {
    let body = s.strip_prefix('%').ok_or_else(|| IsaError::Parse {
        line,
        msg: format!("expected register, found `{s}`"),
    })?;
    let (space, idx) = if let Some(i) = body.strip_prefix("gp") {
        (false, i)
    } else if let Some(i) = body.strip_prefix("fp") {
        (true, i)
    } else {
        return err(line, &format!("unknown register `{s}`"));
    };
    let idx: u8 = idx.parse().map_err(|_| IsaError::Parse {
        line,
        msg: format!("bad register index in `{s}`"),
    })?;
    if idx >= super::GP_COUNT {
        return err(line, &format!("register index out of range in `{s}`"));
    }
    Ok(if space {
        Register::fp(idx)
    } else {
        Register::gp(idx)
    })
}

fn parse_imm_opt(line: usize, s: &str) -> Result<Option<i64>, IsaError> {
    let Some(body) = s.strip_prefix('$') else {
        return Ok(None);
    };
    let (neg, body) = match body.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, body),
    };
    let value = if let Some(hex) = body.strip_prefix("0x") {
        i64::from_str_radix(hex, 16)
    } else {
        body.parse()
    };
    match value {
        Ok(v) => Ok(Some(if neg { -v } else { v })),
        Err(_) => err(line, &format!("bad immediate `{s}`")),
    }
}

/// `[selector:]displacement(base[,index[,scale]])`
fn parse_mem(line: usize, s: &str) -> Result<MemOperand, IsaError> {
    let (selector, s) = match s.split_once(':') {
        Some((sel, rest)) => {
            let sel = match sel {
                "%ds" => SEL_DS,
                "%ss" => SEL_SS,
                "%cs" => SEL_CS,
                "%es" => SEL_ES,
                other => {
                    return err(line, &format!("unknown segment `{other}`"));
                }
            };
            (Some(sel), rest)
        }
        None => (None, s),
    };
    let open = s.find('(').ok_or_else(|| IsaError::Parse {
        line,
        msg: format!("expected memory operand, found `{s}`"),
    })?;
    if !s.ends_with(')') {
        return err(line, &format!("unterminated memory operand `{s}`"));
    }
    let disp_str = &s[..open];
    let displacement = if disp_str.is_empty() {
        0
    } else {
        let (neg, body) = match disp_str.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, disp_str),
        };
        let v = if let Some(hex) = body.strip_prefix("0x") {
            i64::from_str_radix(hex, 16)
        } else {
            body.parse()
        };
        match v {
            Ok(v) => {
                if neg {
                    -v
                } else {
                    v
                }
            }
            Err(_) => return err(line, &format!("bad displacement `{disp_str}`")),
        }
    };
    let inner = &s[open + 1..s.len() - 1];
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    let (base, index, scale) = match parts.as_slice() {
        [b] => (parse_reg(line, b)?, None, 1),
        [b, i] => (parse_reg(line, b)?, Some(parse_reg(line, i)?), 1),
        [b, i, sc] => {
            let scale: u8 = sc.parse().map_err(|_| IsaError::Parse {
                line,
                msg: format!("bad scale `{sc}`"),
            })?;
            if ![1, 2, 4, 8].contains(&scale) {
                return err(line, &format!("scale must be 1, 2, 4 or 8, found {scale}"));
            }
            (parse_reg(line, b)?, Some(parse_reg(line, i)?), scale)
        }
        _ => return err(line, &format!("bad memory operand `{s}`")),
    };
    Ok(MemOperand {
        base,
        index,
        scale,
        displacement,
        selector,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{ActualTarget, OpKind};

    #[test]
    fn parses_a_representative_listing() {
        let text = "\
# windowing
entry:
    load (%gp0), %gp1
    movapd %fp0, %fp1
    addpd %fp1, %fp0
    cpuid
# primitive
    load %ds:0x20(%gp1,%gp2,4), %gp3
    store $0x42000, (%gp4)
    bound %gp2, $256
    add $1, %gp3
    sub %gp1, %gp3
    privread %cr4, %gp5
done:
";
        let seq = parse_seq(text).unwrap();
        assert_eq!(seq.len(), 10);
        assert_eq!(seq.labels["entry"], 0);
        assert_eq!(seq.labels["done"], 10);
        assert_eq!(seq.ops[0].kind, OpKind::Load);
        let mem = seq.ops[4].mem.unwrap();
        assert_eq!(mem.selector, Some(SEL_DS));
        assert_eq!(mem.displacement, 0x20);
        assert_eq!(mem.scale, 4);
        assert_eq!(seq.ops[5].imm, Some(0x42000));
    }

    #[test]
    fn branch_labels_resolve() {
        let text = "\
    brc %gp0, body, done
body:
    add $1, %gp1
done:
";
        let seq = parse_seq(text).unwrap();
        let meta = seq.ops[0].branch.unwrap();
        assert_eq!(meta.predicted, 1);
        assert_eq!(meta.actual, ActualTarget::Index(2));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "add $1, %gp0\n\nfrobnicate %gp1\n";
        match parse_seq(text).unwrap_err() {
            IsaError::Parse { line, msg } => {
                assert_eq!(line, 3);
                assert!(msg.contains("frobnicate"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_label_is_an_error() {
        let text = "brc %gp0, nowhere, nowhere\n";
        assert!(matches!(
            parse_seq(text).unwrap_err(),
            IsaError::Parse { line: 1, .. }
        ));
    }
}
