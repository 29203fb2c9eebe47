//! Environment fixtures as structured text. The writer emits a canonical
//! form (sorted maps, fixed field order) and the parser accepts exactly
//! that form, so fixtures round-trip bit-exactly.

use std::collections::BTreeMap;

use super::{
    AddrMode, CpuMode, FeatureState, Level, MemEnvironment, PageTableEntry, SegType,
    SegmentDescriptor,
};
use crate::isa::IsaError;

const HEADER: &str = "specprobe-env v1";

pub fn write_env(env: &MemEnvironment) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    out.push_str(&format!(
        "mode {} {}\n",
        match env.cpu_mode {
            CpuMode::User => "user",
            CpuMode::Supervisor => "supervisor",
        },
        match env.addr_mode {
            AddrMode::Bits32 => "32",
            AddrMode::Bits64 => "64",
        }
    ));
    let f = &env.feature_state;
    out.push_str(&format!(
        "features smap={} pke={} cr0ts={}\n",
        f.smap_enabled as u8, f.pke_enabled as u8, f.cr0_ts as u8
    ));
    if !f.pkru_denied.is_empty() {
        let keys: Vec<String> = f.pkru_denied.iter().map(|k| k.to_string()).collect();
        out.push_str(&format!("pkru-deny {}\n", keys.join(" ")));
    }
    out.push_str(&format!("cr4 {:#x}\n", env.cr4_value));
    out.push_str(&format!("msr {:#x}\n", env.msr_value));
    for (&page, pte) in &env.page_tables {
        let level = match env.residency.get(&page) {
            Some(Level::L1) => "l1",
            Some(Level::L2) => "l2",
            Some(Level::Llc) => "llc",
            Some(Level::Mem) | None => "mem",
        };
        out.push_str(&format!(
            "page {:#x} present={} rw={} us={} reserved={} nx={} pkey={} res={} dtlb={} stlb={} psc={}\n",
            page,
            pte.present as u8,
            pte.rw as u8,
            pte.us as u8,
            pte.reserved_set as u8,
            pte.nx as u8,
            pte.pkey,
            level,
            env.dtlb.contains(&page) as u8,
            env.stlb.contains(&page) as u8,
            env.psc.contains(&page) as u8,
        ));
    }
    for (&sel, d) in &env.segments {
        out.push_str(&format!(
            "segment {:#x} base={:#x} limit={:#x} type={} present={} dpl={} null={}\n",
            sel,
            d.base,
            d.limit,
            match d.seg_type {
                SegType::DataRw => "data-rw",
                SegType::DataRo => "data-ro",
                SegType::CodeXo => "code-xo",
            },
            d.present as u8,
            d.dpl,
            d.null_selector as u8,
        ));
    }
    for (&addr, &value) in &env.mem_values {
        out.push_str(&format!("value {addr:#x} {value:#x}\n"));
    }
    out
}

pub fn parse_env(text: &str) -> Result<MemEnvironment, IsaError> {
    let mut env = MemEnvironment {
        feature_state: FeatureState::default(),
        ..MemEnvironment::default()
    };
    let mut lines = text.lines().enumerate();
    let err = |line: usize, msg: String| IsaError::Parse {
        line: line + 1,
        msg,
    };

    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        Some((n, h)) => return Err(err(n, format!("bad header `{h}`"))),
        None => return Err(err(0, "empty fixture".into())),
    }

    for (n, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut words = line.split_whitespace();
        let tag = words.next().unwrap();
        let rest: Vec<&str> = words.collect();
        match tag {
            "mode" => {
                let [m, a] = rest.as_slice() else {
                    return Err(err(n, "mode takes two fields".into()));
                };
                env.cpu_mode = match *m {
                    "user" => CpuMode::User,
                    "supervisor" => CpuMode::Supervisor,
                    other => return Err(err(n, format!("bad cpu mode `{other}`"))),
                };
                env.addr_mode = match *a {
                    "32" => AddrMode::Bits32,
                    "64" => AddrMode::Bits64,
                    other => return Err(err(n, format!("bad address mode `{other}`"))),
                };
            }
            "features" => {
                let kv = parse_kv(n, &rest)?;
                env.feature_state.smap_enabled = kv_bool(n, &kv, "smap")?;
                env.feature_state.pke_enabled = kv_bool(n, &kv, "pke")?;
                env.feature_state.cr0_ts = kv_bool(n, &kv, "cr0ts")?;
            }
            "pkru-deny" => {
                for k in &rest {
                    let key: u8 = k
                        .parse()
                        .map_err(|_| err(n, format!("bad protection key `{k}`")))?;
                    env.feature_state.pkru_denied.insert(key);
                }
            }
            "cr4" => {
                env.cr4_value = parse_num(n, rest.first().copied().unwrap_or(""))?;
            }
            "msr" => {
                env.msr_value = parse_num(n, rest.first().copied().unwrap_or(""))?;
            }
            "page" => {
                let Some((addr_str, fields)) = rest.split_first() else {
                    return Err(err(n, "page needs an address".into()));
                };
                let page = parse_num(n, addr_str)?;
                let kv = parse_kv(n, fields)?;
                let pte = PageTableEntry {
                    present: kv_bool(n, &kv, "present")?,
                    rw: kv_bool(n, &kv, "rw")?,
                    us: kv_bool(n, &kv, "us")?,
                    reserved_set: kv_bool(n, &kv, "reserved")?,
                    nx: kv_bool(n, &kv, "nx")?,
                    pkey: kv_num(n, &kv, "pkey")? as u8,
                };
                env.page_tables.insert(page, pte);
                let level = match kv.get("res").copied() {
                    Some("l1") => Some(Level::L1),
                    Some("l2") => Some(Level::L2),
                    Some("llc") => Some(Level::Llc),
                    Some("mem") => Some(Level::Mem),
                    Some(other) => return Err(err(n, format!("bad residency `{other}`"))),
                    None => None,
                };
                if let Some(level) = level {
                    if level != Level::Mem {
                        env.residency.insert(page, level);
                    }
                }
                if kv_bool(n, &kv, "dtlb")? {
                    env.dtlb.insert(page);
                }
                if kv_bool(n, &kv, "stlb")? {
                    env.stlb.insert(page);
                }
                if kv_bool(n, &kv, "psc")? {
                    env.psc.insert(page);
                }
            }
            "segment" => {
                let Some((sel_str, fields)) = rest.split_first() else {
                    return Err(err(n, "segment needs a selector".into()));
                };
                let sel = parse_num(n, sel_str)? as u16;
                let kv = parse_kv(n, fields)?;
                let seg_type = match kv.get("type").copied() {
                    Some("data-rw") => SegType::DataRw,
                    Some("data-ro") => SegType::DataRo,
                    Some("code-xo") => SegType::CodeXo,
                    other => return Err(err(n, format!("bad segment type {other:?}"))),
                };
                env.segments.insert(
                    sel,
                    SegmentDescriptor {
                        base: kv_num(n, &kv, "base")?,
                        limit: kv_num(n, &kv, "limit")?,
                        seg_type,
                        present: kv_bool(n, &kv, "present")?,
                        dpl: kv_num(n, &kv, "dpl")? as u8,
                        null_selector: kv_bool(n, &kv, "null")?,
                    },
                );
            }
            "value" => {
                let [addr, value] = rest.as_slice() else {
                    return Err(err(n, "value takes address and value".into()));
                };
                env.mem_values
                    .insert(parse_num(n, addr)?, parse_num(n, value)?);
            }
            other => return Err(err(n, format!("unknown directive `{other}`"))),
        }
    }
    Ok(env)
}

fn parse_kv<'a>(line: usize, fields: &[&'a str]) -> Result<BTreeMap<&'a str, &'a str>, IsaError> {
    let mut kv = BTreeMap::new();
    for f in fields {
        let (k, v) = f.split_once('=').ok_or_else(|| IsaError::Parse {
            line: line + 1,
            msg: format!("expected key=value, found `{f}`"),
        })?;
        kv.insert(k, v);
    }
    Ok(kv)
}

fn kv_bool(line: usize, kv: &BTreeMap<&str, &str>, key: &str) -> Result<bool, IsaError> {
    match kv.get(key).copied() {
        Some("0") => Ok(false),
        Some("1") => Ok(true),
        other => Err(IsaError::Parse {
            line: line + 1,
            msg: format!("field `{key}` must be 0 or 1, found {other:?}"),
        }),
    }
}

fn kv_num(line: usize, kv: &BTreeMap<&str, &str>, key: &str) -> Result<u64, IsaError> {
    let v = kv.get(key).copied().ok_or_else(|| IsaError::Parse {
        line: line + 1,
        msg: format!("missing field `{key}`"),
    })?;
    parse_num(line, v)
}

fn parse_num(line: usize, s: &str) -> Result<u64, IsaError> {
    let r = if let Some(hex) = s.strip_prefix("0x") {
        u64::from_str_radix(hex, 16)
    } else {
        s.parse()
    };
    r.map_err(|_| IsaError::Parse {
        line: line + 1,
        msg: format!("bad number `{s}`"),
    })
}
