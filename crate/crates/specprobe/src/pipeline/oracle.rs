//! Independent event-timeline oracle for short sequences.
//!
//! Computes issue/dispatch/complete/retire times, the phase-two cycle, the
//! squash set and zero-forwarding flags by direct recurrence over the
//! dependency graph — no event loop, no machine state. Used to cross-check
//! `simulate` on its domain: at most ten micro-ops, no branches, no
//! structural hazards (per-class op counts within port counts), memory ops
//! on pairwise distinct pages, and a profile with zero prefetch
//! probability.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::isa::{build_dependency_graph, InstrSeq, IsaError, OpKind, Register, ValueSource};
use crate::mem::{
    access, bound_check, fp_touch_check, page_of, priv_read_check, AccessKind, MemEnvironment,
    MemError,
};
use crate::profile::{CheckId, ProcessorProfile};

pub const ORACLE_MAX_OPS: usize = 10;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("sequence of {0} ops is outside the oracle domain (max {ORACLE_MAX_OPS})")]
    TooLong(usize),
    #[error("branches are outside the oracle domain")]
    Branch,
    #[error("{0} ops of one port class exceed the port count; refusing structural hazards")]
    PortPressure(usize),
    #[error("two memory ops touch page {0:#x}; the oracle requires distinct pages")]
    SamePage(u64),
    #[error("oracle requires a profile with zero prefetch probability")]
    Prefetch,
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error(transparent)]
    Isa(#[from] IsaError),
}

/// Event times for one op. `zero_forwarded` reflects the phase-one decision
/// made at dispatch, so it survives a later squash, exactly as the
/// simulator's fault records do.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OpTimes {
    pub issue: Option<u64>,
    pub dispatch: Option<u64>,
    pub complete: Option<u64>,
    pub retire: Option<u64>,
    pub result: Option<u64>,
    pub zero_forwarded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleTimes {
    pub ops: Vec<OpTimes>,
    pub p2_cycle: Option<u64>,
    pub exception: Option<CheckId>,
    pub squash_set: BTreeSet<usize>,
}

/// Phase-one verdict for one op: latency to completion, forwarded value
/// (None starves dependents), and fault bookkeeping.
struct Verdict {
    latency: u64,
    forward: Option<u64>,
    fault: Option<(CheckId, u64, bool)>, // (check, relative p1, zero_forwarded)
}

pub fn analytic_oracle(
    seq: &InstrSeq,
    env: &MemEnvironment,
    live_ins: &BTreeMap<Register, u64>,
    profile: &ProcessorProfile,
) -> Result<OracleTimes, OracleError> {
    check_domain(seq, profile)?;

    let live_in_regs: BTreeSet<Register> = live_ins.keys().copied().collect();
    let graph = build_dependency_graph(seq, &live_in_regs)?;
    let n = seq.len();
    let width = profile.issue_width;
    let rwidth = profile.retire_width;

    let mut times: Vec<OpTimes> = vec![OpTimes::default(); n];
    let mut fault_check: Vec<Option<CheckId>> = vec![None; n];
    let mut forwards: Vec<Option<u64>> = vec![None; n];
    let mut retire: Vec<Option<u64>> = vec![None; n];

    // Active serialization gate: set when a CPUID issues, released (to a
    // known cycle) once its retire slot is computable, blocking forever if
    // the CPUID can never retire.
    let mut gate: Option<usize> = None;
    let mut issue_blocked = false;

    for j in 0..n {
        // Issue: greedy in-order, `width` per cycle, gated on CPUID
        // retirement.
        if issue_blocked {
            continue;
        }
        let mut issue = 0;
        if let Some(c) = gate {
            match retire[c] {
                Some(r) => issue = issue.max(r),
                None => {
                    issue_blocked = true;
                    continue;
                }
            }
        }
        if j > 0 {
            if let Some(prev) = times[j - 1].issue {
                issue = issue.max(prev);
            }
        }
        if j >= width {
            if let Some(prev) = times[j - width].issue {
                issue = issue.max(prev + 1);
            }
        }
        times[j].issue = Some(issue);
        if seq.ops[j].kind == OpKind::Cpuid {
            gate = Some(j);
        }

        // Dispatch: the cycle after issue at the earliest, or when the last
        // producer forwards; a starved producer blocks forever.
        let mut ready = Some(issue + 1);
        for &p in graph.preds(j) {
            match (ready, times[p].complete, forwards[p]) {
                (Some(r), Some(c), Some(_)) => ready = Some(r.max(c)),
                _ => ready = None,
            }
        }
        let Some(dispatch) = ready else {
            continue;
        };
        times[j].dispatch = Some(dispatch);

        let verdict = op_timing(seq, &graph, env, live_ins, profile, j, &forwards)?;
        let complete = dispatch + verdict.latency;
        times[j].complete = Some(complete);
        times[j].result = verdict.forward;
        forwards[j] = verdict.forward;
        if let Some((check, _p1, zero)) = verdict.fault {
            fault_check[j] = Some(check);
            times[j].zero_forwarded = zero;
        }

        // Retirement recurrence: the cycle after completion at the
        // earliest, in order, `rwidth` per cycle. Faulting ops get a
        // virtual slot: their phase-two cycle.
        let mut r = complete + 1;
        if j > 0 {
            match retire[j - 1] {
                Some(prev) => r = r.max(prev),
                None => continue,
            }
        }
        if j >= rwidth {
            if let Some(back) = retire[j - rwidth] {
                r = r.max(back + 1);
            }
        }
        retire[j] = Some(r);
    }

    check_port_pressure(seq, &times, profile)?;

    // The first faulting op to reach the ROB head fires phase two.
    let first_fault = (0..n).find(|&j| fault_check[j].is_some());
    let (p2_cycle, exception, squash_set) = match first_fault {
        Some(f) => {
            let p2 = retire[f].expect("faulting op has a retire slot");
            (
                Some(p2),
                fault_check[f],
                (f + 1..n).collect::<BTreeSet<_>>(),
            )
        }
        None => (None, None, BTreeSet::new()),
    };

    for j in 0..n {
        if squash_set.contains(&j) {
            let p2 = p2_cycle.unwrap();
            times[j].retire = None;
            // Issue halts at phase two; the squash also cancels any
            // in-flight completion scheduled after it.
            if times[j].issue.is_some_and(|i| i >= p2) {
                times[j] = OpTimes::default();
            }
            if times[j].dispatch.is_some_and(|d| d > p2) {
                times[j].dispatch = None;
                times[j].complete = None;
                times[j].result = None;
                times[j].zero_forwarded = false;
            }
            if times[j].complete.is_some_and(|c| c > p2) {
                times[j].complete = None;
                times[j].result = None;
            }
        } else if Some(j) == first_fault {
            times[j].retire = None;
        } else {
            times[j].retire = retire[j];
        }
    }

    Ok(OracleTimes {
        ops: times,
        p2_cycle,
        exception,
        squash_set,
    })
}

fn check_domain(seq: &InstrSeq, profile: &ProcessorProfile) -> Result<(), OracleError> {
    if seq.len() > ORACLE_MAX_OPS {
        return Err(OracleError::TooLong(seq.len()));
    }
    if seq.ops.iter().any(|op| op.kind.is_branch()) {
        return Err(OracleError::Branch);
    }
    if profile.prefetch.l1_num != 0 || profile.prefetch.terminal_l2_num != 0 {
        return Err(OracleError::Prefetch);
    }
    Ok(())
}

/// The recurrences assume ports never arbitrate. Refuse sequences where the
/// computed dispatch times would oversubscribe a port class.
fn check_port_pressure(
    seq: &InstrSeq,
    times: &[OpTimes],
    profile: &ProcessorProfile,
) -> Result<(), OracleError> {
    let mut per_slot: BTreeMap<(u64, u8), usize> = BTreeMap::new();
    for (j, t) in times.iter().enumerate() {
        let Some(d) = t.dispatch else { continue };
        let (class, limit) = match seq.ops[j].kind {
            OpKind::Load | OpKind::Store => (0u8, profile.mem_ports),
            k if k.is_fp() => (1, profile.fp_ports),
            OpKind::Cpuid => continue,
            _ => (2, profile.alu_ports),
        };
        let used = per_slot.entry((d, class)).or_insert(0);
        *used += 1;
        if *used > limit {
            return Err(OracleError::PortPressure(*used));
        }
    }
    Ok(())
}

fn op_timing(
    seq: &InstrSeq,
    graph: &crate::isa::DependencyGraph,
    env: &MemEnvironment,
    live_ins: &BTreeMap<Register, u64>,
    profile: &ProcessorProfile,
    j: usize,
    forwards: &[Option<u64>],
) -> Result<Verdict, OracleError> {
    let value_of = |reg: Register| -> u64 {
        match graph.reg_sources[j].get(&reg) {
            Some(ValueSource::LiveIn(r)) => *live_ins.get(r).unwrap_or(&0),
            Some(ValueSource::Op(p)) => forwards[*p].unwrap_or(0),
            None => *live_ins.get(&reg).unwrap_or(&0),
        }
    };
    let uop = &seq.ops[j];
    let resolve_addr = || -> u64 {
        let mem = uop.mem.as_ref().unwrap();
        let base = value_of(mem.base);
        let index = mem
            .index
            .map(|r| value_of(r).wrapping_mul(mem.scale as u64))
            .unwrap_or(0);
        base.wrapping_add(index)
            .wrapping_add(mem.displacement as u64)
    };
    let alu_value = || -> u64 {
        let a = uop.srcs.first().map(|&r| value_of(r)).unwrap_or(0);
        let b = match uop.srcs.get(1) {
            Some(&r) => value_of(r),
            None => uop.imm.unwrap_or(0) as u64,
        };
        match uop.kind {
            OpKind::AluAdd | OpKind::FpAddpd => a.wrapping_add(b),
            OpKind::AluSub => a.wrapping_sub(b),
            OpKind::FpMulpd => a.wrapping_mul(b).max(1),
            _ => a,
        }
    };

    match uop.kind {
        OpKind::Load => {
            if let Some(store) = graph.store_forward[j] {
                return Ok(Verdict {
                    latency: 0,
                    forward: forwards[store],
                    fault: None,
                });
            }
            let mem = uop.mem.as_ref().unwrap();
            let res = access(env, AccessKind::Read, resolve_addr(), mem.selector, profile)?;
            match res.first_fault() {
                None => Ok(Verdict {
                    latency: res.data_latency.unwrap(),
                    forward: Some(res.value),
                    fault: None,
                }),
                Some(chk) => {
                    if res.no_speculation() {
                        return Ok(Verdict {
                            latency: chk.p1_time,
                            forward: None,
                            fault: Some((chk.check, chk.p1_time, false)),
                        });
                    }
                    let data_first = match res.data_latency {
                        Some(d) => {
                            d < chk.p1_time || (d == chk.p1_time && !chk.anchor.fault_wins_tie())
                        }
                        None => false,
                    };
                    if data_first {
                        Ok(Verdict {
                            latency: res.data_latency.unwrap(),
                            forward: Some(res.value),
                            fault: Some((chk.check, chk.p1_time, false)),
                        })
                    } else {
                        Ok(Verdict {
                            latency: chk.p1_time,
                            forward: Some(0),
                            fault: Some((chk.check, chk.p1_time, true)),
                        })
                    }
                }
            }
        }
        OpKind::Store => {
            let mem = uop.mem.as_ref().unwrap();
            let value = match uop.imm {
                Some(imm) => imm as u64,
                None => value_of(uop.srcs[0]),
            };
            let res = access(
                env,
                AccessKind::Write,
                resolve_addr(),
                mem.selector,
                profile,
            )?;
            let no_spec = res.no_speculation();
            Ok(Verdict {
                latency: 1,
                forward: (!no_spec).then_some(value),
                fault: res.first_fault().map(|c| (c.check, c.p1_time, false)),
            })
        }
        OpKind::Cpuid => Ok(Verdict {
            latency: 1,
            forward: Some(0),
            fault: None,
        }),
        OpKind::BoundCheck => {
            let idx = value_of(uop.srcs[0]);
            let limit = uop.imm.unwrap_or(0) as u64;
            let chk = bound_check(idx >= limit, profile)?;
            Ok(race_fixed_latency(1, idx, chk))
        }
        OpKind::RegPrivRead(which) => {
            let chk = priv_read_check(env, which, profile)?;
            Ok(race_fixed_latency(1, env.priv_value(which), chk))
        }
        OpKind::FpMovapd | OpKind::FpAddpd | OpKind::FpMulpd => {
            let lat = match uop.kind {
                OpKind::FpAddpd | OpKind::FpMulpd => 4,
                _ => 1,
            };
            let chk = fp_touch_check(env, profile)?;
            Ok(race_fixed_latency(lat, alu_value(), chk))
        }
        OpKind::AluAdd | OpKind::AluSub => Ok(Verdict {
            latency: 1,
            forward: Some(alu_value()),
            fault: None,
        }),
        OpKind::BranchCond | OpKind::BranchIndirect => unreachable!("domain excludes branches"),
    }
}

fn race_fixed_latency(lat: u64, value: u64, chk: crate::mem::CheckOutcome) -> Verdict {
    if !chk.violated {
        return Verdict {
            latency: lat,
            forward: Some(value),
            fault: None,
        };
    }
    if !chk.speculation_allowed {
        return Verdict {
            latency: chk.p1_time.max(1),
            forward: None,
            fault: Some((chk.check, chk.p1_time, false)),
        };
    }
    let result_first = lat < chk.p1_time || (lat == chk.p1_time && !chk.anchor.fault_wins_tie());
    if result_first {
        Verdict {
            latency: lat,
            forward: Some(value),
            fault: Some((chk.check, chk.p1_time, false)),
        }
    } else {
        Verdict {
            latency: chk.p1_time,
            forward: Some(0),
            fault: Some((chk.check, chk.p1_time, true)),
        }
    }
}

/// Verify the distinct-pages domain requirement for statically addressed
/// sequences (bases and indices taken from live-ins). Store-to-load pairs
/// with identical operands are exempt: the load is forwarded and never
/// reaches memory.
pub fn assert_mem_pages_disjoint(
    seq: &InstrSeq,
    live_ins: &BTreeMap<Register, u64>,
) -> Result<(), OracleError> {
    let mut seen: BTreeSet<u64> = BTreeSet::new();
    let mut store_operands: Vec<&crate::isa::MemOperand> = Vec::new();
    for op in &seq.ops {
        let Some(mem) = &op.mem else { continue };
        if op.kind == OpKind::Load && store_operands.iter().any(|m| **m == *mem) {
            continue;
        }
        let base = live_ins.get(&mem.base).copied().unwrap_or(0);
        let index = mem
            .index
            .and_then(|r| live_ins.get(&r).copied())
            .unwrap_or(0)
            .wrapping_mul(mem.scale as u64);
        let addr = base
            .wrapping_add(index)
            .wrapping_add(mem.displacement as u64);
        let page = page_of(addr);
        if !seen.insert(page) {
            return Err(OracleError::SamePage(page));
        }
        if op.kind == OpKind::Store {
            store_operands.push(mem);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{MemOperand, MicroOp};
    use crate::mem::{Level, PageTableEntry};
    use crate::pipeline::simulate;
    use crate::variants::builtin_profiles;

    fn profile() -> ProcessorProfile {
        let mut p = builtin_profiles().intel_client;
        p.prefetch.l1_num = 0;
        p
    }

    fn gp(i: u8) -> Register {
        Register::gp(i)
    }

    #[test]
    fn single_l1_load_completes_after_the_hit_latency() {
        let p = profile();
        let mut env = MemEnvironment::default();
        env.map_page(0x10_0000, PageTableEntry::user_rw());
        env.preload_tlb(0x10_0000);
        env.preload(0x10_0000, Level::L1);
        let seq = InstrSeq::new(vec![MicroOp::load(gp(1), MemOperand::base(gp(0)))]).unwrap();
        let live = BTreeMap::from([(gp(0), 0x10_0000u64)]);
        let t = analytic_oracle(&seq, &env, &live, &p).unwrap();
        let d = t.ops[0].dispatch.unwrap();
        assert_eq!(t.ops[0].complete.unwrap(), d + p.latency.l1);
        assert!(t.p2_cycle.is_none());
    }

    #[test]
    fn chained_alu_ops_complete_one_per_cycle() {
        let p = profile();
        let env = MemEnvironment::default();
        let k = 8;
        let ops: Vec<_> = (0..k).map(|_| MicroOp::add_imm(gp(0), 1)).collect();
        let seq = InstrSeq::new(ops).unwrap();
        let live = BTreeMap::from([(gp(0), 0u64)]);
        let t = analytic_oracle(&seq, &env, &live, &p).unwrap();
        let start = t.ops[0].complete.unwrap();
        for i in 0..k {
            assert_eq!(t.ops[i].complete.unwrap(), start + i as u64);
        }
        assert_eq!(t.ops[k - 1].result, Some(k as u64));
    }

    #[test]
    fn faulting_load_with_dependents_matches_simulate() {
        // The squash set and zero-forwarding of a faulting load plus three
        // dependents, with retirement pinned behind nothing: the oracle is
        // the event-timeline computation itself.
        let p = profile();
        let mut env = MemEnvironment::default();
        env.map_page(
            0x10_0000,
            PageTableEntry {
                us: false,
                ..PageTableEntry::user_rw()
            },
        );
        env.preload_tlb(0x10_0000);
        env.preload(0x10_0000, Level::L2);
        let seq = InstrSeq::new(vec![
            MicroOp::load(gp(1), MemOperand::base(gp(0))),
            MicroOp::add(gp(2), gp(1), gp(1)),
            MicroOp::add_imm(gp(2), 1),
            MicroOp::add_imm(gp(3), 1),
        ])
        .unwrap();
        let live = BTreeMap::from([(gp(0), 0x10_0000u64), (gp(2), 0u64), (gp(3), 0u64)]);
        let want = analytic_oracle(&seq, &env, &live, &p).unwrap();
        let got = simulate(&seq, &env, &live, &p, 7).unwrap();
        assert_eq!(got.p2_cycle, want.p2_cycle);
        assert_eq!(got.squash_set, want.squash_set);
        assert_eq!(want.squash_set, (1..4).collect());
        assert!(want.ops[0].zero_forwarded);
        for i in 0..4 {
            assert_eq!(got.entry(i).complete_cycle, want.ops[i].complete);
            assert_eq!(got.entry(i).result, want.ops[i].result);
        }
    }

    #[test]
    fn oracle_refuses_out_of_domain_sequences() {
        let p = profile();
        let env = MemEnvironment::default();
        let live = BTreeMap::from([(gp(0), 0u64)]);

        let long: Vec<_> = (0..11).map(|_| MicroOp::add_imm(gp(0), 1)).collect();
        let seq = InstrSeq::new(long).unwrap();
        assert!(matches!(
            analytic_oracle(&seq, &env, &live, &p),
            Err(OracleError::TooLong(11))
        ));

        let seq = InstrSeq::new(vec![MicroOp::branch_cond(gp(0), 1, 1)]).unwrap();
        assert!(matches!(
            analytic_oracle(&seq, &env, &live, &p),
            Err(OracleError::Branch)
        ));

        let mut with_prefetch = profile();
        with_prefetch.prefetch.l1_num = 1;
        let seq = InstrSeq::new(vec![MicroOp::add_imm(gp(0), 1)]).unwrap();
        assert!(matches!(
            analytic_oracle(&seq, &env, &live, &with_prefetch),
            Err(OracleError::Prefetch)
        ));
    }
}
