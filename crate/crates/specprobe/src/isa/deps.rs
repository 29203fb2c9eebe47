//! Dependency extraction over an instruction sequence.
//!
//! Op `j` depends on the latest `i < j` that writes any register `j` reads
//! (data sources and address registers alike). CPUID is a serialization
//! barrier: it depends on every prior op and every later op depends on it.
//! A load additionally depends on the latest prior store with an identical
//! memory operand (static must-alias store-to-load forwarding).

use std::collections::{BTreeMap, BTreeSet};

use super::{InstrSeq, IsaError, OpKind, Register};

/// Where an op gets the value of a register it reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueSource {
    LiveIn(Register),
    Op(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    /// Producer op indices each op waits on before dispatch (register data,
    /// store forwarding and serialization edges combined).
    pub preds: Vec<BTreeSet<usize>>,
    /// Per-op map from read register to the source of its value.
    pub reg_sources: Vec<BTreeMap<Register, ValueSource>>,
    /// For loads: index of the store whose value is forwarded, if any.
    pub store_forward: Vec<Option<usize>>,
}

impl DependencyGraph {
    pub fn preds(&self, op: usize) -> &BTreeSet<usize> {
        &self.preds[op]
    }

    /// Length of the longest producer chain from `from` to `to`, counted in
    /// edges; `None` when `to` does not depend on `from`.
    pub fn path_len(&self, from: usize, to: usize) -> Option<usize> {
        if from == to {
            return Some(0);
        }
        let mut best: Vec<Option<usize>> = vec![None; to + 1];
        best[from] = Some(0);
        for j in from + 1..=to {
            best[j] = self.preds[j]
                .iter()
                .filter(|&&p| p <= to)
                .filter_map(|&p| best[p])
                .max()
                .map(|d| d + 1);
        }
        best[to]
    }
}

pub fn build_dependency_graph(
    seq: &InstrSeq,
    live_ins: &BTreeSet<Register>,
) -> Result<DependencyGraph, IsaError> {
    assert!(!seq.is_empty(), "dependency graph over an empty sequence");

    let mut last_writer: BTreeMap<Register, usize> = BTreeMap::new();
    let mut last_store_to: BTreeMap<StoreKey, usize> = BTreeMap::new();
    let mut last_cpuid: Option<usize> = None;

    let mut preds = Vec::with_capacity(seq.len());
    let mut reg_sources = Vec::with_capacity(seq.len());
    let mut store_forward = Vec::with_capacity(seq.len());

    for (j, op) in seq.ops.iter().enumerate() {
        let mut p = BTreeSet::new();
        let mut sources = BTreeMap::new();

        for reg in op.reads() {
            match last_writer.get(&reg) {
                Some(&i) => {
                    p.insert(i);
                    sources.insert(reg, ValueSource::Op(i));
                }
                None => {
                    if !live_ins.contains(&reg) {
                        return Err(IsaError::UndefinedRegister {
                            index: j,
                            register: reg.to_string(),
                        });
                    }
                    sources.insert(reg, ValueSource::LiveIn(reg));
                }
            }
        }

        let mut fwd = None;
        if op.kind == OpKind::Load {
            if let Some(mem) = &op.mem {
                if let Some(&s) = last_store_to.get(&StoreKey::of(mem)) {
                    p.insert(s);
                    fwd = Some(s);
                }
            }
        }

        if op.kind == OpKind::Cpuid {
            p.extend(0..j);
        } else if let Some(c) = last_cpuid {
            p.insert(c);
        }

        preds.push(p);
        reg_sources.push(sources);
        store_forward.push(fwd);

        if let Some(dst) = op.dst {
            last_writer.insert(dst, j);
        }
        if op.kind == OpKind::Store {
            if let Some(mem) = &op.mem {
                last_store_to.insert(StoreKey::of(mem), j);
            }
        }
        if op.kind == OpKind::Cpuid {
            last_cpuid = Some(j);
        }
    }

    Ok(DependencyGraph {
        preds,
        reg_sources,
        store_forward,
    })
}

/// Static identity of a memory operand, for must-alias forwarding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct StoreKey {
    base: Register,
    index: Option<Register>,
    scale: u8,
    displacement: i64,
    selector: Option<u16>,
}

impl StoreKey {
    fn of(mem: &super::MemOperand) -> Self {
        StoreKey {
            base: mem.base,
            index: mem.index,
            scale: mem.scale,
            displacement: mem.displacement,
            selector: mem.selector,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{MemOperand, MicroOp};

    fn gp(i: u8) -> Register {
        Register::gp(i)
    }

    fn live(regs: &[Register]) -> BTreeSet<Register> {
        regs.iter().copied().collect()
    }

    #[test]
    fn read_after_write_chain() {
        // ADD r1<-r1+1 ; SUB r1<-r1-1: op1 depends on op0.
        let seq =
            InstrSeq::new(vec![MicroOp::add_imm(gp(1), 1), MicroOp::sub_imm(gp(1), 1)]).unwrap();
        let g = build_dependency_graph(&seq, &live(&[gp(1)])).unwrap();
        assert!(g.preds(1).contains(&0));
        assert!(g.preds(0).is_empty());
    }

    #[test]
    fn alternating_addsub_is_a_strict_linear_chain() {
        // Alternating ADD/SUB on the same register, then a load using it:
        // executed strictly in program order.
        let mut ops = Vec::new();
        for k in 0..10 {
            ops.push(if k % 2 == 0 {
                MicroOp::add_imm(gp(2), 1)
            } else {
                MicroOp::sub_imm(gp(2), 1)
            });
        }
        ops.push(MicroOp::load(gp(3), MemOperand::base(gp(2))));
        let seq = InstrSeq::new(ops).unwrap();
        let g = build_dependency_graph(&seq, &live(&[gp(2)])).unwrap();
        for j in 1..seq.len() {
            assert_eq!(g.preds(j).iter().copied().collect::<Vec<_>>(), vec![j - 1]);
        }
    }

    #[test]
    fn disjoint_registers_have_empty_dependency_sets() {
        let ops: Vec<_> = (0..8).map(|i| MicroOp::add_imm(gp(i), 1)).collect();
        let seq = InstrSeq::new(ops).unwrap();
        let regs: Vec<_> = (0..8).map(gp).collect();
        let g = build_dependency_graph(&seq, &live(&regs)).unwrap();
        assert!(g.preds.iter().all(|p| p.is_empty()));
    }

    #[test]
    fn undefined_register_is_reported_by_name() {
        let seq = InstrSeq::new(vec![MicroOp::add(gp(0), gp(5), gp(6))]).unwrap();
        let err = build_dependency_graph(&seq, &live(&[gp(5)])).unwrap_err();
        match err {
            IsaError::UndefinedRegister { index, register } => {
                assert_eq!(index, 0);
                assert_eq!(register, "%gp6");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn cpuid_serializes_both_directions() {
        let seq = InstrSeq::new(vec![
            MicroOp::add_imm(gp(0), 1),
            MicroOp::add_imm(gp(1), 1),
            MicroOp::cpuid(),
            MicroOp::add_imm(gp(2), 1),
        ])
        .unwrap();
        let g = build_dependency_graph(&seq, &live(&[gp(0), gp(1), gp(2)])).unwrap();
        assert_eq!(g.preds(2).iter().copied().collect::<Vec<_>>(), vec![0, 1]);
        assert!(g.preds(3).contains(&2));
    }

    #[test]
    fn store_to_load_forwarding_edge() {
        let mem = MemOperand::base(gp(4));
        let seq = InstrSeq::new(vec![
            MicroOp::store_imm(0x42000, mem),
            MicroOp::load(gp(1), mem),
        ])
        .unwrap();
        let g = build_dependency_graph(&seq, &live(&[gp(4)])).unwrap();
        assert_eq!(g.store_forward[1], Some(0));
        assert!(g.preds(1).contains(&0));
    }

    #[test]
    fn edges_point_forward() {
        let seq = InstrSeq::new(vec![
            MicroOp::add_imm(gp(0), 1),
            MicroOp::add(gp(1), gp(0), gp(0)),
            MicroOp::cpuid(),
            MicroOp::load(gp(2), MemOperand::base(gp(1))),
        ])
        .unwrap();
        let g = build_dependency_graph(&seq, &live(&[gp(0)])).unwrap();
        for (j, preds) in g.preds.iter().enumerate() {
            assert!(preds.iter().all(|&p| p < j));
        }
    }

    #[test]
    fn inserting_k_chained_ops_extends_the_path_by_k() {
        // Basis of every differential measurement: k extra chained ALU ops
        // between producer and consumer add exactly k to the path length.
        for k in [0usize, 1, 5, 17] {
            let mut ops = vec![MicroOp::add_imm(gp(0), 1)];
            for i in 0..k {
                ops.push(if i % 2 == 0 {
                    MicroOp::add_imm(gp(0), 1)
                } else {
                    MicroOp::sub_imm(gp(0), 1)
                });
            }
            ops.push(MicroOp::load(gp(1), MemOperand::base(gp(0))));
            let seq = InstrSeq::new(ops).unwrap();
            let g = build_dependency_graph(&seq, &live(&[gp(0)])).unwrap();
            assert_eq!(g.path_len(0, seq.len() - 1), Some(k + 1));
        }
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use crate::isa::{MemOperand, MicroOp};
    use proptest::prelude::*;

    fn arb_op() -> impl Strategy<Value = MicroOp> {
        let gp = || (0u8..8).prop_map(Register::gp);
        prop_oneof![
            (gp(), gp(), gp()).prop_map(|(d, a, b)| MicroOp::add(d, a, b)),
            (gp(), -8i64..8).prop_map(|(d, imm)| MicroOp::sub_imm(d, imm)),
            (gp(), gp()).prop_map(|(d, b)| MicroOp::load(d, MemOperand::base(b))),
            (gp(), gp()).prop_map(|(s, b)| MicroOp::store_reg(s, MemOperand::base(b))),
            Just(MicroOp::cpuid()),
        ]
    }

    proptest! {
        #[test]
        fn edges_always_point_backward(ops in proptest::collection::vec(arb_op(), 1..20)) {
            let seq = InstrSeq::new(ops).unwrap();
            let live: BTreeSet<Register> = (0..8).map(Register::gp).collect();
            let g = build_dependency_graph(&seq, &live).unwrap();
            for (j, preds) in g.preds.iter().enumerate() {
                prop_assert!(preds.iter().all(|&p| p < j));
            }
            // Serialization: a barrier depends on every prior op, and every
            // later op depends on the latest barrier before it.
            let mut latest_barrier = None;
            for (j, op) in seq.ops.iter().enumerate() {
                if let Some(c) = latest_barrier {
                    prop_assert!(g.preds(j).contains(&c));
                }
                if op.kind == OpKind::Cpuid {
                    prop_assert!(g.preds(j).iter().copied().eq(0..j));
                    latest_barrier = Some(j);
                }
            }
        }
    }
}
