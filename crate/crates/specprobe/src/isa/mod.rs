//! Abstract micro-op instruction set: registers, micro-ops and instruction
//! sequences, plus dependency extraction.
//!
//! Micro-ops follow a RISC discipline: arithmetic runs on registers, only
//! loads and stores touch memory. A sequence is immutable once built and can
//! be shared freely across experiment workers.

mod deps;
pub mod parse;

pub use deps::{build_dependency_graph, DependencyGraph, ValueSource};
pub use parse::parse_seq;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub const GP_COUNT: u8 = 16;
pub const FP_COUNT: u8 = 16;

/// Architectural register. General-purpose and floating-point spaces are
/// disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Register {
    Gp(u8),
    Fp(u8),
}

impl Register {
    pub fn gp(i: u8) -> Self {
        assert!(i < GP_COUNT, "gp register index out of range: {i}");
        Register::Gp(i)
    }

    pub fn fp(i: u8) -> Self {
        assert!(i < FP_COUNT, "fp register index out of range: {i}");
        Register::Fp(i)
    }
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Register::Gp(i) => write!(f, "%gp{i}"),
            Register::Fp(i) => write!(f, "%fp{i}"),
        }
    }
}

/// Privileged register read by `RegPrivRead` ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PrivReg {
    Cr4,
    Msr,
}

/// Memory operand: base + index * scale + displacement, optionally through
/// an explicit segment selector (32-bit mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemOperand {
    pub base: Register,
    pub index: Option<Register>,
    pub scale: u8,
    pub displacement: i64,
    pub selector: Option<u16>,
}

impl MemOperand {
    pub fn base(base: Register) -> Self {
        MemOperand {
            base,
            index: None,
            scale: 1,
            displacement: 0,
            selector: None,
        }
    }

    pub fn base_index(base: Register, index: Register) -> Self {
        MemOperand {
            base,
            index: Some(index),
            scale: 1,
            displacement: 0,
            selector: None,
        }
    }

    pub fn with_selector(mut self, selector: u16) -> Self {
        self.selector = Some(selector);
        self
    }

    /// Registers read to form the address.
    pub fn addr_regs(&self) -> impl Iterator<Item = Register> + '_ {
        std::iter::once(self.base).chain(self.index)
    }
}

/// Where a branch actually goes once resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActualTarget {
    /// Resolved at sequence-build time to an op index (one past the end is a
    /// valid "fall out of the sequence" target).
    Index(usize),
    /// Read from a register at execution time; the value is an op index.
    Reg(Register),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchMeta {
    /// Index issue continues from while the branch is unresolved.
    pub predicted: usize,
    pub actual: ActualTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OpKind {
    AluAdd,
    AluSub,
    Load,
    Store,
    FpMovapd,
    FpAddpd,
    FpMulpd,
    Cpuid,
    BranchCond,
    BranchIndirect,
    BoundCheck,
    RegPrivRead(PrivReg),
}

impl OpKind {
    pub fn is_mem(self) -> bool {
        matches!(self, OpKind::Load | OpKind::Store)
    }

    pub fn is_fp(self) -> bool {
        matches!(self, OpKind::FpMovapd | OpKind::FpAddpd | OpKind::FpMulpd)
    }

    pub fn is_branch(self) -> bool {
        matches!(self, OpKind::BranchCond | OpKind::BranchIndirect)
    }
}

/// One decoded micro-op.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicroOp {
    pub kind: OpKind,
    pub srcs: Vec<Register>,
    pub dst: Option<Register>,
    pub mem: Option<MemOperand>,
    pub imm: Option<i64>,
    pub branch: Option<BranchMeta>,
}

impl MicroOp {
    fn new(kind: OpKind) -> Self {
        MicroOp {
            kind,
            srcs: Vec::new(),
            dst: None,
            mem: None,
            imm: None,
            branch: None,
        }
    }

    /// `dst <- a + b`
    pub fn add(dst: Register, a: Register, b: Register) -> Self {
        MicroOp {
            srcs: vec![a, b],
            dst: Some(dst),
            ..MicroOp::new(OpKind::AluAdd)
        }
    }

    /// `dst <- dst + imm`
    pub fn add_imm(dst: Register, imm: i64) -> Self {
        MicroOp {
            srcs: vec![dst],
            dst: Some(dst),
            imm: Some(imm),
            ..MicroOp::new(OpKind::AluAdd)
        }
    }

    /// `dst <- a - b`
    pub fn sub(dst: Register, a: Register, b: Register) -> Self {
        MicroOp {
            srcs: vec![a, b],
            dst: Some(dst),
            ..MicroOp::new(OpKind::AluSub)
        }
    }

    /// `dst <- dst - imm`
    pub fn sub_imm(dst: Register, imm: i64) -> Self {
        MicroOp {
            srcs: vec![dst],
            dst: Some(dst),
            imm: Some(imm),
            ..MicroOp::new(OpKind::AluSub)
        }
    }

    pub fn load(dst: Register, mem: MemOperand) -> Self {
        MicroOp {
            dst: Some(dst),
            mem: Some(mem),
            ..MicroOp::new(OpKind::Load)
        }
    }

    pub fn store_reg(src: Register, mem: MemOperand) -> Self {
        MicroOp {
            srcs: vec![src],
            mem: Some(mem),
            ..MicroOp::new(OpKind::Store)
        }
    }

    pub fn store_imm(imm: i64, mem: MemOperand) -> Self {
        MicroOp {
            imm: Some(imm),
            mem: Some(mem),
            ..MicroOp::new(OpKind::Store)
        }
    }

    pub fn fp_movapd(dst: Register, src: Register) -> Self {
        MicroOp {
            srcs: vec![src],
            dst: Some(dst),
            ..MicroOp::new(OpKind::FpMovapd)
        }
    }

    pub fn fp_addpd(dst: Register, a: Register, b: Register) -> Self {
        MicroOp {
            srcs: vec![a, b],
            dst: Some(dst),
            ..MicroOp::new(OpKind::FpAddpd)
        }
    }

    pub fn fp_mulpd(dst: Register, a: Register, b: Register) -> Self {
        MicroOp {
            srcs: vec![a, b],
            dst: Some(dst),
            ..MicroOp::new(OpKind::FpMulpd)
        }
    }

    pub fn cpuid() -> Self {
        MicroOp::new(OpKind::Cpuid)
    }

    /// Conditional branch on `cond`; `predicted`/`actual` are op indices.
    pub fn branch_cond(cond: Register, predicted: usize, actual: usize) -> Self {
        MicroOp {
            srcs: vec![cond],
            branch: Some(BranchMeta {
                predicted,
                actual: ActualTarget::Index(actual),
            }),
            ..MicroOp::new(OpKind::BranchCond)
        }
    }

    pub fn branch_indirect(target: Register, predicted: usize) -> Self {
        MicroOp {
            srcs: vec![target],
            branch: Some(BranchMeta {
                predicted,
                actual: ActualTarget::Reg(target),
            }),
            ..MicroOp::new(OpKind::BranchIndirect)
        }
    }

    /// Bound check of `idx` against `limit`; forwards `idx` unchanged so a
    /// following load can consume the checked index.
    pub fn bound_check(idx: Register, limit: u64) -> Self {
        MicroOp {
            srcs: vec![idx],
            dst: Some(idx),
            imm: Some(limit as i64),
            ..MicroOp::new(OpKind::BoundCheck)
        }
    }

    pub fn priv_read(dst: Register, which: PrivReg) -> Self {
        MicroOp {
            dst: Some(dst),
            ..MicroOp::new(OpKind::RegPrivRead(which))
        }
    }

    /// All registers this op reads, including address registers.
    pub fn reads(&self) -> Vec<Register> {
        let mut regs = self.srcs.clone();
        if let Some(mem) = &self.mem {
            regs.extend(mem.addr_regs());
        }
        regs
    }
}

/// An instruction sequence: program order is list order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InstrSeq {
    pub ops: Vec<MicroOp>,
    pub labels: BTreeMap<String, usize>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IsaError {
    #[error("op {index} ({kind:?}): memory ops must carry a memory operand")]
    MissingMemOperand { index: usize, kind: OpKind },
    #[error("op {index} ({kind:?}): non-memory op carries a memory operand")]
    UnexpectedMemOperand { index: usize, kind: OpKind },
    #[error("op {index}: cpuid takes no sources or destination")]
    CpuidOperands { index: usize },
    #[error("op {index}: branch without branch metadata")]
    MissingBranchMeta { index: usize },
    #[error("op {index}: branch target {target} out of range (len {len})")]
    BranchTargetRange {
        index: usize,
        target: usize,
        len: usize,
    },
    #[error("op {index} reads {register} which is never written and not a declared live-in")]
    UndefinedRegister { index: usize, register: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl InstrSeq {
    pub fn new(ops: Vec<MicroOp>) -> Result<Self, IsaError> {
        Self::with_labels(ops, BTreeMap::new())
    }

    pub fn with_labels(
        ops: Vec<MicroOp>,
        labels: BTreeMap<String, usize>,
    ) -> Result<Self, IsaError> {
        let seq = InstrSeq { ops, labels };
        seq.validate()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn validate(&self) -> Result<(), IsaError> {
        let len = self.ops.len();
        for (index, op) in self.ops.iter().enumerate() {
            if op.kind.is_mem() && op.mem.is_none() {
                return Err(IsaError::MissingMemOperand {
                    index,
                    kind: op.kind,
                });
            }
            if !op.kind.is_mem() && op.mem.is_some() {
                return Err(IsaError::UnexpectedMemOperand {
                    index,
                    kind: op.kind,
                });
            }
            if op.kind == OpKind::Cpuid && (!op.srcs.is_empty() || op.dst.is_some()) {
                return Err(IsaError::CpuidOperands { index });
            }
            if op.kind.is_branch() {
                let meta = op.branch.ok_or(IsaError::MissingBranchMeta { index })?;
                // One past the end means "fall out of the sequence".
                if meta.predicted > len {
                    return Err(IsaError::BranchTargetRange {
                        index,
                        target: meta.predicted,
                        len,
                    });
                }
                if let ActualTarget::Index(t) = meta.actual {
                    if t > len {
                        return Err(IsaError::BranchTargetRange {
                            index,
                            target: t,
                            len,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Suffix of the sequence after the last CPUID; the whole sequence when no
/// CPUID is present. Ops before a serialization barrier retire before
/// anything after it issues, so only the suffix contributes to windowing.
pub fn effective_gadget_after_cpuid(seq: &InstrSeq) -> InstrSeq {
    let start = seq
        .ops
        .iter()
        .rposition(|op| op.kind == OpKind::Cpuid)
        .map(|i| i + 1)
        .unwrap_or(0);
    let ops = seq.ops[start..].to_vec();
    let labels = seq
        .labels
        .iter()
        .filter(|(_, &idx)| idx >= start)
        .map(|(name, &idx)| (name.clone(), idx - start))
        .collect();
    InstrSeq { ops, labels }
}
