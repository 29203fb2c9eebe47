//! Bound-range check variant: the check op faults, the following load
//! consumes the checked index and reads architecturally reachable memory.

use std::sync::Arc;

use super::{SpeculationVariant, TemplateKind};
use crate::harness::layout::{Layout, RegRoles};
use crate::isa::{MemOperand, MicroOp};
use crate::mem::{AddrMode, CpuMode, MemEnvironment};
use crate::profile::{CheckId, Feature};

/// Array bound used by the check; the secret's address is far beyond it.
const BOUND_LIMIT: u64 = 256;

struct BoundVariant;

impl SpeculationVariant for BoundVariant {
    fn id(&self) -> &'static str {
        "bound32"
    }

    fn name(&self) -> &'static str {
        "BOUND (32-bit)"
    }

    fn template(&self) -> TemplateKind {
        TemplateKind::TwoInstrCheckLoad
    }

    fn check(&self) -> CheckId {
        CheckId::Bound
    }

    fn required_features(&self) -> &'static [Feature] {
        &[Feature::Mode32]
    }

    fn addr_mode(&self) -> AddrMode {
        AddrMode::Bits32
    }

    fn prepare_env(&self, env: &mut MemEnvironment, _layout: &Layout) {
        // The out-of-bounds target is an ordinary accessible page; only the
        // bound check itself objects.
        env.cpu_mode = CpuMode::User;
        env.addr_mode = AddrMode::Bits32;
    }

    fn primitive_ops(&self, _layout: &Layout, regs: &RegRoles) -> Vec<MicroOp> {
        vec![
            MicroOp::bound_check(regs.secret_ptr, BOUND_LIMIT),
            MicroOp::load(regs.prim_dst, MemOperand::base(regs.secret_ptr)),
        ]
    }
}

pub(super) fn bound_variant() -> Arc<dyn SpeculationVariant> {
    Arc::new(BoundVariant)
}
