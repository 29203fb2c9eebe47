//! Restricted-register variants: privileged control/model-specific register
//! reads and the lazy-FPU device-not-available fault.

use std::sync::Arc;

use super::{SpeculationVariant, TemplateKind};
use crate::harness::layout::{Layout, RegRoles};
use crate::isa::{MicroOp, PrivReg};
use crate::mem::{CpuMode, MemEnvironment};
use crate::profile::{CheckId, Feature};

struct PrivReadVariant {
    id: &'static str,
    name: &'static str,
    which: PrivReg,
    check: CheckId,
    features: &'static [Feature],
}

impl SpeculationVariant for PrivReadVariant {
    fn id(&self) -> &'static str {
        self.id
    }

    fn name(&self) -> &'static str {
        self.name
    }

    fn template(&self) -> TemplateKind {
        TemplateKind::RegRead
    }

    fn check(&self) -> CheckId {
        self.check
    }

    fn required_features(&self) -> &'static [Feature] {
        self.features
    }

    fn prepare_env(&self, env: &mut MemEnvironment, layout: &Layout) {
        env.cpu_mode = CpuMode::User;
        // The register content is the would-be secret.
        match self.which {
            PrivReg::Cr4 => env.cr4_value = layout.secret_value,
            PrivReg::Msr => env.msr_value = layout.secret_value,
        }
    }

    fn primitive_ops(&self, _layout: &Layout, regs: &RegRoles) -> Vec<MicroOp> {
        vec![MicroOp::priv_read(regs.prim_dst, self.which)]
    }
}

/// Touching an FP register with CR0.TS set raises device-not-available;
/// the stale register content from the previous context is the secret.
struct LazyFpVariant;

impl SpeculationVariant for LazyFpVariant {
    fn id(&self) -> &'static str {
        "load-xmm0-cr0ts"
    }

    fn name(&self) -> &'static str {
        "Load xmm0 (CR0.TS)"
    }

    fn template(&self) -> TemplateKind {
        TemplateKind::FpRegRead
    }

    fn check(&self) -> CheckId {
        CheckId::Cr0Ts
    }

    fn required_features(&self) -> &'static [Feature] {
        &[Feature::LazyFp]
    }

    fn prepare_env(&self, env: &mut MemEnvironment, _layout: &Layout) {
        env.cpu_mode = CpuMode::User;
        env.feature_state.cr0_ts = true;
    }

    fn primitive_ops(&self, _layout: &Layout, regs: &RegRoles) -> Vec<MicroOp> {
        // movq %xmm0 -> gp: the register-to-register move is the faulting
        // FP op; its result feeds the disclosure gadget.
        vec![MicroOp::fp_movapd(regs.prim_dst, regs.fp_secret)]
    }
}

pub(super) fn register_variants() -> Vec<Arc<dyn SpeculationVariant>> {
    vec![
        Arc::new(PrivReadVariant {
            id: "load-cr4",
            name: "Load CR4",
            which: PrivReg::Cr4,
            check: CheckId::Cr4Read,
            features: &[],
        }),
        Arc::new(PrivReadVariant {
            id: "load-msr",
            name: "Load MSR (0x1a2)",
            which: PrivReg::Msr,
            check: CheckId::MsrRead,
            features: &[Feature::Msr0x1a2],
        }),
        Arc::new(LazyFpVariant),
    ]
}
