//! Segmentation-based variants (32-bit mode): limit, type, presence, null
//! selector and privilege-level checks, split between the data-segment and
//! stack-segment exception classes.

use std::sync::Arc;

use super::{SpeculationVariant, TemplateKind};
use crate::harness::layout::{Layout, RegRoles};
use crate::isa::parse::{SEL_CS, SEL_DS, SEL_SS};
use crate::isa::{MemOperand, MicroOp};
use crate::mem::{AddrMode, CpuMode, MemEnvironment, SegType, SegmentDescriptor};
use crate::profile::{CheckId, Feature};

const FLAT_LIMIT: u64 = 0xffff_ffff;
/// Limit small enough that the secret's logical address exceeds it.
const SHORT_LIMIT: u64 = 0xffff;

struct SegmentVariant {
    id: &'static str,
    name: &'static str,
    check: CheckId,
    selector: u16,
    template: TemplateKind,
    descriptor: fn() -> SegmentDescriptor,
}

impl SpeculationVariant for SegmentVariant {
    fn id(&self) -> &'static str {
        self.id
    }

    fn name(&self) -> &'static str {
        self.name
    }

    fn template(&self) -> TemplateKind {
        self.template
    }

    fn check(&self) -> CheckId {
        self.check
    }

    fn required_features(&self) -> &'static [Feature] {
        &[Feature::Mode32]
    }

    fn addr_mode(&self) -> AddrMode {
        AddrMode::Bits32
    }

    fn prepare_env(&self, env: &mut MemEnvironment, _layout: &Layout) {
        env.addr_mode = AddrMode::Bits32;
        env.cpu_mode = CpuMode::User;
        env.segments.insert(self.selector, (self.descriptor)());
    }

    fn primitive_ops(&self, _layout: &Layout, regs: &RegRoles) -> Vec<MicroOp> {
        match self.template {
            TemplateKind::OneInstrLoad => {
                let mem = MemOperand::base(regs.secret_ptr).with_selector(self.selector);
                vec![MicroOp::load(regs.prim_dst, mem)]
            }
            TemplateKind::TwoInstrStoreLoad => {
                // Store through the corrupted segment, then read the stored
                // value back; the store is the faulting op.
                let mem = MemOperand::base(regs.scratch_ptr).with_selector(self.selector);
                vec![
                    MicroOp::store_reg(regs.stored_value, mem),
                    MicroOp::load(regs.prim_dst, mem),
                ]
            }
            other => unreachable!("segment variant with template {other:?}"),
        }
    }
}

pub(super) fn segment_variants() -> Vec<Arc<dyn SpeculationVariant>> {
    vec![
        Arc::new(SegmentVariant {
            id: "ds-over-limit",
            name: "DS Over-Limit (32-bit)",
            check: CheckId::SegDsLimit,
            selector: SEL_DS,
            template: TemplateKind::OneInstrLoad,
            descriptor: || SegmentDescriptor::flat_data(SHORT_LIMIT),
        }),
        Arc::new(SegmentVariant {
            id: "ss-over-limit",
            name: "SS Over-Limit (32-bit)",
            check: CheckId::SegSsLimit,
            selector: SEL_SS,
            template: TemplateKind::OneInstrLoad,
            descriptor: || SegmentDescriptor::flat_data(SHORT_LIMIT),
        }),
        Arc::new(SegmentVariant {
            id: "ds-not-present",
            name: "DS Not-Present (32-bit)",
            check: CheckId::SegDsPresent,
            selector: SEL_DS,
            template: TemplateKind::OneInstrLoad,
            descriptor: || SegmentDescriptor {
                present: false,
                ..SegmentDescriptor::flat_data(FLAT_LIMIT)
            },
        }),
        Arc::new(SegmentVariant {
            id: "ss-not-present",
            name: "SS Not-Present (32-bit)",
            check: CheckId::SegSsPresent,
            selector: SEL_SS,
            template: TemplateKind::TwoInstrStoreLoad,
            descriptor: || SegmentDescriptor {
                present: false,
                ..SegmentDescriptor::flat_data(FLAT_LIMIT)
            },
        }),
        Arc::new(SegmentVariant {
            id: "ds-execute-only",
            name: "DS Execute-Only (32-bit)",
            check: CheckId::SegCodeAccess,
            selector: SEL_DS,
            template: TemplateKind::TwoInstrStoreLoad,
            descriptor: || SegmentDescriptor {
                seg_type: SegType::CodeXo,
                ..SegmentDescriptor::flat_data(FLAT_LIMIT)
            },
        }),
        Arc::new(SegmentVariant {
            id: "cs-execute-only",
            name: "CS Execute-Only (32-bit)",
            check: CheckId::SegCodeAccess,
            selector: SEL_CS,
            template: TemplateKind::OneInstrLoad,
            descriptor: || SegmentDescriptor {
                seg_type: SegType::CodeXo,
                ..SegmentDescriptor::flat_data(FLAT_LIMIT)
            },
        }),
        Arc::new(SegmentVariant {
            id: "ds-read-only-write",
            name: "DS Read-Only (write, 32-bit)",
            check: CheckId::SegDsWriteRo,
            selector: SEL_DS,
            template: TemplateKind::TwoInstrStoreLoad,
            descriptor: || SegmentDescriptor {
                seg_type: SegType::DataRo,
                ..SegmentDescriptor::flat_data(FLAT_LIMIT)
            },
        }),
        Arc::new(SegmentVariant {
            id: "ss-read-only",
            name: "SS Read-Only (32-bit)",
            check: CheckId::SegSsWriteRo,
            selector: SEL_SS,
            template: TemplateKind::TwoInstrStoreLoad,
            descriptor: || SegmentDescriptor {
                seg_type: SegType::DataRo,
                ..SegmentDescriptor::flat_data(FLAT_LIMIT)
            },
        }),
        Arc::new(SegmentVariant {
            id: "ds-null",
            name: "DS Null (32-bit)",
            check: CheckId::SegDsNull,
            selector: SEL_DS,
            template: TemplateKind::OneInstrLoad,
            descriptor: || SegmentDescriptor {
                null_selector: true,
                ..SegmentDescriptor::flat_data(FLAT_LIMIT)
            },
        }),
        Arc::new(SegmentVariant {
            id: "ss-null",
            name: "SS Null (32-bit)",
            check: CheckId::SegSsNull,
            selector: SEL_SS,
            template: TemplateKind::TwoInstrStoreLoad,
            descriptor: || SegmentDescriptor {
                null_selector: true,
                ..SegmentDescriptor::flat_data(FLAT_LIMIT)
            },
        }),
        Arc::new(SegmentVariant {
            id: "ss-dpl-neq-cpl",
            name: "SS DPL!=CPL (32-bit)",
            check: CheckId::SegSsDpl,
            selector: SEL_SS,
            template: TemplateKind::TwoInstrStoreLoad,
            descriptor: || SegmentDescriptor {
                dpl: 0,
                ..SegmentDescriptor::flat_data(FLAT_LIMIT)
            },
        }),
    ]
}
