//! Page-table based variants: terminal faults (present/reserved), the
//! supervisor-page check, write protection, SMAP and protection keys.

use std::sync::Arc;

use super::{SpeculationVariant, TemplateKind};
use crate::harness::layout::{Layout, RegRoles};
use crate::isa::{MemOperand, MicroOp};
use crate::mem::{CpuMode, MemEnvironment, PageTableEntry};
use crate::profile::{CheckId, Feature};

struct PagingVariant {
    id: &'static str,
    name: &'static str,
    check: CheckId,
    template: TemplateKind,
    features: &'static [Feature],
    terminal: bool,
    cpu_mode: CpuMode,
    corrupt: fn(&mut PageTableEntry),
    tweak: fn(&mut MemEnvironment),
}

impl SpeculationVariant for PagingVariant {
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
        self.features
    }

    fn terminal_fault(&self) -> bool {
        self.terminal
    }

    fn prepare_env(&self, env: &mut MemEnvironment, layout: &Layout) {
        env.cpu_mode = self.cpu_mode;
        let pte = env
            .page_tables
            .get_mut(&layout.secret_page())
            .expect("secret page is mapped");
        (self.corrupt)(pte);
        (self.tweak)(env);
    }

    fn primitive_ops(&self, _layout: &Layout, regs: &RegRoles) -> Vec<MicroOp> {
        match self.template {
            TemplateKind::OneInstrLoad => {
                vec![MicroOp::load(
                    regs.prim_dst,
                    MemOperand::base(regs.secret_ptr),
                )]
            }
            TemplateKind::TwoInstrStoreLoad => {
                // The store targets the protected page itself; the load picks
                // the value back up through the store buffer.
                let mem = MemOperand::base(regs.secret_ptr);
                vec![
                    MicroOp::store_reg(regs.stored_value, mem),
                    MicroOp::load(regs.prim_dst, mem),
                ]
            }
            other => unreachable!("paging variant with template {other:?}"),
        }
    }
}

fn no_tweak(_: &mut MemEnvironment) {}

pub(super) fn paging_variants() -> Vec<Arc<dyn SpeculationVariant>> {
    vec![
        Arc::new(PagingVariant {
            id: "pte-present",
            name: "PTE (Present)",
            check: CheckId::PagePresent,
            template: TemplateKind::OneInstrLoad,
            features: &[Feature::Tsx],
            terminal: true,
            cpu_mode: CpuMode::User,
            corrupt: |pte| pte.present = false,
            tweak: no_tweak,
        }),
        Arc::new(PagingVariant {
            id: "pte-reserved",
            name: "PTE (Reserved)",
            check: CheckId::PageReserved,
            template: TemplateKind::OneInstrLoad,
            features: &[Feature::Tsx],
            terminal: true,
            cpu_mode: CpuMode::User,
            corrupt: |pte| pte.reserved_set = true,
            tweak: no_tweak,
        }),
        Arc::new(PagingVariant {
            id: "pte-us",
            name: "PTE (US)",
            check: CheckId::PageUs,
            template: TemplateKind::OneInstrLoad,
            features: &[],
            terminal: false,
            cpu_mode: CpuMode::User,
            corrupt: |pte| pte.us = false,
            tweak: no_tweak,
        }),
        Arc::new(PagingVariant {
            id: "pkey-user",
            name: "Protection Key (User)",
            check: CheckId::PagePkey,
            template: TemplateKind::OneInstrLoad,
            features: &[Feature::Pke],
            terminal: false,
            cpu_mode: CpuMode::User,
            corrupt: |pte| pte.pkey = 5,
            tweak: |env| {
                env.feature_state.pke_enabled = true;
                env.feature_state.pkru_denied.insert(5);
            },
        }),
        Arc::new(PagingVariant {
            id: "pkey-kernel",
            name: "Protection Key (Kernel)",
            check: CheckId::PagePkey,
            template: TemplateKind::OneInstrLoad,
            features: &[Feature::Pke],
            terminal: false,
            cpu_mode: CpuMode::Supervisor,
            corrupt: |pte| pte.pkey = 5,
            tweak: |env| {
                env.feature_state.pke_enabled = true;
                env.feature_state.pkru_denied.insert(5);
            },
        }),
        Arc::new(PagingVariant {
            id: "smap",
            name: "SMAP violation",
            check: CheckId::PageSmap,
            template: TemplateKind::OneInstrLoad,
            features: &[Feature::Smap],
            terminal: false,
            cpu_mode: CpuMode::Supervisor,
            // The secret page stays a user page; supervisor access trips
            // SMAP once it is enabled.
            corrupt: |pte| pte.us = true,
            tweak: |env| env.feature_state.smap_enabled = true,
        }),
        Arc::new(PagingVariant {
            id: "pte-rw-write",
            name: "PTE (write w/ RW=0)",
            check: CheckId::PageRw,
            template: TemplateKind::TwoInstrStoreLoad,
            features: &[],
            terminal: false,
            cpu_mode: CpuMode::User,
            corrupt: |pte| pte.rw = false,
            tweak: no_tweak,
        }),
    ]
}
