//! Measurement harness: composes gadget templates into runnable test cases,
//! controls the memory environment, and receives covert-channel signals.
//!
//! A test case is an ordered list of gadgets — windowing gadgets that delay
//! retirement, the speculation primitive under test, a disclosure gadget
//! that transmits a value into the channel, and optionally a suppressing
//! primitive that conceals the whole sequence behind its own squash. The
//! flush-reload receiver then probes 256 page-granular channel slots and
//! classifies the outcome.

pub mod layout;
mod measure;
pub mod report;

pub use measure::{
    dual_primitive_test, exploitability, fp_window_template, measure_relative_p1,
    measure_speculation_window, misprediction_correct_control, misprediction_window, pinned_window,
    prefetch_experiment, resolution_bound, rob_occupancy_cap, squash_threshold, sweep_p2,
    DifferentialTimes, MispredictMeasurement, PrefetchReport, RelativeP1, SweepPoint,
    WindowMeasurement,
};

use std::collections::BTreeMap;

use thiserror::Error;

use layout::{Layout, RegRoles, CHANNEL_SLOTS, PIN_DISP};

use crate::isa::{InstrSeq, IsaError, MemOperand, MicroOp, Register};
use crate::mem::{probe_reload, CpuMode, Level, MemEnvironment, MemError, PageTableEntry};
use crate::pipeline::{simulate, ExecTrace, SimError};
use crate::profile::ProcessorProfile;
use crate::variants::{SpeculationVariant, VariantRegistry};

/// Default seed for every experiment, so reports reproduce byte-for-byte.
pub const DEFAULT_SEED: u64 = 0x5eed;

/// One building block of an assembled instruction sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GadgetSpec {
    /// Slow memory load that pins retirement. When `feeds_primitive` it
    /// loads the secret's address and everything downstream depends on it;
    /// otherwise it retires slowly off to the side.
    WindowingSlowLoad { feeds_primitive: bool },
    /// 25 repetitions of a dependent three-op FP pattern (75 ops) with a
    /// serialization barrier inserted at `cpuid_pos` (0..=75); only the ops
    /// after the barrier are effective.
    WindowingFpChain { cpuid_pos: usize },
    /// Load dependent on the windowing pointer that lands on an L2-resident,
    /// translation-flushed page: fixes phase two independently of the
    /// primitive.
    PinRetirement,
    /// Pointer-chased faulting load that never retires; bounds the whole
    /// sequence's transient window and conceals its architectural effects.
    Suppressing { chase_depth: usize },
    /// The speculation primitive of the named catalog variant.
    Primitive { variant_id: String },
    /// Legal load of the secret's twin; control half of differential runs.
    TwinLoad,
    /// Single covert-channel sender dependent on the primitive's value.
    DisclosureI,
    /// `addsub_count` chained one-cycle ops between the primitive's value
    /// and the sender.
    DisclosureII { addsub_count: usize },
    /// Disclosure chain seeded off the windowing load instead of the
    /// primitive; the sender lands in slot zero.
    DisclosureIndependent { addsub_count: usize },
}

/// Residency and translation state the accessibility controller applies to
/// the interesting pages before a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvSetup {
    pub secret_level: Level,
    pub secret_tlb: bool,
    pub twin_level: Level,
    pub twin_tlb: bool,
}

impl Default for EnvSetup {
    fn default() -> Self {
        EnvSetup {
            secret_level: Level::L1,
            secret_tlb: true,
            twin_level: Level::L1,
            twin_tlb: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestCase {
    pub gadgets: Vec<GadgetSpec>,
    pub secret_value: u64,
    pub env_setup: EnvSetup,
}

impl TestCase {
    pub fn new(gadgets: Vec<GadgetSpec>) -> Self {
        TestCase {
            gadgets,
            secret_value: Layout::default().secret_value,
            env_setup: EnvSetup::default(),
        }
    }

    /// Replace the swept disclosure count, wherever the disclosure sits.
    pub fn with_disclosure_count(&self, k: usize) -> TestCase {
        let mut tc = self.clone();
        for g in &mut tc.gadgets {
            match g {
                GadgetSpec::DisclosureII { addsub_count }
                | GadgetSpec::DisclosureIndependent { addsub_count } => *addsub_count = k,
                _ => {}
            }
        }
        tc
    }
}

/// Classified covert-channel result of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SignalOutcome {
    /// The secret's slot was touched.
    Correct,
    /// Slot zero was touched and the secret's slot was not.
    Zero,
    /// No slot was touched.
    None,
}

impl std::fmt::Display for SignalOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SignalOutcome::Correct => "correct",
            SignalOutcome::Zero => "zero",
            SignalOutcome::None => "none",
        })
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown variant `{id}`{}", suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownVariant {
        id: String,
        suggestion: Option<String>,
    },
    #[error("variant `{0}` is not supported by this profile (missing feature)")]
    UnsupportedVariant(String),
    #[error("terminal-fault variants yield no usable suppressed window; relative phase-one measurement is unsupported for `{0}`")]
    TerminalFault(String),
    #[error("variant `{0}` permits no speculation on this profile; there is no window to measure")]
    NoSpeculation(String),
    #[error("suppressing window too small to contain the disclosure even at chase depth {0}")]
    SuppressorTooSmall(usize),
    #[error(
        "disclosure scan hit the reorder-buffer allocation budget at every usable chase depth; \
         the differential windows are not comparable at this data level"
    )]
    BudgetClipped,
    #[error("test case has no {0} gadget")]
    MissingGadget(&'static str),
    #[error("secret value {0:#x} does not fit the 256-slot channel")]
    SecretOutOfRange(u64),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error(transparent)]
    Isa(#[from] IsaError),
}

/// A fully assembled run: sequence, environment, live-ins and the indices
/// the measurements need for white-box inspection.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub seq: InstrSeq,
    pub env: MemEnvironment,
    pub live_ins: BTreeMap<Register, u64>,
    pub layout: Layout,
    /// Index of the primitive's faulting op.
    pub prim_index: Option<usize>,
    /// Index of the op whose destination feeds the disclosure gadget.
    pub prim_value_index: Option<usize>,
    pub sender_index: Option<usize>,
    /// Ops issued before the disclosure gadget starts.
    pub pre_disclosure_ops: usize,
}

/// Resolve the primitive named by the test case against the registry and
/// assemble. Errors on unknown ids carry a nearest-name suggestion.
pub fn assemble(
    tc: &TestCase,
    registry: &VariantRegistry,
    profile: &ProcessorProfile,
) -> Result<Assembled, HarnessError> {
    let variant = match tc.gadgets.iter().find_map(|g| match g {
        GadgetSpec::Primitive { variant_id } => Some(variant_id.as_str()),
        _ => None,
    }) {
        Some(id) => Some(
            registry
                .get(id)
                .ok_or_else(|| HarnessError::UnknownVariant {
                    id: id.to_string(),
                    suggestion: registry.suggest(id).map(str::to_string),
                })?
                .clone(),
        ),
        None => None,
    };
    assemble_with(tc, variant.as_deref(), profile)
}

/// Assemble with an already-resolved variant strategy.
pub fn assemble_with(
    tc: &TestCase,
    variant: Option<&dyn SpeculationVariant>,
    profile: &ProcessorProfile,
) -> Result<Assembled, HarnessError> {
    let layout = Layout {
        secret_value: tc.secret_value,
        ..Layout::default()
    };
    if layout.secret_slot() >= CHANNEL_SLOTS {
        return Err(HarnessError::SecretOutOfRange(tc.secret_value));
    }
    if let Some(v) = variant {
        if !v.supported_by(profile) {
            return Err(HarnessError::UnsupportedVariant(v.id().to_string()));
        }
    }

    let mut roles = RegRoles::default();
    let feeds = tc.gadgets.iter().any(|g| {
        matches!(
            g,
            GadgetSpec::WindowingSlowLoad {
                feeds_primitive: true
            }
        )
    });
    if feeds {
        roles.secret_ptr = roles.w_dst;
    }

    let chase_depth = tc
        .gadgets
        .iter()
        .find_map(|g| match g {
            GadgetSpec::Suppressing { chase_depth } => Some(*chase_depth),
            _ => None,
        })
        .unwrap_or(0);

    let mut env = base_env(&layout, tc, chase_depth);
    if let Some(v) = variant {
        v.prepare_env(&mut env, &layout);
    }
    if env.cpu_mode == CpuMode::Supervisor {
        // Supervisor-mode tests run out of kernel-owned buffers; only the
        // secret page keeps whatever ownership the variant gave it.
        let secret_page = layout.secret_page();
        for (&page, pte) in env.page_tables.iter_mut() {
            if page != secret_page {
                pte.us = false;
            }
        }
    }
    apply_env_setup(&mut env, &layout, &tc.env_setup);

    let mut ops: Vec<MicroOp> = Vec::new();
    let mut prim_index = None;
    let mut prim_value_index = None;
    let mut sender_index = None;
    let mut pre_disclosure_ops = 0;

    for gadget in &tc.gadgets {
        match gadget {
            GadgetSpec::WindowingSlowLoad { .. } => {
                ops.push(MicroOp::load(roles.w_dst, MemOperand::base(roles.w_ptr)));
            }
            GadgetSpec::WindowingFpChain { cpuid_pos } => {
                assert!(*cpuid_pos <= 75, "cpuid_pos must be 0..=75");
                let mut fp_ops = Vec::with_capacity(76);
                for trio in 0..25 {
                    let _ = trio;
                    fp_ops.push(MicroOp::fp_movapd(roles.fp_b, roles.fp_a));
                    fp_ops.push(MicroOp::fp_addpd(roles.fp_a, roles.fp_a, roles.fp_b));
                    fp_ops.push(MicroOp::fp_mulpd(roles.fp_a, roles.fp_a, roles.fp_b));
                }
                fp_ops.insert(*cpuid_pos, MicroOp::cpuid());
                ops.extend(fp_ops);
            }
            GadgetSpec::PinRetirement => {
                let mem = MemOperand {
                    displacement: PIN_DISP as i64,
                    ..MemOperand::base(roles.w_dst)
                };
                ops.push(MicroOp::load(roles.pin_dst, mem));
            }
            GadgetSpec::Suppressing { chase_depth } => {
                for _ in 0..*chase_depth {
                    ops.push(MicroOp::load(roles.chase, MemOperand::base(roles.chase)));
                }
                ops.push(MicroOp::load(roles.pin_dst, MemOperand::base(roles.chase)));
            }
            GadgetSpec::Primitive { .. } => {
                let v = variant.expect("primitive gadget requires a variant");
                let prim_ops = v.primitive_ops(&layout, &roles);
                prim_index = Some(ops.len());
                ops.extend(prim_ops);
                prim_value_index = Some(ops.len() - 1);
            }
            GadgetSpec::TwinLoad => {
                prim_index = Some(ops.len());
                ops.push(MicroOp::load(
                    roles.prim_dst,
                    MemOperand::base(roles.twin_ptr),
                ));
                prim_value_index = Some(ops.len() - 1);
            }
            GadgetSpec::DisclosureI => {
                pre_disclosure_ops = ops.len();
                let value_reg = roles.prim_dst;
                sender_index = Some(ops.len());
                ops.push(MicroOp::load(
                    roles.sender_dst,
                    MemOperand::base_index(roles.chan_base, value_reg),
                ));
            }
            GadgetSpec::DisclosureII { addsub_count } => {
                pre_disclosure_ops = ops.len();
                ops.push(MicroOp::add(roles.chain, roles.chan_base, roles.prim_dst));
                push_addsub_chain(&mut ops, roles.chain, *addsub_count);
                sender_index = Some(ops.len());
                ops.push(MicroOp::load(
                    roles.sender_dst,
                    MemOperand::base(roles.chain),
                ));
            }
            GadgetSpec::DisclosureIndependent { addsub_count } => {
                pre_disclosure_ops = ops.len();
                ops.push(MicroOp::sub(roles.chain, roles.chain, roles.w_dst));
                ops.push(MicroOp::add(roles.chain, roles.chain, roles.w_dst));
                push_addsub_chain(&mut ops, roles.chain, *addsub_count);
                sender_index = Some(ops.len());
                ops.push(MicroOp::load(
                    roles.sender_dst,
                    MemOperand::base(roles.chain),
                ));
            }
        }
    }

    let live_ins = live_in_values(&layout, &roles, chase_depth, tc);
    let seq = InstrSeq::new(ops)?;
    Ok(Assembled {
        seq,
        env,
        live_ins,
        layout,
        prim_index,
        prim_value_index,
        sender_index,
        pre_disclosure_ops,
    })
}

/// Alternating +1/-1 chain on `reg`, starting with the add so the running
/// value never drops below its base.
fn push_addsub_chain(ops: &mut Vec<MicroOp>, reg: Register, count: usize) {
    for i in 0..count {
        ops.push(if i % 2 == 0 {
            MicroOp::add_imm(reg, 1)
        } else {
            MicroOp::sub_imm(reg, 1)
        });
    }
}

fn base_env(layout: &Layout, tc: &TestCase, chase_depth: usize) -> MemEnvironment {
    let mut env = MemEnvironment::default();

    // Channel: 256 consecutive pages, flushed, warm translations.
    for slot in 0..CHANNEL_SLOTS {
        let addr = layout.channel_slot_addr(slot);
        env.map_page(addr, PageTableEntry::user_rw());
        env.flush_cache(addr);
        env.preload_tlb(addr);
    }

    // Secret and its legal twin carry the same value; the twin's value at
    // +1 covers the disclosure chain's odd-parity addresses.
    for addr in [layout.secret_addr, layout.twin_addr, layout.addr2] {
        env.map_page(addr, PageTableEntry::user_rw());
        env.mem_values.insert(addr, tc.secret_value);
        env.mem_values.insert(addr + 1, tc.secret_value);
        env.preload_tlb(addr);
        env.preload(addr, Level::L1);
    }

    // Windowing pointer slot: slow to fetch, holds the secret's address.
    env.map_page(layout.w_ptr_addr, PageTableEntry::user_rw());
    env.mem_values.insert(layout.w_ptr_addr, layout.secret_addr);
    env.flush_cache(layout.w_ptr_addr);
    env.preload_tlb(layout.w_ptr_addr);

    // Retirement pin: L2-resident, translation flushed.
    env.map_page(layout.pin_addr, PageTableEntry::user_rw());
    env.preload(layout.pin_addr, Level::L2);

    // Scratch page for store templates.
    env.map_page(layout.scratch_addr, PageTableEntry::user_rw());
    env.preload_tlb(layout.scratch_addr);
    env.preload(layout.scratch_addr, Level::L1);

    // Suppressor: LLC-resident pointer chase ending at a kernel page at
    // address zero with a cold translation.
    let hops = chase_depth.max(1);
    for i in 0..hops {
        let addr = layout.chase_addr(i);
        env.map_page(addr, PageTableEntry::user_rw());
        env.preload(addr, Level::Llc);
        env.preload_tlb(addr);
        let next = if i + 1 < hops {
            layout.chase_addr(i + 1)
        } else {
            layout.null_addr
        };
        env.mem_values.insert(addr, next);
    }
    env.map_page(
        layout.null_addr,
        PageTableEntry {
            us: false,
            ..PageTableEntry::user_rw()
        },
    );
    env.flush_cache(layout.null_addr);

    // Misprediction experiment pages.
    env.map_page(layout.cond_addr, PageTableEntry::user_rw());
    env.preload(layout.cond_addr, Level::Llc);
    env.preload_tlb(layout.cond_addr);
    env.mem_values.insert(layout.cond_addr, 1);
    env.map_page(layout.spec_value_addr, PageTableEntry::user_rw());
    env.preload(layout.spec_value_addr, Level::L1);
    env.preload_tlb(layout.spec_value_addr);
    env.mem_values
        .insert(layout.spec_value_addr, tc.secret_value);
    env.mem_values
        .insert(layout.spec_value_addr + 1, tc.secret_value);

    env
}

fn apply_env_setup(env: &mut MemEnvironment, layout: &Layout, setup: &EnvSetup) {
    set_level(env, layout.secret_addr, setup.secret_level);
    if setup.secret_tlb {
        env.preload_tlb(layout.secret_addr);
    } else {
        env.flush_tlb(layout.secret_addr);
    }
    set_level(env, layout.twin_addr, setup.twin_level);
    if setup.twin_tlb {
        env.preload_tlb(layout.twin_addr);
    } else {
        env.flush_tlb(layout.twin_addr);
    }
}

fn set_level(env: &mut MemEnvironment, addr: u64, level: Level) {
    if level == Level::Mem {
        env.flush_cache(addr);
    } else {
        env.preload(addr, level);
    }
}

fn live_in_values(
    layout: &Layout,
    roles: &RegRoles,
    chase_depth: usize,
    tc: &TestCase,
) -> BTreeMap<Register, u64> {
    let chase_start = if chase_depth == 0 {
        layout.null_addr
    } else {
        layout.chase_base
    };
    BTreeMap::from([
        (roles.w_ptr, layout.w_ptr_addr),
        (Register::gp(5), layout.secret_addr),
        (roles.chan_base, layout.channel_base),
        (roles.chain, layout.channel_base),
        (roles.scratch_ptr, layout.scratch_addr),
        (roles.stored_value, tc.secret_value),
        (roles.chase, chase_start),
        (roles.cond_ptr, layout.cond_addr),
        (roles.twin_ptr, layout.twin_addr),
        (roles.chain2, 0),
        // Address source for the misprediction experiment's anchor op.
        (roles.prim2_dst, layout.spec_value_addr),
        (roles.fp_secret, tc.secret_value),
        (Register::fp(1), 0),
        (roles.fp_a, 3),
        (roles.fp_b, 5),
    ])
}

/// Flush-reload pass over the channel after a run: a slot is hot when its
/// reload beats the midpoint between an L1 and an LLC hit.
pub fn probe_channel(
    env: &MemEnvironment,
    layout: &Layout,
    profile: &ProcessorProfile,
) -> Vec<u64> {
    let threshold = (profile.latency.l1 + profile.latency.llc) / 2;
    (0..CHANNEL_SLOTS)
        .filter(|&slot| probe_reload(env, layout.channel_slot_addr(slot), profile) < threshold)
        .collect()
}

pub fn classify(hits: &[u64], layout: &Layout) -> SignalOutcome {
    if hits.contains(&layout.secret_slot()) {
        SignalOutcome::Correct
    } else if hits.contains(&0) {
        SignalOutcome::Zero
    } else {
        SignalOutcome::None
    }
}

/// Assemble, simulate and classify the covert-channel outcome.
pub fn run_covert_test(
    tc: &TestCase,
    registry: &VariantRegistry,
    profile: &ProcessorProfile,
    seed: u64,
) -> Result<SignalOutcome, HarnessError> {
    let assembled = assemble(tc, registry, profile)?;
    let (outcome, _) = run_assembled(&assembled, profile, seed)?;
    Ok(outcome)
}

pub fn run_assembled(
    assembled: &Assembled,
    profile: &ProcessorProfile,
    seed: u64,
) -> Result<(SignalOutcome, ExecTrace), HarnessError> {
    let trace = simulate(
        &assembled.seq,
        &assembled.env,
        &assembled.live_ins,
        profile,
        seed,
    )?;
    let hits = probe_channel(&trace.final_env, &assembled.layout, profile);
    Ok((classify(&hits, &assembled.layout), trace))
}
