//! The measurement procedures: exploitability matrix, speculation-window
//! scans, the serialization-barrier sweep, differential phase-one latency,
//! prefetch residue, misprediction windows and the dual-primitive probe.

use std::collections::BTreeMap;

use super::{
    assemble, assemble_with, run_assembled, Assembled, EnvSetup, GadgetSpec, HarnessError,
    SignalOutcome, TestCase,
};
use crate::isa::{InstrSeq, MemOperand, MicroOp};
use crate::mem::{page_of, probe_reload, Level};
use crate::pipeline::simulate;
use crate::profile::{Exploitability, ProcessorProfile};
use crate::rng::Xorshift64;
use crate::variants::{SpeculationVariant, VariantRegistry};

/// Result of a speculation-window scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowMeasurement {
    /// Largest chained-op count that still lets the sender execute.
    pub window: usize,
    /// The channel stayed silent even with no inserted ops.
    pub no_speculation: bool,
}

/// Linear scan over the disclosure chain length, from zero upward, capped
/// at the ROB size; returns the largest count whose outcome is a signal.
/// The scan is deliberately linear so a monotonicity violation would be
/// observed rather than assumed away.
pub fn measure_speculation_window(
    template: &TestCase,
    registry: &VariantRegistry,
    profile: &ProcessorProfile,
    seed: u64,
) -> Result<WindowMeasurement, HarnessError> {
    if !template.gadgets.iter().any(|g| {
        matches!(
            g,
            GadgetSpec::DisclosureII { .. } | GadgetSpec::DisclosureIndependent { .. }
        )
    }) {
        return Err(HarnessError::MissingGadget("tunable disclosure"));
    }
    // The environment does not depend on the chain length; assemble once
    // and splice the chain in front of the sender for each count.
    let base = assemble(&template.with_disclosure_count(0), registry, profile)?;
    let sender = base
        .seq
        .ops
        .last()
        .cloned()
        .expect("disclosure has a sender");
    let chain_reg = super::layout::RegRoles::default().chain;

    let mut window = None;
    for k in 0..=profile.rob_size {
        let mut ops = base.seq.ops[..base.seq.len() - 1].to_vec();
        super::push_addsub_chain(&mut ops, chain_reg, k);
        ops.push(sender.clone());
        let seq = InstrSeq::new(ops)?;
        let trace = simulate(&seq, &base.env, &base.live_ins, profile, seed)?;
        let hits = super::probe_channel(&trace.final_env, &base.layout, profile);
        if super::classify(&hits, &base.layout) == SignalOutcome::None {
            return Ok(match window {
                Some(w) => WindowMeasurement {
                    window: w,
                    no_speculation: false,
                },
                None => WindowMeasurement {
                    window: 0,
                    no_speculation: true,
                },
            });
        }
        window = Some(k);
    }
    Ok(WindowMeasurement {
        window: window.unwrap_or(0),
        no_speculation: false,
    })
}

/// Hard cap the ROB places on a tunable disclosure: every op issued before
/// the disclosure, plus its seed op and the sender, must share the
/// allocation budget with the chain.
pub fn rob_occupancy_cap(pre_disclosure_ops: usize, profile: &ProcessorProfile) -> usize {
    profile.rob_size - pre_disclosure_ops - 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepPoint {
    pub cpuid_pos: usize,
    pub effective_size: usize,
    pub window: usize,
}

/// Template for the barrier-position sweep and the plain window
/// measurement: FP-chain windowing, the primitive, and a tunable
/// disclosure. The secret sits in memory with a warm translation, so the
/// primitive forwards its zero dummy early and the chain start is fixed.
pub fn fp_window_template(variant_id: &str, cpuid_pos: usize) -> TestCase {
    let mut tc = TestCase::new(vec![
        GadgetSpec::WindowingFpChain { cpuid_pos },
        GadgetSpec::Primitive {
            variant_id: variant_id.to_string(),
        },
        GadgetSpec::DisclosureII { addsub_count: 0 },
    ]);
    tc.env_setup = EnvSetup {
        secret_level: Level::Mem,
        secret_tlb: true,
        ..EnvSetup::default()
    };
    tc
}

/// Move the serialization barrier across the windowing gadget and measure
/// the window at every position. Runs fan out over `jobs` workers; rows
/// come back ordered by effective gadget size.
pub fn sweep_p2(
    variant_id: &str,
    registry: &VariantRegistry,
    profile: &ProcessorProfile,
    seed: u64,
    jobs: usize,
) -> Result<Vec<SweepPoint>, HarnessError> {
    let positions: Vec<usize> = (0..=75).rev().collect();
    let jobs = jobs.max(1);
    let mut results: Vec<Option<Result<SweepPoint, HarnessError>>> =
        (0..positions.len()).map(|_| None).collect();

    std::thread::scope(|scope| {
        let chunks: Vec<(usize, &[usize])> = positions
            .chunks(positions.len().div_ceil(jobs))
            .enumerate()
            .collect();
        let mut handles = Vec::new();
        for (chunk_idx, chunk) in chunks {
            let handle =
                scope.spawn(move || {
                    let mut out = Vec::with_capacity(chunk.len());
                    for &pos in chunk {
                        let template = fp_window_template(variant_id, pos);
                        let point = measure_speculation_window(&template, registry, profile, seed)
                            .map(|m| SweepPoint {
                                cpuid_pos: pos,
                                effective_size: 75 - pos,
                                window: m.window,
                            });
                        out.push(point);
                    }
                    (chunk_idx, out)
                });
            handles.push(handle);
        }
        let chunk_size = positions.len().div_ceil(jobs);
        for handle in handles {
            let (chunk_idx, points) = handle.join().expect("sweep worker panicked");
            for (i, p) in points.into_iter().enumerate() {
                results[chunk_idx * chunk_size + i] = Some(p);
            }
        }
    });

    results
        .into_iter()
        .map(|r| r.expect("sweep covered every position"))
        .collect()
}

/// Enumerate cache-level and translation combinations and classify the
/// variant: exploitable if any combination leaks the true value,
/// non-exploitable if only the zero dummy ever shows, no-speculation when
/// the channel stays silent everywhere, untestable when the profile lacks
/// a required feature.
pub fn exploitability(
    variant: &dyn SpeculationVariant,
    profile: &ProcessorProfile,
) -> Exploitability {
    if !variant.supported_by(profile) {
        return Exploitability::NA;
    }
    let outcomes: Vec<SignalOutcome> = env_combos()
        .into_iter()
        .map(|(level, tlb)| {
            let mut tc = TestCase::new(vec![
                GadgetSpec::WindowingSlowLoad {
                    feeds_primitive: false,
                },
                GadgetSpec::Primitive {
                    variant_id: variant.id().to_string(),
                },
                GadgetSpec::DisclosureI,
            ]);
            tc.env_setup.secret_level = level;
            tc.env_setup.secret_tlb = tlb;
            let assembled =
                assemble_with(&tc, Some(variant), profile).expect("exploitability testcase");
            let (outcome, _) =
                run_assembled(&assembled, profile, super::DEFAULT_SEED).expect("combo run");
            outcome
        })
        .collect();
    classify_outcomes(&outcomes)
}

/// Data-level and translation-state combinations probed per variant.
pub fn env_combos() -> Vec<(Level, bool)> {
    let mut combos = Vec::new();
    for level in [Level::L1, Level::L2, Level::Llc, Level::Mem] {
        for tlb in [true, false] {
            combos.push((level, tlb));
        }
    }
    combos
}

/// Letter for a set of combo outcomes; insensitive to their order.
pub fn classify_outcomes(outcomes: &[SignalOutcome]) -> Exploitability {
    if outcomes.contains(&SignalOutcome::Correct) {
        Exploitability::Y
    } else if outcomes.contains(&SignalOutcome::Zero) {
        Exploitability::N
    } else {
        Exploitability::R
    }
}

/// The differential timing quantities of a relative phase-one measurement.
/// `t_spec1` is the suppressor's window, `t_spec2`/`t_spec2_prime` the
/// windows measured under the faulting and the control run, `t_delay` the
/// primitive's dispatch offset. The identity
/// `t_data - t_p1 == t_spec2 - t_spec2_prime` ties the chain-count scans to
/// the pipeline-internal times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DifferentialTimes {
    pub t_spec1: u64,
    pub t_spec2: u64,
    pub t_spec2_prime: u64,
    pub t_delay: u64,
    pub t_p1: u64,
    pub t_data: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelativeP1 {
    /// Phase-one latency relative to the data fetch: negative means the
    /// check fires before the data could have arrived.
    pub relative_p1: i64,
    pub chase_depth: usize,
    pub times: DifferentialTimes,
}

const MAX_CHASE_DEPTH: usize = 8;

/// Differential phase-one measurement under a suppressing primitive.
///
/// Run one: the faulting access with its data flushed to memory, so the
/// zero dummy returns at the check's latency; the tunable disclosure
/// measures the remaining window. Run two: a legal twin at `data_level`
/// measures the window left after a real fetch. The difference of the two
/// windows is the phase-one latency relative to the data fetch.
///
/// The chase depth grows until the suppressor's window covers the twin's
/// fetch; scans that instead run into the ROB allocation budget are
/// refused, since a clipped window is not comparable.
pub fn measure_relative_p1(
    variant_id: &str,
    data_level: Level,
    tlb_present: bool,
    registry: &VariantRegistry,
    profile: &ProcessorProfile,
    seed: u64,
) -> Result<RelativeP1, HarnessError> {
    let variant = registry
        .get(variant_id)
        .ok_or_else(|| HarnessError::UnknownVariant {
            id: variant_id.to_string(),
            suggestion: registry.suggest(variant_id).map(str::to_string),
        })?;
    if !variant.supported_by(profile) {
        return Err(HarnessError::UnsupportedVariant(variant_id.to_string()));
    }
    if variant.terminal_fault() {
        // A suppressed terminal fault fetches neither data nor zero; there
        // is no window to compare.
        return Err(HarnessError::TerminalFault(variant_id.to_string()));
    }

    let mut clipped = false;
    for depth in 1..=MAX_CHASE_DEPTH {
        let setup = EnvSetup {
            secret_level: Level::Mem,
            secret_tlb: tlb_present,
            twin_level: data_level,
            twin_tlb: tlb_present,
        };

        let mut fault_tc = TestCase::new(vec![
            GadgetSpec::Suppressing { chase_depth: depth },
            GadgetSpec::Primitive {
                variant_id: variant_id.to_string(),
            },
            GadgetSpec::DisclosureII { addsub_count: 0 },
        ]);
        fault_tc.env_setup = setup;
        let fault_window = measure_speculation_window(&fault_tc, registry, profile, seed)?;
        if fault_window.no_speculation {
            return Err(HarnessError::NoSpeculation(variant_id.to_string()));
        }

        let mut ctrl_tc = TestCase::new(vec![
            GadgetSpec::Suppressing { chase_depth: depth },
            GadgetSpec::TwinLoad,
            GadgetSpec::DisclosureII { addsub_count: 0 },
        ]);
        ctrl_tc.env_setup = setup;
        let ctrl_window = measure_speculation_window(&ctrl_tc, registry, profile, seed)?;
        if ctrl_window.no_speculation {
            // The twin's fetch outlives the suppressor's window; lengthen
            // the chase and try again.
            continue;
        }

        // A scan that ran into the ROB allocation budget measured the
        // budget, not the suppressor's window; the two runs would not be
        // comparable.
        let fault_cap = {
            let assembled = assemble(&fault_tc, registry, profile)?;
            rob_occupancy_cap(assembled.pre_disclosure_ops, profile)
        };
        let ctrl_cap = {
            let assembled = assemble(&ctrl_tc, registry, profile)?;
            rob_occupancy_cap(assembled.pre_disclosure_ops, profile)
        };
        if fault_window.window >= fault_cap || ctrl_window.window >= ctrl_cap {
            clipped = true;
            continue;
        }

        let (t_p1, t_delay) = {
            let assembled = assemble(&fault_tc, registry, profile)?;
            let (_, trace) = run_assembled(&assembled, profile, seed)?;
            let prim = assembled.prim_index.expect("primitive present");
            let entry = trace.entry(prim);
            let dispatch = entry.dispatch_cycle.expect("primitive dispatched");
            let fault = entry.fault.expect("primitive faulted");
            (fault.p1_cycle - dispatch, dispatch)
        };
        let t_data = {
            let assembled = assemble(&ctrl_tc, registry, profile)?;
            let (_, trace) = run_assembled(&assembled, profile, seed)?;
            let prim = assembled.prim_index.expect("twin load present");
            let entry = trace.entry(prim);
            entry.complete_cycle.expect("twin completes") - entry.dispatch_cycle.unwrap()
        };

        let t_spec2 = fault_window.window as u64;
        let t_spec2_prime = ctrl_window.window as u64;
        return Ok(RelativeP1 {
            relative_p1: t_spec2_prime as i64 - t_spec2 as i64,
            chase_depth: depth,
            times: DifferentialTimes {
                t_spec1: t_delay + t_p1 + t_spec2,
                t_spec2,
                t_spec2_prime,
                t_delay,
                t_p1,
                t_data,
            },
        });
    }
    if clipped {
        Err(HarnessError::BudgetClipped)
    } else {
        Err(HarnessError::SuppressorTooSmall(MAX_CHASE_DEPTH))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefetchReport {
    /// Reload latency of the secret (via its shadow mapping) after each
    /// round.
    pub histogram: BTreeMap<u64, u32>,
    pub correct: u32,
    pub zero: u32,
    pub none: u32,
    pub final_level: Level,
}

/// Run the bare primitive `rounds` times with exceptions suppressed,
/// tracking where the secret's line ends up and what the channel saw.
/// The flush-reload pass after each round thrashes any transient L1 fill
/// back to L2.
pub fn prefetch_experiment(
    variant_id: &str,
    initial_level: Level,
    rounds: u32,
    registry: &VariantRegistry,
    profile: &ProcessorProfile,
    seed: u64,
) -> Result<PrefetchReport, HarnessError> {
    let mut rng = Xorshift64::new(seed);
    let mut level = initial_level;
    let mut report = PrefetchReport {
        histogram: BTreeMap::new(),
        correct: 0,
        zero: 0,
        none: 0,
        final_level: initial_level,
    };

    if rounds == 0 {
        let tc = bare_primitive_testcase(variant_id, level);
        let assembled = assemble(&tc, registry, profile)?;
        let lat = probe_reload(&assembled.env, assembled.layout.secret_addr, profile);
        *report.histogram.entry(lat).or_insert(0) += 1;
        return Ok(report);
    }

    // Only the secret's residency varies between rounds; assemble one
    // environment per level.
    let mut per_level: BTreeMap<Level, Assembled> = BTreeMap::new();
    for _ in 0..rounds {
        if let std::collections::btree_map::Entry::Vacant(e) = per_level.entry(level) {
            let tc = bare_primitive_testcase(variant_id, level);
            e.insert(assemble(&tc, registry, profile)?);
        }
        let assembled = &per_level[&level];
        let (outcome, trace) = run_assembled(assembled, profile, rng.next_u64())?;
        match outcome {
            SignalOutcome::Correct => report.correct += 1,
            SignalOutcome::Zero => report.zero += 1,
            SignalOutcome::None => report.none += 1,
        }
        let secret = assembled.layout.secret_addr;
        let after = trace.final_env.residency_of(secret);
        let lat = probe_reload(&trace.final_env, secret, profile);
        *report.histogram.entry(lat).or_insert(0) += 1;
        // A transient L1 fill survives exactly one round: the round that
        // consumes it (and leaks the true value) churns enough of L1 that
        // the line drops back to L2 afterwards.
        level = if after == Level::L1 && outcome == SignalOutcome::Correct {
            Level::L2
        } else {
            after
        };
    }
    // Teardown reload leaves no transient fill behind.
    report.final_level = if level == Level::L1 { Level::L2 } else { level };
    Ok(report)
}

fn bare_primitive_testcase(variant_id: &str, level: Level) -> TestCase {
    let mut tc = TestCase::new(vec![
        GadgetSpec::Primitive {
            variant_id: variant_id.to_string(),
        },
        GadgetSpec::DisclosureI,
    ]);
    tc.env_setup.secret_level = level;
    tc.env_setup.secret_tlb = true;
    tc
}

/// Pinned-retirement squash probe: an independent disclosure chain behind a
/// faulting load whose phase two is fixed by the windowing load. The
/// threshold where the signal disappears counts the issued-but-unexecuted
/// ops the squash catches.
pub fn squash_threshold(
    registry: &VariantRegistry,
    profile: &ProcessorProfile,
    seed: u64,
) -> Result<WindowMeasurement, HarnessError> {
    let mut tc = TestCase::new(vec![
        GadgetSpec::WindowingSlowLoad {
            feeds_primitive: true,
        },
        GadgetSpec::Primitive {
            variant_id: "pte-us".to_string(),
        },
        GadgetSpec::DisclosureIndependent { addsub_count: 0 },
    ]);
    tc.env_setup.secret_level = Level::Mem;
    tc.env_setup.secret_tlb = true;
    measure_speculation_window(&tc, registry, profile, seed)
}

/// Window-independence probe: same shape as the squash test plus the
/// retirement pin; flipping the secret's translation state moves phase one
/// without moving the measured window.
pub fn pinned_window(
    secret_tlb: bool,
    registry: &VariantRegistry,
    profile: &ProcessorProfile,
    seed: u64,
) -> Result<WindowMeasurement, HarnessError> {
    let mut tc = TestCase::new(vec![
        GadgetSpec::WindowingSlowLoad {
            feeds_primitive: true,
        },
        GadgetSpec::PinRetirement,
        GadgetSpec::Primitive {
            variant_id: "pte-us".to_string(),
        },
        GadgetSpec::DisclosureIndependent { addsub_count: 0 },
    ]);
    tc.env_setup.secret_level = Level::Mem;
    tc.env_setup.secret_tlb = secret_tlb;
    measure_speculation_window(&tc, registry, profile, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MispredictMeasurement {
    pub window: usize,
    /// Closed-form branch-resolution bound the window must equal.
    pub resolution_bound: usize,
    pub no_speculation: bool,
}

/// Measure the wrong-path window behind a deliberately mispredicted
/// branch. The windowing load only delays the branch's retirement; the
/// squash happens at resolution, so the window must not move with it.
pub fn misprediction_window(
    with_slow_windowing: bool,
    profile: &ProcessorProfile,
    seed: u64,
) -> Result<MispredictMeasurement, HarnessError> {
    let shell = assemble_with(&TestCase::new(vec![]), None, profile)?;
    let roles = super::layout::RegRoles::default();

    let mut window = None;
    for k in 0..=profile.rob_size {
        let seq = mispredict_seq(with_slow_windowing, k, &roles, false);
        let trace = simulate(&seq, &shell.env, &shell.live_ins, profile, seed)?;
        let hits = super::probe_channel(&trace.final_env, &shell.layout, profile);
        let outcome = super::classify(&hits, &shell.layout);
        if outcome == SignalOutcome::None {
            return Ok(MispredictMeasurement {
                window: window.unwrap_or(0),
                resolution_bound: resolution_bound(profile),
                no_speculation: window.is_none(),
            });
        }
        window = Some(k);
    }
    Ok(MispredictMeasurement {
        window: window.unwrap_or(0),
        resolution_bound: resolution_bound(profile),
        no_speculation: false,
    })
}

/// Control run with a correctly predicted branch: the disclosure is on the
/// true path and retires normally.
pub fn misprediction_correct_control(
    profile: &ProcessorProfile,
    seed: u64,
) -> Result<SignalOutcome, HarnessError> {
    let shell = assemble_with(&TestCase::new(vec![]), None, profile)?;
    let roles = super::layout::RegRoles::default();
    let seq = mispredict_seq(false, 0, &roles, true);
    let trace = simulate(&seq, &shell.env, &shell.live_ins, profile, seed)?;
    let hits = super::probe_channel(&trace.final_env, &shell.layout, profile);
    Ok(super::classify(&hits, &shell.layout))
}

/// Wrong-path window bound from the event algebra: the condition load and
/// the address-materializing op both dispatch in cycle 1, the branch
/// resolves one cycle after the condition returns from the LLC, and the
/// first wrong-path load answers from L1 two cycles in. Everything past
/// `llc - l1 - 1` chained ops dispatches after the resolution squash.
pub fn resolution_bound(profile: &ProcessorProfile) -> usize {
    (profile.latency.llc - profile.latency.l1 - 1) as usize
}

fn mispredict_seq(
    with_w: bool,
    k: usize,
    roles: &super::layout::RegRoles,
    correctly_predicted: bool,
) -> InstrSeq {
    let mut ops = Vec::new();
    if with_w {
        ops.push(MicroOp::load(roles.w_dst, MemOperand::base(roles.w_ptr)));
    }
    ops.push(MicroOp::load(
        roles.cond_dst,
        MemOperand::base(roles.cond_ptr),
    ));
    let branch_slot = ops.len();
    ops.push(MicroOp::cpuid()); // placeholder, patched below
                                // Materialize the wrong-path load's address so its dispatch cycle does
                                // not depend on memory-port pressure from the windowing load.
    ops.push(MicroOp::add(roles.chain2, roles.prim2_dst, roles.chain2));
    ops.push(MicroOp::load(
        roles.prim_dst,
        MemOperand::base(roles.chain2),
    ));
    super::push_addsub_chain(&mut ops, roles.prim_dst, k);
    ops.push(MicroOp::load(
        roles.sender_dst,
        MemOperand::base_index(roles.chan_base, roles.prim_dst),
    ));
    let end = ops.len();
    let actual = if correctly_predicted {
        branch_slot + 1
    } else {
        end
    };
    ops[branch_slot] = MicroOp::branch_cond(roles.cond_dst, branch_slot + 1, actual);
    InstrSeq::new(ops).expect("misprediction sequence is well-formed")
}

/// Two primitives back to back, the second delayed by a tunable chain; the
/// channel watches the second one's value. Scans until the signal
/// disappears and reports the outcome at every count.
pub fn dual_primitive_test(
    same_address: bool,
    registry: &VariantRegistry,
    profile: &ProcessorProfile,
    seed: u64,
) -> Result<Vec<(usize, SignalOutcome)>, HarnessError> {
    let tc = TestCase::new(vec![
        GadgetSpec::WindowingSlowLoad {
            feeds_primitive: true,
        },
        GadgetSpec::PinRetirement,
        GadgetSpec::Primitive {
            variant_id: "pte-us".to_string(),
        },
    ]);
    let base = assemble(&tc, registry, profile)?;
    let roles = super::layout::RegRoles::default();
    let layout = base.layout;

    // The second primitive's page gets the same corruption as the first.
    let mut env = base.env.clone();
    let target = if same_address {
        layout.secret_addr
    } else {
        layout.addr2
    };
    if let Some(pte) = env.page_tables.get_mut(&page_of(layout.addr2)) {
        pte.us = false;
    }
    let mut live_ins = base.live_ins.clone();
    live_ins.insert(roles.chain2, target.wrapping_sub(layout.secret_addr));

    let mut rows = Vec::new();
    let mut trailing_none = 0;
    for j in 0..=profile.rob_size {
        let mut ops = base.seq.ops.clone();
        ops.push(MicroOp::add(roles.chain2, roles.chain2, roles.w_dst));
        super::push_addsub_chain(&mut ops, roles.chain2, j);
        ops.push(MicroOp::load(
            roles.prim2_dst,
            MemOperand::base(roles.chain2),
        ));
        ops.push(MicroOp::load(
            roles.sender_dst,
            MemOperand::base_index(roles.chan_base, roles.prim2_dst),
        ));
        let seq = InstrSeq::new(ops)?;
        let trace = simulate(&seq, &env, &live_ins, profile, seed)?;
        let hits = super::probe_channel(&trace.final_env, &layout, profile);
        let outcome = super::classify(&hits, &layout);
        rows.push((j, outcome));
        if outcome == SignalOutcome::None {
            trailing_none += 1;
            if trailing_none >= 3 {
                break;
            }
        } else {
            trailing_none = 0;
        }
    }
    Ok(rows)
}
