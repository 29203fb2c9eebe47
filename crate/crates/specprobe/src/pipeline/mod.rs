//! Cycle-stepped out-of-order engine: in-order issue into a reorder buffer,
//! dependency-driven dispatch, result forwarding, in-order retirement, and
//! two-phase fault handling.
//!
//! Phase one happens at the execution unit the moment a check resolves: if
//! the data has not arrived yet the access is terminated and a zero dummy is
//! forwarded to dependents; data that already arrived stands. Phase two
//! happens when the faulting op reaches the head of the ROB: every younger
//! op is squashed and issue stops for good. Branch mispredictions are fully
//! handled at resolution time (phase one); the branch's own retirement plays
//! no squashing role.
//!
//! Within one cycle the stages run: completions (and branch resolution),
//! dispatch, retirement (and phase two), issue. An op issued in cycle `t`
//! can dispatch from `t + 1`; a consumer can dispatch in the same cycle its
//! producer completes (bypass network). Cache fills survive squashes — that
//! persistence is the covert channel.
//!
//! ROB entries are allocated in program order from a per-run budget of
//! `rob_size` slots and are not recycled within a single transient episode;
//! a sequence that outruns the budget while work is still pending is
//! reported as a diagnostic rather than silently re-timed.

mod oracle;

pub use oracle::{
    analytic_oracle, assert_mem_pages_disjoint, OpTimes, OracleError, OracleTimes, ORACLE_MAX_OPS,
};

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use thiserror::Error;

use crate::isa::{
    build_dependency_graph, ActualTarget, DependencyGraph, InstrSeq, IsaError, OpKind, Register,
    ValueSource,
};
use crate::mem::{
    access, apply_prefetch_side_effect, bound_check, fp_touch_check, priv_read_check, AccessKind,
    CheckOutcome, MemEnvironment, MemError,
};
use crate::profile::{CheckId, ProcessorProfile};
use crate::rng::Xorshift64;

pub const DEFAULT_CYCLE_BUDGET: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobStatus {
    Issued,
    Executing,
    Completed,
    Retired,
    Squashed,
    /// Skipped by a branch redirect or left unissued when the run ended.
    NeverIssued,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultRecord {
    pub check: CheckId,
    /// Absolute cycle phase one fired at the execution unit.
    pub p1_cycle: u64,
    /// Phase one beat the data: a zero dummy was forwarded.
    pub zero_forwarded: bool,
    /// The check forbids speculative forwarding entirely.
    pub no_speculation: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RobEntry {
    pub status: RobStatus,
    pub issue_cycle: Option<u64>,
    pub dispatch_cycle: Option<u64>,
    pub complete_cycle: Option<u64>,
    pub retire_cycle: Option<u64>,
    pub fault: Option<FaultRecord>,
    /// Value forwarded to dependents, when any.
    pub result: Option<u64>,
}

impl RobEntry {
    fn empty() -> Self {
        RobEntry {
            status: RobStatus::NeverIssued,
            issue_cycle: None,
            dispatch_cycle: None,
            complete_cycle: None,
            retire_cycle: None,
            fault: None,
            result: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecTrace {
    pub entries: Vec<RobEntry>,
    /// Cycle phase two fired, if the run ended in an exception.
    pub p2_cycle: Option<u64>,
    /// Check that reached architectural fault handling.
    pub exception: Option<CheckId>,
    pub squash_set: BTreeSet<usize>,
    pub cycles: u64,
    pub final_env: MemEnvironment,
}

impl ExecTrace {
    pub fn entry(&self, op: usize) -> &RobEntry {
        &self.entries[op]
    }

    /// Line-oriented dump for debugging: one event per line, stable order.
    pub fn render(&self) -> String {
        let mut events: Vec<(u64, usize, u8, String)> = Vec::new();
        for (i, e) in self.entries.iter().enumerate() {
            if let Some(c) = e.issue_cycle {
                events.push((c, i, 0, "issue".into()));
            }
            if let Some(c) = e.dispatch_cycle {
                events.push((c, i, 1, "dispatch".into()));
            }
            if let Some(f) = &e.fault {
                events.push((
                    f.p1_cycle,
                    i,
                    2,
                    format!(
                        "p1 check={:?} zero={} nospec={}",
                        f.check, f.zero_forwarded, f.no_speculation
                    ),
                ));
            }
            if let Some(c) = e.complete_cycle {
                events.push((c, i, 3, "complete".into()));
            }
            if let Some(c) = e.retire_cycle {
                events.push((c, i, 4, "retire".into()));
            }
        }
        if let Some(p2) = self.p2_cycle {
            events.push((
                p2,
                usize::MAX,
                5,
                format!("p2 squash={:?}", self.squash_set),
            ));
        }
        events.sort();
        let mut out = String::new();
        for (cycle, op, _, what) in events {
            if op == usize::MAX {
                out.push_str(&format!("cycle {cycle} -- {what}\n"));
            } else {
                out.push_str(&format!("cycle {cycle} op {op} {what}\n"));
            }
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cycle budget of {budget} exceeded; trace so far:\n{dump}")]
    CycleBudget { budget: u64, dump: String },
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error(transparent)]
    Isa(#[from] IsaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum PortClass {
    Mem,
    Alu,
    Fp,
}

/// Per-cycle dispatch-port budget, shared across the completion/dispatch
/// fixpoint passes within one cycle.
struct PortBudget {
    mem: usize,
    alu: usize,
    fp: usize,
}

impl PortBudget {
    fn new(profile: &ProcessorProfile) -> Self {
        PortBudget {
            mem: profile.mem_ports,
            alu: profile.alu_ports,
            fp: profile.fp_ports,
        }
    }
}

fn port_class(kind: OpKind) -> Option<PortClass> {
    match kind {
        OpKind::Load | OpKind::Store => Some(PortClass::Mem),
        OpKind::FpMovapd | OpKind::FpAddpd | OpKind::FpMulpd => Some(PortClass::Fp),
        OpKind::Cpuid => None,
        _ => Some(PortClass::Alu),
    }
}

/// Fixed execution latency for non-memory ops.
fn unit_latency(kind: OpKind) -> u64 {
    match kind {
        OpKind::FpAddpd | OpKind::FpMulpd => 4,
        _ => 1,
    }
}

/// What dispatch decided an op will do.
#[derive(Debug, Clone)]
struct DispatchOutcome {
    complete_cycle: u64,
    /// Value forwarded at completion; `None` starves dependents.
    forward: Option<u64>,
    fault: Option<FaultRecord>,
    /// For stores: address/value committed at retirement.
    store_commit: Option<(u64, u64)>,
    /// Branch resolution: actual target index, mispredicted flag.
    branch: Option<(usize, bool)>,
}

struct SimState<'a> {
    seq: &'a InstrSeq,
    graph: DependencyGraph,
    profile: &'a ProcessorProfile,
    live_ins: &'a BTreeMap<Register, u64>,
    env: MemEnvironment,
    rng: Xorshift64,
    entries: Vec<RobEntry>,
    outcomes: Vec<Option<DispatchOutcome>>,
    pending: Vec<usize>,
    ready_cycle: Vec<u64>,
    /// Dependents to wake per producer.
    wakes: Vec<Vec<usize>>,
    completion_sched: BTreeMap<u64, Vec<usize>>,
    /// Ops with no outstanding producers, keyed by earliest dispatch cycle.
    ready_queue: BTreeMap<u64, Vec<usize>>,
    issue_ptr: usize,
    issued_total: usize,
    next_retire: usize,
    finished: usize,
    serialize_gate: Option<usize>,
    halted: bool,
    p2_cycle: Option<u64>,
    exception: Option<CheckId>,
    squash_set: BTreeSet<usize>,
}

/// Run the sequence to completion (full retirement, an architectural fault,
/// or a squash that drains the machine). Deterministic for identical
/// inputs and seed.
pub fn simulate(
    seq: &InstrSeq,
    env: &MemEnvironment,
    live_ins: &BTreeMap<Register, u64>,
    profile: &ProcessorProfile,
    seed: u64,
) -> Result<ExecTrace, SimError> {
    simulate_with_budget(seq, env, live_ins, profile, seed, DEFAULT_CYCLE_BUDGET)
}

pub fn simulate_with_budget(
    seq: &InstrSeq,
    env: &MemEnvironment,
    live_ins: &BTreeMap<Register, u64>,
    profile: &ProcessorProfile,
    seed: u64,
    budget: u64,
) -> Result<ExecTrace, SimError> {
    let live_in_regs: BTreeSet<Register> = live_ins.keys().copied().collect();
    let graph = build_dependency_graph(seq, &live_in_regs)?;

    let n = seq.len();
    let mut wakes = vec![Vec::new(); n];
    for (j, preds) in graph.preds.iter().enumerate() {
        for &p in preds {
            wakes[p].push(j);
        }
    }

    let mut st = SimState {
        seq,
        pending: graph.preds.iter().map(|p| p.len()).collect(),
        graph,
        profile,
        live_ins,
        env: env.clone(),
        rng: Xorshift64::new(seed),
        entries: vec![RobEntry::empty(); n],
        outcomes: vec![None; n],
        ready_cycle: vec![0; n],
        wakes,
        completion_sched: BTreeMap::new(),
        ready_queue: BTreeMap::new(),
        issue_ptr: 0,
        issued_total: 0,
        next_retire: 0,
        finished: 0,
        serialize_gate: None,
        halted: false,
        p2_cycle: None,
        exception: None,
        squash_set: BTreeSet::new(),
    };

    let mut cycle = 0u64;
    loop {
        // Completions and dispatch iterate to a fixpoint: a zero-latency
        // result (forwarded store data, an immediate check verdict) lands
        // in the same cycle and can wake a consumer that dispatches right
        // away through the bypass network. Ports are shared per cycle.
        let mut ports = PortBudget::new(profile);
        st.stage_completions(cycle)?;
        loop {
            let dispatched = st.stage_dispatch(cycle, &mut ports)?;
            let completed = st.stage_completions(cycle)?;
            if dispatched == 0 && completed == 0 {
                break;
            }
        }
        st.stage_retire(cycle)?;
        if st.p2_cycle.is_none() {
            st.stage_issue(cycle);
        }

        if st.finished == n || st.p2_cycle.is_some() {
            break;
        }
        cycle += 1;
        if cycle > budget {
            let trace = st.into_trace(cycle);
            return Err(SimError::CycleBudget {
                budget,
                dump: trace.render(),
            });
        }
    }

    Ok(st.into_trace(cycle))
}

impl<'a> SimState<'a> {
    fn into_trace(self, cycles: u64) -> ExecTrace {
        ExecTrace {
            entries: self.entries,
            p2_cycle: self.p2_cycle,
            exception: self.exception,
            squash_set: self.squash_set,
            cycles,
            final_env: self.env,
        }
    }

    fn value_of(&self, op: usize, reg: Register) -> u64 {
        match self.graph.reg_sources[op].get(&reg) {
            Some(ValueSource::LiveIn(r)) => *self.live_ins.get(r).unwrap_or(&0),
            Some(ValueSource::Op(p)) => self.entries[*p].result.unwrap_or(0),
            None => *self.live_ins.get(&reg).unwrap_or(&0),
        }
    }

    fn stage_completions(&mut self, cycle: u64) -> Result<usize, SimError> {
        let Some(ops) = self.completion_sched.remove(&cycle) else {
            return Ok(0);
        };
        let mut completed = 0;
        for op in ops {
            if self.entries[op].status != RobStatus::Executing {
                continue; // squashed in flight
            }
            let outcome = self.outcomes[op]
                .clone()
                .expect("executing op has an outcome");
            self.entries[op].status = RobStatus::Completed;
            self.entries[op].complete_cycle = Some(cycle);
            self.entries[op].result = outcome.forward;

            if let Some((target, mispredicted)) = outcome.branch {
                if mispredicted {
                    // Misprediction is handled entirely in phase one: all
                    // younger ops squash now and the front end redirects.
                    // Wrong-path ops not yet issued are simply skipped.
                    self.squash_younger(op);
                    self.issue_ptr = self.issue_ptr.max(target);
                }
            }

            if outcome.forward.is_some() {
                for &dep in &self.wakes[op].clone() {
                    if self.pending[dep] > 0 {
                        self.pending[dep] -= 1;
                    }
                    let rc = self.ready_cycle[dep].max(cycle);
                    self.ready_cycle[dep] = rc;
                    if self.pending[dep] == 0 && self.entries[dep].status == RobStatus::Issued {
                        let at = rc.max(self.entries[dep].issue_cycle.unwrap_or(0) + 1);
                        self.ready_queue.entry(at).or_default().push(dep);
                    }
                }
            }
            completed += 1;
        }
        Ok(completed)
    }

    fn squash_younger(&mut self, than: usize) {
        for j in than + 1..self.seq.len() {
            match self.entries[j].status {
                RobStatus::Issued | RobStatus::Executing | RobStatus::Completed => {
                    self.entries[j].status = RobStatus::Squashed;
                    self.squash_set.insert(j);
                    self.finished += 1;
                }
                _ => {}
            }
        }
    }

    fn stage_dispatch(&mut self, cycle: u64, ports: &mut PortBudget) -> Result<usize, SimError> {
        // Drain everything due by this cycle; oldest op first for ports.
        let mut due: Vec<usize> = Vec::new();
        loop {
            match self.ready_queue.first_key_value() {
                Some((&at, _)) if at <= cycle => {
                    let (_, ops) = self.ready_queue.pop_first().unwrap();
                    due.extend(ops);
                }
                _ => break,
            }
        }
        due.sort_unstable();
        due.dedup();

        let mut dispatched = 0;
        for op in due {
            let e = &self.entries[op];
            if e.status != RobStatus::Issued {
                continue; // squashed while queued
            }
            debug_assert!(self.pending[op] == 0 && e.issue_cycle.unwrap() < cycle);
            let class = port_class(self.seq.ops[op].kind);
            let budget = match class {
                Some(PortClass::Mem) => &mut ports.mem,
                Some(PortClass::Alu) => &mut ports.alu,
                Some(PortClass::Fp) => &mut ports.fp,
                None => {
                    self.begin_execution(op, cycle)?;
                    dispatched += 1;
                    continue;
                }
            };
            if *budget == 0 {
                // Port-starved: compete again next cycle.
                self.ready_queue.entry(cycle + 1).or_default().push(op);
                continue;
            }
            *budget -= 1;
            self.begin_execution(op, cycle)?;
            dispatched += 1;
        }
        Ok(dispatched)
    }

    fn begin_execution(&mut self, op: usize, cycle: u64) -> Result<(), SimError> {
        let outcome = self.compute_outcome(op, cycle)?;
        self.entries[op].status = RobStatus::Executing;
        self.entries[op].dispatch_cycle = Some(cycle);
        self.entries[op].fault = outcome.fault;
        self.completion_sched
            .entry(outcome.complete_cycle)
            .or_default()
            .push(op);
        self.outcomes[op] = Some(outcome);
        Ok(())
    }

    /// Decide, at dispatch time, when the op completes, what it forwards,
    /// and whether it faults. Cache side effects are applied here: fills
    /// (and fault-terminated prefetch residue) start with the access and
    /// outlive any squash.
    fn compute_outcome(&mut self, op: usize, cycle: u64) -> Result<DispatchOutcome, SimError> {
        let uop = &self.seq.ops[op];
        match uop.kind {
            OpKind::Load => {
                if let Some(store) = self.graph.store_forward[op] {
                    // Store-to-load forwarding: the stored value arrives
                    // before any permission check resolves, at no cost.
                    let value = self.entries[store].result;
                    return Ok(DispatchOutcome {
                        complete_cycle: cycle,
                        forward: value,
                        fault: None,
                        store_commit: None,
                        branch: None,
                    });
                }
                let mem = uop.mem.as_ref().expect("load has a memory operand");
                let addr = self.resolve_addr(op);
                let res = access(
                    &self.env,
                    AccessKind::Read,
                    addr,
                    mem.selector,
                    self.profile,
                )?;
                let fault = res.first_fault().cloned();
                match fault {
                    None => {
                        let lat = res.data_latency.expect("fault-free access has data");
                        self.env.promote_fill(res.linear);
                        Ok(DispatchOutcome {
                            complete_cycle: cycle + lat,
                            forward: Some(res.value),
                            fault: None,
                            store_commit: None,
                            branch: None,
                        })
                    }
                    Some(chk) => Ok(self.faulting_fetch(cycle, &res, &chk)),
                }
            }
            OpKind::Store => {
                let mem = uop.mem.as_ref().expect("store has a memory operand");
                let addr = self.resolve_addr(op);
                let value = match uop.imm {
                    Some(imm) => imm as u64,
                    None => self.value_of(op, uop.srcs[0]),
                };
                let res = access(
                    &self.env,
                    AccessKind::Write,
                    addr,
                    mem.selector,
                    self.profile,
                )?;
                let chk = res.first_fault().cloned();
                let no_spec = res.no_speculation();
                let fault = chk.map(|c| FaultRecord {
                    check: c.check,
                    p1_cycle: cycle + c.p1_time,
                    zero_forwarded: false,
                    no_speculation: no_spec,
                });
                Ok(DispatchOutcome {
                    complete_cycle: cycle + 1,
                    // The store buffer forwards aggressively, before its
                    // permission checks resolve; only a no-speculation
                    // check silences it.
                    forward: (!no_spec).then_some(value),
                    fault,
                    store_commit: Some((res.linear, value)),
                    branch: None,
                })
            }
            OpKind::BranchCond | OpKind::BranchIndirect => {
                let meta = uop.branch.expect("branch has metadata");
                let actual = match meta.actual {
                    ActualTarget::Index(i) => i,
                    ActualTarget::Reg(r) => (self.value_of(op, r) as usize).min(self.seq.len()),
                };
                Ok(DispatchOutcome {
                    complete_cycle: cycle + unit_latency(uop.kind),
                    forward: Some(0),
                    fault: None,
                    store_commit: None,
                    branch: Some((actual, actual != meta.predicted)),
                })
            }
            OpKind::BoundCheck => {
                let idx = self.value_of(op, uop.srcs[0]);
                let limit = uop.imm.unwrap_or(0) as u64;
                let chk = bound_check(idx >= limit, self.profile)?;
                Ok(self.plain_op(op, cycle, Some(idx), chk.violated.then_some(chk)))
            }
            OpKind::RegPrivRead(which) => {
                let chk = priv_read_check(&self.env, which, self.profile)?;
                let value = self.env.priv_value(which);
                Ok(self.plain_op(op, cycle, Some(value), chk.violated.then_some(chk)))
            }
            OpKind::FpMovapd | OpKind::FpAddpd | OpKind::FpMulpd => {
                let chk = fp_touch_check(&self.env, self.profile)?;
                let value = self.compute_alu(op);
                Ok(self.plain_op(op, cycle, Some(value), chk.violated.then_some(chk)))
            }
            OpKind::Cpuid => Ok(DispatchOutcome {
                complete_cycle: cycle + 1,
                forward: Some(0),
                fault: None,
                store_commit: None,
                branch: None,
            }),
            OpKind::AluAdd | OpKind::AluSub => {
                let value = self.compute_alu(op);
                Ok(self.plain_op(op, cycle, Some(value), None))
            }
        }
    }

    /// Faulting load: race the fetch against the earliest violated check.
    fn faulting_fetch(
        &mut self,
        cycle: u64,
        res: &crate::mem::AccessResult,
        chk: &CheckOutcome,
    ) -> DispatchOutcome {
        let terminal = res.terminal_fault();
        if res.no_speculation() {
            // Nothing is forwarded at all; dependents never execute.
            return DispatchOutcome {
                complete_cycle: cycle + chk.p1_time,
                forward: None,
                fault: Some(FaultRecord {
                    check: chk.check,
                    p1_cycle: cycle + chk.p1_time,
                    zero_forwarded: false,
                    no_speculation: true,
                }),
                store_commit: None,
                branch: None,
            };
        }
        let data_first = match res.data_latency {
            Some(data) => {
                data < chk.p1_time || (data == chk.p1_time && !chk.anchor.fault_wins_tie())
            }
            None => false,
        };
        if data_first {
            let lat = res.data_latency.unwrap();
            self.env.promote_fill(res.linear);
            DispatchOutcome {
                complete_cycle: cycle + lat,
                forward: Some(res.value),
                fault: Some(FaultRecord {
                    check: chk.check,
                    p1_cycle: cycle + chk.p1_time,
                    zero_forwarded: false,
                    no_speculation: false,
                }),
                store_commit: None,
                branch: None,
            }
        } else {
            // Terminated at phase one: the dummy zero is forwarded and the
            // in-flight fetch leaves its prefetch residue behind.
            apply_prefetch_side_effect(
                &mut self.env,
                res.linear,
                terminal,
                self.profile,
                &mut self.rng,
            );
            DispatchOutcome {
                complete_cycle: cycle + chk.p1_time,
                forward: Some(0),
                fault: Some(FaultRecord {
                    check: chk.check,
                    p1_cycle: cycle + chk.p1_time,
                    zero_forwarded: true,
                    no_speculation: false,
                }),
                store_commit: None,
                branch: None,
            }
        }
    }

    /// Non-memory op with a fixed latency, optionally racing a check.
    fn plain_op(
        &self,
        op: usize,
        cycle: u64,
        value: Option<u64>,
        violated: Option<CheckOutcome>,
    ) -> DispatchOutcome {
        let lat = unit_latency(self.seq.ops[op].kind);
        match violated {
            None => DispatchOutcome {
                complete_cycle: cycle + lat,
                forward: value,
                fault: None,
                store_commit: None,
                branch: None,
            },
            Some(chk) if !chk.speculation_allowed => DispatchOutcome {
                complete_cycle: cycle + chk.p1_time.max(1),
                forward: None,
                fault: Some(FaultRecord {
                    check: chk.check,
                    p1_cycle: cycle + chk.p1_time,
                    zero_forwarded: false,
                    no_speculation: true,
                }),
                store_commit: None,
                branch: None,
            },
            Some(chk) => {
                let result_first =
                    lat < chk.p1_time || (lat == chk.p1_time && !chk.anchor.fault_wins_tie());
                if result_first {
                    DispatchOutcome {
                        complete_cycle: cycle + lat,
                        forward: value,
                        fault: Some(FaultRecord {
                            check: chk.check,
                            p1_cycle: cycle + chk.p1_time,
                            zero_forwarded: false,
                            no_speculation: false,
                        }),
                        store_commit: None,
                        branch: None,
                    }
                } else {
                    DispatchOutcome {
                        complete_cycle: cycle + chk.p1_time,
                        forward: Some(0),
                        fault: Some(FaultRecord {
                            check: chk.check,
                            p1_cycle: cycle + chk.p1_time,
                            zero_forwarded: true,
                            no_speculation: false,
                        }),
                        store_commit: None,
                        branch: None,
                    }
                }
            }
        }
    }

    fn compute_alu(&self, op: usize) -> u64 {
        let uop = &self.seq.ops[op];
        let a = uop.srcs.first().map(|&r| self.value_of(op, r)).unwrap_or(0);
        let b = match uop.srcs.get(1) {
            Some(&r) => self.value_of(op, r),
            None => uop.imm.unwrap_or(0) as u64,
        };
        match uop.kind {
            OpKind::AluAdd | OpKind::FpAddpd => a.wrapping_add(b),
            OpKind::AluSub => a.wrapping_sub(b),
            OpKind::FpMulpd => a.wrapping_mul(b).max(1),
            OpKind::FpMovapd => a,
            _ => a,
        }
    }

    fn resolve_addr(&self, op: usize) -> u64 {
        let mem = self.seq.ops[op].mem.as_ref().expect("memory operand");
        let base = self.value_of(op, mem.base);
        let index = mem
            .index
            .map(|r| self.value_of(op, r).wrapping_mul(mem.scale as u64))
            .unwrap_or(0);
        base.wrapping_add(index)
            .wrapping_add(mem.displacement as u64)
    }

    fn stage_retire(&mut self, cycle: u64) -> Result<(), SimError> {
        let mut budget = self.profile.retire_width;
        while budget > 0 && self.next_retire < self.seq.len() {
            let op = self.next_retire;
            match self.entries[op].status {
                RobStatus::Squashed | RobStatus::NeverIssued => {
                    // Already accounted; skip over holes left by squashes.
                    if self.entries[op].status == RobStatus::NeverIssued {
                        break;
                    }
                    self.next_retire += 1;
                    continue;
                }
                RobStatus::Completed => {}
                _ => break,
            }
            let complete = self.entries[op].complete_cycle.expect("completed op");
            if complete >= cycle {
                break;
            }
            if let Some(fault) = self.entries[op].fault {
                // Phase two: the faulting op reached the head of the ROB.
                self.p2_cycle = Some(cycle);
                self.exception = Some(fault.check);
                self.halted = true;
                for j in op + 1..self.seq.len() {
                    if !matches!(self.entries[j].status, RobStatus::Retired) {
                        if !matches!(self.entries[j].status, RobStatus::Squashed) {
                            if matches!(
                                self.entries[j].status,
                                RobStatus::Issued | RobStatus::Executing | RobStatus::Completed
                            ) {
                                self.finished += 1;
                            }
                            self.entries[j].status = RobStatus::Squashed;
                        }
                        self.squash_set.insert(j);
                    }
                }
                return Ok(());
            }
            self.entries[op].status = RobStatus::Retired;
            self.entries[op].retire_cycle = Some(cycle);
            self.finished += 1;
            if let Some(outcome) = &self.outcomes[op] {
                if let Some((addr, value)) = outcome.store_commit {
                    self.env.mem_values.insert(addr, value);
                }
            }
            if self.serialize_gate == Some(op) {
                self.serialize_gate = None;
            }
            self.next_retire += 1;
            budget -= 1;
        }
        Ok(())
    }

    fn stage_issue(&mut self, cycle: u64) {
        if self.halted {
            return;
        }
        let mut budget = self.profile.issue_width;
        while budget > 0 && self.issue_ptr < self.seq.len() {
            if self.serialize_gate.is_some() {
                break;
            }
            if self.issued_total >= self.profile.rob_size {
                break; // allocation budget exhausted
            }
            let op = self.issue_ptr;
            self.entries[op].status = RobStatus::Issued;
            self.entries[op].issue_cycle = Some(cycle);
            self.issued_total += 1;
            budget -= 1;
            if self.pending[op] == 0 {
                let at = self.ready_cycle[op].max(cycle + 1);
                self.ready_queue.entry(at).or_default().push(op);
            }
            if self.seq.ops[op].kind == OpKind::Cpuid {
                self.serialize_gate = Some(op);
            }
            // The front end follows the predicted path.
            if let Some(meta) = self.seq.ops[op].branch {
                self.issue_ptr = meta.predicted;
            } else {
                self.issue_ptr += 1;
            }
        }
    }
}


#[cfg(test)]
mod render_tests {
    use super::*;
    use crate::isa::{MemOperand, MicroOp};
    use crate::mem::PageTableEntry;
    use crate::variants::builtin_profiles;

    #[test]
    fn trace_dump_is_ordered_and_stable() {
        let profile = builtin_profiles().intel_client;
        let mut env = MemEnvironment::default();
        env.map_page(0x10_0000, PageTableEntry::user_rw());
        env.preload_tlb(0x10_0000);
        env.preload(0x10_0000, crate::mem::Level::L1);
        let seq = InstrSeq::new(vec![
            MicroOp::load(Register::gp(1), MemOperand::base(Register::gp(0))),
            MicroOp::add(Register::gp(2), Register::gp(1), Register::gp(1)),
        ])
        .unwrap();
        let live = BTreeMap::from([(Register::gp(0), 0x10_0000u64), (Register::gp(2), 0u64)]);
        let trace = simulate(&seq, &env, &live, &profile, 1).unwrap();
        let dump = trace.render();
        assert_eq!(dump, trace.render());
        let cycles: Vec<u64> = dump
            .lines()
            .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
            .collect();
        let mut sorted = cycles.clone();
        sorted.sort_unstable();
        assert_eq!(cycles, sorted, "events appear in cycle order:\n{dump}");
        assert!(dump.lines().all(|l| l.starts_with("cycle ")));
    }
}
