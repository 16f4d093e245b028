//! The run loop.
//!
//! Each step takes one atomic snapshot of the configuration, gathers the
//! enabled rules of correct processors, offers faulty processors their slot,
//! asks the scheduler for an action and applies it. Everything that
//! [`RunStats`] reports is recomputed from the trace by [`compute_stats`],
//! so a decoded trace yields the same statistics as the live run.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::adversary::{fault_action, ActivationPolicy, FaultState};
use crate::analysis::{check_trace, inv_holds, max_drift, PropertyViolation};
use crate::error::{Error, Result};
use crate::model::{validate_roles, Clock, Configuration, ProcessorId, ProcessorRole, Topology};
use crate::rules::rule_output;
use crate::scheduler::{audit_fairness, record_and_advance, ActorChoice, AuditReport, RoundAccounting, Scheduler, SchedulerPolicy};
use crate::trace::{enabled_map, StepKind, StepRecord, Trace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitSpec {
    Explicit(Configuration),
    /// Uniform clocks in `[0, target_l]` with one correct-correct edge
    /// forced to drift exactly `target_l`.
    Random { target_l: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopCondition {
    OnInv,
    /// Keep going for this many rounds after the round in which INV first held.
    OnInvPlusWindow(u64),
    Exhaust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub topology: Topology,
    pub roles: Vec<ProcessorRole>,
    pub init: InitSpec,
    pub policy: SchedulerPolicy,
    pub activation: ActivationPolicy,
    pub max_rounds: u64,
    pub max_steps: u64,
    pub stop: StopCondition,
    pub seed: u64,
    /// Allow more than one faulty processor.
    pub unchecked: bool,
    /// Check per-step safety properties on central-daemon runs.
    pub debug_checks: bool,
}

impl RunParams {
    /// All-correct strongly fair run that stops on INV.
    pub fn new(topology: Topology, init: InitSpec) -> Self {
        RunParams {
            roles: vec![ProcessorRole::Correct; topology.len()],
            topology,
            init,
            policy: SchedulerPolicy::CentralStronglyFair { seed: 0 },
            activation: ActivationPolicy::EveryK(1),
            max_rounds: 10_000,
            max_steps: 1_000_000,
            stop: StopCondition::OnInv,
            seed: 0,
            unchecked: false,
            debug_checks: true,
        }
    }

    pub fn with_fault(mut self, p: ProcessorId, role: ProcessorRole) -> Self {
        self.roles[p.0] = role;
        self
    }

    pub fn with_policy(mut self, policy: SchedulerPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_stop(mut self, stop: StopCondition) -> Self {
        self.stop = stop;
        self
    }

    pub fn correct_count(&self) -> usize {
        self.roles.iter().filter(|r| r.is_correct()).count()
    }

    pub fn validate(&self) -> Result<()> {
        validate_roles(&self.topology, &self.roles, self.unchecked)?;
        if let InitSpec::Explicit(c) = &self.init {
            Configuration::for_topology(&self.topology, c.clocks().to_vec())?;
        }
        Ok(())
    }
}

/// Resolves the initial configuration, drawing it for [`InitSpec::Random`].
pub fn initial_configuration(params: &RunParams) -> Result<Configuration> {
    match &params.init {
        InitSpec::Explicit(c) => Configuration::for_topology(&params.topology, c.clocks().to_vec()),
        InitSpec::Random { target_l, seed } => {
            let target = i64::try_from(*target_l).map_err(|_| Error::InvalidParams("drift too large".into()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut clocks: Vec<Clock> = (0..params.topology.len()).map(|_| Clock(rng.gen_range(0..=target))).collect();
            let edges: Vec<(ProcessorId, ProcessorId)> = params
                .topology
                .edges()
                .filter(|(p, q)| params.roles[p.0].is_correct() && params.roles[q.0].is_correct())
                .collect();
            if edges.is_empty() {
                if target > 0 {
                    return Err(Error::InvalidParams("no pair of adjacent correct processors to carry the drift".into()));
                }
            } else {
                let (p, q) = edges[rng.gen_range(0..edges.len())];
                let (low, high) = if rng.gen_bool(0.5) { (p, q) } else { (q, p) };
                clocks[low.0] = Clock(0);
                clocks[high.0] = Clock(target);
            }
            Ok(Configuration::new(clocks))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub stabilized: bool,
    /// Round (1-based) in which INV first held; 0 when it held initially.
    pub rounds_to_inv: Option<u64>,
    pub steps_to_inv: Option<u64>,
    pub initial_l: u64,
    /// Maximum drift initially and at every round boundary.
    pub drift_by_round: Vec<u64>,
    /// Per processor, clock increments after INV first held.
    pub increments_post_inv: Vec<u64>,
    pub fairness_audit: AuditReport,
    pub steps: u64,
    pub rounds: u64,
    pub violations: Vec<PropertyViolation>,
}

/// Derives run statistics from a trace. The fairness audit uses the
/// bounded-bypass bound of ten times the number of correct processors.
pub fn compute_stats(trace: &Trace, params: &RunParams) -> Result<RunStats> {
    let topology = &params.topology;
    let roles = &params.roles;
    let correct: Vec<ProcessorId> = topology.processors().filter(|p| roles[p.0].is_correct()).collect();
    let mut rounds = RoundAccounting::new(correct.iter().copied());
    let mut drift_by_round = vec![max_drift(&trace.initial, roles, topology).l];
    let mut first_inv: Option<(u64, u64)> = inv_holds(&trace.initial, roles, topology).then_some((0, 0));
    let mut increments = vec![0u64; topology.len()];
    let mut steps = 0u64;
    for g in trace.groups() {
        let round_before = rounds.current_round;
        let actors = g.records.iter().filter(|r| r.kind.is_correct_step()).map(|r| r.actor);
        if rounds.record(g.step(), actors) {
            drift_by_round.push(max_drift(g.after(), roles, topology).l);
        }
        steps += 1;
        if first_inv.is_some() {
            for &p in &correct {
                if g.after()[p] > g.before[p] {
                    increments[p.0] += 1;
                }
            }
        } else if inv_holds(g.after(), roles, topology) {
            first_inv = Some((round_before + 1, steps));
        }
    }
    let violations = if params.debug_checks && params.policy.is_central() {
        check_trace(trace, topology, roles)
    } else {
        Vec::new()
    };
    Ok(RunStats {
        stabilized: first_inv.is_some(),
        rounds_to_inv: first_inv.map(|f| f.0),
        steps_to_inv: first_inv.map(|f| f.1),
        initial_l: drift_by_round[0],
        drift_by_round,
        increments_post_inv: increments,
        fairness_audit: audit_fairness(trace, 10 * correct.len() as u64)?,
        steps,
        rounds: rounds.current_round,
        violations,
    })
}

/// Executes one run.
pub fn run(params: &RunParams) -> Result<(Trace, RunStats)> {
    params.validate()?;
    let topology = &params.topology;
    let roles = &params.roles;
    let initial = initial_configuration(params)?;
    let scripted = params.policy.is_scripted();
    let faulty: BTreeSet<ProcessorId> = topology.processors().filter(|p| roles[p.0].is_faulty()).collect();
    let mut faults: BTreeMap<ProcessorId, FaultState> = faulty
        .iter()
        .map(|&p| (p, FaultState::new(p, roles[p.0].clone(), params.activation.clone())))
        .collect();

    let mut config = initial.clone();
    let mut enabled = enabled_map(&config, topology, roles)?;
    let mut scheduler = Scheduler::new(params.policy.clone());
    let mut ledger = scheduler.initial_ledger(topology.len(), &enabled);
    let mut rounds = RoundAccounting::new(topology.processors().filter(|p| roles[p.0].is_correct()));
    let mut trace = Trace::new(initial.clone());
    // 1-based round in which INV first held
    let mut inv_round: Option<u64> = inv_holds(&config, roles, topology).then_some(0);
    let mut last_was_faulty = false;
    let mut step = 0u64;

    loop {
        match (params.stop, inv_round) {
            (StopCondition::OnInv, Some(_)) => break,
            (StopCondition::OnInvPlusWindow(w), Some(k)) if rounds.current_round >= k + w => break,
            _ => {}
        }
        if step >= params.max_steps || rounds.current_round >= params.max_rounds {
            break;
        }

        let mut pending: BTreeMap<ProcessorId, Clock> = BTreeMap::new();
        if !scripted && (!last_was_faulty || enabled.is_empty()) {
            for (p, state) in faults.iter_mut() {
                if let Some(v) = fault_action(state, step, &config, topology) {
                    pending.insert(*p, v);
                }
            }
        }
        let ready: BTreeSet<ProcessorId> = pending.keys().copied().collect();
        let Some(choice) = scheduler.select(step, &ledger, &enabled, &ready, &faulty)? else {
            debug!(step, "schedule script exhausted");
            break;
        };

        let mut writes: Vec<(ProcessorId, StepKind, Clock)> = Vec::new();
        for action in choice.actions() {
            writes.push(match *action {
                ActorChoice::Correct(p, rule) => (p, StepKind::Rule(rule), rule_output(&config, topology, roles, p, rule)?),
                ActorChoice::Faulty(p) if roles[p.0] == ProcessorRole::Crashed => (p, StepKind::CrashNoop, config[p]),
                ActorChoice::Faulty(p) => {
                    let value = match pending.get(&p) {
                        Some(v) => Some(*v),
                        None => faults.get_mut(&p).and_then(|s| s.strategy_write(step, &config, topology)),
                    };
                    (p, StepKind::Byzantine, value.unwrap_or(config[p]))
                }
                ActorChoice::Write(p, v) => (p, StepKind::Scripted, v),
                ActorChoice::SubsetOf(_) => unreachable!("actions() flattens subsets"),
            });
        }

        let round = rounds.current_round;
        let mut next = config.clone();
        for (p, kind, value) in writes.iter().copied() {
            next = next.with(p, value);
            trace.records.push(StepRecord {
                step,
                round,
                actor: p,
                kind,
                written: value,
                clocks: next.clone(),
                enabled: Some(enabled.clone()),
            });
        }
        config = next;
        enabled = enabled_map(&config, topology, roles)?;
        record_and_advance(&mut ledger, &mut rounds, step, &choice, &enabled);
        last_was_faulty = writes.iter().all(|(_, kind, _)| !kind.is_correct_step());
        if inv_round.is_none() && inv_holds(&config, roles, topology) {
            inv_round = Some(round + 1);
            debug!(step, round = round + 1, "INV reached");
        }
        step += 1;
    }

    let stats = compute_stats(&trace, params)?;
    Ok((trace, stats))
}
