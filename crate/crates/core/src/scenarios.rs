//! Canned experiments with built-in expectations.
//!
//! A [`Scenario`] is plain data: run parameters plus a list of
//! [`Assertion`]s. [`Scenario::execute`] runs it and reports every
//! assertion separately, pointing at the first offending step on failure.
//!
//! The lower-bound scenarios are generic-algorithm replays: every correct
//! processor is driven by scripted writes, so the clock values follow the
//! adversarial construction for an arbitrary minimal algorithm rather than
//! this protocol's own commands. The upper-bound sweep and the starvation
//! demo run the protocol itself.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{ActivationPolicy, ByzantineStrategy};
use crate::analysis::inv_holds;
use crate::engine::{run, InitSpec, RunParams, RunStats, StopCondition};
use crate::error::{Error, Result};
use crate::model::{Clock, Configuration, ProcessorId, ProcessorRole, Topology, TopologyKind};
use crate::rules::Rule;
use crate::scheduler::{audit_fairness, ActorChoice, RoundAccounting, SchedulerPolicy};
use crate::trace::Trace;

/// Names accepted by [`by_name`].
pub const CATALOG: [&str; 4] = ["lower-bound-chain", "lower-bound-ring", "upper-bound-sweep", "weakly-fair-starvation"];

/// Steps the starvation schedule runs for.
pub const STARVATION_HORIZON: u64 = 10_000;

/// A machine-checkable expectation about one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assertion {
    /// `drift_by_round` equals this list exactly.
    DriftByRound(Vec<u64>),
    InitialDrift(u64),
    RoundsToInv(u64),
    RoundsToInvAtMost(u64),
    /// The processor's clock never increases.
    NoIncrements(ProcessorId),
    /// INV holds in every configuration of the run.
    InvThroughout,
    /// No clock ever drops below this value.
    ClocksAtLeast(i64),
    /// The weak audit at `bound` finds nothing.
    WeakFairnessClean { bound: u64 },
    /// The strong audit at `bound` flags `processor`.
    StrongFairnessViolation { processor: ProcessorId, bound: u64 },
    /// The per-step safety checks found nothing.
    SafetyChecksClean,
}

impl Assertion {
    pub fn name(&self) -> String {
        match self {
            Assertion::DriftByRound(d) => format!("drift_by_round == {d:?}"),
            Assertion::InitialDrift(l) => format!("initial_l == {l}"),
            Assertion::RoundsToInv(k) => format!("rounds_to_inv == {k}"),
            Assertion::RoundsToInvAtMost(k) => format!("rounds_to_inv <= {k}"),
            Assertion::NoIncrements(p) => format!("no increments at {p}"),
            Assertion::InvThroughout => "inv holds throughout".to_string(),
            Assertion::ClocksAtLeast(a) => format!("all clocks >= {a}"),
            Assertion::WeakFairnessClean { bound } => format!("weak audit clean at bound {bound}"),
            Assertion::StrongFairnessViolation { processor, bound } => {
                format!("strong audit flags {processor} at bound {bound}")
            }
            Assertion::SafetyChecksClean => "safety checks clean".to_string(),
        }
    }

    /// Evaluates the assertion; on failure returns the first offending step
    /// (when one can be pinned down) and a description.
    fn check(&self, trace: &Trace, stats: &RunStats, params: &RunParams) -> Result<std::result::Result<(), (Option<u64>, String)>> {
        let last_step = trace.records.last().map(|r| r.step);
        let inv_step = stats.steps_to_inv.and_then(|s| s.checked_sub(1));
        let outcome = match self {
            Assertion::DriftByRound(expected) => {
                let got = &stats.drift_by_round;
                match (0..expected.len().max(got.len())).find(|&i| expected.get(i) != got.get(i)) {
                    None => Ok(()),
                    Some(i) => {
                        let boundaries = round_boundaries(trace, &params.roles);
                        let step = i.checked_sub(1).and_then(|b| boundaries.get(b).copied()).or(last_step);
                        Err((step, format!("measured {got:?}, first difference at entry {i}")))
                    }
                }
            }
            Assertion::InitialDrift(l) if stats.initial_l == *l => Ok(()),
            Assertion::InitialDrift(_) => Err((None, format!("initial drift is {}", stats.initial_l))),
            Assertion::RoundsToInv(k) => match stats.rounds_to_inv {
                Some(r) if r == *k => Ok(()),
                Some(r) => Err((inv_step, format!("INV first held in round {r}"))),
                None => Err((last_step, "never stabilized".to_string())),
            },
            Assertion::RoundsToInvAtMost(k) => match stats.rounds_to_inv {
                Some(r) if r <= *k => Ok(()),
                Some(r) => Err((inv_step, format!("INV first held in round {r}"))),
                None => Err((last_step, "never stabilized".to_string())),
            },
            Assertion::NoIncrements(p) => match trace.groups().find(|g| g.after()[*p] > g.before[*p]) {
                None => Ok(()),
                Some(g) => Err((Some(g.step()), format!("{p} moved from {} to {}", g.before[*p], g.after()[*p]))),
            },
            Assertion::InvThroughout => {
                if !inv_holds(&trace.initial, &params.roles, &params.topology) {
                    Err((None, "INV fails in the initial configuration".to_string()))
                } else {
                    match trace.groups().find(|g| !inv_holds(g.after(), &params.roles, &params.topology)) {
                        None => Ok(()),
                        Some(g) => Err((Some(g.step()), format!("INV fails in {:?}", g.after().values()))),
                    }
                }
            }
            Assertion::ClocksAtLeast(a) => {
                let low = |c: &Configuration| c.clocks().iter().any(|v| v.0 < *a);
                if low(&trace.initial) {
                    Err((None, "initial configuration below the floor".to_string()))
                } else {
                    match trace.groups().find(|g| low(g.after())) {
                        None => Ok(()),
                        Some(g) => Err((Some(g.step()), format!("clocks {:?}", g.after().values()))),
                    }
                }
            }
            Assertion::WeakFairnessClean { bound } => match audit_fairness(trace, *bound)?.weak.first() {
                None => Ok(()),
                Some(v) => Err((Some(v.to_step), format!("{} at {} starved since step {}", v.rule, v.processor, v.from_step))),
            },
            Assertion::StrongFairnessViolation { processor, bound } => {
                if audit_fairness(trace, *bound)?.strong.iter().any(|v| v.processor == *processor) {
                    Ok(())
                } else {
                    Err((last_step, format!("no strong violation for {processor}")))
                }
            }
            Assertion::SafetyChecksClean => match stats.violations.first() {
                None => Ok(()),
                Some(v) => Err((Some(v.step), v.to_string())),
            },
        };
        Ok(outcome)
    }
}

/// Step indices at which each round completed.
fn round_boundaries(trace: &Trace, roles: &[ProcessorRole]) -> Vec<u64> {
    let correct = (0..roles.len()).filter(|&i| roles[i].is_correct()).map(ProcessorId);
    let mut rounds = RoundAccounting::new(correct);
    for g in trace.groups() {
        rounds.record(g.step(), g.records.iter().filter(|r| r.kind.is_correct_step()).map(|r| r.actor));
    }
    rounds.round_boundaries
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// What kind of algorithm the run exercises.
    pub label: String,
    pub params: RunParams,
    pub assertions: Vec<Assertion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub assertion: String,
    pub passed: bool,
    /// First offending step, if the failure is tied to one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub name: String,
    pub trace: Trace,
    pub stats: RunStats,
    pub results: Vec<AssertionResult>,
}

impl ScenarioRun {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssertionResult> {
        self.results.iter().filter(|r| !r.passed)
    }
}

impl Scenario {
    pub fn execute(&self) -> Result<ScenarioRun> {
        let (trace, stats) = run(&self.params)?;
        let mut results = Vec::with_capacity(self.assertions.len());
        for a in &self.assertions {
            let (passed, step, detail) = match a.check(&trace, &stats, &self.params)? {
                Ok(()) => (true, None, String::new()),
                Err((step, detail)) => (false, step, detail),
            };
            results.push(AssertionResult { assertion: a.name(), passed, step, detail });
        }
        Ok(ScenarioRun { name: self.name.clone(), trace, stats, results })
    }
}

const REPLAY: &str = "generic-algorithm replay";
const PROTOCOL: &str = "protocol run";

fn replay_params(topology: Topology, initial: &[i64], byzantine: usize, script: Vec<ActorChoice>, writes: Vec<(u64, Clock)>) -> Result<RunParams> {
    let mut params = RunParams::new(topology, InitSpec::Explicit(Configuration::from_values(initial)))
        .with_fault(ProcessorId(byzantine), ProcessorRole::Byzantine(ByzantineStrategy::scripted(writes)?))
        .with_policy(SchedulerPolicy::ScriptedCentral(script))
        .with_stop(StopCondition::Exhaust);
    // replayed writes are not protocol commands, so rule-level checks do not apply
    params.debug_checks = false;
    Ok(params)
}

fn check_t(t: u64) -> Result<i64> {
    if t < 2 {
        return Err(Error::InvalidParams(format!("lower-bound scenarios need t >= 2, got {t}")));
    }
    i64::try_from(t).map_err(|_| Error::InvalidParams("t too large".into()))
}

/// Chain of four, `[a+2t, a+2t, a, a]`, the right end Byzantine. In round
/// `i` the left half walks down and the right half walks up by one while
/// the Byzantine end keeps pace at `a+i`; the drift halves its gap by two
/// per round and the run needs `t = L/2` rounds.
pub fn lower_bound_chain(a: i64, t: u64) -> Result<Scenario> {
    let ti = check_t(t)?;
    let w = |p: usize, v: i64| ActorChoice::Write(ProcessorId(p), Clock(v));
    let byz = ProcessorId(3);
    let mut script = vec![w(0, a + 2 * ti + 1), w(0, a + 2 * ti), w(1, a + 2 * ti - 1), w(2, a + 1), ActorChoice::Faulty(byz)];
    let mut writes = vec![(4, Clock(a + 1))];
    for i in 2..=ti {
        script.extend([w(0, a + 2 * ti + 1 - i), w(1, a + 2 * ti - i), w(2, a + i), ActorChoice::Faulty(byz)]);
        writes.push((4 * i as u64, Clock(a + i)));
    }
    let params = replay_params(Topology::chain(4)?, &[a + 2 * ti, a + 2 * ti, a, a], 3, script, writes)?;
    let mut drift: Vec<u64> = (1..=t).rev().map(|k| 2 * k).collect();
    drift.push(1);
    Ok(Scenario {
        name: format!("lower-bound-chain a={a} t={t}"),
        label: REPLAY.to_string(),
        params,
        assertions: vec![
            Assertion::InitialDrift(2 * t),
            Assertion::DriftByRound(drift),
            Assertion::RoundsToInv(t),
            Assertion::ClocksAtLeast(a),
        ],
    })
}

/// Ring of five, `[a+2t, a, a, a, a+2t]`, processor 2 Byzantine. In round
/// `i` the two high processors step down to `a+2t-i`, the two low ones up
/// to `a+i`, and the Byzantine processor follows with `a+i`.
pub fn lower_bound_ring(a: i64, t: u64) -> Result<Scenario> {
    let ti = check_t(t)?;
    let w = |p: usize, v: i64| ActorChoice::Write(ProcessorId(p), Clock(v));
    let byz = ProcessorId(2);
    let mut script = Vec::new();
    let mut writes = Vec::new();
    for i in 1..=ti {
        script.extend([w(0, a + 2 * ti - i), w(4, a + 2 * ti - i), w(1, a + i), w(3, a + i), ActorChoice::Faulty(byz)]);
        writes.push((5 * i as u64 - 1, Clock(a + i)));
    }
    let params = replay_params(Topology::ring(5)?, &[a + 2 * ti, a, a, a, a + 2 * ti], 2, script, writes)?;
    let mut drift: Vec<u64> = (1..=t).rev().map(|k| 2 * k).collect();
    drift.push(0);
    Ok(Scenario {
        name: format!("lower-bound-ring a={a} t={t}"),
        label: REPLAY.to_string(),
        params,
        assertions: vec![
            Assertion::InitialDrift(2 * t),
            Assertion::DriftByRound(drift),
            Assertion::RoundsToInv(t),
            Assertion::ClocksAtLeast(a),
        ],
    })
}

/// Fault injected into a sweep run, cycled through in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepFault {
    None,
    Crash,
    Fixed,
    Silent,
    RandomWalk,
    ChaseBelow,
}

impl SweepFault {
    pub const ALL: [SweepFault; 6] =
        [SweepFault::None, SweepFault::Crash, SweepFault::Fixed, SweepFault::Silent, SweepFault::RandomWalk, SweepFault::ChaseBelow];

    pub fn cycled(index: usize) -> Self {
        Self::ALL[index % Self::ALL.len()]
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepFault::None => "none",
            SweepFault::Crash => "crash",
            SweepFault::Fixed => "byz-fixed",
            SweepFault::Silent => "byz-silent",
            SweepFault::RandomWalk => "byz-walk",
            SweepFault::ChaseBelow => "byz-chase",
        }
    }

    fn role(self, l: i64, rng: &mut ChaCha8Rng) -> Result<ProcessorRole> {
        Ok(match self {
            SweepFault::None => ProcessorRole::Correct,
            SweepFault::Crash => ProcessorRole::Crashed,
            SweepFault::Fixed => ProcessorRole::Byzantine(ByzantineStrategy::Fixed(Clock(rng.gen_range(-l - 2..=2 * l + 2)))),
            SweepFault::Silent => ProcessorRole::Byzantine(ByzantineStrategy::Silent),
            SweepFault::RandomWalk => ProcessorRole::Byzantine(ByzantineStrategy::random_walk(
                Clock(-l - 2),
                Clock(2 * l + 2),
                rng.gen(),
            )?),
            SweepFault::ChaseBelow => ProcessorRole::Byzantine(ByzantineStrategy::ChaseBelow(rng.gen_range(1..=3))),
        })
    }
}

/// Positions where a fault leaves at least one pair of adjacent correct
/// processors to carry the initial drift.
fn fault_positions(topology: &Topology) -> Vec<usize> {
    (0..topology.len())
        .filter(|&f| topology.edges().any(|(p, q)| p.0 != f && q.0 != f))
        .collect()
}

/// Protocol runs over both topology kinds, every size in `sizes` (sizes
/// below a kind's minimum are skipped), every exact initial drift in
/// `drifts` and `trials` trials each. Within a topology kind the fault
/// cycles through [`SweepFault::ALL`] run by run. All randomness comes from
/// `seed`.
pub fn upper_bound_sweep(sizes: RangeInclusive<usize>, drifts: RangeInclusive<u64>, trials: u64, seed: u64) -> Result<Vec<Scenario>> {
    if sizes.is_empty() || drifts.is_empty() || trials == 0 {
        return Err(Error::InvalidParams("sweep ranges must be nonempty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for kind in [TopologyKind::Chain, TopologyKind::Ring] {
        let mut index = 0;
        for n in sizes.clone().filter(|&n| n >= kind.min_size()) {
            let topology = Topology::new(kind, n)?;
            let positions = fault_positions(&topology);
            for l in drifts.clone() {
                let li = i64::try_from(l).map_err(|_| Error::InvalidParams("drift too large".into()))?;
                for trial in 0..trials {
                    let fault = if positions.is_empty() { SweepFault::None } else { SweepFault::cycled(index) };
                    index += 1;
                    let mut params = RunParams::new(topology, InitSpec::Random { target_l: l, seed: rng.gen() })
                        .with_policy(SchedulerPolicy::CentralStronglyFair { seed: rng.gen() });
                    params.seed = seed;
                    params.activation = ActivationPolicy::EveryK(1);
                    if fault != SweepFault::None {
                        let at = positions[rng.gen_range(0..positions.len())];
                        params.roles[at] = fault.role(li, &mut rng)?;
                    }
                    out.push(Scenario {
                        name: format!("upper-bound-sweep {} n={n} L={l} fault={} trial={trial}", kind.name(), fault.name()),
                        label: PROTOCOL.to_string(),
                        params,
                        assertions: vec![
                            Assertion::InitialDrift(l),
                            Assertion::RoundsToInvAtMost(l),
                            Assertion::SafetyChecksClean,
                        ],
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Two processors at `[9, 10]`; the daemon only ever serves processor 0,
/// which bounces between 9 and 11. Processor 1 has an enabled rule in
/// every configuration, but never the same one twice in a row.
pub fn weakly_fair_starvation() -> Result<Scenario> {
    let p0 = ProcessorId(0);
    let script: Vec<ActorChoice> = (0..STARVATION_HORIZON)
        .map(|s| ActorChoice::Correct(p0, if s % 2 == 0 { Rule::LeftEndUp } else { Rule::LeftEndDown }))
        .collect();
    let mut params = RunParams::new(Topology::chain(2)?, InitSpec::Explicit(Configuration::from_values(&[9, 10])))
        .with_policy(SchedulerPolicy::CentralWeaklyFairScripted(script))
        .with_stop(StopCondition::Exhaust);
    params.max_steps = STARVATION_HORIZON;
    let p1 = ProcessorId(1);
    Ok(Scenario {
        name: "weakly-fair-starvation".to_string(),
        label: PROTOCOL.to_string(),
        params,
        assertions: vec![
            Assertion::NoIncrements(p1),
            Assertion::InvThroughout,
            Assertion::WeakFairnessClean { bound: 3 },
            Assertion::WeakFairnessClean { bound: 100 },
            Assertion::StrongFairnessViolation { processor: p1, bound: 100 },
        ],
    })
}

/// Knobs for [`by_name`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogOptions {
    pub a: i64,
    pub t: u64,
    pub sizes: RangeInclusive<usize>,
    pub drifts: RangeInclusive<u64>,
    pub trials: u64,
    pub seed: u64,
}

impl Default for CatalogOptions {
    fn default() -> Self {
        CatalogOptions { a: 0, t: 3, sizes: 3..=8, drifts: 2..=20, trials: 2, seed: 0 }
    }
}

/// Looks a scenario family up by its catalog name.
pub fn by_name(name: &str, options: &CatalogOptions) -> Result<Vec<Scenario>> {
    match name {
        "lower-bound-chain" => Ok(vec![lower_bound_chain(options.a, options.t)?]),
        "lower-bound-ring" => Ok(vec![lower_bound_ring(options.a, options.t)?]),
        "upper-bound-sweep" => upper_bound_sweep(options.sizes.clone(), options.drifts.clone(), options.trials, options.seed),
        "weakly-fair-starvation" => Ok(vec![weakly_fair_starvation()?]),
        other => Err(Error::InvalidParams(format!("unknown scenario `{other}`; known: {}", CATALOG.join(", ")))),
    }
}
