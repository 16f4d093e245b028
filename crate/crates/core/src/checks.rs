//! Property batteries over many runs or configurations.
//!
//! Each battery returns a [`CheckReport`] listing every counterexample it
//! found. Batteries that run the engine fan out over rayon; results are
//! collected in input order, so reports do not depend on thread timing.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::ByzantineStrategy;
use crate::analysis::{check_trace, inv_holds, Property};
use crate::engine::StopCondition;
use crate::error::{Error, Result};
use crate::model::{Clock, Configuration, ProcessorId, ProcessorRole, Topology, TopologyKind};
use crate::rules::{apply_rule, enabled_rules, NeighborView, Rule};
use crate::scenarios::{lower_bound_chain, lower_bound_ring, upper_bound_sweep, weakly_fair_starvation, Scenario};
use crate::scheduler::audit_fairness;
use crate::trace::Trace;

/// Names accepted by [`by_name`], plus `all`.
pub const BATTERIES: [&str; 5] = ["closure", "islands", "drift", "liveness", "fairness"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    /// What was being checked when the property failed.
    pub case: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    /// Configurations or runs examined.
    pub cases: u64,
    pub counterexamples: Vec<Counterexample>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// The run sets that trace-level batteries look at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub sizes: RangeInclusive<usize>,
    pub drifts: RangeInclusive<u64>,
    pub trials: u64,
    pub seed: u64,
    /// `t` values for the lower-bound replays.
    pub replay_t: RangeInclusive<u64>,
}

impl Default for Corpus {
    fn default() -> Self {
        Corpus { sizes: 3..=8, drifts: 2..=20, trials: 2, seed: 0, replay_t: 2..=6 }
    }
}

impl Corpus {
    /// Upper-bound sweep runs followed by both lower-bound replays for every
    /// `t` in range.
    pub fn scenarios(&self) -> Result<Vec<Scenario>> {
        let mut all = upper_bound_sweep(self.sizes.clone(), self.drifts.clone(), self.trials, self.seed)?;
        for t in self.replay_t.clone() {
            all.push(lower_bound_chain(0, t)?);
            all.push(lower_bound_ring(0, t)?);
        }
        Ok(all)
    }
}

/// Draws a configuration in which every pair of adjacent correct processors
/// is in unison, clocks in `clocks`, with a Byzantine processor at a random
/// position about half the time.
pub fn random_inv_configuration(
    rng: &mut ChaCha8Rng,
    max_n: usize,
    clocks: &RangeInclusive<i64>,
) -> Result<(Topology, Vec<ProcessorRole>, Configuration)> {
    let kind = if rng.gen_bool(0.5) { TopologyKind::Chain } else { TopologyKind::Ring };
    let n = rng.gen_range(kind.min_size()..=max_n.max(kind.min_size()));
    let topology = Topology::new(kind, n)?;
    let mut roles = vec![ProcessorRole::Correct; n];
    if rng.gen_bool(0.5) {
        roles[rng.gen_range(0..n)] = ProcessorRole::Byzantine(ByzantineStrategy::Silent);
    }
    loop {
        let mut values = Vec::with_capacity(n);
        let mut current = rng.gen_range(clocks.clone());
        for _ in 0..n {
            values.push(current);
            current = (current + rng.gen_range(-1..=1)).clamp(*clocks.start(), *clocks.end());
        }
        for (i, role) in roles.iter().enumerate() {
            if role.is_faulty() {
                values[i] = rng.gen_range(clocks.clone());
            }
        }
        let config = Configuration::from_values(&values);
        if inv_holds(&config, &roles, &topology) {
            return Ok((topology, roles, config));
        }
    }
}

/// From `samples` random INV configurations, applies every enabled rule of
/// every correct processor and every Byzantine write in `clocks` (widened by
/// a margin), and checks that INV still holds.
pub fn inv_closure(samples: usize, max_n: usize, clocks: RangeInclusive<i64>, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = 0u64;
    let mut counterexamples = Vec::new();
    let writes = (clocks.start() - 10)..=(clocks.end() + 10);
    for _ in 0..samples {
        let (topology, roles, config) = random_inv_configuration(&mut rng, max_n, &clocks)?;
        let case = || format!("{} {:?} roles {:?}", topology.kind().name(), config.values(), roles);
        for p in topology.processors() {
            if roles[p.0].is_correct() {
                for rule in enabled_rules(&config, &topology, &roles, p)?.iter() {
                    cases += 1;
                    let next = apply_rule(&config, &topology, &roles, p, rule)?;
                    if !inv_holds(&next, &roles, &topology) {
                        counterexamples.push(Counterexample {
                            case: case(),
                            step: None,
                            detail: format!("{rule} at {p} gives {:?}", next.values()),
                        });
                    }
                }
            } else {
                for v in writes.clone() {
                    cases += 1;
                    let next = config.with(p, Clock(v));
                    if !inv_holds(&next, &roles, &topology) {
                        counterexamples.push(Counterexample {
                            case: case(),
                            step: None,
                            detail: format!("Byzantine {p} writing {v}"),
                        });
                    }
                }
            }
        }
    }
    Ok(CheckReport { name: "inv-closure".into(), cases, counterexamples })
}

/// Every chain end, for every pair of own and neighbor clocks in `window`,
/// has exactly one enabled rule and it is an end rule.
pub fn end_liveness(window: RangeInclusive<i64>) -> Result<CheckReport> {
    let mut cases = 0u64;
    let mut counterexamples = Vec::new();
    for own in window.clone() {
        for neighbor in window.clone() {
            let views = [
                ("left end", NeighborView { left: None, own: Clock(own), right: Some(Clock(neighbor)) }),
                ("right end", NeighborView { left: Some(Clock(neighbor)), own: Clock(own), right: None }),
            ];
            for (which, view) in views {
                cases += 1;
                let enabled = view.enabled();
                if enabled.len() != 1 || !enabled.iter().all(Rule::is_end_rule) {
                    counterexamples.push(Counterexample {
                        case: format!("{which} own={own} neighbor={neighbor}"),
                        step: None,
                        detail: format!("enabled {enabled:?}"),
                    });
                }
            }
        }
    }
    Ok(CheckReport { name: "end-liveness".into(), cases, counterexamples })
}

fn run_all(scenarios: &[Scenario]) -> Result<Vec<(Trace, crate::engine::RunStats)>> {
    scenarios.par_iter().map(|s| crate::engine::run(&s.params)).collect()
}

/// Runs the corpus and reports every step that violates one of
/// `properties`, including replay traces whose debug checks are off.
pub fn trace_properties(name: &str, corpus: &Corpus, properties: &[Property]) -> Result<CheckReport> {
    let scenarios = corpus.scenarios()?;
    let runs = run_all(&scenarios)?;
    let counterexamples = scenarios
        .iter()
        .zip(&runs)
        .flat_map(|(s, (trace, _))| {
            check_trace(trace, &s.params.topology, &s.params.roles)
                .into_iter()
                .filter(|v| properties.contains(&v.property))
                .map(|v| Counterexample { case: s.name.clone(), step: Some(v.step), detail: v.to_string() })
        })
        .collect();
    Ok(CheckReport { name: name.into(), cases: scenarios.len() as u64, counterexamples })
}

/// Reruns the upper-bound sweep with `window_per_processor * n` extra
/// rounds after stabilization and checks that every correct processor
/// increments its clock at least once in that window.
pub fn post_stabilization_liveness(corpus: &Corpus, window_per_processor: u64) -> Result<CheckReport> {
    let mut scenarios = upper_bound_sweep(corpus.sizes.clone(), corpus.drifts.clone(), corpus.trials, corpus.seed)?;
    for s in &mut scenarios {
        s.params.stop = StopCondition::OnInvPlusWindow(window_per_processor * s.params.topology.len() as u64);
    }
    let runs = run_all(&scenarios)?;
    let mut counterexamples = Vec::new();
    for (s, (_, stats)) in scenarios.iter().zip(&runs) {
        let window = window_per_processor * s.params.topology.len() as u64;
        if !stats.stabilized || stats.rounds < stats.rounds_to_inv.unwrap_or(0) + window {
            counterexamples.push(Counterexample {
                case: s.name.clone(),
                step: None,
                detail: format!("window incomplete: stabilized={} rounds={}", stats.stabilized, stats.rounds),
            });
            continue;
        }
        for p in s.params.topology.processors().filter(|p| s.params.roles[p.0].is_correct()) {
            if stats.increments_post_inv[p.0] == 0 {
                counterexamples.push(Counterexample {
                    case: s.name.clone(),
                    step: None,
                    detail: format!("{p} never incremented after stabilizing"),
                });
            }
        }
    }
    Ok(CheckReport { name: "post-stabilization-liveness".into(), cases: scenarios.len() as u64, counterexamples })
}

/// The strongly fair daemon never lets an enabled rule wait through more
/// than `10 * k` configurations (k correct processors), and the starvation
/// demo separates weak from strong fairness.
pub fn fairness(corpus: &Corpus) -> Result<CheckReport> {
    let mut scenarios = upper_bound_sweep(corpus.sizes.clone(), corpus.drifts.clone(), corpus.trials, corpus.seed)?;
    for s in &mut scenarios {
        s.params.stop = StopCondition::OnInvPlusWindow(2 * s.params.topology.len() as u64);
    }
    let runs = run_all(&scenarios)?;
    let mut counterexamples = Vec::new();
    for (s, (_, stats)) in scenarios.iter().zip(&runs) {
        for v in stats.fairness_audit.strong.iter().chain(&stats.fairness_audit.weak) {
            counterexamples.push(Counterexample {
                case: s.name.clone(),
                step: Some(v.to_step),
                detail: format!("{} at {} unserved since step {}", v.rule, v.processor, v.from_step),
            });
        }
    }
    let starvation = weakly_fair_starvation()?.execute()?;
    for r in starvation.failures() {
        counterexamples.push(Counterexample { case: starvation.name.clone(), step: r.step, detail: r.assertion.clone() });
    }
    let audit = audit_fairness(&starvation.trace, 100)?;
    if !audit.strong.iter().any(|v| v.processor == ProcessorId(1)) || !audit.weak.is_empty() {
        counterexamples.push(Counterexample {
            case: starvation.name,
            step: None,
            detail: format!("unexpected audit {audit:?}"),
        });
    }
    Ok(CheckReport { name: "fairness".into(), cases: scenarios.len() as u64 + 1, counterexamples })
}

/// Runs one battery by name. `islands` covers island closure and island
/// count; `closure` covers INV closure and end liveness.
pub fn by_name(name: &str, corpus: &Corpus) -> Result<Vec<CheckReport>> {
    match name {
        "closure" => Ok(vec![inv_closure(1000, 6, -5..=25, corpus.seed)?, end_liveness(-20..=20)?]),
        "islands" => Ok(vec![trace_properties("island-closure", corpus, &[Property::IslandClosure, Property::IslandCount])?]),
        "drift" => Ok(vec![trace_properties("drift-monotonicity", corpus, &[Property::DriftMonotonicity])?]),
        "liveness" => Ok(vec![post_stabilization_liveness(corpus, 10)?]),
        "fairness" => Ok(vec![fairness(corpus)?]),
        "all" => BATTERIES.iter().map(|b| by_name(b, corpus)).collect::<Result<Vec<_>>>().map(|v| v.concat()),
        other => Err(Error::InvalidParams(format!("unknown check `{other}`; known: {}, all", BATTERIES.join(", ")))),
    }
}
