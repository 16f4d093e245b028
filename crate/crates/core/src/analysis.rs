//! Predicates and metrics over configurations and traces: unison, islands,
//! the INV predicate, maximum drift, liveness counters and the end-cycle
//! classifier.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Clock, Configuration, ProcessorId, ProcessorRole, Topology, TopologyKind};
use crate::rules::{NeighborView, Rule};
use crate::trace::{StepKind, Trace};

pub fn in_unison(a: Clock, b: Clock) -> bool {
    a.drift(b) <= 1
}

/// Maximal segments of correct processors whose adjacent members are in
/// unison. Faulty processors belong to no island.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IslandPartition {
    pub islands: Vec<Vec<ProcessorId>>,
    membership: Vec<Option<usize>>,
}

impl IslandPartition {
    pub fn len(&self) -> usize {
        self.islands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.islands.is_empty()
    }

    pub fn island_of(&self, p: ProcessorId) -> Option<usize> {
        self.membership.get(p.0).copied().flatten()
    }

    pub fn same_island(&self, p: ProcessorId, q: ProcessorId) -> bool {
        matches!((self.island_of(p), self.island_of(q)), (Some(a), Some(b)) if a == b)
    }

    /// Island widths, in island order.
    pub fn widths(&self) -> Vec<usize> {
        self.islands.iter().map(Vec::len).collect()
    }
}

fn linked(config: &Configuration, roles: &[ProcessorRole], p: ProcessorId, q: ProcessorId) -> bool {
    roles[p.0].is_correct() && roles[q.0].is_correct() && in_unison(config[p], config[q])
}

pub fn islands(config: &Configuration, roles: &[ProcessorRole], topology: &Topology) -> IslandPartition {
    let n = topology.len();
    let mut islands: Vec<Vec<ProcessorId>> = Vec::new();
    // Walk the layout from a point where no island can straddle the start.
    let start = match topology.kind() {
        TopologyKind::Chain => Some(0),
        TopologyKind::Ring => (0..n).find(|&i| !linked(config, roles, ProcessorId((i + n - 1) % n), ProcessorId(i))),
    };
    match start {
        None => islands.push(topology.processors().filter(|p| roles[p.0].is_correct()).collect()),
        Some(start) => {
            let mut current: Vec<ProcessorId> = Vec::new();
            for k in 0..n {
                let p = ProcessorId((start + k) % n);
                if !roles[p.0].is_correct() {
                    if !current.is_empty() {
                        islands.push(std::mem::take(&mut current));
                    }
                    continue;
                }
                if let Some(&prev) = current.last() {
                    if !linked(config, roles, prev, p) {
                        islands.push(std::mem::take(&mut current));
                    }
                }
                current.push(p);
            }
            if !current.is_empty() {
                islands.push(current);
            }
        }
    }
    islands.retain(|i| !i.is_empty());
    islands.sort_by_key(|i| i.iter().min().copied());
    let mut membership = vec![None; n];
    for (idx, island) in islands.iter().enumerate() {
        for p in island {
            membership[p.0] = Some(idx);
        }
    }
    IslandPartition { islands, membership }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeDrift {
    pub p: ProcessorId,
    pub q: ProcessorId,
    pub drift: u64,
}

/// Drift over edges joining two correct processors; `l` is the maximum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftReport {
    pub l: u64,
    pub edges: Vec<EdgeDrift>,
}

pub fn max_drift(config: &Configuration, roles: &[ProcessorRole], topology: &Topology) -> DriftReport {
    let edges: Vec<EdgeDrift> = topology
        .edges()
        .filter(|(p, q)| roles[p.0].is_correct() && roles[q.0].is_correct())
        .map(|(p, q)| EdgeDrift { p, q, drift: config[p].drift(config[q]) })
        .collect();
    DriftReport { l: edges.iter().map(|e| e.drift).max().unwrap_or(0), edges }
}

/// Every correct processor is in unison with its correct neighbors.
pub fn inv_holds(config: &Configuration, roles: &[ProcessorRole], topology: &Topology) -> bool {
    topology
        .edges()
        .all(|(p, q)| !(roles[p.0].is_correct() && roles[q.0].is_correct()) || in_unison(config[p], config[q]))
}

/// Steps in `window` (step indices, half-open) at which `p`'s clock
/// strictly increased.
pub fn increment_count(trace: &Trace, p: ProcessorId, window: Range<u64>) -> u64 {
    trace
        .groups()
        .filter(|g| window.contains(&g.step()))
        .filter(|g| g.after()[p] > g.before[p])
        .count() as u64
}

/// Periodic behavior of an end processor against a neighbor frozen at `b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum EndCycle {
    /// `b, b+1, b, b+1, ...`
    Type1,
    /// `b, b-1, b, b-1, ...`
    Type2,
    /// `b, b+1, b-1, b, b+1, b-1, ...`
    Type3,
    /// Any other cycle, as literal clock values.
    Other(Vec<i64>),
}

impl fmt::Display for EndCycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EndCycle::Type1 => f.write_str("type 1"),
            EndCycle::Type2 => f.write_str("type 2"),
            EndCycle::Type3 => f.write_str("type 3"),
            EndCycle::Other(c) => write!(f, "other {c:?}"),
        }
    }
}

pub const CYCLE_HORIZON: usize = 64;

fn is_rotation(cycle: &[i64], pattern: &[i64]) -> bool {
    cycle.len() == pattern.len()
        && (0..pattern.len()).any(|shift| cycle.iter().enumerate().all(|(i, v)| *v == pattern[(i + shift) % pattern.len()]))
}

/// Classifies the cycle traced by `end`'s clock. The state is the clock
/// together with the rule that produced it; the first repeated state closes
/// the cycle.
pub fn end_cycle_type(trace: &Trace, end: ProcessorId, neighbor_clock: Clock) -> Result<EndCycle> {
    let mut states: Vec<(i64, Option<Rule>)> = vec![(trace.initial[end].0, None)];
    for r in trace.records.iter().filter(|r| r.actor == end) {
        if states.len() > CYCLE_HORIZON {
            break;
        }
        let state = (r.clocks[end].0, r.kind.rule());
        if let Some(first) = states.iter().position(|s| *s == state) {
            let cycle: Vec<i64> = states[first..].iter().map(|s| s.0).collect();
            let b = neighbor_clock.0;
            return Ok(if is_rotation(&cycle, &[b, b + 1]) {
                EndCycle::Type1
            } else if is_rotation(&cycle, &[b, b - 1]) {
                EndCycle::Type2
            } else if is_rotation(&cycle, &[b, b + 1, b - 1]) {
                EndCycle::Type3
            } else {
                EndCycle::Other(cycle)
            });
        }
        states.push(state);
    }
    Err(Error::NoCycleDetected { horizon: CYCLE_HORIZON })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Property {
    IslandClosure,
    IslandCount,
    DriftMonotonicity,
    InvClosure,
    RuleValidity,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Property::IslandClosure => "island-closure",
            Property::IslandCount => "island-count",
            Property::DriftMonotonicity => "drift-monotonicity",
            Property::InvClosure => "inv-closure",
            Property::RuleValidity => "rule-validity",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyViolation {
    pub property: Property,
    pub step: u64,
    pub detail: String,
}

impl fmt::Display for PropertyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated at step {}: {}", self.property, self.step, self.detail)
    }
}

/// Checks the per-step safety properties of a central-daemon trace: island
/// closure, non-increasing island count, INV closure, drift monotonicity
/// toward out-of-unison neighbors, and that every rule record matches its
/// guard and command.
pub fn check_trace(trace: &Trace, topology: &Topology, roles: &[ProcessorRole]) -> Vec<PropertyViolation> {
    let mut out = Vec::new();
    let mut islands_before = islands(&trace.initial, roles, topology);
    for g in trace.groups() {
        let step = g.step();
        let (before, after) = (g.before, g.after());
        let islands_after = islands(after, roles, topology);
        for p in topology.processors() {
            for q in topology.processors().filter(|q| q.0 > p.0) {
                if islands_before.same_island(p, q) && !islands_after.same_island(p, q) {
                    out.push(PropertyViolation {
                        property: Property::IslandClosure,
                        step,
                        detail: format!("processors {p} and {q} separated"),
                    });
                }
            }
        }
        if islands_after.len() > islands_before.len() {
            out.push(PropertyViolation {
                property: Property::IslandCount,
                step,
                detail: format!("{} islands became {}", islands_before.len(), islands_after.len()),
            });
        }
        if inv_holds(before, roles, topology) && !inv_holds(after, roles, topology) {
            out.push(PropertyViolation { property: Property::InvClosure, step, detail: "INV lost".into() });
        }
        for r in g.records.iter().filter(|r| r.kind.is_correct_step()) {
            let p = r.actor;
            let (l, rn) = topology.neighbors(p).expect("actor in range");
            for q in [l, rn].into_iter().flatten() {
                let (d0, d1) = (before[p].drift(before[q]), after[p].drift(after[q]));
                if d0 >= 2 && before[q] == after[q] && d1 > d0 {
                    out.push(PropertyViolation {
                        property: Property::DriftMonotonicity,
                        step,
                        detail: format!("drift {p}-{q} grew from {d0} to {d1}"),
                    });
                }
            }
            if let StepKind::Rule(rule) = r.kind {
                let view = NeighborView::of(before, topology, p).expect("actor in range");
                let recorded_enabled = r.enabled.as_ref().map(|e| e.get(&p).is_some_and(|s| s.contains(rule)));
                if !view.enabled().contains(rule) || recorded_enabled == Some(false) || view.command(rule) != Some(r.written) {
                    out.push(PropertyViolation {
                        property: Property::RuleValidity,
                        step,
                        detail: format!("{rule} at {p} wrote {}", r.written),
                    });
                }
            }
        }
        islands_before = islands_after;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::ByzantineStrategy;
    use crate::trace::StepRecord;

    fn correct(n: usize) -> Vec<ProcessorRole> {
        vec![ProcessorRole::Correct; n]
    }

    fn ids(v: &[usize]) -> Vec<ProcessorId> {
        v.iter().copied().map(ProcessorId).collect()
    }

    #[test]
    fn unison_examples() {
        assert!(in_unison(Clock(5), Clock(5)));
        assert!(in_unison(Clock(5), Clock(6)));
        assert!(!in_unison(Clock(5), Clock(7)));
    }

    #[test]
    fn island_examples() {
        let t = Topology::chain(4).unwrap();
        let c = Configuration::from_values(&[3, 4, 9, 10]);
        assert_eq!(islands(&c, &correct(4), &t).islands, vec![ids(&[0, 1]), ids(&[2, 3])]);
        let mut roles = correct(4);
        roles[2] = ProcessorRole::Byzantine(ByzantineStrategy::Silent);
        let part = islands(&c, &roles, &t);
        assert_eq!(part.islands, vec![ids(&[0, 1]), ids(&[3])]);
        assert_eq!(part.island_of(ProcessorId(2)), None);
        let r = Topology::ring(4).unwrap();
        let c = Configuration::from_values(&[7, 7, 7, 6]);
        assert_eq!(islands(&c, &correct(4), &r).islands, vec![ids(&[0, 1, 2, 3])]);
    }

    #[test]
    fn ring_island_wraps_around() {
        let r = Topology::ring(5).unwrap();
        let c = Configuration::from_values(&[1, 9, 9, 0, 1]);
        let part = islands(&c, &correct(5), &r);
        assert_eq!(part.islands, vec![ids(&[3, 4, 0]), ids(&[1, 2])]);
        assert!(part.same_island(ProcessorId(4), ProcessorId(0)));
    }

    #[test]
    fn drift_examples() {
        let t = Topology::chain(4).unwrap();
        let c = Configuration::from_values(&[4, 8, 6, 7]);
        assert_eq!(max_drift(&c, &correct(4), &t).l, 4);
        let mut roles = correct(4);
        roles[1] = ProcessorRole::Byzantine(ByzantineStrategy::Silent);
        assert_eq!(max_drift(&c, &roles, &t).l, 1);
        let t2 = Topology::chain(2).unwrap();
        let roles2 = vec![ProcessorRole::Correct, ProcessorRole::Crashed];
        assert_eq!(max_drift(&Configuration::from_values(&[0, 100]), &roles2, &t2).l, 0);
    }

    #[test]
    fn inv_examples() {
        let t = Topology::chain(4).unwrap();
        assert!(inv_holds(&Configuration::from_values(&[7, 7, 7, 6]), &correct(4), &t));
        assert!(!inv_holds(&Configuration::from_values(&[4, 8, 6, 7]), &correct(4), &t));
        let t2 = Topology::chain(2).unwrap();
        let roles = vec![ProcessorRole::Correct, ProcessorRole::Byzantine(ByzantineStrategy::Silent)];
        assert!(inv_holds(&Configuration::from_values(&[0, 100]), &roles, &t2));
    }

    /// A trace where processor 0 takes the listed values in turn.
    fn trace_of(values: &[i64]) -> Trace {
        let mut t = Trace::new(Configuration::from_values(&[values[0], 0]));
        for (i, v) in values[1..].iter().enumerate() {
            t.records.push(StepRecord {
                step: i as u64,
                round: i as u64,
                actor: ProcessorId(0),
                kind: StepKind::Scripted,
                written: Clock(*v),
                clocks: Configuration::from_values(&[*v, 0]),
                enabled: None,
            });
        }
        t
    }

    #[test]
    fn increment_examples() {
        let p = ProcessorId(0);
        assert_eq!(increment_count(&trace_of(&[4, 9, 10]), p, 0..10), 2);
        assert_eq!(increment_count(&trace_of(&[5, 6, 4, 5]), p, 0..10), 2);
        assert_eq!(increment_count(&trace_of(&[5, 6, 4, 5]), ProcessorId(1), 0..10), 0);
        assert_eq!(increment_count(&trace_of(&[5, 6, 4, 5]), p, 1..3), 1);
    }

    #[test]
    fn synthetic_cycles() {
        let b = 10;
        let p = ProcessorId(0);
        assert_eq!(end_cycle_type(&trace_of(&[b, b + 1, b, b + 1, b]), p, Clock(b)).unwrap(), EndCycle::Type1);
        assert_eq!(end_cycle_type(&trace_of(&[b, b - 1, b, b - 1]), p, Clock(b)).unwrap(), EndCycle::Type2);
        assert_eq!(
            end_cycle_type(&trace_of(&[b, b + 1, b - 1, b, b + 1, b - 1]), p, Clock(b)).unwrap(),
            EndCycle::Type3
        );
        assert_eq!(
            end_cycle_type(&trace_of(&[b, b + 2, b, b + 2]), p, Clock(b)).unwrap(),
            EndCycle::Other(vec![b, b + 2])
        );
        assert_eq!(
            end_cycle_type(&trace_of(&[1, 2, 3, 4]), p, Clock(b)),
            Err(Error::NoCycleDetected { horizon: CYCLE_HORIZON })
        );
    }
}
