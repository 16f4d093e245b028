//! Daemons: who moves at each step, fairness bookkeeping and rounds.
//!
//! The strongly fair central daemon is realized as max-debt selection: the
//! enabled `(processor, rule)` pair that has been enabled in the most
//! configurations since it last fired goes next, ties to the lowest
//! processor id and then to [`Rule::ALL`] order. Faulty processors are not
//! part of the fairness queue; the engine offers them their own slot.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::script_lines;
use crate::error::{Error, Result};
use crate::model::{Clock, ProcessorId};
use crate::rules::Rule;
use crate::trace::{EnabledMap, Trace};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActorChoice {
    Correct(ProcessorId, Rule),
    Faulty(ProcessorId),
    /// Scripted override: a correct processor takes `value` regardless of
    /// its own commands. Used by generic-algorithm replays.
    Write(ProcessorId, Clock),
    SubsetOf(Vec<ActorChoice>),
}

impl ActorChoice {
    /// The individual actions, flattening subsets.
    pub fn actions(&self) -> Vec<&ActorChoice> {
        match self {
            ActorChoice::SubsetOf(v) => v.iter().flat_map(|c| c.actions()).collect(),
            other => vec![other],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SchedulerPolicy {
    CentralStronglyFair { seed: u64 },
    /// A scripted weakly fair schedule, used for counterexamples.
    CentralWeaklyFairScripted(Vec<ActorChoice>),
    /// A scripted unfair schedule, used for counterexamples.
    Unfair(Vec<ActorChoice>),
    Synchronous,
    DistributedRandom { seed: u64, subset_prob: f64 },
    ScriptedCentral(Vec<ActorChoice>),
}

impl SchedulerPolicy {
    /// Whether every step executes exactly one action.
    pub fn is_central(&self) -> bool {
        !matches!(self, SchedulerPolicy::Synchronous | SchedulerPolicy::DistributedRandom { .. })
    }

    pub fn script(&self) -> Option<&[ActorChoice]> {
        match self {
            SchedulerPolicy::CentralWeaklyFairScripted(s)
            | SchedulerPolicy::Unfair(s)
            | SchedulerPolicy::ScriptedCentral(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_scripted(&self) -> bool {
        self.script().is_some()
    }
}

/// Parses a schedule script: one step per line, `C <pid> <ruleName>`,
/// `F <pid>` or `W <pid> <value>`.
pub fn parse_schedule_script(text: &str) -> Result<Vec<ActorChoice>> {
    script_lines(text)
        .map(|(no, line)| {
            let bad = || Error::Parse(format!("schedule line {no}: `{line}`"));
            let parts: Vec<&str> = line.split_whitespace().collect();
            let pid = |s: &str| s.parse::<usize>().map(ProcessorId).map_err(|_| bad());
            match parts.as_slice() {
                ["C", p, rule] => Ok(ActorChoice::Correct(pid(p)?, rule.parse().map_err(|_| bad())?)),
                ["F", p] => Ok(ActorChoice::Faulty(pid(p)?)),
                ["W", p, v] => Ok(ActorChoice::Write(pid(p)?, Clock(v.parse().map_err(|_| bad())?))),
                _ => Err(bad()),
            }
        })
        .collect()
}

/// Parses `strongly-fair`, `synchronous`, `distributed:<prob>` or
/// `scripted:<path>`.
pub fn parse_scheduler(spec: &str, seed: u64, read_file: impl Fn(&str) -> Result<String>) -> Result<SchedulerPolicy> {
    let bad = || Error::Parse(format!("invalid scheduler spec `{spec}`"));
    match spec.split_once(':') {
        None if spec == "strongly-fair" => Ok(SchedulerPolicy::CentralStronglyFair { seed }),
        None if spec == "synchronous" => Ok(SchedulerPolicy::Synchronous),
        Some(("distributed", p)) => {
            let p: f64 = p.parse().map_err(|_| bad())?;
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Parse(format!("distributed subset probability {p} outside (0, 1]")));
            }
            Ok(SchedulerPolicy::DistributedRandom { seed, subset_prob: p })
        }
        Some(("scripted", path)) => Ok(SchedulerPolicy::ScriptedCentral(parse_schedule_script(&read_file(path)?)?)),
        _ => Err(bad()),
    }
}

/// Per `(processor, rule)` count of configurations in which the rule was
/// enabled since it last fired, and per processor steps since it last acted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FairnessLedger {
    enabled_since_fire: Vec<[u64; 10]>,
    steps_since_last_execution: Vec<u64>,
}

impl FairnessLedger {
    pub fn new(n: usize) -> Self {
        FairnessLedger { enabled_since_fire: vec![[0; 10]; n], steps_since_last_execution: vec![0; n] }
    }

    /// A ledger that has already seen `initial` once.
    pub fn starting_from(n: usize, initial: &EnabledMap) -> Self {
        let mut ledger = Self::new(n);
        for (p, set) in initial {
            for r in set.iter() {
                ledger.enabled_since_fire[p.0][r as usize] = 1;
            }
        }
        ledger
    }

    pub fn debt(&self, p: ProcessorId, rule: Rule) -> u64 {
        self.enabled_since_fire[p.0][rule as usize]
    }

    pub fn set_debt(&mut self, p: ProcessorId, rule: Rule, value: u64) {
        self.enabled_since_fire[p.0][rule as usize] = value;
    }

    pub fn steps_since_last_execution(&self, p: ProcessorId) -> u64 {
        self.steps_since_last_execution[p.0]
    }

    pub fn max_debt(&self) -> u64 {
        self.enabled_since_fire.iter().flat_map(|d| d.iter().copied()).max().unwrap_or(0)
    }
}

/// Round bookkeeping over correct processors only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundAccounting {
    pub current_round: u64,
    pub acted_this_round: BTreeSet<ProcessorId>,
    /// Step indices at which each round completed.
    pub round_boundaries: Vec<u64>,
    correct: BTreeSet<ProcessorId>,
}

impl RoundAccounting {
    pub fn new(correct: impl IntoIterator<Item = ProcessorId>) -> Self {
        RoundAccounting {
            current_round: 0,
            acted_this_round: BTreeSet::new(),
            round_boundaries: Vec::new(),
            correct: correct.into_iter().collect(),
        }
    }

    /// Notes that `actors` executed at `step`. Returns true when this step
    /// completed a round.
    pub fn record(&mut self, step: u64, actors: impl IntoIterator<Item = ProcessorId>) -> bool {
        for p in actors {
            if self.correct.contains(&p) {
                self.acted_this_round.insert(p);
            }
        }
        if !self.correct.is_empty() && self.acted_this_round.len() == self.correct.len() {
            self.acted_this_round.clear();
            self.round_boundaries.push(step);
            self.current_round += 1;
            true
        } else {
            false
        }
    }
}

/// Updates fairness and round state after `choice` executed at `step`.
/// `enabled_after` holds the enabled sets of the new configuration.
/// Returns true if a round boundary was recorded.
pub fn record_and_advance(
    ledger: &mut FairnessLedger,
    rounds: &mut RoundAccounting,
    step: u64,
    choice: &ActorChoice,
    enabled_after: &EnabledMap,
) -> bool {
    let actions = choice.actions();
    let mut fired: Vec<(ProcessorId, Rule)> = Vec::new();
    let mut correct_actors: Vec<ProcessorId> = Vec::new();
    for a in &actions {
        match a {
            ActorChoice::Correct(p, r) => {
                fired.push((*p, *r));
                correct_actors.push(*p);
            }
            ActorChoice::Write(p, _) => correct_actors.push(*p),
            _ => {}
        }
    }
    for (p, set) in enabled_after {
        for r in set.iter() {
            if !fired.contains(&(*p, r)) {
                ledger.enabled_since_fire[p.0][r as usize] += 1;
            }
        }
    }
    for &(p, r) in &fired {
        ledger.enabled_since_fire[p.0][r as usize] = 0;
    }
    for s in ledger.steps_since_last_execution.iter_mut() {
        *s += 1;
    }
    for a in &actions {
        if let ActorChoice::Correct(p, _) | ActorChoice::Write(p, _) | ActorChoice::Faulty(p) = a {
            ledger.steps_since_last_execution[p.0] = 0;
        }
    }
    rounds.record(step, correct_actors)
}

/// Engine-owned scheduler state.
#[derive(Debug, Clone)]
pub struct Scheduler {
    policy: SchedulerPolicy,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Scheduler {
    pub fn new(policy: SchedulerPolicy) -> Self {
        let seed = match policy {
            SchedulerPolicy::CentralStronglyFair { seed } | SchedulerPolicy::DistributedRandom { seed, .. } => seed,
            _ => 0,
        };
        Scheduler { policy, cursor: 0, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn policy(&self) -> &SchedulerPolicy {
        &self.policy
    }

    /// Initial ledger for a run. The strongly fair daemon seeds the initial
    /// debts with small jitter so different seeds explore different
    /// interleavings from the same configuration.
    pub fn initial_ledger(&mut self, n: usize, initial: &EnabledMap) -> FairnessLedger {
        let mut ledger = FairnessLedger::starting_from(n, initial);
        if let SchedulerPolicy::CentralStronglyFair { seed } = self.policy {
            if seed != 0 {
                for (p, set) in initial {
                    for r in set.iter() {
                        let jitter = self.rng.gen_range(0..=n as u64);
                        ledger.set_debt(*p, r, 1 + jitter);
                    }
                }
            }
        }
        ledger
    }

    /// Picks the next action. `faulty_ready` lists faulty processors that
    /// may act now; `faulty` lists every faulty processor (scripts may name
    /// any of them). `Ok(None)` means a script ran out.
    pub fn select(
        &mut self,
        step: u64,
        ledger: &FairnessLedger,
        enabled: &EnabledMap,
        faulty_ready: &BTreeSet<ProcessorId>,
        faulty: &BTreeSet<ProcessorId>,
    ) -> Result<Option<ActorChoice>> {
        match &self.policy {
            SchedulerPolicy::CentralStronglyFair { .. } => {
                if let Some(&p) = faulty_ready.first() {
                    return Ok(Some(ActorChoice::Faulty(p)));
                }
                select_max_debt(ledger, enabled).map(Some).ok_or(Error::Deadlock { step })
            }
            SchedulerPolicy::Synchronous => {
                let mut all: Vec<ActorChoice> = enabled
                    .iter()
                    .filter_map(|(p, set)| set.first().map(|r| ActorChoice::Correct(*p, r)))
                    .collect();
                all.extend(faulty_ready.iter().map(|p| ActorChoice::Faulty(*p)));
                if all.is_empty() {
                    return Err(Error::Deadlock { step });
                }
                Ok(Some(ActorChoice::SubsetOf(all)))
            }
            SchedulerPolicy::DistributedRandom { subset_prob, .. } => {
                let prob = *subset_prob;
                let mut candidates: Vec<ActorChoice> = Vec::new();
                for (p, set) in enabled {
                    let rules: Vec<Rule> = set.iter().collect();
                    let r = *rules.choose(&mut self.rng).expect("enabled sets are nonempty");
                    candidates.push(ActorChoice::Correct(*p, r));
                }
                candidates.extend(faulty_ready.iter().map(|p| ActorChoice::Faulty(*p)));
                if candidates.is_empty() {
                    return Err(Error::Deadlock { step });
                }
                let mut chosen: Vec<ActorChoice> =
                    candidates.iter().filter(|_| self.rng.gen_bool(prob)).cloned().collect();
                if chosen.is_empty() {
                    let i = self.rng.gen_range(0..candidates.len());
                    chosen.push(candidates[i].clone());
                }
                Ok(Some(ActorChoice::SubsetOf(chosen)))
            }
            SchedulerPolicy::ScriptedCentral(script)
            | SchedulerPolicy::CentralWeaklyFairScripted(script)
            | SchedulerPolicy::Unfair(script) => {
                let Some(choice) = script.get(self.cursor).cloned() else {
                    return Ok(None);
                };
                self.cursor += 1;
                validate_scripted(step, &choice, enabled, faulty)?;
                Ok(Some(choice))
            }
        }
    }
}

fn validate_scripted(
    step: u64,
    choice: &ActorChoice,
    enabled: &EnabledMap,
    faulty: &BTreeSet<ProcessorId>,
) -> Result<()> {
    let violation = |reason: String| Err(Error::ScriptViolation { step, reason });
    match choice {
        ActorChoice::Correct(p, r) => {
            if !enabled.get(p).is_some_and(|s| s.contains(*r)) {
                return violation(format!("{r} is not enabled at processor {p}"));
            }
        }
        ActorChoice::Faulty(p) => {
            if !faulty.contains(p) {
                return violation(format!("processor {p} is not faulty"));
            }
        }
        ActorChoice::Write(p, _) => {
            if faulty.contains(p) {
                return violation(format!("processor {p} is faulty; scripted writes target correct processors"));
            }
        }
        ActorChoice::SubsetOf(_) => return violation("a central script names one actor per step".into()),
    }
    Ok(())
}

/// The enabled pair with the largest debt; ties go to the lowest processor
/// id, then to the earliest rule in fixed order.
pub fn select_max_debt(ledger: &FairnessLedger, enabled: &EnabledMap) -> Option<ActorChoice> {
    let mut best: Option<(u64, ProcessorId, Rule)> = None;
    for (p, set) in enabled {
        for r in set.iter() {
            let d = ledger.debt(*p, r);
            if best.is_none_or(|(bd, _, _)| d > bd) {
                best = Some((d, *p, r));
            }
        }
    }
    best.map(|(_, p, r)| ActorChoice::Correct(p, r))
}

/// One fairness violation: `rule` at `processor` went unserved over the
/// steps `from_step..=to_step` (detection point).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessViolation {
    pub processor: ProcessorId,
    pub rule: Rule,
    pub from_step: u64,
    pub to_step: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub bound: u64,
    /// Rules enabled in more than `bound` configurations without firing.
    pub strong: Vec<FairnessViolation>,
    /// Rules continuously enabled for at least `bound` steps without firing.
    pub weak: Vec<FairnessViolation>,
}

impl AuditReport {
    pub fn is_ok(&self) -> bool {
        self.strong.is_empty() && self.weak.is_empty()
    }
}

#[derive(Clone, Copy, Default)]
struct AuditCell {
    count: u64,
    streak: u64,
    span_start: u64,
    streak_start: u64,
    strong_reported: bool,
    weak_reported: bool,
}

/// Finite-horizon fairness audit. Each `(processor, rule)` span is reported
/// at most once per surrogate.
pub fn audit_fairness(trace: &Trace, bound: u64) -> Result<AuditReport> {
    let n = trace.initial.len();
    let mut cells = vec![[AuditCell::default(); 10]; n];
    let mut report = AuditReport { bound, ..Default::default() };
    for group in trace.groups() {
        let step = group.step();
        let enabled = group.records[0].enabled.as_ref().ok_or(Error::TraceMissingEnabledSets(step))?;
        let fired: Vec<(ProcessorId, Rule)> =
            group.records.iter().filter_map(|r| r.kind.rule().map(|rule| (r.actor, rule))).collect();
        for (p, row) in cells.iter_mut().enumerate() {
            let p = ProcessorId(p);
            let set = enabled.get(&p).copied().unwrap_or_default();
            for rule in Rule::ALL {
                let cell = &mut row[rule as usize];
                if set.contains(rule) {
                    if cell.streak == 0 {
                        cell.streak_start = step;
                    }
                    cell.count += 1;
                    cell.streak += 1;
                } else {
                    cell.streak = 0;
                    cell.weak_reported = false;
                }
                if fired.contains(&(p, rule)) {
                    *cell = AuditCell { span_start: step + 1, ..Default::default() };
                    continue;
                }
                if cell.count > bound && !cell.strong_reported {
                    cell.strong_reported = true;
                    report.strong.push(FairnessViolation { processor: p, rule, from_step: cell.span_start, to_step: step });
                }
                if cell.streak >= bound && !cell.weak_reported {
                    cell.weak_reported = true;
                    report.weak.push(FairnessViolation { processor: p, rule, from_step: cell.streak_start, to_step: step });
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Configuration;
    use crate::rules::RuleSet;
    use crate::trace::{StepKind, StepRecord};

    fn set(rules: &[Rule]) -> RuleSet {
        rules.iter().copied().collect()
    }

    #[test]
    fn max_debt_picks_largest() {
        let mut ledger = FairnessLedger::new(3);
        ledger.set_debt(ProcessorId(0), Rule::LeftEndUp, 5);
        ledger.set_debt(ProcessorId(1), Rule::MiddleLeftUp, 2);
        let enabled: EnabledMap =
            [(ProcessorId(0), set(&[Rule::LeftEndUp])), (ProcessorId(1), set(&[Rule::MiddleLeftUp]))].into();
        assert_eq!(select_max_debt(&ledger, &enabled), Some(ActorChoice::Correct(ProcessorId(0), Rule::LeftEndUp)));
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let mut ledger = FairnessLedger::new(5);
        ledger.set_debt(ProcessorId(1), Rule::MiddleRightDown, 3);
        ledger.set_debt(ProcessorId(4), Rule::RightEndUp, 3);
        let enabled: EnabledMap =
            [(ProcessorId(4), set(&[Rule::RightEndUp])), (ProcessorId(1), set(&[Rule::MiddleRightDown]))].into();
        assert_eq!(
            select_max_debt(&ledger, &enabled),
            Some(ActorChoice::Correct(ProcessorId(1), Rule::MiddleRightDown))
        );
    }

    #[test]
    fn script_passthrough_and_violations() {
        let script = vec![ActorChoice::Faulty(ProcessorId(3)), ActorChoice::Correct(ProcessorId(0), Rule::LeftEndUp)];
        let mut s = Scheduler::new(SchedulerPolicy::ScriptedCentral(script));
        let ledger = FairnessLedger::new(4);
        let faulty: BTreeSet<_> = [ProcessorId(3)].into();
        let enabled: EnabledMap = [(ProcessorId(0), set(&[Rule::LeftEndDown]))].into();
        assert_eq!(
            s.select(0, &ledger, &enabled, &faulty, &faulty).unwrap(),
            Some(ActorChoice::Faulty(ProcessorId(3)))
        );
        assert!(matches!(
            s.select(1, &ledger, &enabled, &faulty, &faulty),
            Err(Error::ScriptViolation { step: 1, .. })
        ));
        assert_eq!(s.select(2, &ledger, &enabled, &faulty, &faulty).unwrap(), None);
    }

    #[test]
    fn deadlock_when_nobody_can_move() {
        let mut s = Scheduler::new(SchedulerPolicy::CentralStronglyFair { seed: 0 });
        let none = BTreeSet::new();
        assert_eq!(
            s.select(9, &FairnessLedger::new(2), &EnabledMap::new(), &none, &none),
            Err(Error::Deadlock { step: 9 })
        );
    }

    #[test]
    fn round_boundary_when_all_correct_acted() {
        let mut rounds = RoundAccounting::new([ProcessorId(0), ProcessorId(1), ProcessorId(2)]);
        let mut ledger = FairnessLedger::new(4);
        let empty = EnabledMap::new();
        assert!(!record_and_advance(&mut ledger, &mut rounds, 0, &ActorChoice::Correct(ProcessorId(0), Rule::LeftEndUp), &empty));
        assert!(!record_and_advance(&mut ledger, &mut rounds, 1, &ActorChoice::Correct(ProcessorId(1), Rule::SyncUp), &empty));
        // faulty steps do not count toward rounds
        assert!(!record_and_advance(&mut ledger, &mut rounds, 2, &ActorChoice::Faulty(ProcessorId(3)), &empty));
        assert_eq!(rounds.acted_this_round.len(), 2);
        assert!(record_and_advance(&mut ledger, &mut rounds, 3, &ActorChoice::Correct(ProcessorId(2), Rule::SyncUp), &empty));
        assert!(rounds.acted_this_round.is_empty());
        assert_eq!(rounds.round_boundaries, vec![3]);
        assert_eq!(rounds.current_round, 1);
    }

    #[test]
    fn firing_resets_debt() {
        let mut ledger = FairnessLedger::new(2);
        ledger.set_debt(ProcessorId(0), Rule::LeftEndUp, 9);
        ledger.set_debt(ProcessorId(1), Rule::RightEndDown, 4);
        let mut rounds = RoundAccounting::new([ProcessorId(0), ProcessorId(1)]);
        let after: EnabledMap =
            [(ProcessorId(0), set(&[Rule::LeftEndUp])), (ProcessorId(1), set(&[Rule::RightEndDown]))].into();
        record_and_advance(&mut ledger, &mut rounds, 0, &ActorChoice::Correct(ProcessorId(0), Rule::LeftEndUp), &after);
        assert_eq!(ledger.debt(ProcessorId(0), Rule::LeftEndUp), 0);
        assert_eq!(ledger.debt(ProcessorId(1), Rule::RightEndDown), 5);
        assert_eq!(ledger.steps_since_last_execution(ProcessorId(0)), 0);
        assert_eq!(ledger.steps_since_last_execution(ProcessorId(1)), 1);
    }

    #[test]
    fn audit_of_empty_trace_is_clean() {
        let report = audit_fairness(&Trace::new(Configuration::from_values(&[0, 0])), 5).unwrap();
        assert!(report.is_ok());
    }

    #[test]
    fn audit_requires_enabled_sets() {
        let mut t = Trace::new(Configuration::from_values(&[0, 0]));
        t.records.push(StepRecord {
            step: 0,
            round: 0,
            actor: ProcessorId(0),
            kind: StepKind::Rule(Rule::LeftEndUp),
            written: Clock(1),
            clocks: Configuration::from_values(&[1, 0]),
            enabled: None,
        });
        assert_eq!(audit_fairness(&t, 5), Err(Error::TraceMissingEnabledSets(0)));
    }

    #[test]
    fn parse_scheduler_specs() {
        let none = |_: &str| -> Result<String> { Err(Error::Io("none".into())) };
        assert_eq!(parse_scheduler("strongly-fair", 4, none).unwrap(), SchedulerPolicy::CentralStronglyFair { seed: 4 });
        assert_eq!(parse_scheduler("synchronous", 4, none).unwrap(), SchedulerPolicy::Synchronous);
        assert_eq!(
            parse_scheduler("distributed:0.5", 4, none).unwrap(),
            SchedulerPolicy::DistributedRandom { seed: 4, subset_prob: 0.5 }
        );
        assert!(parse_scheduler("distributed:0", 4, none).is_err());
        assert!(parse_scheduler("weakly-fair", 4, none).is_err());
        let scripted = parse_scheduler("scripted:x", 0, |_| Ok("C 0 leftEndUp\nF 3\n# note\nW 1 -4\n".into())).unwrap();
        assert_eq!(
            scripted,
            SchedulerPolicy::ScriptedCentral(vec![
                ActorChoice::Correct(ProcessorId(0), Rule::LeftEndUp),
                ActorChoice::Faulty(ProcessorId(3)),
                ActorChoice::Write(ProcessorId(1), Clock(-4)),
            ])
        );
        assert!(parse_schedule_script("C 0 middleAlign").is_err());
        assert!(parse_schedule_script("X 1").is_err());
    }
}
