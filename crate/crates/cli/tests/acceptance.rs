//! End-to-end acceptance suite. Runs every criterion, writes one PASS/FAIL
//! line per criterion straight to stderr (so it shows up even when test
//! output is captured) and then fails if any criterion failed unexpectedly.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use unison_core::analysis::{end_cycle_type, EndCycle, Property};
use unison_core::checks::{end_liveness, inv_closure, post_stabilization_liveness, trace_properties, Corpus};
use unison_core::engine::{run, InitSpec, RunParams, StopCondition};
use unison_core::scenarios::{lower_bound_chain, lower_bound_ring, upper_bound_sweep, weakly_fair_starvation, SweepFault};
use unison_core::scheduler::{audit_fairness, ActorChoice, SchedulerPolicy};
use unison_core::trace::{encode_trace_to_vec, StepKind, StepRecord, Trace};
use unison_core::{Clock, Configuration, ProcessorId, ProcessorRole, Rule, Topology, TopologyKind};

const SEED: u64 = 20_240_601;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    /// A documented failure: reported as FAIL but does not fail the suite.
    known_failure: bool,
    detail: String,
}

impl Outcome {
    fn check(passed: bool, detail: impl Into<String>) -> Self {
        Outcome { passed, known_failure: false, detail: detail.into() }
    }
}

fn corpus() -> Corpus {
    Corpus { sizes: 3..=8, drifts: 2..=20, trials: 2, seed: SEED, replay_t: 2..=6 }
}

fn upper_bound() -> Outcome {
    let c = corpus();
    let started = Instant::now();
    let sweep = upper_bound_sweep(c.sizes, c.drifts, c.trials, c.seed).unwrap();
    let mut per_kind: BTreeMap<&str, usize> = BTreeMap::new();
    let mut faults: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for s in &sweep {
        let kind = s.params.topology.kind().name();
        *per_kind.entry(kind).or_default() += 1;
        let fault = s.name.split("fault=").nth(1).and_then(|x| x.split(' ').next()).unwrap_or("?");
        *faults.entry((kind, fault)).or_default() += 1;
        let r = s.execute().unwrap();
        let (rounds, l) = (r.stats.rounds_to_inv, r.stats.initial_l);
        match rounds {
            Some(k) if k <= l => worst = worst.max(k as f64 / l as f64),
            _ => failures.push(format!("{}: rounds_to_inv {rounds:?} with L={l}", s.name)),
        }
    }
    let elapsed = started.elapsed();
    let enough = per_kind.len() == 2 && per_kind.values().all(|&n| n >= 200);
    let covered = ["chain", "ring"]
        .iter()
        .all(|k| SweepFault::ALL.iter().all(|f| faults.get(&(*k, f.name())).is_some_and(|&n| n > 0)));
    Outcome::check(
        failures.is_empty() && enough && covered && elapsed.as_secs_f64() < 5.0,
        format!(
            "{} runs {per_kind:?}, all fault kinds covered: {covered}, over bound: {}, worst rounds/L {worst:.2}, {:.2}s{}",
            sweep.len(),
            failures.len(),
            elapsed.as_secs_f64(),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    )
}

fn golden(name: &str) -> Vec<u8> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn lower_bound(kind: &str) -> Outcome {
    let mut problems = Vec::new();
    for t in 2..=6u64 {
        let make = || if kind == "chain" { lower_bound_chain(0, t) } else { lower_bound_ring(0, t) };
        let r = make().unwrap().execute().unwrap();
        let mut expected: Vec<u64> = (1..=t).rev().map(|k| 2 * k).collect();
        expected.push(if kind == "chain" { 1 } else { 0 });
        if r.stats.drift_by_round != expected || r.stats.rounds_to_inv != Some(t) || !r.passed() {
            problems.push(format!("t={t}: drift {:?} rounds {:?}", r.stats.drift_by_round, r.stats.rounds_to_inv));
        }
        let again = make().unwrap().execute().unwrap();
        if encode_trace_to_vec(&r.trace) != encode_trace_to_vec(&again.trace) {
            problems.push(format!("t={t}: trace differs between runs"));
        }
        if t == 3 && encode_trace_to_vec(&r.trace) != golden(&format!("lower_bound_{kind}_t3.jsonl")) {
            problems.push("t=3: trace differs from the golden file".into());
        }
    }
    let last = if kind == "chain" { "1" } else { "0" };
    Outcome::check(
        problems.is_empty(),
        format!("t=2..6 give [2t, ..., 2, {last}] and rounds_to_inv = t, golden t=3 trace matches{}", fmt_first(&problems)),
    )
}

fn fmt_first(problems: &[String]) -> String {
    problems.first().map(|p| format!("; {} problems, first: {p}", problems.len())).unwrap_or_default()
}

fn closure() -> Outcome {
    let r = inv_closure(1000, 6, -5..=25, SEED).unwrap();
    Outcome::check(
        r.passed(),
        format!("1000 configurations, {} transitions checked, {} violations", r.cases, r.counterexamples.len()),
    )
}

fn trace_property(name: &str, properties: &[Property]) -> Outcome {
    let r = trace_properties(name, &corpus(), properties).unwrap();
    Outcome::check(
        r.passed(),
        format!(
            "{} traces (sweep plus both replays for t=2..6), {} violations{}",
            r.cases,
            r.counterexamples.len(),
            r.counterexamples.first().map(|c| format!("; first: {} {}", c.case, c.detail)).unwrap_or_default()
        ),
    )
}

fn end_rules() -> Outcome {
    let r = end_liveness(-20..=20).unwrap();
    Outcome::check(r.passed() && r.cases == 2 * 41 * 41, format!("{} end views, {} exceptions", r.cases, r.counterexamples.len()))
}

fn post_stabilization() -> Outcome {
    let r = post_stabilization_liveness(&corpus(), 10).unwrap();
    let mut by_fault: BTreeMap<String, usize> = BTreeMap::new();
    for c in &r.counterexamples {
        let fault = c.case.split("fault=").nth(1).and_then(|x| x.split(' ').next()).unwrap_or("?");
        *by_fault.entry(fault.to_string()).or_default() += 1;
    }
    let only_chase = by_fault.keys().all(|k| k == SweepFault::ChaseBelow.name());
    Outcome {
        passed: r.passed(),
        known_failure: !r.passed() && only_chase,
        detail: format!(
            "{} runs, {} processors without an increment in the window, by fault {by_fault:?}{}",
            r.cases,
            r.counterexamples.len(),
            if only_chase && !r.passed() {
                "; a Byzantine that always writes below its neighbors drags signed clocks down forever"
            } else {
                ""
            }
        ),
    }
}

fn starvation() -> Outcome {
    let s = weakly_fair_starvation().unwrap();
    let r = s.execute().unwrap();
    let audit = audit_fairness(&r.trace, 100).unwrap();
    let increments = unison_core::analysis::increment_count(&r.trace, ProcessorId(1), 0..r.stats.steps);
    let ok = r.passed() && r.stats.steps == 10_000 && increments == 0 && audit.weak.is_empty() && !audit.strong.is_empty();
    Outcome::check(
        ok,
        format!(
            "{} steps, increments at 1: {increments}, assertions passed: {}, weak violations {}, strong violations {}",
            r.stats.steps,
            r.results.iter().filter(|a| a.passed).count(),
            audit.weak.len(),
            audit.strong.len()
        ),
    )
}

fn scratch(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name)
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_unison");
    let invocations: Vec<Vec<&str>> = vec![
        vec!["run", "--topology", "ring", "--size", "7", "--drift", "15", "--faulty", "2", "--fault", "byz:walk:-10:30",
             "--activation", "prob:0.3", "--seed", "5", "--stop", "window:20"],
        vec!["run", "--topology", "chain", "--size", "6", "--drift", "11", "--scheduler", "distributed:0.5", "--seed", "9"],
        vec!["run", "--topology", "chain", "--size", "5", "--init", "0,4,9,3,12", "--scheduler", "synchronous", "--faulty", "4",
             "--fault", "byz:chase:1", "--max-steps", "400", "--stop", "exhaust"],
        vec!["scenario", "lower-bound-ring", "--t", "5"],
        vec!["scenario", "weakly-fair-starvation"],
    ];
    let mut problems = Vec::new();
    for (i, inv) in invocations.iter().enumerate() {
        let mut outputs = Vec::new();
        for rep in 0..3 {
            let (trace, stats) = (scratch(&format!("det-{i}-{rep}.jsonl")), scratch(&format!("det-{i}-{rep}.json")));
            let status = Command::new(bin)
                .args(inv)
                .arg("--trace")
                .arg(&trace)
                .arg("--stats")
                .arg(&stats)
                .env_remove("UNISON_SEED")
                .output()
                .unwrap()
                .status;
            outputs.push((status.code(), std::fs::read(&trace).unwrap_or_default(), std::fs::read(&stats).unwrap_or_default()));
        }
        if outputs[0].1.is_empty() || outputs[0].2.is_empty() {
            problems.push(format!("invocation {i} wrote no output"));
        }
        if outputs.windows(2).any(|w| w[0] != w[1]) {
            problems.push(format!("invocation {i} differs between repetitions"));
        }
    }
    Outcome::check(
        problems.is_empty(),
        format!("{} invocations x3, trace, stats and exit code identical{}", invocations.len(), fmt_first(&problems)),
    )
}

fn synthetic(values: &[i64]) -> Trace {
    let records = values[1..]
        .iter()
        .enumerate()
        .map(|(i, v)| StepRecord {
            step: i as u64,
            round: i as u64,
            actor: ProcessorId(0),
            kind: StepKind::Scripted,
            written: Clock(*v),
            clocks: Configuration::from_values(&[*v]),
            enabled: None,
        })
        .collect();
    Trace { initial: Configuration::from_values(&values[..1]), records }
}

fn end_cycles() -> Outcome {
    let b = 10;
    let end = ProcessorId(0);
    let classify = |v: &[i64]| end_cycle_type(&synthetic(v), end, Clock(b)).unwrap();
    let type1 = classify(&[b, b + 1, b, b + 1, b]);
    let type2 = classify(&[b, b - 1, b, b - 1, b]);
    let type3 = classify(&[b, b + 1, b - 1, b, b + 1, b - 1, b]);

    // the end runs the protocol against a neighbor frozen at b
    let params = RunParams::new(Topology::chain(2).unwrap(), InitSpec::Explicit(Configuration::from_values(&[b, b])))
        .with_fault(ProcessorId(1), ProcessorRole::Crashed)
        .with_policy(SchedulerPolicy::ScriptedCentral(
            (0..40).map(|i| ActorChoice::Correct(end, if i % 2 == 0 { Rule::LeftEndUp } else { Rule::LeftEndDown })).collect(),
        ))
        .with_stop(StopCondition::Exhaust);
    let (trace, _) = run(&params).unwrap();
    let measured = end_cycle_type(&trace, end, Clock(b)).unwrap();
    let ok = type1 == EndCycle::Type1
        && type2 == EndCycle::Type2
        && type3 == EndCycle::Type3
        && measured == EndCycle::Other(vec![b + 1, b - 1])
        && measured != EndCycle::Type1;
    Outcome::check(ok, format!("synthetic: {type1}, {type2}, {type3}; protocol end against b={b} measures {measured} (not type 1)"))
}

#[test]
fn acceptance() {
    assert_eq!(TopologyKind::Chain.name(), "chain");
    let criteria: Vec<Criterion> = vec![
        ("upper bound: rounds_to_inv <= L", upper_bound),
        ("lower bound on the chain", || lower_bound("chain")),
        ("lower bound on the ring", || lower_bound("ring")),
        ("INV closure", closure),
        ("island closure", || trace_property("island-closure", &[Property::IslandClosure, Property::IslandCount])),
        ("drift monotonicity", || trace_property("drift-monotonicity", &[Property::DriftMonotonicity])),
        ("end liveness", end_rules),
        ("post-stabilization liveness", post_stabilization),
        ("weakly fair starvation", starvation),
        ("determinism", determinism),
        ("end-cycle classifier", end_cycles),
    ];
    let mut unexpected = Vec::new();
    let mut err = std::io::stderr().lock();
    for (i, (name, criterion)) in criteria.iter().enumerate() {
        let o = criterion();
        let verdict = match (o.passed, o.known_failure) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        writeln!(err, "acceptance {:>2} {verdict:<12} {name}: {}", i + 1, o.detail).unwrap();
        if !o.passed && !o.known_failure {
            unexpected.push(i + 1);
        }
    }
    assert!(unexpected.is_empty(), "criteria failed: {unexpected:?}");
}
