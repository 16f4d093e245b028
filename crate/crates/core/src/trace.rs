//! Step-by-step run records and their JSON Lines encoding.
//!
//! Each line is one record:
//!
//! ```text
//! {"step":3,"round":0,"actor":2,"kind":"rule","rule":"middleLeftUp","written":7,"clocks":[6,7,7,8]}
//! ```
//!
//! Enabled sets are not written out. They are a pure function of the
//! configuration before each step, so [`decode_trace`] recomputes them from
//! the topology and roles of the run.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Clock, Configuration, ProcessorId, ProcessorRole, Topology};
use crate::rules::{enabled_rules, Rule, RuleSet};

/// Nonempty enabled rule sets of correct processors in one configuration.
pub type EnabledMap = BTreeMap<ProcessorId, RuleSet>;

pub fn enabled_map(config: &Configuration, topology: &Topology, roles: &[ProcessorRole]) -> Result<EnabledMap> {
    let mut map = EnabledMap::new();
    for p in topology.processors() {
        if roles[p.0].is_correct() {
            let set = enabled_rules(config, topology, roles, p)?;
            if !set.is_empty() {
                map.insert(p, set);
            }
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepKind {
    Rule(Rule),
    Byzantine,
    CrashNoop,
    /// A value imposed on a correct processor by a replay script instead of
    /// one of the protocol's own commands.
    Scripted,
}

impl StepKind {
    pub fn label(self) -> &'static str {
        match self {
            StepKind::Rule(_) => "rule",
            StepKind::Byzantine => "byzantine",
            StepKind::CrashNoop => "crash-noop",
            StepKind::Scripted => "scripted",
        }
    }

    pub fn rule(self) -> Option<Rule> {
        match self {
            StepKind::Rule(r) => Some(r),
            _ => None,
        }
    }

    /// Rule and scripted steps are steps of a correct processor.
    pub fn is_correct_step(self) -> bool {
        matches!(self, StepKind::Rule(_) | StepKind::Scripted)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    pub step: u64,
    /// Number of rounds completed before this step.
    pub round: u64,
    pub actor: ProcessorId,
    pub kind: StepKind,
    pub written: Clock,
    /// Configuration after this record.
    pub clocks: Configuration,
    /// Enabled sets in the configuration before the step.
    pub enabled: Option<EnabledMap>,
}

/// A run: its initial configuration and one record per actor per step.
/// Records of one atomic step under a synchronous or distributed scheduler
/// share their `step` index and are applied left to right.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub initial: Configuration,
    pub records: Vec<StepRecord>,
}

/// One atomic step: the configuration before it and its records.
pub struct StepGroup<'a> {
    pub before: &'a Configuration,
    pub records: &'a [StepRecord],
}

impl StepGroup<'_> {
    pub fn step(&self) -> u64 {
        self.records[0].step
    }

    pub fn after(&self) -> &Configuration {
        &self.records[self.records.len() - 1].clocks
    }
}

impl Trace {
    pub fn new(initial: Configuration) -> Self {
        Trace { initial, records: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_config(&self) -> &Configuration {
        self.records.last().map_or(&self.initial, |r| &r.clocks)
    }

    pub fn groups(&self) -> impl Iterator<Item = StepGroup<'_>> {
        let mut before = &self.initial;
        self.records.chunk_by(|a, b| a.step == b.step).map(move |records| {
            let group = StepGroup { before, records };
            before = &records[records.len() - 1].clocks;
            group
        })
    }

    /// Configurations visited: the initial one, then the one after each step.
    pub fn configurations(&self) -> impl Iterator<Item = &Configuration> {
        std::iter::once(&self.initial).chain(self.groups().map(|g| &g.records[g.records.len() - 1].clocks))
    }
}

#[derive(Serialize, Deserialize)]
struct Line {
    step: u64,
    round: u64,
    actor: usize,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    rule: Option<Rule>,
    written: i64,
    clocks: Vec<i64>,
}

pub fn encode_trace<W: Write>(trace: &Trace, mut out: W) -> Result<()> {
    for r in &trace.records {
        let line = Line {
            step: r.step,
            round: r.round,
            actor: r.actor.0,
            kind: r.kind.label().to_string(),
            rule: r.kind.rule(),
            written: r.written.0,
            clocks: r.clocks.values(),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::Io(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn encode_trace_to_vec(trace: &Trace) -> Vec<u8> {
    let mut buf = Vec::new();
    encode_trace(trace, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

/// Reads a JSON Lines trace back, recomputing enabled sets from the run's
/// topology, roles and initial configuration.
pub fn decode_trace<R: BufRead>(
    input: R,
    topology: &Topology,
    roles: &[ProcessorRole],
    initial: Configuration,
) -> Result<Trace> {
    let mut records: Vec<StepRecord> = Vec::new();
    let mut before = initial.clone();
    let mut before_enabled = enabled_map(&before, topology, roles)?;
    for (no, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: Line = serde_json::from_str(&line).map_err(|e| Error::Parse(format!("trace line {}: {e}", no + 1)))?;
        let kind = match (l.kind.as_str(), l.rule) {
            ("rule", Some(r)) => StepKind::Rule(r),
            ("byzantine", None) => StepKind::Byzantine,
            ("crash-noop", None) => StepKind::CrashNoop,
            ("scripted", None) => StepKind::Scripted,
            _ => return Err(Error::Parse(format!("trace line {}: bad kind/rule combination", no + 1))),
        };
        if l.clocks.len() != topology.len() || l.actor >= topology.len() {
            return Err(Error::Parse(format!("trace line {}: wrong system size", no + 1)));
        }
        if let Some(prev) = records.last() {
            if prev.step != l.step {
                before = prev.clocks.clone();
                before_enabled = enabled_map(&before, topology, roles)?;
            }
        }
        records.push(StepRecord {
            step: l.step,
            round: l.round,
            actor: ProcessorId(l.actor),
            kind,
            written: Clock(l.written),
            clocks: Configuration::from_values(&l.clocks),
            enabled: Some(before_enabled.clone()),
        });
    }
    Ok(Trace { initial, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trace_encodes_to_nothing() {
        let t = Trace::new(Configuration::from_values(&[1, 2]));
        assert!(encode_trace_to_vec(&t).is_empty());
    }

    #[test]
    fn rule_line_shape() {
        let topo = Topology::chain(2).unwrap();
        let roles = vec![ProcessorRole::Correct; 2];
        let initial = Configuration::from_values(&[4, 8]);
        let enabled = enabled_map(&initial, &topo, &roles).unwrap();
        let trace = Trace {
            initial: initial.clone(),
            records: vec![StepRecord {
                step: 0,
                round: 0,
                actor: ProcessorId(0),
                kind: StepKind::Rule(Rule::LeftEndUp),
                written: Clock(9),
                clocks: Configuration::from_values(&[9, 8]),
                enabled: Some(enabled),
            }],
        };
        let text = String::from_utf8(encode_trace_to_vec(&trace)).unwrap();
        assert_eq!(
            text,
            "{\"step\":0,\"round\":0,\"actor\":0,\"kind\":\"rule\",\"rule\":\"leftEndUp\",\"written\":9,\"clocks\":[9,8]}\n"
        );
        let back = decode_trace(text.as_bytes(), &topo, &roles, initial).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn rejects_malformed_lines() {
        let topo = Topology::chain(2).unwrap();
        let roles = vec![ProcessorRole::Correct; 2];
        let init = Configuration::from_values(&[0, 0]);
        let bad = [
            "{\"step\":0,\"round\":0,\"actor\":0,\"kind\":\"rule\",\"written\":1,\"clocks\":[1,0]}",
            "{\"step\":0,\"round\":0,\"actor\":0,\"kind\":\"byzantine\",\"rule\":\"syncUp\",\"written\":1,\"clocks\":[1,0]}",
            "{\"step\":0,\"round\":0,\"actor\":5,\"kind\":\"byzantine\",\"written\":1,\"clocks\":[1,0]}",
            "not json",
        ];
        for line in bad {
            assert!(decode_trace(line.as_bytes(), &topo, &roles, init.clone()).is_err(), "{line}");
        }
    }
}
