//! Crashed and Byzantine processors.
//!
//! A faulty processor never runs the protocol. A crashed one never writes;
//! a Byzantine one writes a single value, seen identically by both of its
//! neighbors, whenever its [`ActivationPolicy`] lets it act.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Clock, Configuration, ProcessorId, ProcessorRole, Topology};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ByzantineStrategy {
    /// Always writes the same value.
    Fixed(Clock),
    /// Writes `value` at exactly the listed global step indices.
    Scripted(Vec<(u64, Clock)>),
    /// Uniform draws from `[lo, hi]` out of a seeded stream.
    RandomWalk { lo: Clock, hi: Clock, seed: u64 },
    /// Writes `min(neighbor clocks) - offset`.
    ChaseBelow(i64),
    /// Never writes.
    Silent,
}

impl ByzantineStrategy {
    pub fn scripted(writes: Vec<(u64, Clock)>) -> Result<Self> {
        if writes.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidParams("scripted write steps must be strictly increasing".into()));
        }
        Ok(ByzantineStrategy::Scripted(writes))
    }

    pub fn random_walk(lo: Clock, hi: Clock, seed: u64) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidParams(format!("random walk bounds reversed: {lo} > {hi}")));
        }
        Ok(ByzantineStrategy::RandomWalk { lo, hi, seed })
    }

    pub fn label(&self) -> &'static str {
        match self {
            ByzantineStrategy::Fixed(_) => "fixed",
            ByzantineStrategy::Scripted(_) => "script",
            ByzantineStrategy::RandomWalk { .. } => "walk",
            ByzantineStrategy::ChaseBelow(_) => "chase",
            ByzantineStrategy::Silent => "silent",
        }
    }
}

/// When a faulty processor gets to act.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActivationPolicy {
    Never,
    /// At every step index divisible by `k`.
    EveryK(u64),
    WithProbability { p: f64, seed: u64 },
    /// At exactly these step indices.
    Scripted(Vec<u64>),
}

impl ActivationPolicy {
    pub fn every(k: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParams("activation period must be at least 1".into()));
        }
        Ok(ActivationPolicy::EveryK(k))
    }

    pub fn with_probability(p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParams(format!("activation probability {p} outside [0, 1]")));
        }
        Ok(ActivationPolicy::WithProbability { p, seed })
    }

    pub fn scripted(steps: Vec<u64>) -> Result<Self> {
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParams("activation steps must be strictly increasing".into()));
        }
        Ok(ActivationPolicy::Scripted(steps))
    }
}

/// Engine-owned state of one faulty processor.
#[derive(Debug, Clone)]
pub struct FaultState {
    id: ProcessorId,
    role: ProcessorRole,
    activation: ActivationPolicy,
    activation_rng: ChaCha8Rng,
    value_rng: ChaCha8Rng,
}

impl FaultState {
    pub fn new(id: ProcessorId, role: ProcessorRole, activation: ActivationPolicy) -> Self {
        let activation_seed = match activation {
            ActivationPolicy::WithProbability { seed, .. } => seed,
            _ => 0,
        };
        let value_seed = match role {
            ProcessorRole::Byzantine(ByzantineStrategy::RandomWalk { seed, .. }) => seed,
            _ => 0,
        };
        FaultState {
            id,
            role,
            activation,
            activation_rng: ChaCha8Rng::seed_from_u64(activation_seed),
            value_rng: ChaCha8Rng::seed_from_u64(value_seed),
        }
    }

    pub fn id(&self) -> ProcessorId {
        self.id
    }

    pub fn role(&self) -> &ProcessorRole {
        &self.role
    }

    pub fn is_crashed(&self) -> bool {
        matches!(self.role, ProcessorRole::Crashed)
    }

    /// Activation gate for `step`. Draws from the activation stream for
    /// probabilistic policies, so call it once per step.
    pub fn is_activated(&mut self, step: u64) -> bool {
        match &self.activation {
            ActivationPolicy::Never => false,
            ActivationPolicy::EveryK(k) => step.is_multiple_of(*k),
            ActivationPolicy::WithProbability { p, .. } => {
                let p = *p;
                self.activation_rng.gen_bool(p)
            }
            ActivationPolicy::Scripted(steps) => steps.binary_search(&step).is_ok(),
        }
    }

    /// The value the strategy writes at `step`, ignoring activation.
    pub fn strategy_write(&mut self, step: u64, view: &Configuration, topology: &Topology) -> Option<Clock> {
        let ProcessorRole::Byzantine(strategy) = &self.role else {
            return None;
        };
        match strategy {
            ByzantineStrategy::Fixed(v) => Some(*v),
            ByzantineStrategy::Scripted(writes) => {
                writes.binary_search_by_key(&step, |w| w.0).ok().map(|i| writes[i].1)
            }
            ByzantineStrategy::RandomWalk { lo, hi, .. } => {
                let (lo, hi) = (lo.0, hi.0);
                Some(Clock(self.value_rng.gen_range(lo..=hi)))
            }
            ByzantineStrategy::ChaseBelow(offset) => {
                let (l, r) = topology.neighbors(self.id).ok()?;
                let lowest = [l, r].into_iter().flatten().map(|q| view[q]).min()?;
                lowest.0.checked_sub(*offset).map(Clock)
            }
            ByzantineStrategy::Silent => None,
        }
    }
}

/// One opportunity for a faulty processor to act: activation gating first,
/// then the strategy. Crashed processors never write.
pub fn fault_action(state: &mut FaultState, step: u64, view: &Configuration, topology: &Topology) -> Option<Clock> {
    if state.is_crashed() || !state.is_activated(step) {
        return None;
    }
    state.strategy_write(step, view, topology)
}

/// Parses `crash`, `byz:fixed:<v>`, `byz:script:<path>`, `byz:walk:<lo>:<hi>`,
/// `byz:chase:<d>` or `byz:silent`. `read_file` loads script files, whose
/// lines are `<step> <value>`; `seed` seeds random walks.
pub fn parse_fault(spec: &str, seed: u64, read_file: impl Fn(&str) -> Result<String>) -> Result<ProcessorRole> {
    let bad = || Error::Parse(format!("invalid fault spec `{spec}`"));
    let int = |s: &str| s.parse::<i64>().map_err(|_| bad());
    if spec == "crash" {
        return Ok(ProcessorRole::Crashed);
    }
    let rest = spec.strip_prefix("byz:").ok_or_else(bad)?;
    let parts: Vec<&str> = rest.splitn(2, ':').collect();
    let strategy = match parts.as_slice() {
        ["fixed", v] => ByzantineStrategy::Fixed(Clock(int(v)?)),
        ["silent"] => ByzantineStrategy::Silent,
        ["chase", d] => ByzantineStrategy::ChaseBelow(int(d)?),
        ["walk", bounds] => {
            let (lo, hi) = bounds.split_once(':').ok_or_else(bad)?;
            ByzantineStrategy::random_walk(Clock(int(lo)?), Clock(int(hi)?), seed)?
        }
        ["script", path] => ByzantineStrategy::scripted(parse_write_script(&read_file(path)?)?)?,
        _ => return Err(bad()),
    };
    Ok(ProcessorRole::Byzantine(strategy))
}

fn parse_write_script(text: &str) -> Result<Vec<(u64, Clock)>> {
    script_lines(text)
        .map(|(no, line)| {
            let mut it = line.split_whitespace();
            let step = it.next().and_then(|s| s.parse::<u64>().ok());
            let value = it.next().and_then(|s| s.parse::<i64>().ok());
            match (step, value, it.next()) {
                (Some(s), Some(v), None) => Ok((s, Clock(v))),
                _ => Err(Error::Parse(format!("write script line {no}: expected `<step> <value>`"))),
            }
        })
        .collect()
}

/// Non-empty, non-comment lines with their 1-based line numbers.
pub(crate) fn script_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses `never`, `every:<k>`, `prob:<p>` or `script:<path>` (one step
/// index per line).
pub fn parse_activation(spec: &str, seed: u64, read_file: impl Fn(&str) -> Result<String>) -> Result<ActivationPolicy> {
    let bad = || Error::Parse(format!("invalid activation spec `{spec}`"));
    match spec.split_once(':') {
        None if spec == "never" => Ok(ActivationPolicy::Never),
        Some(("every", k)) => ActivationPolicy::every(k.parse().map_err(|_| bad())?),
        Some(("prob", p)) => ActivationPolicy::with_probability(p.parse().map_err(|_| bad())?, seed),
        Some(("script", path)) => {
            let text = read_file(path)?;
            let steps = script_lines(&text)
                .map(|(no, l)| l.parse::<u64>().map_err(|_| Error::Parse(format!("activation script line {no}"))))
                .collect::<Result<Vec<_>>>()?;
            ActivationPolicy::scripted(steps)
        }
        _ => Err(bad()),
    }
}
