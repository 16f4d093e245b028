//! Topologies, processor roles and configurations.
//!
//! Everything here is an immutable value. A [`Configuration`] is replaced,
//! never mutated in place, when a processor writes its clock.

use std::fmt;
use std::ops::Index;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adversary::ByzantineStrategy;
use crate::error::{Error, Result};

/// A processor's clock. Signed so that `c_r - 1` below zero stays a legal
/// transient value; arithmetic is checked and never wraps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Clock(pub i64);

impl Clock {
    pub fn value(self) -> i64 {
        self.0
    }

    pub fn checked_offset(self, delta: i64) -> Option<Clock> {
        self.0.checked_add(delta).map(Clock)
    }

    /// Absolute difference, widened so it cannot overflow.
    pub fn drift(self, other: Clock) -> u64 {
        (i128::from(self.0) - i128::from(other.0)).unsigned_abs() as u64
    }
}

impl fmt::Display for Clock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<i64> for Clock {
    fn from(v: i64) -> Self {
        Clock(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProcessorId(pub usize);

impl fmt::Display for ProcessorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Chain,
    Ring,
}

impl TopologyKind {
    pub fn min_size(self) -> usize {
        match self {
            TopologyKind::Chain => 2,
            TopologyKind::Ring => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::Chain => "chain",
            TopologyKind::Ring => "ring",
        }
    }
}

impl FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chain" => Ok(TopologyKind::Chain),
            "ring" => Ok(TopologyKind::Ring),
            other => Err(Error::Parse(format!("unknown topology `{other}` (expected chain|ring)"))),
        }
    }
}

/// A chain or ring of `n` processors laid out left to right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Topology {
    kind: TopologyKind,
    n: usize,
}

impl Topology {
    pub fn new(kind: TopologyKind, n: usize) -> Result<Self> {
        let min = kind.min_size();
        if n < min {
            return Err(Error::SizeTooSmall { kind: kind.name(), min, n });
        }
        Ok(Topology { kind, n })
    }

    pub fn chain(n: usize) -> Result<Self> {
        Self::new(TopologyKind::Chain, n)
    }

    pub fn ring(n: usize) -> Result<Self> {
        Self::new(TopologyKind::Ring, n)
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn processors(&self) -> impl Iterator<Item = ProcessorId> {
        (0..self.n).map(ProcessorId)
    }

    fn check(&self, p: ProcessorId) -> Result<()> {
        if p.0 < self.n {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { index: p.0, n: self.n })
        }
    }

    /// `(left, right)` neighbors; chain ends have `None` on their open side.
    pub fn neighbors(&self, p: ProcessorId) -> Result<(Option<ProcessorId>, Option<ProcessorId>)> {
        self.check(p)?;
        Ok((self.left(p), self.right(p)))
    }

    /// Left neighbor. Panics-free for in-range `p`; out-of-range yields `None`.
    pub fn left(&self, p: ProcessorId) -> Option<ProcessorId> {
        if p.0 >= self.n {
            return None;
        }
        match self.kind {
            TopologyKind::Chain => p.0.checked_sub(1).map(ProcessorId),
            TopologyKind::Ring => Some(ProcessorId((p.0 + self.n - 1) % self.n)),
        }
    }

    pub fn right(&self, p: ProcessorId) -> Option<ProcessorId> {
        if p.0 >= self.n {
            return None;
        }
        match self.kind {
            TopologyKind::Chain => (p.0 + 1 < self.n).then_some(ProcessorId(p.0 + 1)),
            TopologyKind::Ring => Some(ProcessorId((p.0 + 1) % self.n)),
        }
    }

    pub fn degree(&self, p: ProcessorId) -> usize {
        usize::from(self.left(p).is_some()) + usize::from(self.right(p).is_some())
    }

    pub fn is_left_end(&self, p: ProcessorId) -> bool {
        self.kind == TopologyKind::Chain && p.0 == 0
    }

    pub fn is_right_end(&self, p: ProcessorId) -> bool {
        self.kind == TopologyKind::Chain && p.0 + 1 == self.n
    }

    /// Every undirected edge once, as `(p, right(p))`. On a ring the wrap
    /// edge comes last as `(n-1, 0)`.
    pub fn edges(&self) -> impl Iterator<Item = (ProcessorId, ProcessorId)> + '_ {
        self.processors().filter_map(move |p| self.right(p).map(|q| (p, q)))
    }

    pub fn are_adjacent(&self, p: ProcessorId, q: ProcessorId) -> bool {
        self.left(p) == Some(q) || self.right(p) == Some(q)
    }
}

/// What a processor is doing in a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProcessorRole {
    Correct,
    Crashed,
    Byzantine(ByzantineStrategy),
}

impl ProcessorRole {
    pub fn is_correct(&self) -> bool {
        matches!(self, ProcessorRole::Correct)
    }

    pub fn is_faulty(&self) -> bool {
        !self.is_correct()
    }
}

/// Rejects role vectors with more than one faulty processor unless
/// `unchecked` is set, and vectors whose length disagrees with the topology.
pub fn validate_roles(topology: &Topology, roles: &[ProcessorRole], unchecked: bool) -> Result<()> {
    if roles.len() != topology.len() {
        return Err(Error::InvalidParams(format!(
            "{} roles given for {} processors",
            roles.len(),
            topology.len()
        )));
    }
    let faulty = roles.iter().filter(|r| r.is_faulty()).count();
    if faulty > 1 && !unchecked {
        return Err(Error::TooManyFaults { faulty });
    }
    Ok(())
}

/// Clock values of every processor, indexed by [`ProcessorId`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration {
    clocks: Vec<Clock>,
}

impl Configuration {
    pub fn new(clocks: Vec<Clock>) -> Self {
        Configuration { clocks }
    }

    pub fn from_values(values: &[i64]) -> Self {
        Configuration { clocks: values.iter().copied().map(Clock).collect() }
    }

    pub fn for_topology(topology: &Topology, clocks: Vec<Clock>) -> Result<Self> {
        if clocks.len() != topology.len() {
            return Err(Error::InvalidParams(format!(
                "configuration has {} clocks, topology has {} processors",
                clocks.len(),
                topology.len()
            )));
        }
        Ok(Configuration { clocks })
    }

    pub fn len(&self) -> usize {
        self.clocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clocks.is_empty()
    }

    pub fn get(&self, p: ProcessorId) -> Option<Clock> {
        self.clocks.get(p.0).copied()
    }

    pub fn clocks(&self) -> &[Clock] {
        &self.clocks
    }

    pub fn values(&self) -> Vec<i64> {
        self.clocks.iter().map(|c| c.0).collect()
    }

    /// A copy with processor `p` set to `value`.
    pub fn with(&self, p: ProcessorId, value: Clock) -> Configuration {
        let mut clocks = self.clocks.clone();
        clocks[p.0] = value;
        Configuration { clocks }
    }
}

impl Index<ProcessorId> for Configuration {
    type Output = Clock;

    fn index(&self, p: ProcessorId) -> &Clock {
        &self.clocks[p.0]
    }
}

impl FromStr for Configuration {
    type Err = Error;

    /// Parses a comma separated list of clock values, e.g. `4,8,6,7`.
    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .map(|v| {
                v.trim()
                    .parse::<i64>()
                    .map(Clock)
                    .map_err(|_| Error::Parse(format!("invalid clock value `{}`", v.trim())))
            })
            .collect::<Result<Vec<_>>>()
            .map(Configuration::new)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn degrees(t: &Topology) -> Vec<usize> {
        t.processors().map(|p| t.degree(p)).collect()
    }

    #[test]
    fn smallest_chain() {
        let t = Topology::chain(2).unwrap();
        assert_eq!(degrees(&t), vec![1, 1]);
        assert_eq!(t.neighbors(ProcessorId(0)).unwrap(), (None, Some(ProcessorId(1))));
        assert_eq!(t.neighbors(ProcessorId(1)).unwrap(), (Some(ProcessorId(0)), None));
    }

    #[test]
    fn chain_degrees() {
        assert_eq!(degrees(&Topology::chain(4).unwrap()), vec![1, 2, 2, 1]);
    }

    #[test]
    fn ring_wraps() {
        let t = Topology::ring(3).unwrap();
        assert_eq!(degrees(&t), vec![2, 2, 2]);
        assert_eq!(t.left(ProcessorId(0)), Some(ProcessorId(2)));
        assert_eq!(t.right(ProcessorId(2)), Some(ProcessorId(0)));
    }

    #[test]
    fn neighbor_examples() {
        let c = Topology::chain(4).unwrap();
        assert_eq!(c.neighbors(ProcessorId(0)).unwrap(), (None, Some(ProcessorId(1))));
        assert_eq!(c.neighbors(ProcessorId(2)).unwrap(), (Some(ProcessorId(1)), Some(ProcessorId(3))));
        let r = Topology::ring(5).unwrap();
        assert_eq!(r.neighbors(ProcessorId(0)).unwrap(), (Some(ProcessorId(4)), Some(ProcessorId(1))));
    }

    #[test]
    fn size_errors() {
        assert!(matches!(Topology::chain(1), Err(Error::SizeTooSmall { min: 2, .. })));
        assert!(matches!(Topology::ring(2), Err(Error::SizeTooSmall { min: 3, .. })));
        assert!(matches!(
            Topology::chain(4).unwrap().neighbors(ProcessorId(4)),
            Err(Error::IndexOutOfRange { index: 4, n: 4 })
        ));
    }

    #[test]
    fn structural_invariants() {
        for n in 2..12 {
            for kind in [TopologyKind::Chain, TopologyKind::Ring] {
                let Ok(t) = Topology::new(kind, n) else { continue };
                // symmetry
                for p in t.processors() {
                    for q in t.processors() {
                        assert_eq!(t.are_adjacent(p, q), t.are_adjacent(q, p));
                    }
                }
                let ends = t.processors().filter(|&p| t.degree(p) == 1).count();
                match kind {
                    TopologyKind::Chain => assert_eq!(ends, 2),
                    TopologyKind::Ring => assert_eq!(ends, 0),
                }
                // adjacent processors are at index distance 1 along the layout
                for (p, q) in t.edges() {
                    let d = p.0.abs_diff(q.0);
                    assert!(d == 1 || (kind == TopologyKind::Ring && d == n - 1));
                }
            }
        }
    }

    #[test]
    fn fault_bound() {
        let t = Topology::chain(4).unwrap();
        let mut roles = vec![ProcessorRole::Correct; 4];
        roles[1] = ProcessorRole::Crashed;
        assert!(validate_roles(&t, &roles, false).is_ok());
        roles[3] = ProcessorRole::Crashed;
        assert_eq!(validate_roles(&t, &roles, false), Err(Error::TooManyFaults { faulty: 2 }));
        assert!(validate_roles(&t, &roles, true).is_ok());
    }

    #[test]
    fn parse_configuration() {
        let c: Configuration = "4, 8,6,-7".parse().unwrap();
        assert_eq!(c.values(), vec![4, 8, 6, -7]);
        assert!("4,x".parse::<Configuration>().is_err());
    }

    #[test]
    fn drift_does_not_overflow() {
        assert_eq!(Clock(i64::MAX).drift(Clock(i64::MIN)), u64::MAX);
        assert_eq!(Clock(i64::MAX).checked_offset(1), None);
    }
}
