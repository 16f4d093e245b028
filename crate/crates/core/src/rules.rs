//! The ten guarded commands of the strictly-stabilizing unison protocol.
//!
//! Each processor reads its own clock and the clocks of its (at most two)
//! neighbors from one atomic snapshot, evaluates every guard, and an enabled
//! rule overwrites only its own clock. End rules exist only at the two ends
//! of a chain; middle and sync rules only at processors with two neighbors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Clock, Configuration, ProcessorId, ProcessorRole, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Rule {
    LeftEndUp,
    LeftEndDown,
    RightEndUp,
    RightEndDown,
    MiddleLeftUp,
    MiddleLeftDown,
    MiddleRightUp,
    MiddleRightDown,
    SyncUp,
    SyncDown,
}

impl Rule {
    /// All rules in their fixed tie-breaking order.
    pub const ALL: [Rule; 10] = [
        Rule::LeftEndUp,
        Rule::LeftEndDown,
        Rule::RightEndUp,
        Rule::RightEndDown,
        Rule::MiddleLeftUp,
        Rule::MiddleLeftDown,
        Rule::MiddleRightUp,
        Rule::MiddleRightDown,
        Rule::SyncUp,
        Rule::SyncDown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::LeftEndUp => "leftEndUp",
            Rule::LeftEndDown => "leftEndDown",
            Rule::RightEndUp => "rightEndUp",
            Rule::RightEndDown => "rightEndDown",
            Rule::MiddleLeftUp => "middleLeftUp",
            Rule::MiddleLeftDown => "middleLeftDown",
            Rule::MiddleRightUp => "middleRightUp",
            Rule::MiddleRightDown => "middleRightDown",
            Rule::SyncUp => "syncUp",
            Rule::SyncDown => "syncDown",
        }
    }

    fn bit(self) -> u16 {
        1 << (self as u16)
    }

    /// Whether this rule belongs to degree-1 (end) processors.
    pub fn is_end_rule(self) -> bool {
        matches!(self, Rule::LeftEndUp | Rule::LeftEndDown | Rule::RightEndUp | Rule::RightEndDown)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Rule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown rule `{s}`")))
    }
}

/// A set of rules, iterated in [`Rule::ALL`] order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RuleSet(u16);

impl RuleSet {
    pub const EMPTY: RuleSet = RuleSet(0);

    pub fn insert(&mut self, rule: Rule) {
        self.0 |= rule.bit();
    }

    pub fn contains(&self, rule: Rule) -> bool {
        self.0 & rule.bit() != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(&self) -> impl Iterator<Item = Rule> + '_ {
        Rule::ALL.into_iter().filter(|r| self.contains(*r))
    }

    /// First rule in fixed order, if any.
    pub fn first(&self) -> Option<Rule> {
        self.iter().next()
    }
}

impl FromIterator<Rule> for RuleSet {
    fn from_iter<I: IntoIterator<Item = Rule>>(iter: I) -> Self {
        let mut set = RuleSet::EMPTY;
        for r in iter {
            set.insert(r);
        }
        set
    }
}

impl fmt::Debug for RuleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(Rule::name)).finish()
    }
}

impl Serialize for RuleSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for RuleSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rules = Vec::<Rule>::deserialize(d)?;
        Ok(rules.into_iter().collect())
    }
}

/// What a processor sees: its own clock and its neighbors' clocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborView {
    pub left: Option<Clock>,
    pub own: Clock,
    pub right: Option<Clock>,
}

impl NeighborView {
    pub fn of(config: &Configuration, topology: &Topology, p: ProcessorId) -> Result<Self> {
        let (l, r) = topology.neighbors(p)?;
        Ok(NeighborView { left: l.map(|l| config[l]), own: config[p], right: r.map(|r| config[r]) })
    }

    /// Guards of all ten rules against this view.
    pub fn enabled(&self) -> RuleSet {
        let p = i128::from(self.own.0);
        let mut set = RuleSet::EMPTY;
        match (self.left.map(|c| i128::from(c.0)), self.right.map(|c| i128::from(c.0))) {
            (None, Some(r)) => set.insert(if p <= r { Rule::LeftEndUp } else { Rule::LeftEndDown }),
            (Some(l), None) => set.insert(if p <= l { Rule::RightEndUp } else { Rule::RightEndDown }),
            (Some(l), Some(r)) => {
                if (p == l || p == l - 1) && p <= r {
                    set.insert(Rule::MiddleLeftUp);
                }
                if (p == l || p == l + 1) && p > r {
                    set.insert(Rule::MiddleLeftDown);
                }
                if (p == r || p == r - 1) && p <= l {
                    set.insert(Rule::MiddleRightUp);
                }
                if (p == r || p == r + 1) && p > l {
                    set.insert(Rule::MiddleRightDown);
                }
                if p < l - 1 && p < r - 1 {
                    set.insert(Rule::SyncUp);
                }
                if p > l + 1 && p > r + 1 {
                    set.insert(Rule::SyncDown);
                }
            }
            (None, None) => {}
        }
        set
    }

    /// The command of `rule`, without checking its guard. `None` when the
    /// rule does not apply to this degree or the arithmetic overflows.
    pub fn command(&self, rule: Rule) -> Option<Clock> {
        match (rule, self.left, self.right) {
            (Rule::LeftEndUp, None, Some(r)) => r.checked_offset(1),
            (Rule::LeftEndDown, None, Some(r)) => r.checked_offset(-1),
            (Rule::RightEndUp, Some(l), None) => l.checked_offset(1),
            (Rule::RightEndDown, Some(l), None) => l.checked_offset(-1),
            (Rule::MiddleLeftUp | Rule::MiddleRightUp, Some(_), Some(_)) => self.own.checked_offset(1),
            (Rule::MiddleLeftDown | Rule::MiddleRightDown, Some(_), Some(_)) => self.own.checked_offset(-1),
            (Rule::SyncUp, Some(l), Some(r)) => Some(l.min(r)),
            (Rule::SyncDown, Some(l), Some(r)) => Some(l.max(r)),
            _ => None,
        }
    }
}

fn require_correct(roles: &[ProcessorRole], p: ProcessorId) -> Result<()> {
    match roles.get(p.0) {
        Some(ProcessorRole::Correct) => Ok(()),
        Some(_) => Err(Error::RoleMismatch(p)),
        None => Err(Error::IndexOutOfRange { index: p.0, n: roles.len() }),
    }
}

/// Rules whose degree constraint and guard hold for correct processor `p`.
pub fn enabled_rules(
    config: &Configuration,
    topology: &Topology,
    roles: &[ProcessorRole],
    p: ProcessorId,
) -> Result<RuleSet> {
    require_correct(roles, p)?;
    Ok(NeighborView::of(config, topology, p)?.enabled())
}

/// The clock `rule` would write at `p`, after re-checking its guard.
pub fn rule_output(
    config: &Configuration,
    topology: &Topology,
    roles: &[ProcessorRole],
    p: ProcessorId,
    rule: Rule,
) -> Result<Clock> {
    require_correct(roles, p)?;
    let view = NeighborView::of(config, topology, p)?;
    if !view.enabled().contains(rule) {
        return Err(Error::GuardViolation { processor: p, rule });
    }
    view.command(rule).ok_or(Error::Overflow(p))
}

/// Executes `rule` at `p`, returning the successor configuration.
pub fn apply_rule(
    config: &Configuration,
    topology: &Topology,
    roles: &[ProcessorRole],
    p: ProcessorId,
    rule: Rule,
) -> Result<Configuration> {
    let value = rule_output(config, topology, roles, p, rule)?;
    Ok(config.with(p, value))
}
