//! The seven operational phases and their canonical contract names.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Analysis,
    Plan,
    Execution,
    Validation,
    Review,
    Handoff,
    Changelog,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Analysis,
        Phase::Plan,
        Phase::Execution,
        Phase::Validation,
        Phase::Review,
        Phase::Handoff,
        Phase::Changelog,
    ];

    /// Contract key, e.g. `4_validation`.
    pub fn key(self) -> &'static str {
        match self {
            Phase::Analysis => "1_analysis",
            Phase::Plan => "2_plan",
            Phase::Execution => "3_execution",
            Phase::Validation => "4_validation",
            Phase::Review => "5_review",
            Phase::Handoff => "6_handoff",
            Phase::Changelog => "7_changelog",
        }
    }

    /// Bare name without the ordinal prefix, e.g. `validation`.
    pub fn short_name(self) -> &'static str {
        &self.key()[2..]
    }

    pub fn ordinal(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_ordinal(n: u8) -> Option<Phase> {
        Phase::ALL.get(usize::from(n).checked_sub(1)?).copied()
    }

    /// Phases whose transitions feed the budget controller.
    pub fn adjusts_budget(self) -> bool {
        self.ordinal() <= 5
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown phase \"{0}\"")]
pub struct UnknownPhase(pub String);

impl FromStr for Phase {
    type Err = UnknownPhase;

    /// Accepts both the keyed form (`2_plan`) and the bare form (`plan`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phase::ALL
            .iter()
            .copied()
            .find(|p| p.key() == s || p.short_name() == s)
            .ok_or_else(|| UnknownPhase(s.to_string()))
    }
}

impl Serialize for Phase {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.key())
    }
}

impl<'de> Deserialize<'de> for Phase {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
