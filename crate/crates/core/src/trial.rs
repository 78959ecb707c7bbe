//! Trial and study records shared by storage, samplers and pruners.
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::distribution::{Atom, Distribution, SearchSpace};
use crate::error::{Error, Result};

pub type StudyId = u64;
pub type TrialId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum StudyDirection {
    #[default]
    Minimize,
    Maximize,
}

impl StudyDirection {
    /// Maps a raw value onto a scale where smaller is better. NaN stays NaN.
    pub fn orient(self, value: f64) -> f64 {
        match self {
            StudyDirection::Minimize => value,
            StudyDirection::Maximize => -value,
        }
    }

    /// Total order on raw values: better first, NaN after every real value.
    pub fn compare(self, a: f64, b: f64) -> Ordering {
        compare_oriented(self.orient(a), self.orient(b))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StudyDirection::Minimize => "minimize",
            StudyDirection::Maximize => "maximize",
        }
    }
}

/// Ascending order with NaN ranked last.
pub fn compare_oriented(a: f64, b: f64) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        (false, false) => a.partial_cmp(&b).expect("non-NaN values are comparable"),
    }
}

impl fmt::Display for StudyDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StudyDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" | "minimize" => Ok(StudyDirection::Minimize),
            "max" | "maximize" => Ok(StudyDirection::Maximize),
            _ => Err(Error::parse("direction", s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyRecord {
    pub study_id: StudyId,
    pub name: String,
    pub direction: StudyDirection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrialState {
    Running,
    Complete,
    Pruned,
    Failed,
}

impl TrialState {
    pub fn is_finished(self) -> bool {
        self != TrialState::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrialState::Running => "running",
            TrialState::Complete => "complete",
            TrialState::Pruned => "pruned",
            TrialState::Failed => "failed",
        }
    }
}

impl fmt::Display for TrialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrialState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "running" => Ok(TrialState::Running),
            "complete" => Ok(TrialState::Complete),
            "pruned" => Ok(TrialState::Pruned),
            "failed" => Ok(TrialState::Failed),
            _ => Err(Error::parse("trial state", s)),
        }
    }
}

/// A parameter as recorded in storage.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialParam {
    pub distribution: Distribution,
    pub internal: f64,
}

impl TrialParam {
    pub fn external(&self) -> Atom {
        self.distribution.to_external(self.internal)
    }
}

/// Immutable snapshot of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenTrial {
    pub trial_id: TrialId,
    pub study_id: StudyId,
    pub number: u64,
    pub state: TrialState,
    pub params: BTreeMap<String, TrialParam>,
    /// Reported `(step, value)` pairs in insertion order.
    pub intermediate_values: Vec<(u64, f64)>,
    pub value: Option<f64>,
    /// Milliseconds since the Unix epoch.
    pub created_at: u64,
    pub completed_at: Option<u64>,
}

impl FrozenTrial {
    pub fn intermediate_at(&self, step: u64) -> Option<f64> {
        self.intermediate_values
            .iter()
            .find(|(s, _)| *s == step)
            .map(|&(_, v)| v)
    }

    pub fn last_intermediate(&self) -> Option<(u64, f64)> {
        self.intermediate_values.last().copied()
    }

    /// The score samplers rank this trial by: the final value for completed trials,
    /// the last intermediate value for pruned ones, nothing otherwise.
    pub fn score(&self) -> Option<f64> {
        match self.state {
            TrialState::Complete => self.value,
            TrialState::Pruned => self.last_intermediate().map(|(_, v)| v),
            TrialState::Running | TrialState::Failed => None,
        }
    }

    pub fn search_space(&self) -> SearchSpace {
        self.params
            .iter()
            .map(|(n, p)| (n.clone(), p.distribution.clone()))
            .collect()
    }

    /// External parameter values keyed by name.
    pub fn param_values(&self) -> BTreeMap<String, Atom> {
        self.params
            .iter()
            .map(|(n, p)| (n.clone(), p.external()))
            .collect()
    }

    /// Equality ignoring wall-clock timestamps.
    pub fn same_content(&self, other: &FrozenTrial) -> bool {
        self.trial_id == other.trial_id
            && self.study_id == other.study_id
            && self.number == other.number
            && self.state == other.state
            && self.params == other.params
            && self.completed_at.is_some() == other.completed_at.is_some()
            && bits_eq(self.value, other.value)
            && self.intermediate_values.len() == other.intermediate_values.len()
            && self
                .intermediate_values
                .iter()
                .zip(&other.intermediate_values)
                .all(|(a, b)| a.0 == b.0 && a.1.to_bits() == b.1.to_bits())
    }
}

fn bits_eq(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x.to_bits() == y.to_bits(),
        (None, None) => true,
        _ => false,
    }
}

/// The best completed trial under `direction`; ties go to the smaller trial number.
pub fn best_of<'a, I>(trials: I, direction: StudyDirection) -> Option<&'a FrozenTrial>
where
    I: IntoIterator<Item = &'a FrozenTrial>,
{
    trials
        .into_iter()
        .filter(|t| t.state == TrialState::Complete)
        .filter_map(|t| t.value.map(|v| (t, v)))
        .min_by(|(a, va), (b, vb)| direction.compare(*va, *vb).then(a.number.cmp(&b.number)))
        .map(|(t, _)| t)
}
