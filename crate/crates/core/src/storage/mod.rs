//! Study and trial persistence.
//!
//! Both backends drive the same [`StorageState`] machine with [`Mutation`]s, so an
//! in-memory store and a replayed journal agree on every snapshot.
use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::distribution::Distribution;
use crate::error::{Error, Result};
use crate::trial::{
    FrozenTrial, StudyDirection, StudyId, StudyRecord, TrialId, TrialParam, TrialState,
};

mod journal;
mod memory;

pub use journal::JournalStorage;
pub use memory::InMemoryStorage;

/// Transactional record store shared by every worker of a study.
pub trait Storage: Send + Sync {
    fn create_study(&self, name: &str, direction: StudyDirection) -> Result<StudyId>;
    fn get_study_by_name(&self, name: &str) -> Result<Option<StudyRecord>>;
    fn get_study(&self, study_id: StudyId) -> Result<StudyRecord>;
    fn get_all_studies(&self) -> Result<Vec<StudyRecord>>;
    /// Returns the new trial id and its 0-based number within the study.
    fn create_trial(&self, study_id: StudyId) -> Result<(TrialId, u64)>;
    fn set_trial_param(
        &self,
        trial_id: TrialId,
        name: &str,
        distribution: &Distribution,
        internal: f64,
    ) -> Result<()>;
    fn set_trial_intermediate(&self, trial_id: TrialId, step: u64, value: f64) -> Result<()>;
    fn set_trial_state(&self, trial_id: TrialId, state: TrialState, value: Option<f64>)
        -> Result<()>;
    fn get_trial(&self, trial_id: TrialId) -> Result<FrozenTrial>;
    /// Trials of one study ordered by number.
    fn get_all_trials(&self, study_id: StudyId) -> Result<Vec<FrozenTrial>>;
}

impl std::fmt::Debug for dyn Storage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Storage")
    }
}

/// Parsed form of a storage URL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StorageUrl {
    Memory,
    Journal(PathBuf),
}

impl StorageUrl {
    pub fn parse(url: &str) -> Result<Self> {
        if url == "memory://" {
            Ok(StorageUrl::Memory)
        } else if let Some(path) = url.strip_prefix("journal://") {
            if path.is_empty() {
                return Err(Error::parse("storage url", "journal:// requires a path"));
            }
            Ok(StorageUrl::Journal(PathBuf::from(path)))
        } else {
            Err(Error::parse(
                "storage url",
                format!("{url:?} (expected memory:// or journal://<path>)"),
            ))
        }
    }

    pub fn open(&self) -> Result<Arc<dyn Storage>> {
        Ok(match self {
            StorageUrl::Memory => Arc::new(InMemoryStorage::new()),
            StorageUrl::Journal(path) => Arc::new(JournalStorage::open(path)?),
        })
    }
}

/// Opens the backend named by a `memory://` or `journal://<path>` URL.
pub fn open_storage(url: &str) -> Result<Arc<dyn Storage>> {
    StorageUrl::parse(url)?.open()
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// One state change; the unit of journaling.
#[derive(Debug, Clone, PartialEq)]
pub enum Mutation {
    CreateStudy {
        name: String,
        direction: StudyDirection,
    },
    CreateTrial {
        study_id: StudyId,
        timestamp: u64,
    },
    SetParam {
        trial_id: TrialId,
        name: String,
        distribution: Distribution,
        internal: f64,
    },
    SetIntermediate {
        trial_id: TrialId,
        step: u64,
        value: f64,
    },
    SetState {
        trial_id: TrialId,
        state: TrialState,
        value: Option<f64>,
        timestamp: u64,
    },
}

/// What applying a mutation produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applied {
    Study(StudyId),
    Trial(TrialId, u64),
    Unit,
}

/// The logical content of a storage: studies and their trials.
#[derive(Debug, Default, Clone)]
pub struct StorageState {
    studies: Vec<StudyRecord>,
    names: HashMap<String, StudyId>,
    trials: Vec<FrozenTrial>,
    study_trials: HashMap<StudyId, Vec<TrialId>>,
}

impl StorageState {
    /// Validates and applies a mutation. On error the state is unchanged.
    pub fn apply(&mut self, mutation: &Mutation) -> Result<Applied> {
        match mutation {
            Mutation::CreateStudy { name, direction } => {
                if self.names.contains_key(name) {
                    return Err(Error::DuplicateStudy(name.clone()));
                }
                let study_id = self.studies.len() as StudyId + 1;
                self.studies.push(StudyRecord {
                    study_id,
                    name: name.clone(),
                    direction: *direction,
                });
                self.names.insert(name.clone(), study_id);
                self.study_trials.insert(study_id, Vec::new());
                Ok(Applied::Study(study_id))
            }
            Mutation::CreateTrial {
                study_id,
                timestamp,
            } => {
                let ids = self
                    .study_trials
                    .get_mut(study_id)
                    .ok_or_else(|| Error::UnknownStudy(study_id.to_string()))?;
                let trial_id = self.trials.len() as TrialId;
                let number = ids.len() as u64;
                ids.push(trial_id);
                self.trials.push(FrozenTrial {
                    trial_id,
                    study_id: *study_id,
                    number,
                    state: TrialState::Running,
                    params: Default::default(),
                    intermediate_values: Vec::new(),
                    value: None,
                    created_at: *timestamp,
                    completed_at: None,
                });
                Ok(Applied::Trial(trial_id, number))
            }
            Mutation::SetParam {
                trial_id,
                name,
                distribution,
                internal,
            } => {
                if !internal.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "non-finite internal value for {name:?}"
                    )));
                }
                let trial = self.running_trial_mut(*trial_id)?;
                if trial.params.contains_key(name) {
                    return Err(Error::DuplicateParam {
                        trial_id: *trial_id,
                        name: name.clone(),
                    });
                }
                trial.params.insert(
                    name.clone(),
                    TrialParam {
                        distribution: distribution.clone(),
                        internal: *internal,
                    },
                );
                Ok(Applied::Unit)
            }
            Mutation::SetIntermediate {
                trial_id,
                step,
                value,
            } => {
                let trial = self.running_trial_mut(*trial_id)?;
                if let Some((last, _)) = trial.last_intermediate() {
                    if trial.intermediate_at(*step).is_some() {
                        return Err(Error::DuplicateStep {
                            trial_id: *trial_id,
                            step: *step,
                        });
                    }
                    if *step < last {
                        return Err(Error::InvalidArgument(format!(
                            "step {step} reported after step {last}"
                        )));
                    }
                }
                trial.intermediate_values.push((*step, *value));
                Ok(Applied::Unit)
            }
            Mutation::SetState {
                trial_id,
                state,
                value,
                timestamp,
            } => {
                let trial = self.trial_mut(*trial_id)?;
                if trial.state != TrialState::Running || *state == TrialState::Running {
                    return Err(Error::IllegalTransition {
                        trial_id: *trial_id,
                        from: trial.state.as_str(),
                        to: state.as_str(),
                    });
                }
                if (*state == TrialState::Complete) != value.is_some() {
                    return Err(Error::InvalidArgument(format!(
                        "a final value is required for complete trials only (state {state})"
                    )));
                }
                trial.state = *state;
                trial.value = *value;
                trial.completed_at = Some(*timestamp);
                Ok(Applied::Unit)
            }
        }
    }

    fn trial_mut(&mut self, trial_id: TrialId) -> Result<&mut FrozenTrial> {
        self.trials
            .get_mut(trial_id as usize)
            .ok_or(Error::UnknownTrial(trial_id))
    }

    fn running_trial_mut(&mut self, trial_id: TrialId) -> Result<&mut FrozenTrial> {
        let trial = self.trial_mut(trial_id)?;
        if trial.state != TrialState::Running {
            return Err(Error::TrialNotRunning(trial_id));
        }
        Ok(trial)
    }

    pub fn study_by_name(&self, name: &str) -> Option<StudyRecord> {
        self.names
            .get(name)
            .map(|id| self.studies[*id as usize - 1].clone())
    }

    pub fn study(&self, study_id: StudyId) -> Result<StudyRecord> {
        study_id
            .checked_sub(1)
            .and_then(|i| self.studies.get(i as usize))
            .cloned()
            .ok_or_else(|| Error::UnknownStudy(study_id.to_string()))
    }

    pub fn studies(&self) -> Vec<StudyRecord> {
        self.studies.clone()
    }

    pub fn trial(&self, trial_id: TrialId) -> Result<FrozenTrial> {
        self.trials
            .get(trial_id as usize)
            .cloned()
            .ok_or(Error::UnknownTrial(trial_id))
    }

    pub fn trials_of(&self, study_id: StudyId) -> Result<Vec<FrozenTrial>> {
        let ids = self
            .study_trials
            .get(&study_id)
            .ok_or_else(|| Error::UnknownStudy(study_id.to_string()))?;
        Ok(ids.iter().map(|&i| self.trials[i as usize].clone()).collect())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Exercises the shared storage contract against any backend.
    pub(crate) fn contract(storage: &dyn Storage) {
        let s1 = storage.create_study("s1", StudyDirection::Minimize).unwrap();
        assert_eq!(s1, 1);
        assert!(matches!(
            storage.create_study("s1", StudyDirection::Maximize),
            Err(Error::DuplicateStudy(_))
        ));
        let s2 = storage.create_study("s2", StudyDirection::Maximize).unwrap();
        assert_eq!(s2, 2);
        assert_eq!(
            storage.get_study_by_name("s2").unwrap().unwrap().direction,
            StudyDirection::Maximize
        );
        assert!(storage.get_study_by_name("nope").unwrap().is_none());

        let numbers: Vec<u64> = (0..3).map(|_| storage.create_trial(s1).unwrap().1).collect();
        assert_eq!(numbers, vec![0, 1, 2]);
        let (other, n) = storage.create_trial(s2).unwrap();
        assert_eq!(n, 0);
        assert!(matches!(storage.create_trial(99), Err(Error::UnknownStudy(_))));

        let d = Distribution::uniform(0.0, 1.0).unwrap();
        storage.set_trial_param(0, "x", &d, 0.25).unwrap();
        assert!(matches!(
            storage.set_trial_param(0, "x", &d, 0.5),
            Err(Error::DuplicateParam { .. })
        ));
        storage.set_trial_intermediate(0, 0, 0.9).unwrap();
        storage.set_trial_intermediate(0, 1, 0.95).unwrap();
        assert!(matches!(
            storage.set_trial_intermediate(0, 1, 0.5),
            Err(Error::DuplicateStep { .. })
        ));
        storage.set_trial_state(0, TrialState::Complete, Some(0.12)).unwrap();
        assert!(matches!(
            storage.set_trial_state(0, TrialState::Complete, Some(0.1)),
            Err(Error::IllegalTransition { .. })
        ));
        assert!(matches!(
            storage.set_trial_intermediate(0, 5, 0.5),
            Err(Error::TrialNotRunning(0))
        ));
        storage.set_trial_intermediate(1, 0, 1.0).unwrap();
        storage.set_trial_intermediate(1, 1, 2.0).unwrap();
        storage.set_trial_intermediate(1, 2, 3.0).unwrap();
        storage.set_trial_state(1, TrialState::Pruned, None).unwrap();
        storage.set_trial_state(other, TrialState::Failed, None).unwrap();
        assert!(matches!(
            storage.set_trial_state(42, TrialState::Failed, None),
            Err(Error::UnknownTrial(42))
        ));

        let trials = storage.get_all_trials(s1).unwrap();
        assert_eq!(trials.len(), 3);
        assert_eq!(trials[0].state, TrialState::Complete);
        assert_eq!(trials[0].value, Some(0.12));
        assert_eq!(trials[0].intermediate_values, vec![(0, 0.9), (1, 0.95)]);
        assert_eq!(trials[0].params["x"].internal, 0.25);
        assert_eq!(trials[1].state, TrialState::Pruned);
        assert_eq!(trials[1].value, None);
        assert_eq!(trials[1].intermediate_values.len(), 3);
        assert_eq!(trials[2].state, TrialState::Running);
        assert!(trials[0].completed_at.is_some());
    }

    #[test]
    fn storage_url_parsing() {
        assert_eq!(StorageUrl::parse("memory://").unwrap(), StorageUrl::Memory);
        assert_eq!(
            StorageUrl::parse("journal:///tmp/x.journal").unwrap(),
            StorageUrl::Journal("/tmp/x.journal".into())
        );
        assert!(StorageUrl::parse("sqlite:///x.db").is_err());
        assert!(StorageUrl::parse("journal://").is_err());
    }

    #[test]
    fn failed_mutation_leaves_state_unchanged() {
        let mut state = StorageState::default();
        state
            .apply(&Mutation::CreateStudy {
                name: "a".into(),
                direction: StudyDirection::Minimize,
            })
            .unwrap();
        state
            .apply(&Mutation::CreateTrial {
                study_id: 1,
                timestamp: 0,
            })
            .unwrap();
        let before = state.trials_of(1).unwrap();
        let bad = Mutation::SetState {
            trial_id: 0,
            state: TrialState::Complete,
            value: None,
            timestamp: 1,
        };
        assert!(state.apply(&bad).is_err());
        assert_eq!(state.trials_of(1).unwrap(), before);
    }
}
