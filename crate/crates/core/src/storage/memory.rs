use std::sync::RwLock;

use super::{now_ms, Applied, Mutation, Storage, StorageState};
use crate::distribution::Distribution;
use crate::error::Result;
use crate::trial::{FrozenTrial, StudyDirection, StudyId, StudyRecord, TrialId, TrialState};

/// Process-local storage guarded by a reader-writer lock.
#[derive(Debug, Default)]
pub struct InMemoryStorage {
    state: RwLock<StorageState>,
}

impl InMemoryStorage {
    pub fn new() -> Self {
        Self::default()
    }

    fn apply(&self, mutation: Mutation) -> Result<Applied> {
        self.state
            .write()
            .expect("storage lock poisoned")
            .apply(&mutation)
    }

    fn read<T>(&self, f: impl FnOnce(&StorageState) -> Result<T>) -> Result<T> {
        f(&self.state.read().expect("storage lock poisoned"))
    }
}

impl Storage for InMemoryStorage {
    fn create_study(&self, name: &str, direction: StudyDirection) -> Result<StudyId> {
        match self.apply(Mutation::CreateStudy {
            name: name.to_owned(),
            direction,
        })? {
            Applied::Study(id) => Ok(id),
            other => unreachable!("create_study applied as {other:?}"),
        }
    }

    fn get_study_by_name(&self, name: &str) -> Result<Option<StudyRecord>> {
        self.read(|s| Ok(s.study_by_name(name)))
    }

    fn get_study(&self, study_id: StudyId) -> Result<StudyRecord> {
        self.read(|s| s.study(study_id))
    }

    fn get_all_studies(&self) -> Result<Vec<StudyRecord>> {
        self.read(|s| Ok(s.studies()))
    }

    fn create_trial(&self, study_id: StudyId) -> Result<(TrialId, u64)> {
        match self.apply(Mutation::CreateTrial {
            study_id,
            timestamp: now_ms(),
        })? {
            Applied::Trial(id, number) => Ok((id, number)),
            other => unreachable!("create_trial applied as {other:?}"),
        }
    }

    fn set_trial_param(
        &self,
        trial_id: TrialId,
        name: &str,
        distribution: &Distribution,
        internal: f64,
    ) -> Result<()> {
        self.apply(Mutation::SetParam {
            trial_id,
            name: name.to_owned(),
            distribution: distribution.clone(),
            internal,
        })
        .map(drop)
    }

    fn set_trial_intermediate(&self, trial_id: TrialId, step: u64, value: f64) -> Result<()> {
        self.apply(Mutation::SetIntermediate {
            trial_id,
            step,
            value,
        })
        .map(drop)
    }

    fn set_trial_state(
        &self,
        trial_id: TrialId,
        state: TrialState,
        value: Option<f64>,
    ) -> Result<()> {
        self.apply(Mutation::SetState {
            trial_id,
            state,
            value,
            timestamp: now_ms(),
        })
        .map(drop)
    }

    fn get_trial(&self, trial_id: TrialId) -> Result<FrozenTrial> {
        self.read(|s| s.trial(trial_id))
    }

    fn get_all_trials(&self, study_id: StudyId) -> Result<Vec<FrozenTrial>> {
        self.read(|s| s.trials_of(study_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn satisfies_storage_contract() {
        crate::storage::tests::contract(&InMemoryStorage::new());
    }

    #[test]
    fn concurrent_create_trial_is_dense() {
        let storage = Arc::new(InMemoryStorage::new());
        let study = storage.create_study("c", StudyDirection::Minimize).unwrap();
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let storage = Arc::clone(&storage);
                std::thread::spawn(move || {
                    (0..50)
                        .map(|_| storage.create_trial(study).unwrap())
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut all: Vec<_> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        all.sort_by_key(|&(_, n)| n);
        let numbers: Vec<u64> = all.iter().map(|&(_, n)| n).collect();
        assert_eq!(numbers, (0..400).collect::<Vec<_>>());
        let ids: std::collections::HashSet<_> = all.iter().map(|&(id, _)| id).collect();
        assert_eq!(ids.len(), 400);
    }
}
