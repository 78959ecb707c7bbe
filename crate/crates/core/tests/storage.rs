mod common;

use common::{apply, random_ops, same_snapshot, snapshot};
use proptest::prelude::*;
use trialforge::storage::{InMemoryStorage, JournalStorage, Storage};

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn journal_matches_memory_and_survives_reopen(seed in any::<u64>(), n in 1usize..300) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.log");
        let memory = InMemoryStorage::new();
        let journal = JournalStorage::open(&path).unwrap();
        for op in random_ops(seed, n) {
            prop_assert_eq!(apply(&memory, &op), apply(&journal, &op));
        }
        let expected = snapshot(&memory);
        prop_assert!(same_snapshot(&expected, &snapshot(&journal)));
        drop(journal);
        let reopened = JournalStorage::open(&path).unwrap();
        prop_assert!(same_snapshot(&expected, &snapshot(&reopened)));
    }
}

#[test]
fn failed_operations_leave_no_trace() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j.log");
    let journal = JournalStorage::open(&path).unwrap();
    let before = std::fs::read(&path).unwrap_or_default();
    assert!(journal.create_trial(42).is_err());
    assert!(journal.set_trial_intermediate(7, 0, 1.0).is_err());
    assert_eq!(std::fs::read(&path).unwrap_or_default(), before);
    assert!(journal.get_all_studies().unwrap().is_empty());
}
