#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trialforge::storage::Storage;
use trialforge::{Atom, Distribution, FrozenTrial, StudyDirection, StudyRecord, TrialState};

#[derive(Debug, Clone)]
pub enum Op {
    CreateStudy(String, StudyDirection),
    CreateTrial(u64),
    SetParam(u64, String, Distribution, f64),
    SetIntermediate(u64, u64, f64),
    SetState(u64, TrialState, Option<f64>),
}

pub fn distributions() -> Vec<Distribution> {
    vec![
        Distribution::uniform(-1.0, 1.0).unwrap(),
        Distribution::log_uniform(1e-3, 1.0).unwrap(),
        Distribution::int(0, 10, 2).unwrap(),
        Distribution::categorical(vec![Atom::from("a|b"), Atom::Int(1), Atom::Bool(true)]).unwrap(),
    ]
}

fn maybe_nan(rng: &mut ChaCha8Rng, x: f64) -> f64 {
    if rng.random_bool(0.05) {
        f64::NAN
    } else {
        x
    }
}

/// A random mix of valid and invalid mutations.
pub fn random_ops(seed: u64, n: usize) -> Vec<Op> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dists = distributions();
    let mut studies = 0u64;
    let mut trials = 0u64;
    let mut ops = Vec::with_capacity(n);
    for _ in 0..n {
        let study = rng.random_range(1..=studies + 1);
        let trial = rng.random_range(0..=trials);
        let op = match rng.random_range(0..100) {
            0..5 => {
                studies += 1;
                let direction = if rng.random_bool(0.5) {
                    StudyDirection::Minimize
                } else {
                    StudyDirection::Maximize
                };
                Op::CreateStudy(format!("study %{}", rng.random_range(0..studies + 2)), direction)
            }
            5..30 => {
                trials += 1;
                Op::CreateTrial(study)
            }
            30..60 => {
                let d = dists[rng.random_range(0..dists.len())].clone();
                let x = d.snap_internal(rng.random_range(-10.0..10.0));
                let name = format!("p{}", rng.random_range(0..4));
                Op::SetParam(trial, name, d, maybe_nan(&mut rng, x))
            }
            60..85 => {
                let v = rng.random_range(-5.0..5.0);
                let v = maybe_nan(&mut rng, v);
                Op::SetIntermediate(trial, rng.random_range(0..30), v)
            }
            _ => {
                let state = [
                    TrialState::Complete,
                    TrialState::Pruned,
                    TrialState::Failed,
                    TrialState::Running,
                ][rng.random_range(0..4)];
                let v = rng.random_range(-5.0..5.0);
                let value = rng.random_bool(0.8).then(|| maybe_nan(&mut rng, v));
                Op::SetState(trial, state, value)
            }
        };
        ops.push(op);
    }
    ops
}

/// Applies `op` and renders the outcome for comparison across backends.
pub fn apply(storage: &dyn Storage, op: &Op) -> Result<String, String> {
    let out = match op {
        Op::CreateStudy(name, d) => storage.create_study(name, *d).map(|id| format!("{id}")),
        Op::CreateTrial(s) => storage.create_trial(*s).map(|(id, n)| format!("{id}/{n}")),
        Op::SetParam(t, name, d, x) => storage.set_trial_param(*t, name, d, *x).map(|_| String::new()),
        Op::SetIntermediate(t, step, v) => {
            storage.set_trial_intermediate(*t, *step, *v).map(|_| String::new())
        }
        Op::SetState(t, state, v) => storage.set_trial_state(*t, *state, *v).map(|_| String::new()),
    };
    out.map_err(|e| e.to_string())
}

pub type Snapshot = Vec<(StudyRecord, Vec<FrozenTrial>)>;

pub fn snapshot(storage: &dyn Storage) -> Snapshot {
    storage
        .get_all_studies()
        .unwrap()
        .into_iter()
        .map(|s| {
            let trials = storage.get_all_trials(s.study_id).unwrap();
            (s, trials)
        })
        .collect()
}

/// Equal up to timestamps, with NaN compared by bits.
pub fn same_snapshot(a: &Snapshot, b: &Snapshot) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|((sa, ta), (sb, tb))| {
            sa == sb && ta.len() == tb.len() && ta.iter().zip(tb).all(|(x, y)| x.same_content(y))
        })
}

/// Complete lines of a journal file, each with its terminator.
pub fn journal_lines(bytes: &[u8]) -> Vec<&[u8]> {
    bytes.split_inclusive(|&b| b == b'\n').filter(|l| l.ends_with(b"\n")).collect()
}
