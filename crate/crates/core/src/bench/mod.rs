//! Benchmark harness: test functions, repeated studies, rank-sum statistics
//! and a learning-curve surrogate for pruning and scaling experiments.
pub mod functions;
pub mod stats;
pub mod surrogate;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

pub use functions::{suite, TestFunction};
pub use stats::{mann_whitney_two_sided, mann_whitney_u, median, UTest};
pub use surrogate::{
    run_pruning_experiment, run_scaling_experiment, PruningConfig, ScalingConfig, SurrogateCurve,
    SurrogateFamily,
};

use crate::error::{Error, Result};
use crate::pruner::PrunerSpec;
use crate::rng::derive_seed;
use crate::sampler::SamplerSpec;
use crate::storage::InMemoryStorage;
use crate::study::{Study, StudyOptions};
use crate::trial::{compare_oriented, FrozenTrial, StudyDirection, TrialState};

/// One study run inside an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub function: String,
    pub sampler: String,
    pub pruner: String,
    pub repeat: usize,
    pub n_workers: usize,
    pub seed: u64,
    /// Best complete value; `+inf` when nothing completed.
    pub best_value: f64,
    pub trials_total: usize,
    pub trials_pruned: usize,
    /// Simulated steps consumed; 0 for plain function evaluations.
    pub steps_consumed: u64,
    pub wall_ms: u64,
    /// `(x, best so far)` each time the best improves. `x` is the trial count,
    /// or consumed steps in pruning experiments.
    pub trajectory: Vec<(u64, f64)>,
}

impl RunRecord {
    /// Best value reached by the time `x` units were spent.
    pub fn best_at(&self, x: u64) -> f64 {
        self.trajectory
            .iter()
            .take_while(|&&(at, _)| at <= x)
            .last()
            .map_or(f64::INFINITY, |&(_, v)| v)
    }
}

/// Groups records share function, sampler, pruner and worker count.
pub type GroupKey = (String, String, String, usize);

/// One-sided U tests between two samplers on the same function.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseTest {
    pub function: String,
    pub a: String,
    pub b: String,
    /// `P` under the null for "a attains smaller best values than b".
    pub p_a_better: f64,
    pub p_b_better: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub records: Vec<RunRecord>,
}

pub const CSV_HEADER: [&str; 9] = [
    "function",
    "sampler",
    "pruner",
    "repeat",
    "n_workers",
    "best_value",
    "trials_total",
    "trials_pruned",
    "wall_ms",
];

impl BenchReport {
    pub fn key(r: &RunRecord) -> GroupKey {
        (r.function.clone(), r.sampler.clone(), r.pruner.clone(), r.n_workers)
    }

    /// Records grouped by [`GroupKey`], repeats in order.
    pub fn groups(&self) -> BTreeMap<GroupKey, Vec<&RunRecord>> {
        let mut groups: BTreeMap<GroupKey, Vec<&RunRecord>> = BTreeMap::new();
        for r in &self.records {
            groups.entry(Self::key(r)).or_default().push(r);
        }
        for runs in groups.values_mut() {
            runs.sort_by_key(|r| r.repeat);
        }
        groups
    }

    /// Records matching every given filter.
    pub fn select(
        &self,
        function: Option<&str>,
        sampler: Option<&str>,
        pruner: Option<&str>,
        n_workers: Option<usize>,
    ) -> Vec<&RunRecord> {
        let mut out: Vec<&RunRecord> = self
            .records
            .iter()
            .filter(|r| function.is_none_or(|f| r.function == f))
            .filter(|r| sampler.is_none_or(|s| r.sampler == s))
            .filter(|r| pruner.is_none_or(|p| r.pruner == p))
            .filter(|r| n_workers.is_none_or(|n| r.n_workers == n))
            .collect();
        out.sort_by_key(|r| r.repeat);
        out
    }

    pub fn best_values(&self, function: &str, sampler: &str) -> Vec<f64> {
        self.select(Some(function), Some(sampler), None, None)
            .iter()
            .map(|r| r.best_value)
            .collect()
    }

    pub fn merge(&mut self, other: BenchReport) {
        self.records.extend(other.records);
    }

    /// Every pair of samplers run on the same function, pruner and worker count.
    pub fn pairwise_tests(&self) -> Vec<PairwiseTest> {
        let groups = self.groups();
        let mut out = Vec::new();
        for (ka, a) in &groups {
            for (kb, b) in groups.range(ka.clone()..).skip(1) {
                if (&ka.0, &ka.2, ka.3) != (&kb.0, &kb.2, kb.3) {
                    continue;
                }
                let va: Vec<f64> = a.iter().map(|r| r.best_value).collect();
                let vb: Vec<f64> = b.iter().map(|r| r.best_value).collect();
                out.push(PairwiseTest {
                    function: ka.0.clone(),
                    a: ka.1.clone(),
                    b: kb.1.clone(),
                    p_a_better: mann_whitney_u(&va, &vb).p_one_sided,
                    p_b_better: mann_whitney_u(&vb, &va).p_one_sided,
                });
            }
        }
        out
    }

    /// Writes one CSV row per run. Wall times are written as 0 unless
    /// `record_timing` is set, so seeded runs produce identical files.
    pub fn write_csv<W: Write>(&self, out: W, record_timing: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(CSV_HEADER).map_err(csv_error)?;
        for r in &self.records {
            let wall = if record_timing { r.wall_ms } else { 0 };
            w.write_record([
                r.function.clone(),
                r.sampler.clone(),
                r.pruner.clone(),
                r.repeat.to_string(),
                r.n_workers.to_string(),
                r.best_value.to_string(),
                r.trials_total.to_string(),
                r.trials_pruned.to_string(),
                wall.to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text table of medians per group followed by pairwise tests.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<20} {:<44} {:<28} {:>3} {:>4} {:>14} {:>14} {:>8}",
            "function", "sampler", "pruner", "w", "n", "median_best", "min_best", "trials"
        );
        for ((function, sampler, pruner, workers), runs) in self.groups() {
            let best: Vec<f64> = runs.iter().map(|r| r.best_value).collect();
            let trials: Vec<f64> = runs.iter().map(|r| r.trials_total as f64).collect();
            let min = best.iter().copied().min_by(|a, b| compare_oriented(*a, *b)).unwrap_or(f64::NAN);
            let _ = writeln!(
                s,
                "{function:<20} {sampler:<44} {pruner:<28} {workers:>3} {:>4} {:>14.6e} {:>14.6e} {:>8.1}",
                runs.len(),
                median(&best),
                min,
                median(&trials)
            );
        }
        let tests = self.pairwise_tests();
        if !tests.is_empty() {
            let _ = writeln!(s, "\n{:<20} {:<44} {:<44} {:>12} {:>12}", "function", "a", "b", "p(a<b)", "p(b<a)");
            for t in tests {
                let _ = writeln!(
                    s,
                    "{:<20} {:<44} {:<44} {:>12.3e} {:>12.3e}",
                    t.function, t.a, t.b, t.p_a_better, t.p_b_better
                );
            }
        }
        s
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// `n` distinct per-repeat seeds derived from `base`.
pub fn repeat_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|r| derive_seed(base, &[r])).collect()
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    let distinct: HashSet<_> = seeds.iter().collect();
    if distinct.len() != seeds.len() {
        return Err(Error::InvalidArgument("repeat seeds must be distinct".into()));
    }
    Ok(())
}

/// Running best of complete trials in trial-number order, as `(count, best)`
/// at each improvement.
pub fn best_by_trial_count(trials: &[FrozenTrial], direction: StudyDirection) -> Vec<(u64, f64)> {
    let mut sorted: Vec<&FrozenTrial> = trials.iter().collect();
    sorted.sort_by_key(|t| t.number);
    let mut best: Option<f64> = None;
    let mut out = Vec::new();
    for (i, t) in sorted.iter().enumerate() {
        let Some(v) = t.value.filter(|_| t.state == TrialState::Complete) else {
            continue;
        };
        if best.is_none_or(|b| direction.compare(v, b).is_lt()) {
            best = Some(v);
            out.push((i as u64 + 1, v));
        }
    }
    out
}

pub(crate) fn fresh_study(options: StudyOptions) -> Result<Study> {
    Study::create(Arc::new(InMemoryStorage::new()), "bench", options, false)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn summarize(
    function: &str,
    sampler: &SamplerSpec,
    pruner: &PrunerSpec,
    repeat: usize,
    n_workers: usize,
    seed: u64,
    trials: &[FrozenTrial],
    started: Instant,
) -> RunRecord {
    let trajectory = best_by_trial_count(trials, StudyDirection::Minimize);
    RunRecord {
        function: function.to_owned(),
        sampler: sampler.to_string(),
        pruner: pruner.to_string(),
        repeat,
        n_workers,
        seed,
        best_value: trajectory.last().map_or(f64::INFINITY, |&(_, v)| v),
        trials_total: trials.len(),
        trials_pruned: trials.iter().filter(|t| t.state == TrialState::Pruned).count(),
        steps_consumed: trials.iter().map(|t| t.intermediate_values.len() as u64).sum(),
        wall_ms: started.elapsed().as_millis() as u64,
        trajectory,
    }
}

/// Runs one minimisation study of `n_trials` per function, sampler and seed.
/// Repeats run in parallel; the report lists them in input order.
pub fn run_suite(
    functions: &[TestFunction],
    samplers: &[SamplerSpec],
    n_trials: usize,
    seeds: &[u64],
) -> Result<BenchReport> {
    check_seeds(seeds)?;
    for s in samplers {
        s.validate()?;
    }
    let jobs: Vec<(&TestFunction, &SamplerSpec, usize, u64)> = functions
        .iter()
        .flat_map(|f| {
            samplers
                .iter()
                .flat_map(move |s| seeds.iter().enumerate().map(move |(r, &seed)| (f, s, r, seed)))
        })
        .collect();
    let records = jobs
        .into_par_iter()
        .map(|(function, sampler, repeat, seed)| {
            let started = Instant::now();
            let study = fresh_study(StudyOptions {
                direction: StudyDirection::Minimize,
                sampler: sampler.clone(),
                pruner: PrunerSpec::Nop,
                seed,
            })?;
            study.optimize(function.objective(), n_trials, 1, None)?;
            let trials = study.trials()?;
            Ok(summarize(
                function.name,
                sampler,
                &PrunerSpec::Nop,
                repeat,
                1,
                seed,
                &trials,
                started,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport { records })
}
