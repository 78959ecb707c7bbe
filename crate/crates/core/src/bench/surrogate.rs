//! Synthetic learning curves for pruning and scaling experiments.
//!
//! A trial's hyperparameters are a point of a test function. Its curve decays
//! from a common start value towards the function value at that point, at a
//! per-trial rate, with Gaussian observation noise.
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;

use super::functions::TestFunction;
use super::{check_seeds, fresh_study, summarize, BenchReport, RunRecord};
use crate::error::Result;
use crate::pruner::PrunerSpec;
use crate::rng::derive_seed;
use crate::sampler::SamplerSpec;
use crate::study::{ObjectiveError, ObjectiveResult, StudyOptions, TrialApi};
use crate::trial::{StudyDirection, TrialState};

const START_PROBES: usize = 4096;
const CURVE_STREAM: u64 = 0x6375_7276;

/// One trial's curve: `asymptote + (start - asymptote) * exp(-rate * step)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateCurve {
    pub asymptote: f64,
    pub rate: f64,
    pub start: f64,
    pub noise_sd: f64,
}

impl SurrogateCurve {
    pub fn mean(&self, step: u64) -> f64 {
        self.asymptote + (self.start - self.asymptote) * (-self.rate * step as f64).exp()
    }

    pub fn observe<R: Rng + ?Sized>(&self, step: u64, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean(step) + self.noise_sd * z
    }
}

/// Curves built on one test function.
#[derive(Debug, Clone)]
pub struct SurrogateFamily {
    pub function: TestFunction,
    pub max_steps: u64,
    /// Worst value seen over a fixed probe of the domain.
    pub start: f64,
    pub noise_sd: f64,
    pub rate_range: (f64, f64),
}

impl SurrogateFamily {
    pub fn new(function: TestFunction, max_steps: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let start = (0..START_PROBES)
            .map(|_| {
                let x: Vec<f64> = function
                    .bounds
                    .iter()
                    .map(|&(lo, hi)| rng.random_range(lo..hi))
                    .collect();
                function.evaluate(&x)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let noise_sd = 0.01 * (start - function.known_minimum);
        Self {
            function,
            max_steps,
            start,
            noise_sd,
            rate_range: (0.1, 1.0),
        }
    }

    /// Stream for the rate and noise of trial `number`.
    pub fn trial_stream(&self, seed: u64, number: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(seed, &[CURVE_STREAM, number]))
    }

    pub fn curve<R: Rng + ?Sized>(&self, asymptote: f64, rng: &mut R) -> SurrogateCurve {
        SurrogateCurve {
            asymptote,
            rate: rng.random_range(self.rate_range.0..=self.rate_range.1),
            start: self.start,
            noise_sd: self.noise_sd,
        }
    }

    /// Objective reporting steps `1..=max_steps` and honouring the pruner.
    pub fn objective(&self, seed: u64) -> impl Fn(&mut dyn TrialApi) -> ObjectiveResult + Sync + '_ {
        move |trial| {
            let x = self.function.suggest_point(trial)?;
            let mut rng = self.trial_stream(seed, trial.number().unwrap_or(0));
            let curve = self.curve(self.function.evaluate(&x), &mut rng);
            let mut last = curve.start;
            for step in 1..=self.max_steps {
                last = curve.observe(step, &mut rng);
                trial.report(last, step)?;
                if step < self.max_steps && trial.should_prune(step)? {
                    return Err(ObjectiveError::Pruned);
                }
            }
            Ok(last)
        }
    }
}

#[derive(Debug, Clone)]
pub struct PruningConfig {
    pub family: SurrogateFamily,
    pub sampler: SamplerSpec,
    pub pruners: Vec<PrunerSpec>,
    /// Simulated training steps shared by all trials of one run.
    pub budget: u64,
    pub seeds: Vec<u64>,
}

enum Outcome {
    Complete(f64),
    Pruned,
    OutOfBudget,
}

fn pruning_run(
    config: &PruningConfig,
    pruner: &PrunerSpec,
    repeat: usize,
    seed: u64,
) -> Result<RunRecord> {
    let started = Instant::now();
    let family = &config.family;
    let study = fresh_study(StudyOptions {
        direction: StudyDirection::Minimize,
        sampler: config.sampler.clone(),
        pruner: *pruner,
        seed,
    })?;
    let mut consumed = 0u64;
    let mut best = f64::INFINITY;
    let mut trajectory = Vec::new();
    while consumed < config.budget {
        let mut trial = study.ask()?;
        let number = trial.number().unwrap_or(0);
        let x = family.function.suggest_point(&mut trial)?;
        let mut rng = family.trial_stream(seed, number);
        let curve = family.curve(family.function.evaluate(&x), &mut rng);
        let mut outcome = Outcome::OutOfBudget;
        for step in 1..=family.max_steps {
            if consumed == config.budget {
                break;
            }
            let v = curve.observe(step, &mut rng);
            trial.report(v, step)?;
            consumed += 1;
            if step == family.max_steps {
                outcome = Outcome::Complete(v);
            } else if trial.should_prune(step)? {
                outcome = Outcome::Pruned;
                break;
            }
        }
        match outcome {
            Outcome::Complete(v) => {
                trial.complete(v)?;
                if v < best {
                    best = v;
                    trajectory.push((consumed, v));
                }
            }
            Outcome::Pruned => trial.prune()?,
            Outcome::OutOfBudget => trial.fail()?,
        }
    }
    let trials = study.trials()?;
    let mut record = summarize(
        family.function.name,
        &config.sampler,
        pruner,
        repeat,
        1,
        seed,
        &trials,
        started,
    );
    debug_assert_eq!(record.steps_consumed, consumed);
    record.trajectory = trajectory;
    record.best_value = best;
    Ok(record)
}

/// Runs every pruner under the same step budget and seeds. Trajectories are
/// indexed by consumed steps.
pub fn run_pruning_experiment(config: &PruningConfig) -> Result<BenchReport> {
    check_seeds(&config.seeds)?;
    config.sampler.validate()?;
    let jobs: Vec<(&PrunerSpec, usize, u64)> = config
        .pruners
        .iter()
        .flat_map(|p| config.seeds.iter().enumerate().map(move |(r, &s)| (p, r, s)))
        .collect();
    let records = jobs
        .into_par_iter()
        .map(|(pruner, repeat, seed)| {
            pruner.validate()?;
            pruning_run(config, pruner, repeat, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport { records })
}

#[derive(Debug, Clone)]
pub struct ScalingConfig {
    pub family: SurrogateFamily,
    pub sampler: SamplerSpec,
    pub pruner: PrunerSpec,
    /// Trials per run, split across the workers of that run.
    pub n_trials: usize,
    pub n_workers: Vec<usize>,
    pub seeds: Vec<u64>,
    pub timeout: Option<Duration>,
}

/// Runs the surrogate objective with each worker count. Trajectories are
/// indexed by trial count in trial-number order.
pub fn run_scaling_experiment(config: &ScalingConfig) -> Result<BenchReport> {
    check_seeds(&config.seeds)?;
    config.sampler.validate()?;
    config.pruner.validate()?;
    let jobs: Vec<(usize, usize, u64)> = config
        .n_workers
        .iter()
        .flat_map(|&w| config.seeds.iter().enumerate().map(move |(r, &s)| (w, r, s)))
        .collect();
    let records = jobs
        .into_par_iter()
        .map(|(workers, repeat, seed)| {
            let started = Instant::now();
            let study = fresh_study(StudyOptions {
                direction: StudyDirection::Minimize,
                sampler: config.sampler.clone(),
                pruner: config.pruner,
                seed,
            })?;
            study.optimize(config.family.objective(seed), config.n_trials, workers, config.timeout)?;
            let trials = study.trials()?;
            debug_assert!(trials.iter().all(|t| t.state != TrialState::Running));
            Ok(summarize(
                config.family.function.name,
                &config.sampler,
                &config.pruner,
                repeat,
                workers,
                seed,
                &trials,
                started,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::repeat_seeds;

    fn family() -> SurrogateFamily {
        SurrogateFamily::new(TestFunction::by_name("hartmann-6d").unwrap(), 16)
    }

    #[test]
    fn noiseless_curve_is_monotone_towards_asymptote() {
        let c = SurrogateCurve {
            asymptote: -3.0,
            rate: 0.3,
            start: 0.0,
            noise_sd: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values: Vec<f64> = (0..50).map(|t| c.observe(t, &mut rng)).collect();
        assert_eq!(values[0], 0.0);
        assert!(values.windows(2).all(|w| w[1] < w[0] && w[1] > -3.0));
    }

    #[test]
    fn start_is_worst_plausible() {
        let f = family();
        assert!(f.start > -0.1 && f.start <= 0.0, "{}", f.start);
        assert!((f.noise_sd - 0.01 * (f.start + 3.3223680114155125)).abs() < 1e-12);
    }

    #[test]
    fn nop_explores_budget_over_steps_and_conserves_budget() {
        let config = PruningConfig {
            family: family(),
            sampler: SamplerSpec::Random,
            pruners: vec![PrunerSpec::Nop, PrunerSpec::asha(1, 4, 0)],
            budget: 16 * 10,
            seeds: repeat_seeds(5, 2),
        };
        let report = run_pruning_experiment(&config).unwrap();
        for r in &report.records {
            assert_eq!(r.steps_consumed, 160);
        }
        for r in report.select(None, None, Some("nop"), None) {
            assert_eq!(r.trials_total, 10);
            assert_eq!(r.trials_pruned, 0);
        }
        for r in report.select(None, None, Some("asha(r=1,eta=4,s=0)"), None) {
            assert!(r.trials_total > 10);
        }
    }

    #[test]
    fn single_worker_scaling_runs_repeat_exactly() {
        let config = ScalingConfig {
            family: family(),
            sampler: SamplerSpec::tpe(),
            pruner: PrunerSpec::Nop,
            n_trials: 15,
            n_workers: vec![1],
            seeds: repeat_seeds(2, 2),
            timeout: None,
        };
        let a = run_scaling_experiment(&config).unwrap();
        let b = run_scaling_experiment(&config).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.trajectory, y.trajectory);
        }
    }
}
