//! Studies, live trials and the optimize loop.
//!
//! An objective receives a `&mut dyn TrialApi` and builds its own search space by
//! calling `suggest_*` while it runs. The same objective can be replayed with a
//! [`FixedTrial`] that answers every suggestion from a preset.
use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use log::warn;

use crate::distribution::{Atom, Distribution};
use crate::error::{Error, Result};
use crate::pruner::PrunerSpec;
use crate::rng::{trial_rng, TrialRng};
use crate::sampler::{Sampler, SamplerSpec, TrialPlan};
use crate::storage::Storage;
use crate::trial::{best_of, FrozenTrial, StudyDirection, StudyId, TrialId, TrialState};

/// How an objective ended other than by returning a value.
#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error("trial pruned")]
    Pruned,
    #[error("trial failed: {0}")]
    Failed(String),
    #[error(transparent)]
    Trial(#[from] Error),
}

pub type ObjectiveResult = std::result::Result<f64, ObjectiveError>;

/// The interface objectives see: suggestions, intermediate reports and pruning.
pub trait TrialApi {
    /// Returns the value for `name`, sampling it on first request.
    fn suggest(&mut self, name: &str, distribution: Distribution) -> Result<Atom>;

    fn report(&mut self, value: f64, step: u64) -> Result<()>;

    fn should_prune(&self, step: u64) -> Result<bool>;

    /// 0-based trial number within the study; `None` for fixed replays.
    fn number(&self) -> Option<u64>;

    fn suggest_uniform(&mut self, name: &str, low: f64, high: f64) -> Result<f64> {
        let v = self.suggest(name, Distribution::uniform(low, high)?)?;
        Ok(v.as_f64().expect("uniform values are reals"))
    }

    fn suggest_loguniform(&mut self, name: &str, low: f64, high: f64) -> Result<f64> {
        let v = self.suggest(name, Distribution::log_uniform(low, high)?)?;
        Ok(v.as_f64().expect("loguniform values are reals"))
    }

    fn suggest_int(&mut self, name: &str, low: i64, high: i64) -> Result<i64> {
        self.suggest_int_step(name, low, high, 1)
    }

    fn suggest_int_step(&mut self, name: &str, low: i64, high: i64, step: i64) -> Result<i64> {
        let v = self.suggest(name, Distribution::int(low, high, step)?)?;
        Ok(v.as_i64().expect("int values are integers"))
    }

    fn suggest_categorical(&mut self, name: &str, choices: Vec<Atom>) -> Result<Atom> {
        self.suggest(name, Distribution::categorical(choices)?)
    }
}

/// Options shared by every worker of a study.
#[derive(Debug, Clone, Default)]
pub struct StudyOptions {
    pub direction: StudyDirection,
    pub sampler: SamplerSpec,
    pub pruner: PrunerSpec,
    pub seed: u64,
}

/// A named optimisation campaign bound to a storage.
pub struct Study {
    storage: Arc<dyn Storage>,
    study_id: StudyId,
    name: String,
    options: StudyOptions,
    sampler: Mutex<Sampler>,
}

impl std::fmt::Debug for Study {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Study")
            .field("study_id", &self.study_id)
            .field("name", &self.name)
            .field("options", &self.options)
            .finish()
    }
}

impl Study {
    /// Creates a study, or joins the existing one of the same name when
    /// `load_if_exists` is set (its stored direction wins).
    pub fn create(
        storage: Arc<dyn Storage>,
        name: &str,
        mut options: StudyOptions,
        load_if_exists: bool,
    ) -> Result<Self> {
        options.sampler.validate()?;
        options.pruner.validate()?;
        let study_id = match storage.create_study(name, options.direction) {
            Ok(id) => id,
            Err(Error::DuplicateStudy(_)) if load_if_exists => {
                let record = storage
                    .get_study_by_name(name)?
                    .ok_or_else(|| Error::UnknownStudy(name.to_owned()))?;
                options.direction = record.direction;
                record.study_id
            }
            Err(e) => return Err(e),
        };
        Ok(Self::bind(storage, study_id, name.to_owned(), options))
    }

    /// Attaches to an existing study.
    pub fn load(storage: Arc<dyn Storage>, name: &str, mut options: StudyOptions) -> Result<Self> {
        options.sampler.validate()?;
        options.pruner.validate()?;
        let record = storage
            .get_study_by_name(name)?
            .ok_or_else(|| Error::UnknownStudy(name.to_owned()))?;
        options.direction = record.direction;
        Ok(Self::bind(storage, record.study_id, record.name, options))
    }

    fn bind(storage: Arc<dyn Storage>, study_id: StudyId, name: String, options: StudyOptions) -> Self {
        Self {
            sampler: Mutex::new(Sampler::new(options.sampler.clone())),
            storage,
            study_id,
            name,
            options,
        }
    }

    pub fn study_id(&self) -> StudyId {
        self.study_id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn direction(&self) -> StudyDirection {
        self.options.direction
    }

    pub fn options(&self) -> &StudyOptions {
        &self.options
    }

    pub fn storage(&self) -> &Arc<dyn Storage> {
        &self.storage
    }

    pub fn trials(&self) -> Result<Vec<FrozenTrial>> {
        self.storage.get_all_trials(self.study_id)
    }

    pub fn best_trial(&self) -> Result<FrozenTrial> {
        let trials = self.trials()?;
        best_of(&trials, self.direction())
            .cloned()
            .ok_or(Error::NoCompletedTrials)
    }

    pub fn best_value(&self) -> Result<f64> {
        Ok(self.best_trial()?.value.expect("complete trials carry a value"))
    }

    /// Starts a trial using the study's own sampler.
    pub fn ask(&self) -> Result<Trial> {
        let mut sampler = self.sampler.lock().expect("sampler lock poisoned");
        self.ask_with(&mut sampler)
    }

    /// Starts a trial using a worker-local sampler.
    pub fn ask_with(&self, sampler: &mut Sampler) -> Result<Trial> {
        let (trial_id, number) = self.storage.create_trial(self.study_id)?;
        let history = self.storage.get_all_trials(self.study_id)?;
        let mut rng = trial_rng(self.options.seed, self.study_id, number);
        let plan = sampler.plan_trial(&history, self.direction(), &mut rng);
        Ok(Trial {
            storage: Arc::clone(&self.storage),
            study_id: self.study_id,
            trial_id,
            number,
            direction: self.direction(),
            pruner: self.options.pruner,
            history,
            plan,
            rng,
            params: BTreeMap::new(),
            reported_steps: Vec::new(),
            finished: false,
        })
    }

    /// Runs `n_trials` trials on `n_workers` threads sharing this study's storage.
    ///
    /// Trials whose objective returns [`ObjectiveError::Pruned`] end pruned; any
    /// other error or a panic marks the trial failed and the loop continues.
    /// Storage errors abort. With a timeout no new trial starts after it expires.
    pub fn optimize<F>(
        &self,
        objective: F,
        n_trials: usize,
        n_workers: usize,
        timeout: Option<Duration>,
    ) -> Result<()>
    where
        F: Fn(&mut dyn TrialApi) -> ObjectiveResult + Sync,
    {
        if n_workers == 0 {
            return Err(Error::InvalidArgument("n_workers must be at least 1".into()));
        }
        let started = Instant::now();
        let claimed = AtomicUsize::new(0);
        let worker = || -> Result<()> {
            let mut sampler = Sampler::new(self.options.sampler.clone());
            loop {
                if timeout.is_some_and(|t| started.elapsed() >= t) {
                    return Ok(());
                }
                if claimed.fetch_add(1, Ordering::SeqCst) >= n_trials {
                    return Ok(());
                }
                let trial = self.ask_with(&mut sampler)?;
                self.run_trial(trial, &objective)?;
            }
        };
        if n_workers == 1 {
            return worker();
        }
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..n_workers).map(|_| scope.spawn(worker)).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker thread panicked"))
                .collect::<Result<Vec<()>>>()
                .map(drop)
        })
    }

    fn run_trial<F>(&self, mut trial: Trial, objective: &F) -> Result<()>
    where
        F: Fn(&mut dyn TrialApi) -> ObjectiveResult,
    {
        let outcome = catch_unwind(AssertUnwindSafe(|| objective(&mut trial)));
        let number = trial.number;
        match outcome {
            Ok(Ok(value)) => trial.complete(value),
            Ok(Err(ObjectiveError::Pruned)) => trial.prune(),
            Ok(Err(ObjectiveError::Trial(e))) if is_storage_failure(&e) => Err(e),
            Ok(Err(e)) => {
                warn!("trial {number} failed: {e}");
                trial.fail()
            }
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "panic".into());
                warn!("trial {number} panicked: {msg}");
                trial.fail()
            }
        }
    }
}

fn is_storage_failure(e: &Error) -> bool {
    matches!(e, Error::Io(_) | Error::CorruptJournal { .. })
}

/// A live trial bound to one running storage record.
#[derive(Debug)]
pub struct Trial {
    storage: Arc<dyn Storage>,
    study_id: StudyId,
    trial_id: TrialId,
    number: u64,
    direction: StudyDirection,
    pruner: PrunerSpec,
    /// Snapshot taken when the trial started; feeds every independent sample.
    history: Vec<FrozenTrial>,
    plan: TrialPlan,
    rng: TrialRng,
    params: BTreeMap<String, (Distribution, Atom)>,
    reported_steps: Vec<u64>,
    finished: bool,
}

impl Trial {
    pub fn trial_id(&self) -> TrialId {
        self.trial_id
    }

    pub fn study_id(&self) -> StudyId {
        self.study_id
    }

    pub fn params(&self) -> BTreeMap<String, Atom> {
        self.params
            .iter()
            .map(|(n, (_, v))| (n.clone(), v.clone()))
            .collect()
    }

    fn ensure_running(&self) -> Result<()> {
        if self.finished {
            Err(Error::TrialNotRunning(self.trial_id))
        } else {
            Ok(())
        }
    }

    fn finish(&mut self, state: TrialState, value: Option<f64>) -> Result<()> {
        self.storage.set_trial_state(self.trial_id, state, value)?;
        self.finished = true;
        Ok(())
    }

    pub fn complete(&mut self, value: f64) -> Result<()> {
        self.finish(TrialState::Complete, Some(value))
    }

    pub fn prune(&mut self) -> Result<()> {
        self.finish(TrialState::Pruned, None)
    }

    pub fn fail(&mut self) -> Result<()> {
        self.finish(TrialState::Failed, None)
    }

    pub fn frozen(&self) -> Result<FrozenTrial> {
        self.storage.get_trial(self.trial_id)
    }
}

impl TrialApi for Trial {
    fn suggest(&mut self, name: &str, distribution: Distribution) -> Result<Atom> {
        self.ensure_running()?;
        distribution.validate()?;
        if let Some((existing, value)) = self.params.get(name) {
            if *existing != distribution {
                return Err(Error::DistributionMismatch {
                    name: name.to_owned(),
                    existing: existing.to_string(),
                    requested: distribution.to_string(),
                });
            }
            return Ok(value.clone());
        }
        let internal = match self.plan.relational_value(name, &distribution) {
            Some(x) => x,
            None => self.plan.independent.sample(
                &self.history,
                self.direction,
                name,
                &distribution,
                &mut self.rng,
            ),
        };
        let internal = distribution.snap_internal(internal);
        self.storage
            .set_trial_param(self.trial_id, name, &distribution, internal)?;
        let value = distribution.to_external(internal);
        self.params
            .insert(name.to_owned(), (distribution, value.clone()));
        Ok(value)
    }

    fn report(&mut self, value: f64, step: u64) -> Result<()> {
        self.ensure_running()?;
        self.storage
            .set_trial_intermediate(self.trial_id, step, value)?;
        self.reported_steps.push(step);
        Ok(())
    }

    fn should_prune(&self, step: u64) -> Result<bool> {
        self.ensure_running()?;
        if !self.reported_steps.contains(&step) {
            return Err(Error::MissingIntermediate {
                trial_id: self.trial_id,
                step,
            });
        }
        if !self.pruner.may_prune_at(step) {
            return Ok(false);
        }
        let all = self.storage.get_all_trials(self.study_id)?;
        let me = all
            .iter()
            .find(|t| t.trial_id == self.trial_id)
            .ok_or(Error::UnknownTrial(self.trial_id))?;
        self.pruner.should_prune(me, step, &all, self.direction)
    }

    fn number(&self) -> Option<u64> {
        Some(self.number)
    }
}

/// Replays an objective with preset parameter values; nothing is stored.
#[derive(Debug, Clone, Default)]
pub struct FixedTrial {
    preset: BTreeMap<String, Atom>,
    suggested: BTreeMap<String, Distribution>,
}

impl FixedTrial {
    pub fn new(preset: BTreeMap<String, Atom>) -> Self {
        Self {
            preset,
            suggested: BTreeMap::new(),
        }
    }
}

impl TrialApi for FixedTrial {
    fn suggest(&mut self, name: &str, distribution: Distribution) -> Result<Atom> {
        distribution.validate()?;
        if let Some(existing) = self.suggested.get(name) {
            if *existing != distribution {
                return Err(Error::DistributionMismatch {
                    name: name.to_owned(),
                    existing: existing.to_string(),
                    requested: distribution.to_string(),
                });
            }
        }
        let value = self
            .preset
            .get(name)
            .ok_or_else(|| Error::MissingPresetParam(name.to_owned()))?;
        distribution.to_internal(value)?;
        let value = match (&distribution, value) {
            (Distribution::Uniform { .. } | Distribution::LogUniform { .. }, Atom::Int(v)) => {
                Atom::Float(*v as f64)
            }
            (Distribution::IntRange { .. }, Atom::Float(v)) => Atom::Int(*v as i64),
            _ => value.clone(),
        };
        self.suggested.insert(name.to_owned(), distribution);
        Ok(value)
    }

    fn report(&mut self, _value: f64, _step: u64) -> Result<()> {
        Ok(())
    }

    fn should_prune(&self, _step: u64) -> Result<bool> {
        Ok(false)
    }

    fn number(&self) -> Option<u64> {
        None
    }
}

/// Evaluates `objective` on preset parameters.
pub fn run_fixed<F>(objective: F, preset: BTreeMap<String, Atom>) -> ObjectiveResult
where
    F: FnOnce(&mut dyn TrialApi) -> ObjectiveResult,
{
    objective(&mut FixedTrial::new(preset))
}
