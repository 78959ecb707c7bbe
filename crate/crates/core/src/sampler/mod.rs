//! Parameter sampling strategies.
//!
//! Independent samplers (random, TPE) draw one parameter at a time. CMA-ES
//! samples the relational space jointly at the start of a trial and leaves the
//! remaining parameters to its independent fallback. A mixture switches from one
//! strategy to another once enough trials have finished.
use std::collections::BTreeMap;

use rand::Rng;

use crate::distribution::Distribution;
use crate::trial::{FrozenTrial, StudyDirection};

pub mod cmaes;
mod spec;
pub mod tpe;

pub use cmaes::{infer_relational_space, CmaEngine, CmaParams, CmaState};
pub use spec::{SamplerSpec, TpeParams};
pub(crate) use spec::{key_value, parse_num, split_call};

/// Uniform draw over the internal range; uniform over the grid for integers and
/// over the index set for categorical parameters.
pub fn random_internal<R: Rng + ?Sized>(distribution: &Distribution, rng: &mut R) -> f64 {
    match distribution {
        Distribution::Uniform { low, high } => rng.random_range(*low..*high),
        Distribution::LogUniform { low, high } => rng.random_range(low.ln()..high.ln()),
        Distribution::IntRange { low, step, .. } => {
            let (lo, hi) = distribution.internal_bounds();
            let n_steps = ((hi - lo) / *step as f64).round() as i64;
            (low + rng.random_range(0..=n_steps) * step) as f64
        }
        Distribution::Categorical { choices } => rng.random_range(0..choices.len()) as f64,
    }
}

/// A per-parameter strategy.
#[derive(Debug, Clone, PartialEq)]
pub enum IndependentSampler {
    Random,
    Tpe(TpeParams),
}

impl IndependentSampler {
    fn from_spec(spec: &SamplerSpec) -> Self {
        match spec {
            SamplerSpec::Tpe(p) => IndependentSampler::Tpe(*p),
            _ => IndependentSampler::Random,
        }
    }

    /// Returns an internal value inside the distribution's internal range.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        history: &[FrozenTrial],
        direction: StudyDirection,
        name: &str,
        distribution: &Distribution,
        rng: &mut R,
    ) -> f64 {
        let raw = match self {
            IndependentSampler::Random => random_internal(distribution, rng),
            IndependentSampler::Tpe(p) => tpe::sample(p, history, direction, name, distribution, rng),
        };
        distribution.snap_internal(raw)
    }
}

/// Sampling decisions fixed when a trial starts.
#[derive(Debug, Clone)]
pub struct TrialPlan {
    /// Jointly sampled internal values with the distribution they were drawn for.
    pub relational: BTreeMap<String, (Distribution, f64)>,
    pub independent: IndependentSampler,
}

impl TrialPlan {
    /// The planned value for `name`, if it was sampled jointly under `distribution`.
    pub fn relational_value(&self, name: &str, distribution: &Distribution) -> Option<f64> {
        self.relational
            .get(name)
            .filter(|(d, _)| d == distribution)
            .map(|(_, x)| *x)
    }
}

#[derive(Debug)]
enum Node {
    Independent(IndependentSampler),
    CmaEs {
        sigma0: f64,
        fallback: IndependentSampler,
        engine: Option<Box<CmaEngine>>,
    },
    Mixture {
        first: Box<Node>,
        second: Box<Node>,
        switch_at: usize,
    },
}

impl Node {
    fn build(spec: &SamplerSpec) -> Self {
        match spec {
            SamplerSpec::Random | SamplerSpec::Tpe(_) => {
                Node::Independent(IndependentSampler::from_spec(spec))
            }
            SamplerSpec::CmaEs { sigma0, fallback } => Node::CmaEs {
                sigma0: *sigma0,
                fallback: IndependentSampler::from_spec(fallback),
                engine: None,
            },
            SamplerSpec::Mixture {
                first,
                second,
                switch_at,
            } => Node::Mixture {
                first: Box::new(Node::build(first)),
                second: Box::new(Node::build(second)),
                switch_at: *switch_at,
            },
        }
    }

    fn plan<R: Rng + ?Sized>(
        &mut self,
        history: &[FrozenTrial],
        direction: StudyDirection,
        rng: &mut R,
    ) -> TrialPlan {
        match self {
            Node::Independent(s) => TrialPlan {
                relational: BTreeMap::new(),
                independent: s.clone(),
            },
            Node::CmaEs {
                sigma0,
                fallback,
                engine,
            } => {
                let space = infer_relational_space(history);
                let mut relational = BTreeMap::new();
                if !space.is_empty() {
                    if engine.as_ref().is_none_or(|e| e.space() != &space) {
                        *engine = Some(Box::new(CmaEngine::new(space.clone(), *sigma0)));
                    }
                    let engine = engine.as_mut().expect("engine initialised above");
                    engine.sync(history, direction);
                    for (name, x) in engine.ask(rng) {
                        let d = space.get(&name).expect("sampled name is in space").clone();
                        let x = d.snap_internal(x);
                        relational.insert(name, (d, x));
                    }
                }
                TrialPlan {
                    relational,
                    independent: fallback.clone(),
                }
            }
            Node::Mixture {
                first,
                second,
                switch_at,
            } => {
                let finished = history.iter().filter(|t| t.state.is_finished()).count();
                if finished < *switch_at {
                    first.plan(history, direction, rng)
                } else {
                    second.plan(history, direction, rng)
                }
            }
        }
    }

    fn engine(&self) -> Option<&CmaEngine> {
        match self {
            Node::Independent(_) => None,
            Node::CmaEs { engine, .. } => engine.as_deref(),
            Node::Mixture { first, second, .. } => second.engine().or_else(|| first.engine()),
        }
    }
}

/// A worker-local sampler built from a [`SamplerSpec`].
///
/// Everything it knows about other workers comes from the history it is given,
/// so two samplers fed the same history agree.
#[derive(Debug)]
pub struct Sampler {
    spec: SamplerSpec,
    root: Node,
}

impl Sampler {
    pub fn new(spec: SamplerSpec) -> Self {
        Self {
            root: Node::build(&spec),
            spec,
        }
    }

    pub fn spec(&self) -> &SamplerSpec {
        &self.spec
    }

    /// Decides the relational values and the independent strategy for a new trial.
    pub fn plan_trial<R: Rng + ?Sized>(
        &mut self,
        history: &[FrozenTrial],
        direction: StudyDirection,
        rng: &mut R,
    ) -> TrialPlan {
        self.root.plan(history, direction, rng)
    }

    /// The CMA-ES engine, if one has been started.
    pub fn cma_engine(&self) -> Option<&CmaEngine> {
        self.root.engine()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trial::{TrialParam, TrialState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trial(number: u64, state: TrialState, params: &[(&str, Distribution, f64)]) -> FrozenTrial {
        FrozenTrial {
            trial_id: number,
            study_id: 1,
            number,
            state,
            params: params
                .iter()
                .map(|(n, d, x)| {
                    (
                        n.to_string(),
                        TrialParam {
                            distribution: d.clone(),
                            internal: *x,
                        },
                    )
                })
                .collect(),
            intermediate_values: Vec::new(),
            value: (state == TrialState::Complete).then_some(number as f64),
            created_at: 0,
            completed_at: state.is_finished().then_some(0),
        }
    }

    #[test]
    fn random_is_deterministic_for_a_seed() {
        let d = Distribution::log_uniform(1e-5, 1e-1).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            IndependentSampler::Random.sample(&[], StudyDirection::Minimize, "lr", &d, &mut rng)
        };
        assert_eq!(draw(5).to_bits(), draw(5).to_bits());
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn random_int_covers_grid_end_points() {
        let d = Distribution::int(1, 4, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = [0usize; 4];
        for _ in 0..4000 {
            let x = random_internal(&d, &mut rng);
            seen[x as usize - 1] += 1;
        }
        assert!(seen.iter().all(|&c| c > 850), "{seen:?}");
    }

    #[test]
    fn relational_space_inference() {
        let lr = Distribution::log_uniform(1e-5, 1e-1).unwrap();
        let mom = Distribution::uniform(0.0, 1.0).unwrap();
        let units = Distribution::int(4, 128, 1).unwrap();
        let opt = Distribution::categorical(["adam", "sgd"]).unwrap();
        assert!(infer_relational_space(&[]).is_empty());
        assert!(infer_relational_space(&[trial(0, TrialState::Running, &[("lr", lr.clone(), -3.0)])]).is_empty());

        let history = vec![
            trial(0, TrialState::Complete, &[("lr", lr.clone(), -3.0), ("momentum", mom.clone(), 0.5), ("optimizer", opt.clone(), 0.0)]),
            trial(1, TrialState::Complete, &[("lr", lr.clone(), -4.0), ("momentum", mom.clone(), 0.2), ("n_units", units.clone(), 8.0), ("optimizer", opt.clone(), 1.0)]),
            trial(2, TrialState::Failed, &[("lr", lr.clone(), -4.0)]),
        ];
        let space = infer_relational_space(&history);
        assert_eq!(space.names().collect::<Vec<_>>(), vec!["lr", "momentum"]);
    }

    #[test]
    fn mixture_switches_at_boundary() {
        let spec = SamplerSpec::mixture(SamplerSpec::tpe(), SamplerSpec::cmaes(), 40);
        let x = Distribution::uniform(-5.0, 5.0).unwrap();
        let history = |n: u64| -> Vec<FrozenTrial> {
            (0..n).map(|i| trial(i, TrialState::Complete, &[("x", x.clone(), 0.1 * i as f64 - 2.0)])).collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);

        let mut sampler = Sampler::new(spec.clone());
        let plan = sampler.plan_trial(&history(39), StudyDirection::Minimize, &mut rng);
        assert!(plan.relational.is_empty());
        assert_eq!(plan.independent, IndependentSampler::Tpe(TpeParams::default()));
        assert!(sampler.cma_engine().is_none());

        let plan = sampler.plan_trial(&history(40), StudyDirection::Minimize, &mut rng);
        assert!(plan.relational_value("x", &x).is_some());
        assert!(sampler.cma_engine().is_some());
    }

    #[test]
    fn cmaes_with_empty_relational_space_uses_fallback() {
        let mut sampler = Sampler::new(SamplerSpec::cmaes());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plan = sampler.plan_trial(&[], StudyDirection::Minimize, &mut rng);
        assert!(plan.relational.is_empty());
        assert_eq!(plan.independent, IndependentSampler::Tpe(TpeParams::default()));
    }

    #[test]
    fn cmaes_state_rebuilds_from_history() {
        let x = Distribution::uniform(-5.0, 5.0).unwrap();
        let y = Distribution::int(-3, 3, 1).unwrap();
        let history: Vec<FrozenTrial> = (0..37)
            .map(|i| {
                let fx = ((i * 7919) % 100) as f64 / 10.0 - 5.0;
                let fy = ((i * 31) % 7) as f64 - 3.0;
                trial(i, TrialState::Complete, &[("x", x.clone(), fx), ("y", y.clone(), fy)])
            })
            .collect();
        let mut continuous = Sampler::new(SamplerSpec::cmaes());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 1..=history.len() {
            continuous.plan_trial(&history[..n], StudyDirection::Minimize, &mut rng);
        }
        let mut resumed = Sampler::new(SamplerSpec::cmaes());
        resumed.plan_trial(&history, StudyDirection::Minimize, &mut rng);
        let a = continuous.cma_engine().unwrap().state();
        let b = resumed.cma_engine().unwrap().state();
        assert_eq!(a.generation, 6);
        assert_eq!(a.generation, b.generation);
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.cov, b.cov);
        assert_eq!(a.sigma.to_bits(), b.sigma.to_bits());
    }

    #[test]
    fn samples_stay_in_range_for_arbitrary_histories() {
        use proptest::prelude::*;
        let dists = [
            Distribution::uniform(-1.0, 1.0).unwrap(),
            Distribution::log_uniform(1e-4, 1.0).unwrap(),
            Distribution::int(0, 9, 3).unwrap(),
            Distribution::categorical(["a", "b", "c"]).unwrap(),
        ];
        let mut runner = proptest::test_runner::TestRunner::default();
        runner
            .run(
                &(proptest::collection::vec((0.0f64..1.0, -10.0f64..10.0, 0u8..4), 0..40), any::<u64>()),
                |(obs, seed)| {
                    let history: Vec<FrozenTrial> = obs
                        .iter()
                        .enumerate()
                        .map(|(i, &(u, v, kind))| {
                            let state = [TrialState::Complete, TrialState::Pruned, TrialState::Failed, TrialState::Running][kind as usize];
                            let params: Vec<(&str, Distribution, f64)> = ["a", "b", "c", "d"]
                                .iter()
                                .zip(&dists)
                                .map(|(n, d)| {
                                    let (lo, hi) = d.internal_bounds();
                                    (*n, d.clone(), d.snap_internal(lo + u * (hi - lo)))
                                })
                                .collect();
                            let mut t = trial(i as u64, state, &params);
                            if state == TrialState::Complete {
                                t.value = Some(v);
                            }
                            t.intermediate_values = vec![(0, v)];
                            t
                        })
                        .collect();
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    for spec in [SamplerSpec::Random, SamplerSpec::Tpe(TpeParams { n_startup_trials: 2, ..Default::default() }), SamplerSpec::cmaes()] {
                        let mut sampler = Sampler::new(spec);
                        let plan = sampler.plan_trial(&history, StudyDirection::Minimize, &mut rng);
                        for (name, d) in ["a", "b", "c", "d"].iter().zip(&dists) {
                            let x = plan
                                .relational_value(name, d)
                                .unwrap_or_else(|| plan.independent.sample(&history, StudyDirection::Minimize, name, d, &mut rng));
                            let (lo, hi) = d.internal_bounds();
                            prop_assert!(lo <= x && x <= hi, "{} = {} outside [{}, {}]", name, x, lo, hi);
                            prop_assert!(d.to_internal(&d.to_external(x)).unwrap() == x);
                        }
                    }
                    Ok(())
                },
            )
            .unwrap();
    }
}
