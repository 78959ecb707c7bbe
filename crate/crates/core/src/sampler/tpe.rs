//! Tree-structured Parzen estimator.
//!
//! Observations of one parameter are split into a good set (the best `gamma`
//! fraction by score) and the rest. Each set gets a Parzen estimator over the
//! internal range, and the candidate maximising `l(x) / g(x)` among draws from
//! `l` is returned.
use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};

use super::random_internal;
use super::spec::TpeParams;
use crate::distribution::Distribution;
use crate::trial::{compare_oriented, FrozenTrial, StudyDirection};

const MIN_BANDWIDTH_FRACTION: f64 = 0.01;

/// Smallest bandwidth for an estimator of `n` observations: `width / (1 + n)`,
/// never below 1% of the width.
pub fn bandwidth_floor(width: f64, n: usize) -> f64 {
    (width / (1.0 + n as f64)).max(MIN_BANDWIDTH_FRACTION * width)
}

/// Gaussian mixture truncated to `[low, high]` plus a uniform prior component,
/// all with equal weight.
#[derive(Debug, Clone)]
pub struct ParzenEstimator {
    low: f64,
    high: f64,
    centers: Vec<f64>,
    bandwidths: Vec<f64>,
    /// Probability mass of each Gaussian inside `[low, high]`.
    masses: Vec<f64>,
}

impl ParzenEstimator {
    pub fn new(low: f64, high: f64, observations: &[f64]) -> Self {
        assert!(low < high, "empty estimator range");
        let width = high - low;
        let mut centers: Vec<f64> = observations.iter().map(|x| x.clamp(low, high)).collect();
        centers.sort_by(|a, b| a.total_cmp(b));
        let n = centers.len();
        let bandwidths: Vec<f64> = (0..n)
            .map(|i| {
                let left = if i == 0 { low } else { centers[i - 1] };
                let right = if i + 1 == n { high } else { centers[i + 1] };
                let farther = (centers[i] - left).max(right - centers[i]);
                farther.clamp(bandwidth_floor(width, n), width)
            })
            .collect();
        let masses = centers
            .iter()
            .zip(&bandwidths)
            .map(|(&mu, &sigma)| normal_cdf((high - mu) / sigma) - normal_cdf((low - mu) / sigma))
            .collect();
        Self {
            low,
            high,
            centers,
            bandwidths,
            masses,
        }
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.low, self.high)
    }

    /// Log density; `-inf` outside the support.
    pub fn log_pdf(&self, x: f64) -> f64 {
        if x < self.low || x > self.high {
            return f64::NEG_INFINITY;
        }
        let n_components = (self.centers.len() + 1) as f64;
        let mut terms = Vec::with_capacity(self.centers.len() + 1);
        terms.push(-(self.high - self.low).ln());
        for ((&mu, &sigma), &mass) in self.centers.iter().zip(&self.bandwidths).zip(&self.masses) {
            let z = (x - mu) / sigma;
            terms.push(-0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - mass.ln());
        }
        log_sum_exp(&terms) - n_components.ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let k = rng.random_range(0..=self.centers.len());
        if k == self.centers.len() {
            return rng.random_range(self.low..self.high);
        }
        let (mu, sigma) = (self.centers[k], self.bandwidths[k]);
        // every component keeps at least a third of its mass inside the range
        for _ in 0..1000 {
            let z: f64 = StandardNormal.sample(rng);
            let x = mu + sigma * z;
            if (self.low..=self.high).contains(&x) {
                return x;
            }
        }
        mu
    }
}

/// Index weights with add-one smoothing.
#[derive(Debug, Clone)]
pub struct CategoricalEstimator {
    weights: Vec<f64>,
}

impl CategoricalEstimator {
    pub fn new(n_choices: usize, observations: &[f64]) -> Self {
        let mut counts = vec![1.0; n_choices];
        for &x in observations {
            let i = (x.round().max(0.0) as usize).min(n_choices - 1);
            counts[i] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        Self {
            weights: counts.into_iter().map(|c| c / total).collect(),
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }
}

/// Number of observations in the good set for `n` scored observations.
pub fn n_below(gamma: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    ((gamma * n as f64).ceil() as usize).clamp(1, n)
}

/// Internal values of `name` in the history, ordered best first.
///
/// Only trials that recorded `name` with a distribution equal to `distribution`
/// and that carry a score (complete, or pruned with an intermediate value) count.
pub fn ranked_observations(
    history: &[FrozenTrial],
    direction: StudyDirection,
    name: &str,
    distribution: &Distribution,
) -> Vec<f64> {
    let mut obs: Vec<(f64, u64, f64)> = history
        .iter()
        .filter_map(|t| {
            let param = t.params.get(name)?;
            if &param.distribution != distribution {
                return None;
            }
            Some((direction.orient(t.score()?), t.number, param.internal))
        })
        .collect();
    obs.sort_by(|a, b| compare_oriented(a.0, b.0).then(a.1.cmp(&b.1)));
    obs.into_iter().map(|(_, _, x)| x).collect()
}

/// Splits best-first observations into the good and bad sets.
pub fn split_observations(gamma: f64, ranked: &[f64]) -> (&[f64], &[f64]) {
    ranked.split_at(n_below(gamma, ranked.len()))
}

/// Bounds of the continuous working range. Integer grids are widened by half a
/// step on each side so the end points get a full cell of mass.
fn working_bounds(distribution: &Distribution) -> (f64, f64) {
    let (lo, hi) = distribution.internal_bounds();
    match distribution {
        Distribution::IntRange { step, .. } => (lo - 0.5 * *step as f64, hi + 0.5 * *step as f64),
        _ => (lo, hi),
    }
}

pub fn sample<R: Rng + ?Sized>(
    params: &TpeParams,
    history: &[FrozenTrial],
    direction: StudyDirection,
    name: &str,
    distribution: &Distribution,
    rng: &mut R,
) -> f64 {
    let ranked = ranked_observations(history, direction, name, distribution);
    if ranked.len() < params.n_startup_trials.max(1) {
        return random_internal(distribution, rng);
    }
    let (below, above) = split_observations(params.gamma, &ranked);

    if let Distribution::Categorical { choices } = distribution {
        let l = CategoricalEstimator::new(choices.len(), below);
        let g = CategoricalEstimator::new(choices.len(), above);
        let mut best = (f64::NEG_INFINITY, 0usize);
        for _ in 0..params.n_candidates {
            let i = l.sample(rng);
            let score = l.weights()[i].ln() - g.weights()[i].ln();
            if score > best.0 {
                best = (score, i);
            }
        }
        return best.1 as f64;
    }

    let (lo, hi) = working_bounds(distribution);
    if lo >= hi {
        return lo;
    }
    let l = ParzenEstimator::new(lo, hi, below);
    let g = ParzenEstimator::new(lo, hi, above);
    let mut best = (f64::NEG_INFINITY, lo);
    for _ in 0..params.n_candidates {
        let x = l.sample(rng);
        let score = l.log_pdf(x) - g.log_pdf(x);
        if score > best.0 {
            best = (score, x);
        }
    }
    best.1
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

pub(crate) fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trial::{TrialParam, TrialState};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use std::collections::BTreeMap;

    fn trapezoid(pe: &ParzenEstimator, points: usize) -> f64 {
        let (lo, hi) = pe.bounds();
        let h = (hi - lo) / (points - 1) as f64;
        let mut total = 0.5 * (pe.pdf(lo) + pe.pdf(hi));
        for i in 1..points - 1 {
            total += pe.pdf(lo + i as f64 * h);
        }
        total * h
    }

    fn scored(number: u64, x: f64, value: f64, dist: &Distribution) -> FrozenTrial {
        let mut params = BTreeMap::new();
        params.insert(
            "x".to_string(),
            TrialParam {
                distribution: dist.clone(),
                internal: x,
            },
        );
        FrozenTrial {
            trial_id: number,
            study_id: 1,
            number,
            state: TrialState::Complete,
            params,
            intermediate_values: Vec::new(),
            value: Some(value),
            created_at: 0,
            completed_at: Some(0),
        }
    }

    #[test]
    fn below_set_size() {
        assert_eq!(n_below(0.25, 8), 2);
        assert_eq!(n_below(0.25, 1), 1);
        assert_eq!(n_below(0.25, 9), 3);
        assert_eq!(n_below(0.1, 3), 1);
        assert_eq!(n_below(0.25, 0), 0);
    }

    #[test]
    fn bandwidth_rule() {
        let pe = ParzenEstimator::new(0.0, 10.0, &[5.0, 1.0, 5.05]);
        assert_eq!(pe.centers(), &[1.0, 5.0, 5.05]);
        // 1.0: neighbours are the lower bound (1.0 away) and 5.0 (4.0 away)
        assert!((pe.bandwidths()[0] - 4.0).abs() < 1e-12);
        assert!((pe.bandwidths()[1] - 4.0).abs() < 1e-12);
        // 5.05: neighbours 5.0 (0.05 away) and the upper bound (4.95 away)
        assert!((pe.bandwidths()[2] - 4.95).abs() < 1e-12);
        // the floor shrinks as width / (1 + n) down to 1% of the width
        let tight = ParzenEstimator::new(0.0, 10.0, &[5.0, 5.0, 5.0]);
        assert!((tight.bandwidths()[1] - 2.5).abs() < 1e-12);
        let crowded = ParzenEstimator::new(0.0, 10.0, &[5.0; 300]);
        assert!((crowded.bandwidths()[150] - 0.1).abs() < 1e-12);
        assert_eq!(bandwidth_floor(10.0, 99), 0.1);
    }

    #[test]
    fn categorical_laplace_smoothing() {
        let est = CategoricalEstimator::new(3, &[0.0, 0.0, 2.0]);
        let w = est.weights();
        assert!((w[0] - 3.0 / 6.0).abs() < 1e-12);
        assert!((w[1] - 1.0 / 6.0).abs() < 1e-12);
        assert!((w[2] - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn empty_history_falls_back_to_uniform() {
        let d = Distribution::uniform(-2.0, 3.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = sample(&TpeParams::default(), &[], StudyDirection::Minimize, "x", &d, &mut rng);
            assert!((-2.0..3.0).contains(&x));
        }
    }

    #[test]
    fn concentrates_near_good_region() {
        let d = Distribution::uniform(0.0, 10.0).unwrap();
        let history: Vec<_> = (0..40)
            .map(|i| {
                let x = i as f64 * 0.25;
                scored(i, x, (x - 7.0).powi(2), &d)
            })
            .collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<f64> = (0..200)
            .map(|_| sample(&TpeParams::default(), &history, StudyDirection::Minimize, "x", &d, &mut rng))
            .collect();
        let near = draws.iter().filter(|&&x| (x - 7.0).abs() < 1.5).count();
        assert!(near > 150, "only {near} of 200 draws near the optimum");
    }

    #[test]
    fn ranking_respects_direction_and_nan() {
        let d = Distribution::uniform(0.0, 1.0).unwrap();
        let h = vec![
            scored(0, 0.1, 3.0, &d),
            scored(1, 0.2, f64::NAN, &d),
            scored(2, 0.3, 1.0, &d),
            scored(3, 0.4, 2.0, &d),
        ];
        assert_eq!(
            ranked_observations(&h, StudyDirection::Minimize, "x", &d),
            vec![0.3, 0.4, 0.1, 0.2]
        );
        assert_eq!(
            ranked_observations(&h, StudyDirection::Maximize, "x", &d),
            vec![0.1, 0.4, 0.3, 0.2]
        );
        let other = Distribution::uniform(0.0, 2.0).unwrap();
        assert!(ranked_observations(&h, StudyDirection::Minimize, "x", &other).is_empty());
    }

    proptest! {
        #[test]
        fn density_integrates_to_one(
            obs in proptest::collection::vec(-5.0f64..5.0, 0..30),
        ) {
            let pe = ParzenEstimator::new(-5.0, 5.0, &obs);
            prop_assert!(pe.bandwidths().iter().all(|&b| b > 0.0));
            let mass = trapezoid(&pe, 10_000);
            prop_assert!((mass - 1.0).abs() < 1e-3, "mass {}", mass);
        }

        #[test]
        fn split_partitions_by_rank(
            scores in proptest::collection::vec(-100.0f64..100.0, 1..60),
            gamma in 0.01f64..0.99,
        ) {
            let d = Distribution::uniform(0.0, 1.0).unwrap();
            let h: Vec<_> = scores.iter().enumerate()
                .map(|(i, &s)| scored(i as u64, i as f64 / 100.0, s, &d))
                .collect();
            let ranked = ranked_observations(&h, StudyDirection::Minimize, "x", &d);
            let (below, above) = split_observations(gamma, &ranked);
            prop_assert_eq!(below.len() + above.len(), scores.len());
            prop_assert!(!below.is_empty());
            let score_of = |x: f64| scores[(x * 100.0).round() as usize];
            let worst_below = below.iter().map(|&x| score_of(x)).fold(f64::MIN, f64::max);
            let best_above = above.iter().map(|&x| score_of(x)).fold(f64::MAX, f64::min);
            prop_assert!(worst_below <= best_above);

            // a strictly increasing transform leaves the partition unchanged
            let transformed: Vec<_> = h.iter().map(|t| {
                let mut t = t.clone();
                t.value = t.value.map(|v| (v / 50.0).exp() * 3.0 + 1.0);
                t
            }).collect();
            let ranked2 = ranked_observations(&transformed, StudyDirection::Minimize, "x", &d);
            prop_assert_eq!(split_observations(gamma, &ranked2), (below, above));
        }
    }
}
