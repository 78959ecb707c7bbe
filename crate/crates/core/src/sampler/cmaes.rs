//! CMA-ES over the relational search space.
//!
//! Coordinates are rescaled so every internal range maps onto `[0, 1]`; the
//! search starts at the centre with step size `sigma0`. The strategy state is a
//! pure function of the trial history: evaluated trials are consumed in chunks of
//! λ (ordered by trial number) and each chunk triggers one update.
use std::collections::HashSet;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};

use crate::distribution::{Distribution, SearchSpace};
use crate::trial::{compare_oriented, FrozenTrial, StudyDirection, TrialId, TrialState};

/// Strategy constants for dimension `n`.
#[derive(Debug, Clone)]
pub struct CmaParams {
    pub dim: usize,
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl CmaParams {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "CMA-ES needs at least one dimension");
        let n = dim as f64;
        let lambda = population_size(dim);
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        Self {
            dim,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

/// `4 + floor(3 ln n)`.
pub fn population_size(dim: usize) -> usize {
    4 + (3.0 * (dim as f64).ln()).floor() as usize
}

/// Mean, step size, covariance and evolution paths in normalised coordinates.
#[derive(Debug, Clone)]
pub struct CmaState {
    pub params: CmaParams,
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    pub generation: u64,
    /// `B * D` such that `cov = BD (BD)^T`.
    bd: DMatrix<f64>,
    /// `cov^{-1/2}`.
    inv_sqrt: DMatrix<f64>,
    sigma0: f64,
    resets: u64,
}

impl CmaState {
    pub fn new(dim: usize, sigma0: f64) -> Self {
        let params = CmaParams::new(dim);
        Self {
            mean: DVector::from_element(dim, 0.5),
            sigma: sigma0,
            cov: DMatrix::identity(dim, dim),
            p_sigma: DVector::zeros(dim),
            p_c: DVector::zeros(dim),
            generation: 0,
            bd: DMatrix::identity(dim, dim),
            inv_sqrt: DMatrix::identity(dim, dim),
            params,
            sigma0,
            resets: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn resets(&self) -> u64 {
        self.resets
    }

    /// Draws `mean + sigma * C^{1/2} z`, clipped into the unit cube.
    pub fn ask<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        let x = &self.mean + (&self.bd * z) * self.sigma;
        x.map(|v| v.clamp(0.0, 1.0))
    }

    /// One generation update from `(point, oriented score)` pairs; smaller is better.
    pub fn tell(&mut self, mut evaluated: Vec<(DVector<f64>, f64)>) {
        let p = self.params.clone();
        assert_eq!(evaluated.len(), p.lambda, "a generation has exactly lambda members");
        evaluated.sort_by(|a, b| compare_oriented(a.1, b.1));
        let n = p.dim as f64;

        let old_mean = self.mean.clone();
        let ys: Vec<DVector<f64>> = evaluated[..p.mu]
            .iter()
            .map(|(x, _)| (x - &old_mean) / self.sigma)
            .collect();
        let y_w = ys
            .iter()
            .zip(&p.weights)
            .fold(DVector::zeros(p.dim), |acc, (y, w)| acc + y * *w);
        self.mean = &old_mean + &y_w * self.sigma;

        let cs = p.c_sigma;
        self.p_sigma = &self.p_sigma * (1.0 - cs)
            + (&self.inv_sqrt * &y_w) * (cs * (2.0 - cs) * p.mu_eff).sqrt();
        let gen = (self.generation + 1) as f64;
        let ps_norm = self.p_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - cs).powf(2.0 * gen)).sqrt()
            < (1.4 + 2.0 / (n + 1.0)) * p.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.p_c = &self.p_c * (1.0 - p.c_c) + &y_w * (h * (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt());

        let delta_h = (1.0 - h) * p.c_c * (2.0 - p.c_c);
        let rank_one = &self.p_c * self.p_c.transpose();
        let rank_mu = ys
            .iter()
            .zip(&p.weights)
            .fold(DMatrix::zeros(p.dim, p.dim), |acc, (y, w)| acc + (y * y.transpose()) * *w);
        self.cov = &self.cov * (1.0 + p.c_1 * delta_h - p.c_1 - p.c_mu)
            + rank_one * p.c_1
            + rank_mu * p.c_mu;
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;

        self.sigma *= ((cs / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
        self.sigma = self.sigma.clamp(1e-30, 1e3);
        self.generation += 1;

        if let Err(reason) = self.refresh_decomposition() {
            warn!("CMA-ES covariance degenerated ({reason}); restarting from the initial state");
            let resets = self.resets + 1;
            *self = CmaState::new(p.dim, self.sigma0);
            self.resets = resets;
        }
    }

    fn refresh_decomposition(&mut self) -> Result<(), String> {
        if !self.cov.iter().all(|v| v.is_finite()) || !self.mean.iter().all(|v| v.is_finite()) {
            return Err("non-finite entries".into());
        }
        if self.cov.clone().cholesky().is_none() {
            return Err("covariance is not positive definite".into());
        }
        let eig = self.cov.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&v| v <= 0.0) {
            return Err("non-positive eigenvalue".into());
        }
        let d = eig.eigenvalues.map(f64::sqrt);
        let b = eig.eigenvectors;
        self.bd = &b * DMatrix::from_diagonal(&d);
        self.inv_sqrt = &b * DMatrix::from_diagonal(&d.map(|v| 1.0 / v)) * b.transpose();
        Ok(())
    }
}

/// Parameters outside the relational space keep being sampled independently.
/// Categorical parameters never enter it.
pub fn infer_relational_space(history: &[FrozenTrial]) -> SearchSpace {
    let spaces: Vec<SearchSpace> = history
        .iter()
        .filter(|t| t.state == TrialState::Complete)
        .map(FrozenTrial::search_space)
        .collect();
    let mut space = SearchSpace::intersect(&spaces);
    let categorical: Vec<String> = space
        .iter()
        .filter(|(_, d)| d.is_categorical())
        .map(|(n, _)| n.to_owned())
        .collect();
    for name in categorical {
        space.remove(&name);
    }
    space
}

fn coordinate_bounds(d: &Distribution) -> (f64, f64) {
    let (lo, hi) = d.internal_bounds();
    match d {
        Distribution::IntRange { step, .. } => (lo - 0.5 * *step as f64, hi + 0.5 * *step as f64),
        _ => (lo, hi),
    }
}

/// CMA-ES bound to one relational space, replaying history incrementally.
#[derive(Debug, Clone)]
pub struct CmaEngine {
    space: SearchSpace,
    bounds: Vec<(f64, f64)>,
    state: CmaState,
    consumed: HashSet<TrialId>,
    pending: Vec<(u64, DVector<f64>, f64)>,
}

impl CmaEngine {
    pub fn new(space: SearchSpace, sigma0: f64) -> Self {
        let bounds: Vec<_> = space.iter().map(|(_, d)| coordinate_bounds(d)).collect();
        Self {
            state: CmaState::new(bounds.len(), sigma0),
            space,
            bounds,
            consumed: HashSet::new(),
            pending: Vec::new(),
        }
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn state(&self) -> &CmaState {
        &self.state
    }

    /// Feeds newly finished trials that cover the whole space; runs one update per
    /// λ of them, oldest trial numbers first.
    pub fn sync(&mut self, history: &[FrozenTrial], direction: StudyDirection) {
        let mut fresh: Vec<(TrialId, u64, DVector<f64>, f64)> = history
            .iter()
            .filter(|t| !self.consumed.contains(&t.trial_id))
            .filter_map(|t| {
                let score = t.score()?;
                let x = self.encode(t)?;
                Some((t.trial_id, t.number, x, direction.orient(score)))
            })
            .collect();
        fresh.sort_by_key(|e| e.1);
        for (id, number, x, score) in fresh {
            self.consumed.insert(id);
            self.pending.push((number, x, score));
        }
        let lambda = self.state.params.lambda;
        while self.pending.len() >= lambda {
            let generation: Vec<_> = self
                .pending
                .drain(..lambda)
                .map(|(_, x, score)| (x, score))
                .collect();
            self.state.tell(generation);
        }
    }

    fn encode(&self, trial: &FrozenTrial) -> Option<DVector<f64>> {
        let mut x = DVector::zeros(self.bounds.len());
        for (i, ((name, d), (lo, hi))) in self.space.iter().zip(&self.bounds).enumerate() {
            let p = trial.params.get(name)?;
            if &p.distribution != d {
                return None;
            }
            x[i] = ((p.internal - lo) / (hi - lo)).clamp(0.0, 1.0);
        }
        Some(x)
    }

    /// Samples one individual and maps it back to internal values by name.
    pub fn ask<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<(String, f64)> {
        let x = self.state.ask(rng);
        self.space
            .iter()
            .zip(&self.bounds)
            .enumerate()
            .map(|(i, ((name, d), (lo, hi)))| {
                let (ilo, ihi) = d.internal_bounds();
                (name.to_owned(), (lo + x[i] * (hi - lo)).clamp(ilo, ihi))
            })
            .collect()
    }
}
