//! Closed-form black-box test functions.
use std::f64::consts::{E, PI};
use std::fmt;

use crate::study::{ObjectiveResult, TrialApi};

/// A minimisation benchmark over a box.
#[derive(Clone)]
pub struct TestFunction {
    pub name: &'static str,
    pub bounds: Vec<(f64, f64)>,
    pub known_minimum: f64,
    /// A point attaining `known_minimum`.
    pub argmin: Vec<f64>,
    pub multimodal: bool,
    eval: fn(&[f64]) -> f64,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("known_minimum", &self.known_minimum)
            .finish()
    }
}

impl TestFunction {
    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "{} takes {} coordinates", self.name, self.dim());
        (self.eval)(x)
    }

    /// Name of coordinate `i` as suggested by [`TestFunction::suggest_point`].
    pub fn param_name(i: usize) -> String {
        format!("x{i}")
    }

    /// Suggests every coordinate as `x0, x1, ...` with a uniform distribution.
    pub fn suggest_point(&self, trial: &mut dyn TrialApi) -> crate::Result<Vec<f64>> {
        self.bounds
            .iter()
            .enumerate()
            .map(|(i, &(lo, hi))| trial.suggest_uniform(&Self::param_name(i), lo, hi))
            .collect()
    }

    /// Objective that suggests a point and returns the function value there.
    pub fn objective(&self) -> impl Fn(&mut dyn TrialApi) -> ObjectiveResult + Sync + '_ {
        move |trial| Ok(self.evaluate(&self.suggest_point(trial)?))
    }

    pub fn by_name(name: &str) -> Option<TestFunction> {
        suite().into_iter().find(|f| f.name == name)
    }
}

fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

fn branin(x: &[f64]) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

fn ackley(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let cs = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / n;
    -20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + 20.0 + E
}

fn rastrigin(x: &[f64]) -> f64 {
    10.0 * x.len() as f64 + x.iter().map(|v| v * v - 10.0 * (2.0 * PI * v).cos()).sum::<f64>()
}

fn levy(x: &[f64]) -> f64 {
    let w: Vec<f64> = x.iter().map(|v| 1.0 + (v - 1.0) / 4.0).collect();
    let d = w.len();
    let head = (PI * w[0]).sin().powi(2);
    let middle: f64 = w[..d - 1]
        .iter()
        .map(|wi| (wi - 1.0).powi(2) * (1.0 + 10.0 * (PI * wi + 1.0).sin().powi(2)))
        .sum();
    let tail = (w[d - 1] - 1.0).powi(2) * (1.0 + (2.0 * PI * w[d - 1]).sin().powi(2));
    head + middle + tail
}

fn styblinski_tang(x: &[f64]) -> f64 {
    0.5 * x.iter().map(|v| v.powi(4) - 16.0 * v * v + 5.0 * v).sum::<f64>()
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];

const HARTMANN3_A: [[f64; 3]; 4] = [
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
];

const HARTMANN3_P: [[f64; 3]; 4] = [
    [3689.0, 1170.0, 2673.0],
    [4699.0, 4387.0, 7470.0],
    [1091.0, 8732.0, 5547.0],
    [381.0, 5743.0, 8828.0],
];

const HARTMANN6_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];

const HARTMANN6_P: [[f64; 6]; 4] = [
    [1312.0, 1696.0, 5569.0, 124.0, 8283.0, 5886.0],
    [2329.0, 4135.0, 8307.0, 3736.0, 1004.0, 9991.0],
    [2348.0, 1451.0, 3522.0, 2883.0, 3047.0, 6650.0],
    [4047.0, 8828.0, 8732.0, 5743.0, 1091.0, 381.0],
];

fn hartmann<const D: usize>(x: &[f64], a: &[[f64; D]; 4], p: &[[f64; D]; 4]) -> f64 {
    -(0..4)
        .map(|i| {
            let inner: f64 = (0..D).map(|j| a[i][j] * (x[j] - 1e-4 * p[i][j]).powi(2)).sum();
            HARTMANN_ALPHA[i] * (-inner).exp()
        })
        .sum::<f64>()
}

fn hartmann3(x: &[f64]) -> f64 {
    hartmann(x, &HARTMANN3_A, &HARTMANN3_P)
}

fn hartmann6(x: &[f64]) -> f64 {
    hartmann(x, &HARTMANN6_A, &HARTMANN6_P)
}

fn cube(dim: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    vec![(lo, hi); dim]
}

fn sphere_nd(name: &'static str, dim: usize) -> TestFunction {
    TestFunction {
        name,
        bounds: cube(dim, -5.12, 5.12),
        known_minimum: 0.0,
        argmin: vec![0.0; dim],
        multimodal: false,
        eval: sphere,
    }
}

/// The benchmark cases, unimodal ones first.
pub fn suite() -> Vec<TestFunction> {
    vec![
        sphere_nd("sphere-2d", 2),
        sphere_nd("sphere-6d", 6),
        sphere_nd("sphere-10d", 10),
        TestFunction {
            name: "rosenbrock-2d",
            bounds: cube(2, -5.0, 10.0),
            known_minimum: 0.0,
            argmin: vec![1.0, 1.0],
            multimodal: false,
            eval: rosenbrock,
        },
        TestFunction {
            name: "branin-2d",
            bounds: vec![(-5.0, 10.0), (0.0, 15.0)],
            known_minimum: 5.0 / (4.0 * PI),
            argmin: vec![PI, 2.275],
            multimodal: true,
            eval: branin,
        },
        TestFunction {
            name: "ackley-2d",
            bounds: cube(2, -32.768, 32.768),
            known_minimum: 0.0,
            argmin: vec![0.0, 0.0],
            multimodal: true,
            eval: ackley,
        },
        TestFunction {
            name: "rastrigin-2d",
            bounds: cube(2, -5.12, 5.12),
            known_minimum: 0.0,
            argmin: vec![0.0, 0.0],
            multimodal: true,
            eval: rastrigin,
        },
        TestFunction {
            name: "hartmann-3d",
            bounds: cube(3, 0.0, 1.0),
            known_minimum: -3.862779787332655,
            argmin: vec![0.11458887792268346, 0.5556488863733628, 0.8525469769022044],
            multimodal: true,
            eval: hartmann3,
        },
        TestFunction {
            name: "hartmann-6d",
            bounds: cube(6, 0.0, 1.0),
            known_minimum: -3.3223680114155125,
            argmin: vec![
                0.20168950923409584,
                0.15001068876417922,
                0.4768739724329622,
                0.275332428312954,
                0.3116516115751367,
                0.6573005293804641,
            ],
            multimodal: true,
            eval: hartmann6,
        },
        TestFunction {
            name: "levy-2d",
            bounds: cube(2, -10.0, 10.0),
            known_minimum: 0.0,
            argmin: vec![1.0, 1.0],
            multimodal: true,
            eval: levy,
        },
        TestFunction {
            name: "styblinski-tang-2d",
            bounds: cube(2, -5.0, 5.0),
            known_minimum: -78.33233140754282,
            argmin: vec![-2.9035340507291036; 2],
            multimodal: true,
            eval: styblinski_tang,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn suite_has_eleven_cases() {
        let names: Vec<_> = suite().iter().map(|f| f.name).collect();
        assert_eq!(names.len(), 11);
        assert_eq!(TestFunction::by_name("hartmann-6d").unwrap().dim(), 6);
        assert!(TestFunction::by_name("nope").is_none());
    }

    #[test]
    fn argmin_attains_known_minimum() {
        for f in suite() {
            let v = f.evaluate(&f.argmin);
            assert!((v - f.known_minimum).abs() < 1e-9, "{}: {v} vs {}", f.name, f.known_minimum);
        }
    }

    #[test]
    fn branin_has_three_global_minima() {
        let f = TestFunction::by_name("branin-2d").unwrap();
        for p in [[-PI, 12.275], [PI, 2.275], [9.42478, 2.475]] {
            assert!((f.evaluate(&p) - f.known_minimum).abs() < 1e-5);
        }
    }

    #[test]
    fn reference_values() {
        assert_eq!(sphere(&[3.0, 4.0]), 25.0);
        assert_eq!(rosenbrock(&[0.0, 0.0]), 1.0);
        assert!((rastrigin(&[1.0, 0.0]) - 1.0).abs() < 1e-12);
        assert!((styblinski_tang(&[0.0, 0.0])).abs() < 1e-15);
        assert!((ackley(&[1.0, 1.0]) - 3.6253849384403627).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn no_value_below_known_minimum(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for f in suite() {
                let x: Vec<f64> = f.bounds.iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect();
                prop_assert!(f.evaluate(&x) >= f.known_minimum - 1e-9, "{}", f.name);
            }
        }
    }
}
