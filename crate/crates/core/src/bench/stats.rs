//! Mann-Whitney U rank-sum test.
use std::cmp::Ordering;

use crate::trial::compare_oriented;

/// Pooled sizes up to this use the exact null distribution.
pub const EXACT_LIMIT: usize = 20;

/// Result of a one-sided test of "`a` tends to be smaller than `b`".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UTest {
    /// Pairs `(x, y)` with `x < y`, ties counting one half.
    pub u: f64,
    pub p_one_sided: f64,
}

/// Counts pairs `x < y` plus half the ties. NaN is larger than every number.
pub fn u_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut doubled = 0u64;
    for &x in a {
        for &y in b {
            doubled += match compare_oriented(x, y) {
                Ordering::Less => 2,
                Ordering::Equal => 1,
                Ordering::Greater => 0,
            };
        }
    }
    doubled as f64 / 2.0
}

/// Doubled mid-ranks (1-based) of the pooled sample and the tie group sizes.
fn doubled_midranks(pooled: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| compare_oriented(pooled[i], pooled[j]));
    let mut ranks = vec![0; pooled.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && compare_oriented(pooled[order[start]], pooled[order[end]]).is_eq() {
            end += 1;
        }
        // mid-rank of positions start+1..=end, doubled
        let doubled = (start + 1 + end) as u64;
        for &i in &order[start..end] {
            ranks[i] = doubled;
        }
        ties.push(end - start);
        start = end;
    }
    (ranks, ties)
}

/// `P(U >= u_obs)` by counting every way of drawing `|a|` of the pooled ranks.
fn exact_upper_tail(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, _) = doubled_midranks(&pooled);
    let n1 = a.len();
    let observed: u64 = ranks[..n1].iter().sum();
    let max_sum: usize = ranks.iter().sum::<u64>() as usize;
    // ways[k][s]: subsets of size k with doubled rank sum s
    let mut ways = vec![vec![0u64; max_sum + 1]; n1 + 1];
    ways[0][0] = 1;
    for &r in &ranks {
        let r = r as usize;
        for k in (1..=n1).rev() {
            for s in (r..=max_sum).rev() {
                ways[k][s] += ways[k - 1][s - r];
            }
        }
    }
    // U grows as the rank sum of `a` shrinks
    let hits: u64 = ways[n1][..=observed as usize].iter().sum();
    let total: u64 = ways[n1].iter().sum();
    hits as f64 / total as f64
}

fn normal_upper_tail(a: &[f64], b: &[f64], u: f64) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (_, ties) = doubled_midranks(&pooled);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let n = n1 + n2;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let variance = n1 * n2 / 12.0 * ((n + 1.0) - tie_term);
    if variance <= 0.0 {
        return 1.0;
    }
    let z = (u - n1 * n2 / 2.0 - 0.5) / variance.sqrt();
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// One-sided test that values in `a` tend to be smaller than values in `b`.
///
/// Exact for `|a| + |b| <= 20`, otherwise the normal approximation with tie and
/// continuity corrections.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> UTest {
    assert!(!a.is_empty() && !b.is_empty(), "both samples must be non-empty");
    let u = u_statistic(a, b);
    let p_one_sided = if a.len() + b.len() <= EXACT_LIMIT {
        exact_upper_tail(a, b)
    } else {
        normal_upper_tail(a, b, u)
    };
    UTest { u, p_one_sided }
}

/// Two-sided p-value: twice the smaller one-sided tail, capped at 1.
pub fn mann_whitney_two_sided(a: &[f64], b: &[f64]) -> f64 {
    let less = mann_whitney_u(a, b).p_one_sided;
    let greater = mann_whitney_u(b, a).p_one_sided;
    (2.0 * less.min(greater)).min(1.0)
}

/// Median of the non-empty sample; NaN sorts last.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(|a, b| compare_oriented(*a, *b));
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn documented_examples() {
        let t = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(t.u, 4.0);
        assert!((t.p_one_sided - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(mann_whitney_u(&[5.0], &[5.0]).u, 0.5);
        let a = [1.0, 2.0, 2.0, 7.0];
        assert_eq!(mann_whitney_u(&a, &a).u, 8.0);
    }

    #[test]
    fn midranks_with_ties() {
        let (ranks, ties) = doubled_midranks(&[3.0, 1.0, 3.0, 2.0, f64::NAN]);
        assert_eq!(ranks, vec![7, 2, 7, 4, 10]);
        assert_eq!(ties, vec![1, 1, 2, 1]);
    }

    #[test]
    fn large_samples_use_normal_tail() {
        let a: Vec<f64> = (0..30).map(f64::from).collect();
        let b: Vec<f64> = (0..30).map(|i| f64::from(i) + 100.0).collect();
        let t = mann_whitney_u(&a, &b);
        assert_eq!(t.u, 900.0);
        assert!(t.p_one_sided < 1e-9);
        assert!(mann_whitney_u(&b, &a).p_one_sided > 0.999_999);
        assert!(mann_whitney_two_sided(&a, &a) > 0.9);
    }

    #[test]
    fn all_tied_large_sample_is_not_significant() {
        let a = vec![1.0; 15];
        assert_eq!(mann_whitney_u(&a, &a).p_one_sided, 1.0);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    proptest! {
        #[test]
        fn u_sum_identity(
            a in prop::collection::vec(-5i32..5, 1..40),
            b in prop::collection::vec(-5i32..5, 1..40),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let total = mann_whitney_u(&a, &b).u + mann_whitney_u(&b, &a).u;
            prop_assert_eq!(total, (a.len() * b.len()) as f64);
        }

        #[test]
        fn p_values_are_probabilities(
            a in prop::collection::vec(-3.0f64..3.0, 1..25),
            b in prop::collection::vec(-3.0f64..3.0, 1..25),
        ) {
            let p = mann_whitney_u(&a, &b).p_one_sided;
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}
