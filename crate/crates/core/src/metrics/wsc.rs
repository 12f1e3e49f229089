//! Worst-slab coverage.
//!
//! For a direction `v`, a slab is a contiguous run of points in the order of
//! `vᵀx`. The worst slab is the run of at least `ceil(delta n)` points with
//! the lowest coverage; the result is the minimum over random directions.

use ndarray::{Array1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WscConfig {
    /// Minimum slab mass.
    pub delta: f64,
    pub n_directions: usize,
}

impl Default for WscConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            n_directions: 1000,
        }
    }
}

/// Minimum window size `ceil(delta n)`, at least 1.
pub fn min_window(n: usize, delta: f64) -> usize {
    ((delta * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

/// Lowest mean of `covered` over contiguous windows of length `>= m`,
/// returned as `(covered count, window length)`.
///
/// Dinkelbach iteration on the ratio: each round finds the window minimizing
/// `sum(v) - lambda * len` with integer arithmetic, which is exact.
pub fn min_window_coverage(covered: &[bool], m: usize) -> (usize, usize) {
    let n = covered.len();
    assert!(m >= 1 && m <= n, "window size {m} outside 1..={n}");
    let total = covered.iter().filter(|&&c| c).count();
    let (mut num, mut den) = (total as i64, n as i64);
    loop {
        // prefix P_k = den * S_k - num * k; minimize P_j - P_i over j - i >= m
        let mut prefix = Vec::with_capacity(n + 1);
        let mut s = 0i64;
        prefix.push(0i64);
        for (k, &c) in covered.iter().enumerate() {
            s += i64::from(c);
            prefix.push(den * s - num * (k as i64 + 1));
        }
        let mut best = (0i64, 0usize, n);
        let mut max_i = (i64::MIN, 0usize);
        for j in m..=n {
            let i = j - m;
            if prefix[i] > max_i.0 {
                max_i = (prefix[i], i);
            }
            let diff = prefix[j] - max_i.0;
            if diff < best.0 {
                best = (diff, max_i.1, j);
            }
        }
        if best.0 >= 0 {
            return (num as usize, den as usize);
        }
        let (i, j) = (best.1, best.2);
        let count = covered[i..j].iter().filter(|&&c| c).count();
        num = count as i64;
        den = (j - i) as i64;
    }
}

/// Brute-force scan over every admissible window.
pub fn min_window_coverage_exhaustive(covered: &[bool], m: usize) -> (usize, usize) {
    let n = covered.len();
    let mut best = (covered.iter().filter(|&&c| c).count(), n);
    for i in 0..n {
        let mut count = 0;
        for (len, &c) in (1..).zip(&covered[i..]) {
            count += usize::from(c);
            if len >= m && count * best.1 < best.0 * len {
                best = (count, len);
            }
        }
    }
    best
}

fn random_direction<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..p)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = v.dot(&v).sqrt();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

/// Worst-slab coverage along a single direction.
pub fn slab_coverage(
    x: ArrayView2<f64>,
    covered: &[bool],
    direction: &Array1<f64>,
    delta: f64,
) -> f64 {
    let proj = x.dot(direction);
    let mut order: Vec<usize> = (0..proj.len()).collect();
    order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
    let sorted: Vec<bool> = order.iter().map(|&i| covered[i]).collect();
    let (c, l) = min_window_coverage(&sorted, min_window(sorted.len(), delta));
    c as f64 / l as f64
}

/// Worst-slab coverage over `n_directions` seeded random unit directions.
pub fn wsc(x: ArrayView2<f64>, covered: &[bool], config: &WscConfig, seed: u64) -> Result<f64> {
    check_len(x.nrows(), covered.len())?;
    if !(config.delta > 0.0 && config.delta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "wsc delta must lie in (0, 1], got {}",
            config.delta
        )));
    }
    let n = covered.len();
    if n == 0 || (n as f64) * config.delta < 1.0 - 1e-9 {
        return Err(Error::TooFewSamples {
            needed: (1.0 / config.delta).ceil() as usize,
            got: n,
        });
    }
    if config.n_directions == 0 {
        return Err(Error::InvalidParameter(
            "wsc needs at least one direction".into(),
        ));
    }
    let mut r = rng::stream(seed, rng::WSC);
    let mut worst = f64::INFINITY;
    for _ in 0..config.n_directions {
        let v = random_direction(x.ncols(), &mut r);
        worst = worst.min(slab_coverage(x, covered, &v, config.delta));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn one_dimensional_bad_slab() {
        let x = Array1::from_iter((1..=100).map(f64::from)).insert_axis(ndarray::Axis(1));
        let covered: Vec<bool> = (1..=100).map(|v| v > 10).collect();
        let w = wsc(x.view(), &covered, &WscConfig::default(), 0).unwrap();
        assert_eq!(w, 0.0);
        let full = wsc(
            x.view(),
            &covered,
            &WscConfig {
                delta: 1.0,
                n_directions: 3,
            },
            0,
        )
        .unwrap();
        assert_eq!(full, 0.9);
    }

    #[test]
    fn all_covered_gives_one() {
        let x = ndarray::Array2::from_shape_fn((50, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        assert_eq!(
            wsc(x.view(), &[true; 50], &WscConfig::default(), 1).unwrap(),
            1.0
        );
    }

    #[test]
    fn rejects_bad_delta() {
        let x = ndarray::Array2::zeros((10, 1));
        for delta in [0.0, 1.5, f64::NAN] {
            assert!(wsc(
                x.view(),
                &[true; 10],
                &WscConfig {
                    delta,
                    n_directions: 1
                },
                0
            )
            .is_err());
        }
        assert!(wsc(
            x.view(),
            &[true; 10],
            &WscConfig {
                delta: 0.05,
                n_directions: 1
            },
            0
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn dinkelbach_matches_exhaustive(covered in proptest::collection::vec(any::<bool>(), 1..80), frac in 0.01..1.0f64) {
            let m = min_window(covered.len(), frac);
            let (c1, l1) = min_window_coverage(&covered, m);
            let (c2, l2) = min_window_coverage_exhaustive(&covered, m);
            prop_assert_eq!(c1 * l2, c2 * l1);
            prop_assert!(l1 >= m);
        }

        #[test]
        fn wsc_never_exceeds_coverage(seed in 0u64..100, n in 20usize..120) {
            let mut r = rng::stream(seed, "wsc-prop");
            let x = ndarray::Array2::from_shape_fn((n, 3), |_| r.random::<f64>());
            let covered: Vec<bool> = (0..n).map(|_| r.random::<f64>() < 0.8).collect();
            let cov = covered.iter().filter(|&&c| c).count() as f64 / n as f64;
            let w = wsc(x.view(), &covered, &WscConfig { delta: 0.1, n_directions: 20 }, seed).unwrap();
            prop_assert!(w <= cov + 1e-15);
        }
    }
}
