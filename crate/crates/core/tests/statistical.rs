//! Monte-Carlo checks against analytic or simulated oracles.

use ndarray::Array2;
use oqr::conformal::{calibrate, conformalize};
use oqr::data::{
    generate_synthetic, normal_quantile, OracleQuantiles, SyntheticSpec, SYNTHETIC_DIM,
};
use oqr::hsic::{hsic_estimate, permutation_null, HsicConfig};
use oqr::losses::{interval_score_risk, AlphaSampling, IntervalBatch};
use oqr::metrics::tree::TreeConfig;
use oqr::metrics::{coverage, delta_node_coverage, ils_set};
use oqr::rng::stream;
use rand::Rng;
use rand_distr::StandardNormal;

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n
}

#[test]
fn response_variance_matches_model() {
    let oracle = OracleQuantiles::from_spec(&SyntheticSpec::low(10, 1));
    let mut rng = stream(7, "variance");
    for group in [0.0, 1.0] {
        let mut x: Vec<f64> = (0..SYNTHETIC_DIM)
            .map(|_| rng.random_range(1.0..5.0))
            .collect();
        x[0] = group;
        let draws: Vec<f64> = (0..100_000).map(|_| oracle.sample(&x, &mut rng)).collect();
        let dot = |w: &[f64]| w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
        let expected = if group == 1.0 {
            (0.03 * dot(&oracle.gamma)).powi(2) + 9.0
        } else {
            (0.03 * dot(&oracle.beta)).powi(2)
        };
        let got = variance(&draws);
        assert!(
            (got / expected - 1.0).abs() < 0.03,
            "group {group}: {got} vs {expected}"
        );
    }
}

#[test]
fn oracle_intervals_cover_fresh_samples() {
    for lambda in [3.0, 10.0] {
        let (data, oracle) = generate_synthetic(&SyntheticSpec::new(100_000, lambda, 4)).unwrap();
        let b = oracle.intervals(data.x.view(), &data.y, 0.1).unwrap();
        let c = coverage(&b);
        assert!((c - 0.9).abs() < 0.003, "lambda {lambda}: coverage {c}");
    }
}

/// For `y ~ N(0, s^2)` and the central `1 - alpha` interval with
/// `z = Phi^-1(1 - alpha/2)`, `E[IS] = 2sz + (4s/alpha)(phi(z) - z alpha/2)
/// = 4 s phi(z) / alpha`. Integrated over a midpoint grid in alpha.
fn integrated_unit_risk() -> f64 {
    let k = 1_000_000;
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (0..k)
        .map(|i| {
            let a = (i as f64 + 0.5) / k as f64;
            4.0 * phi(normal_quantile(1.0 - a / 2.0)) / a
        })
        .sum::<f64>()
        / k as f64
}

#[test]
fn oracle_interval_score_risk_matches_integral() {
    let (data, oracle) = generate_synthetic(&SyntheticSpec::low(200_000, 2)).unwrap();
    let mean_scale = data
        .x
        .outer_iter()
        .map(|r| oracle.scale(r.as_slice().unwrap()))
        .sum::<f64>()
        / data.len() as f64;
    let expected = mean_scale * integrated_unit_risk();
    let got = interval_score_risk(
        &oracle,
        data.x.view(),
        &data.y,
        AlphaSampling::PerSample,
        &mut stream(2, "risk"),
    )
    .unwrap();
    assert!((got / expected - 1.0).abs() < 0.05, "{got} vs {expected}");
}

#[test]
fn split_conformal_is_valid_over_trials() {
    let n_cal = 500;
    let alpha = 0.1;
    let mut total = 0.0;
    for trial in 0..100u64 {
        let (data, oracle) =
            generate_synthetic(&SyntheticSpec::low(2 * n_cal, 100 + trial)).unwrap();
        // A deliberately miscalibrated model: half-width oracle intervals.
        let batch = |rows: std::ops::Range<usize>| {
            let (mut lo, mut hi, mut y) = (Vec::new(), Vec::new(), Vec::new());
            for i in rows {
                let (l, h) = oracle.interval(data.x.row(i).as_slice().unwrap(), alpha);
                lo.push(0.5 * l);
                hi.push(0.5 * h);
                y.push(data.y[i]);
            }
            IntervalBatch::new(lo, hi, y).unwrap()
        };
        let cal = calibrate(&batch(0..n_cal), alpha).unwrap();
        total += coverage(&conformalize(&batch(n_cal..2 * n_cal), &cal));
    }
    let mean = total / 100.0;
    let upper = 1.0 - alpha + 2.0 / (n_cal as f64 + 1.0) + 0.01;
    assert!(
        mean >= 1.0 - alpha - 0.01 && mean <= upper,
        "mean coverage {mean}"
    );
}

#[test]
fn random_ils_has_small_node_gap() {
    let n = 1000;
    let mut deltas = Vec::new();
    for r in 0..50u64 {
        let mut rng = stream(r, "random-ils");
        let x = Array2::from_shape_fn((n, 5), |_| rng.random::<f64>());
        let y: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < 0.9 { 0.5 } else { 2.0 })
            .collect();
        let b = IntervalBatch::new(vec![0.0; n], vec![1.0; n], y).unwrap();
        let base: Vec<f64> = vec![1.0; n];
        let treated: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let ils = ils_set(&base, &treated).unwrap();
        deltas.push(
            delta_node_coverage(x.view(), &b, &ils, &TreeConfig::default())
                .unwrap()
                .delta,
        );
    }
    deltas.sort_by(f64::total_cmp);
    let median = 0.5 * (deltas[24] + deltas[25]);
    assert!(median < 0.1, "median node gap {median}");
}

#[test]
fn hsic_of_independent_inputs_is_not_significant() {
    let cfg = HsicConfig::default();
    let mut accepted = 0;
    for trial in 0..100u64 {
        let mut rng = stream(trial, "hsic-null");
        let a: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let stat = hsic_estimate(&a, &b, &cfg).unwrap();
        let mut null = permutation_null(&a, &b, &cfg, 200, &mut rng).unwrap();
        null.sort_by(f64::total_cmp);
        accepted += usize::from(stat < null[197]);
    }
    assert!(
        accepted >= 95,
        "{accepted} of 100 below the 99th percentile"
    );
}
