//! Marginal and conditional-coverage metrics for prediction intervals.
//!
//! All metrics use the exact coverage indicator on closed intervals.

pub mod report;
pub mod tree;
pub mod wsc;

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::hsic::{self, HsicConfig};
use crate::losses::{penalty_corr, penalty_hsic, IntervalBatch};
use crate::rng;

pub use tree::{DecisionTree, TreeConfig};
pub use wsc::{wsc, WscConfig};

/// Fraction of responses inside their interval.
pub fn coverage(intervals: &IntervalBatch) -> f64 {
    let covered = intervals.covered();
    covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64
}

pub fn mean_length(intervals: &IntervalBatch) -> f64 {
    intervals.lengths().iter().sum::<f64>() / intervals.len() as f64
}

/// `|corr(L, V)|` with the exact coverage indicator.
pub fn corr_metric(intervals: &IntervalBatch) -> Result<f64> {
    penalty_corr(&intervals.lengths(), &intervals.covered_f64())
}

/// `sqrt(HSIC(L, V))` with the exact coverage indicator.
pub fn hsic_metric(intervals: &IntervalBatch) -> Result<f64> {
    penalty_hsic(&intervals.lengths(), &intervals.covered_f64())
}

/// Empirical `q`-quantile of the HSIC metric under random permutations of
/// the coverage indicator.
pub fn hsic_null_quantile(
    intervals: &IntervalBatch,
    n_perm: usize,
    q: f64,
    seed: u64,
) -> Result<f64> {
    if n_perm == 0 {
        return Err(Error::InvalidParameter(
            "need at least one permutation".into(),
        ));
    }
    let mut r = rng::stream(seed, "hsic-null");
    let mut null: Vec<f64> = hsic::permutation_null(
        &intervals.lengths(),
        &intervals.covered_f64(),
        &HsicConfig::default(),
        n_perm,
        &mut r,
    )?
    .into_iter()
    .map(|h| h.max(0.0).sqrt())
    .collect();
    null.sort_by(f64::total_cmp);
    let k = ((q * n_perm as f64).ceil() as usize).clamp(1, n_perm);
    Ok(null[k - 1])
}

/// `|wsc - coverage|`.
pub fn delta_wsc(
    x: ArrayView2<f64>,
    intervals: &IntervalBatch,
    config: &WscConfig,
    seed: u64,
) -> Result<f64> {
    let w = wsc(x, &intervals.covered(), config, seed)?;
    Ok((w - coverage(intervals)).abs())
}

/// Rows whose length difference `a1 - a2` reaches the `ceil(0.9 n)`-th
/// order statistic; tied rows are all kept.
pub fn ils_set(lengths_a1: &[f64], lengths_a2: &[f64]) -> Result<Vec<usize>> {
    check_len(lengths_a1.len(), lengths_a2.len())?;
    let n = lengths_a1.len();
    if n == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let diff: Vec<f64> = lengths_a1
        .iter()
        .zip(lengths_a2)
        .map(|(a, b)| a - b)
        .collect();
    let mut sorted = diff.clone();
    sorted.sort_by(f64::total_cmp);
    let k = ((0.9 * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let q = sorted[k - 1];
    Ok((0..n).filter(|&i| diff[i] >= q).collect())
}

fn coverage_of(covered: &[bool], rows: &[usize]) -> f64 {
    rows.iter().filter(|&&i| covered[i]).count() as f64 / rows.len() as f64
}

fn check_rows(rows: &[usize], n: usize) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidParameter("empty ILS".into()));
    }
    if let Some(&bad) = rows.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidParameter(format!(
            "ILS index {bad} out of bounds for {n} rows"
        )));
    }
    Ok(())
}

/// `|coverage on ILS - coverage on all rows|`.
pub fn delta_ils_coverage(intervals: &IntervalBatch, ils: &[usize]) -> Result<f64> {
    check_rows(ils, intervals.len())?;
    let covered = intervals.covered();
    Ok((coverage_of(&covered, ils) - coverage(intervals)).abs())
}

/// The tree node picked by [`delta_node_coverage`] and its coverage gap.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeCoverage {
    pub delta: f64,
    pub node: tree::Node,
}

/// Coverage gap on the depth-limited tree node most enriched in ILS rows.
pub fn delta_node_coverage(
    x: ArrayView2<f64>,
    intervals: &IntervalBatch,
    ils: &[usize],
    config: &TreeConfig,
) -> Result<NodeCoverage> {
    check_len(x.nrows(), intervals.len())?;
    let n = intervals.len();
    if n < 20 {
        return Err(Error::TooFewSamples { needed: 20, got: n });
    }
    check_rows(ils, n)?;
    let mut labels = vec![false; n];
    for &i in ils {
        labels[i] = true;
    }
    let t = DecisionTree::fit(x, &labels, config)?;
    let node = t.nodes[t.most_enriched()].clone();
    let covered = intervals.covered();
    let delta = (coverage_of(&covered, &node.rows) - coverage(intervals)).abs();
    Ok(NodeCoverage { delta, node })
}

/// Percent improvement of a lower-is-better metric; positive is better.
///
/// A zero baseline gives 0 when the treated value is also 0 and
/// `-inf` otherwise.
pub fn improvement_pct(baseline: f64, treated: f64) -> f64 {
    if baseline == 0.0 {
        return if treated == 0.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        };
    }
    100.0 * (baseline - treated) / baseline
}

pub fn format_improvement(pct: f64) -> String {
    if pct == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{pct:.2}")
    }
}

/// Mean and standard error over trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

/// Mean and `std / sqrt(trials)`, with the population standard deviation.
pub fn aggregate(values: &[f64]) -> Result<MeanSe> {
    if values.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: values.len(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(MeanSe {
        mean,
        se: var.sqrt() / n.sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: u32,
    pub n: usize,
    pub coverage: f64,
    pub length: f64,
}

/// Coverage and mean length per group id, ordered by id.
pub fn group_metrics(intervals: &IntervalBatch, groups: &[u32]) -> Result<Vec<GroupMetrics>> {
    check_len(intervals.len(), groups.len())?;
    let mut by_group: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &g) in groups.iter().enumerate() {
        by_group.entry(g).or_default().push(i);
    }
    Ok(by_group
        .into_iter()
        .map(|(group, rows)| {
            let sub = intervals.select(&rows);
            GroupMetrics {
                group,
                n: rows.len(),
                coverage: coverage(&sub),
                length: mean_length(&sub),
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub wsc: WscConfig,
    pub tree: TreeConfig,
}

/// Single-method metrics on one test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub coverage: f64,
    pub length: f64,
    pub corr: f64,
    pub hsic: f64,
    pub wsc: f64,
    pub delta_wsc: f64,
    pub groups: Vec<GroupMetrics>,
}

pub fn evaluate(
    x: ArrayView2<f64>,
    intervals: &IntervalBatch,
    groups: Option<&[u32]>,
    config: &EvalConfig,
    seed: u64,
) -> Result<IntervalMetrics> {
    check_len(x.nrows(), intervals.len())?;
    let cov = coverage(intervals);
    let w = wsc(x, &intervals.covered(), &config.wsc, seed)?;
    Ok(IntervalMetrics {
        coverage: cov,
        length: mean_length(intervals),
        corr: corr_metric(intervals)?,
        hsic: hsic_metric(intervals)?,
        wsc: w,
        delta_wsc: (w - cov).abs(),
        groups: match groups {
            Some(g) => group_metrics(intervals, g)?,
            None => Vec::new(),
        },
    })
}

/// Metrics comparing two methods on shared test rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub ils_size: usize,
    pub baseline_delta_ils: f64,
    pub treated_delta_ils: f64,
    pub baseline_delta_node: f64,
    pub treated_delta_node: f64,
}

/// ILS from `treated - baseline` lengths, then both methods' gaps on it.
pub fn compare_pair(
    x: ArrayView2<f64>,
    baseline: &IntervalBatch,
    treated: &IntervalBatch,
    config: &TreeConfig,
) -> Result<PairMetrics> {
    let ils = ils_set(&treated.lengths(), &baseline.lengths())?;
    Ok(PairMetrics {
        ils_size: ils.len(),
        baseline_delta_ils: delta_ils_coverage(baseline, &ils)?,
        treated_delta_ils: delta_ils_coverage(treated, &ils)?,
        baseline_delta_node: delta_node_coverage(x, baseline, &ils, config)?.delta,
        treated_delta_node: delta_node_coverage(x, treated, &ils, config)?.delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn batch(lo: &[f64], hi: &[f64], y: &[f64]) -> IntervalBatch {
        IntervalBatch::new(lo.to_vec(), hi.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(
            coverage(&batch(&[-1.0, -1.0], &[1.0, 1.0], &[0.0, 2.0])),
            0.5
        );
        assert_eq!(coverage(&batch(&[0.0], &[1.0], &[1.0])), 1.0);
        assert_eq!(coverage(&batch(&[0.0, 0.0], &[1.0, 1.0], &[0.2, 0.7])), 1.0);
    }

    #[test]
    fn corr_metric_examples() {
        // L = [1, 2], V = [0, 1]
        let b = batch(&[0.0, 0.0], &[1.0, 2.0], &[5.0, 1.0]);
        assert!((corr_metric(&b).unwrap() - 1.0).abs() < 1e-12);
        let all_in = batch(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0], &[0.5, 0.5, 0.5]);
        assert_eq!(corr_metric(&all_in).unwrap(), 0.0);
        assert_eq!(hsic_metric(&all_in).unwrap(), 0.0);
    }

    #[test]
    fn hsic_metric_is_permutation_invariant() {
        let b = batch(
            &[0.0, 0.1, 0.3, 0.2, 0.0],
            &[1.0, 0.5, 3.0, 0.4, 2.0],
            &[0.5, 0.9, 1.0, 0.3, 4.0],
        );
        let p = b.select(&[3, 1, 4, 0, 2]);
        assert!((hsic_metric(&b).unwrap() - hsic_metric(&p).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn ils_examples() {
        let dl: Vec<f64> = (1..=10).map(f64::from).collect();
        let ils = ils_set(&dl, &[0.0; 10]).unwrap();
        assert_eq!(ils, vec![8, 9]);
        assert_eq!(
            ils_set(&[2.0; 7], &[1.0; 7]).unwrap(),
            (0..7).collect::<Vec<_>>()
        );
        let same = [0.3, 0.1, 0.7];
        assert_eq!(ils_set(&same, &same).unwrap(), vec![0, 1, 2]);
        assert!(ils_set(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn delta_ils_examples() {
        // rows 8 and 9 uncovered; ILS = {0, 1} is fully covered
        let y: Vec<f64> = (0..10).map(|i| if i >= 8 { 5.0 } else { 0.0 }).collect();
        let b = batch(&[-1.0; 10], &[1.0; 10], &y);
        assert!((delta_ils_coverage(&b, &[0, 1]).unwrap() - 0.2).abs() < 1e-12);
        let all: Vec<usize> = (0..10).collect();
        assert_eq!(delta_ils_coverage(&b, &all).unwrap(), 0.0);
        assert!(delta_ils_coverage(&b, &[]).is_err());
    }

    #[test]
    fn delta_node_examples() {
        let n = 40;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 - 19.5);
        // right half covered 15 of 20, left half all covered
        let y: Vec<f64> = (0..n)
            .map(|i| if i >= 20 && i % 4 == 0 { 9.0 } else { 0.0 })
            .collect();
        let b = batch(&vec![-1.0; n], &vec![1.0; n], &y);
        let ils: Vec<usize> = (20..n).collect();
        let sel = delta_node_coverage(x.view(), &b, &ils, &TreeConfig::default()).unwrap();
        assert_eq!(sel.node.rows, ils);
        assert!((sel.delta - (0.875 - 0.75)).abs() < 1e-12);
        let all: Vec<usize> = (0..n).collect();
        let root = delta_node_coverage(x.view(), &b, &all, &TreeConfig::default()).unwrap();
        assert_eq!(root.node.rows.len(), n);
        assert_eq!(root.delta, 0.0);
    }

    #[test]
    fn improvement_examples() {
        assert_eq!(improvement_pct(10.0, 5.0), 50.0);
        assert_eq!(improvement_pct(5.0, 10.0), -100.0);
        assert_eq!(improvement_pct(0.0, 0.0), 0.0);
        assert_eq!(format_improvement(improvement_pct(0.0, 0.1)), "-inf");
        assert!((improvement_pct(0.105, 0.038) - 63.8).abs() < 0.05);
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate(&[0.0, 1.0]).unwrap();
        assert_eq!(a.mean, 0.5);
        assert!((a.se - 0.354).abs() < 5e-4);
        assert_eq!(aggregate(&[0.3; 5]).unwrap().se, 0.0);
        assert!(aggregate(&[1.0]).is_err());
    }

    #[test]
    fn group_breakdown() {
        let b = batch(&[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0], &[0.5, 5.0, 0.5]);
        let g = group_metrics(&b, &[1, 0, 1]).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(
            (g[0].group, g[0].n, g[0].coverage, g[0].length),
            (0, 1, 0.0, 2.0)
        );
        assert_eq!(
            (g[1].group, g[1].n, g[1].coverage, g[1].length),
            (1, 2, 1.0, 2.0)
        );
    }

    proptest! {
        #[test]
        fn aggregate_ignores_order(mut v in proptest::collection::vec(-10.0..10.0f64, 2..20), seed in 0u64..100) {
            use rand::seq::SliceRandom;
            let a = aggregate(&v).unwrap();
            v.shuffle(&mut rng::stream(seed, "agg"));
            let b = aggregate(&v).unwrap();
            prop_assert!((a.mean - b.mean).abs() < 1e-12);
            prop_assert!((a.se - b.se).abs() < 1e-12);
        }

        #[test]
        fn delta_wsc_ignores_shifts_that_keep_coverage(seed in 0u64..50, shift in -0.4..0.4f64) {
            use rand::Rng;
            let mut r = rng::stream(seed, "dwsc");
            let n = 60;
            let x = Array2::from_shape_fn((n, 2), |_| r.random::<f64>());
            let y: Vec<f64> = (0..n).map(|_| if r.random::<f64>() < 0.8 { 0.0 } else { 5.0 }).collect();
            let b = batch(&vec![-1.0; n], &vec![1.0; n], &y);
            let moved = batch(&vec![-1.0 + shift; n], &vec![1.0 + shift; n], &y);
            let cfg = WscConfig { delta: 0.1, n_directions: 10 };
            prop_assert_eq!(delta_wsc(x.view(), &b, &cfg, seed).unwrap(), delta_wsc(x.view(), &moved, &cfg, seed).unwrap());
        }
    }
}
