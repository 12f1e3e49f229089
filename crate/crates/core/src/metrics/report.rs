//! Per-trial metric rows and their mean / standard-error aggregation, with
//! fixed-column CSV and JSON output.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{aggregate, MeanSe};
use crate::error::Result;

/// Column order of every metrics table.
pub const COLUMNS: [&str; 11] = [
    "dataset",
    "method",
    "seed",
    "coverage",
    "length",
    "corr",
    "hsic",
    "wsc",
    "delta_wsc",
    "delta_ils",
    "delta_node",
];

/// Metric values of one trial, or one aggregate statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub coverage: f64,
    pub length: f64,
    pub corr: f64,
    pub hsic: f64,
    pub wsc: f64,
    pub delta_wsc: f64,
    pub delta_ils: Option<f64>,
    pub delta_node: Option<f64>,
}

impl MetricValues {
    fn cells(&self) -> [String; 8] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.coverage.to_string(),
            self.length.to_string(),
            self.corr.to_string(),
            self.hsic.to_string(),
            self.wsc.to_string(),
            self.delta_wsc.to_string(),
            opt(self.delta_ils),
            opt(self.delta_node),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    #[serde(flatten)]
    pub values: MetricValues,
}

/// Mean and standard error of every metric for one (dataset, method).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub method: String,
    pub trials: usize,
    pub mean: MetricValues,
    /// Absent with fewer than two trials.
    pub se: Option<MetricValues>,
}

fn summarize(values: &[f64]) -> (f64, Option<f64>) {
    match aggregate(values) {
        Ok(MeanSe { mean, se }) => (mean, Some(se)),
        Err(_) => (values.iter().sum::<f64>() / values.len() as f64, None),
    }
}

fn summarize_opt(values: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return (None, None);
    }
    let (m, s) = summarize(&present);
    (Some(m), s)
}

/// Group rows by (dataset, method) in first-appearance order.
pub fn aggregate_rows(rows: &[TrialRow]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<&TrialRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.dataset.clone(), r.method.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let col = |f: fn(&MetricValues) -> f64| {
                summarize(&members.iter().map(|r| f(&r.values)).collect::<Vec<_>>())
            };
            let (coverage, coverage_se) = col(|v| v.coverage);
            let (length, length_se) = col(|v| v.length);
            let (corr, corr_se) = col(|v| v.corr);
            let (hsic, hsic_se) = col(|v| v.hsic);
            let (wsc, wsc_se) = col(|v| v.wsc);
            let (delta_wsc, delta_wsc_se) = col(|v| v.delta_wsc);
            let (delta_ils, delta_ils_se) = summarize_opt(
                &members
                    .iter()
                    .map(|r| r.values.delta_ils)
                    .collect::<Vec<_>>(),
            );
            let (delta_node, delta_node_se) = summarize_opt(
                &members
                    .iter()
                    .map(|r| r.values.delta_node)
                    .collect::<Vec<_>>(),
            );
            let se = coverage_se.map(|coverage| MetricValues {
                coverage,
                length: length_se.unwrap_or_default(),
                corr: corr_se.unwrap_or_default(),
                hsic: hsic_se.unwrap_or_default(),
                wsc: wsc_se.unwrap_or_default(),
                delta_wsc: delta_wsc_se.unwrap_or_default(),
                delta_ils: delta_ils_se,
                delta_node: delta_node_se,
            });
            AggregateRow {
                dataset: key.0,
                method: key.1,
                trials: members.len(),
                mean: MetricValues {
                    coverage,
                    length,
                    corr,
                    hsic,
                    wsc,
                    delta_wsc,
                    delta_ils,
                    delta_node,
                },
                se,
            }
        })
        .collect()
}

pub fn write_trials_csv<W: Write>(rows: &[TrialRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for r in rows {
        let mut rec = vec![r.dataset.clone(), r.method.clone(), r.seed.to_string()];
        rec.extend(r.values.cells());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Two lines per (dataset, method): `seed = mean` and `seed = se`.
pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for r in rows {
        let mut rec = vec![r.dataset.clone(), r.method.clone(), "mean".to_string()];
        rec.extend(r.mean.cells());
        w.write_record(&rec)?;
        let mut rec = vec![r.dataset.clone(), r.method.clone(), "se".to_string()];
        match &r.se {
            Some(se) => rec.extend(se.cells()),
            None => rec.extend(std::iter::repeat_n(String::new(), 8)),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, seed: u64, coverage: f64, ils: Option<f64>) -> TrialRow {
        TrialRow {
            dataset: "d".into(),
            method: method.into(),
            seed,
            values: MetricValues {
                coverage,
                length: 1.0,
                corr: 0.1,
                hsic: 0.2,
                wsc: 0.8,
                delta_wsc: 0.1,
                delta_ils: ils,
                delta_node: None,
            },
        }
    }

    #[test]
    fn header_is_fixed() {
        let mut buf = Vec::new();
        write_trials_csv(&[row("a", 0, 0.9, None)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "dataset,method,seed,coverage,length,corr,hsic,wsc,delta_wsc,delta_ils,delta_node"
        );
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "d,a,0,0.9,1,0.1,0.2,0.8,0.1,,"
        );
    }

    #[test]
    fn aggregation_keeps_first_appearance_order() {
        let rows = vec![
            row("b", 0, 0.0, Some(0.1)),
            row("a", 0, 1.0, None),
            row("b", 1, 1.0, Some(0.3)),
            row("a", 1, 1.0, None),
        ];
        let agg = aggregate_rows(&rows);
        assert_eq!(agg[0].method, "b");
        assert_eq!(agg[0].mean.coverage, 0.5);
        assert!((agg[0].se.as_ref().unwrap().coverage - 0.5 / 2f64.sqrt()).abs() < 1e-15);
        assert!((agg[0].mean.delta_ils.unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(agg[1].se.as_ref().unwrap().coverage, 0.0);
        assert_eq!(agg[1].mean.delta_ils, None);
        let mut buf = Vec::new();
        write_aggregate_csv(&agg, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(2).unwrap().starts_with("d,b,se,"));
    }

    #[test]
    fn single_trial_has_no_standard_error() {
        let agg = aggregate_rows(&[row("a", 3, 0.7, None)]);
        assert_eq!(agg[0].se, None);
        let mut buf = Vec::new();
        write_aggregate_csv(&agg, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(2).unwrap(), "d,a,se,,,,,,,,");
    }
}
