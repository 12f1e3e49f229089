//! Metrics for intervals produced elsewhere.
//!
//! Input is a headed CSV with `lo`, `hi` and `y` columns, an optional
//! integer `group` column and an ignored `row` column. Every other column
//! is a numeric feature used by the slab and tree metrics.

use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use oqr::losses::IntervalBatch;
use oqr::metrics::{
    compare_pair, corr_metric, coverage, group_metrics, hsic_metric, mean_length, wsc, EvalConfig,
    GroupMetrics, PairMetrics,
};
use serde::Serialize;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AuditInput {
    pub intervals: IntervalBatch,
    pub groups: Option<Vec<u32>>,
    pub feature_names: Vec<String>,
    pub x: Array2<f64>,
}

fn bad(msg: impl std::fmt::Display) -> CliError {
    CliError::Config(msg.to_string())
}

pub fn read_intervals<R: Read>(reader: R) -> Result<AuditInput> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let need = |name: &str| {
        find(name).ok_or_else(|| bad(format!("intervals file lacks a {name:?} column")))
    };
    let (lo_col, hi_col, y_col) = (need("lo")?, need("hi")?, need("y")?);
    let group_col = find("group");
    let reserved = [
        Some(lo_col),
        Some(hi_col),
        Some(y_col),
        group_col,
        find("row"),
    ];
    let features: Vec<usize> = (0..header.len())
        .filter(|c| !reserved.contains(&Some(*c)))
        .collect();
    for (i, h) in header.iter().enumerate() {
        if header[..i].contains(h) {
            return Err(bad(format!("duplicate column {h:?}")));
        }
    }

    let (mut lo, mut hi, mut y, mut x) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut groups = group_col.map(|_| Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            let cell = rec.get(c).unwrap_or("").trim();
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    bad(format!(
                        "row {}: column {:?} is not a finite number: {cell:?}",
                        r + 1,
                        header[c]
                    ))
                })
        };
        lo.push(num(lo_col)?);
        hi.push(num(hi_col)?);
        y.push(num(y_col)?);
        for &c in &features {
            x.push(num(c)?);
        }
        if let (Some(g), Some(c)) = (groups.as_mut(), group_col) {
            let cell = rec.get(c).unwrap_or("").trim();
            g.push(cell.parse::<u32>().map_err(|_| {
                bad(format!(
                    "row {}: group {cell:?} is not a nonnegative integer",
                    r + 1
                ))
            })?);
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(bad("intervals file has no rows"));
    }
    if lo.iter().zip(&hi).any(|(l, h)| l > h) {
        return Err(bad("intervals file has rows with lo > hi"));
    }
    Ok(AuditInput {
        intervals: IntervalBatch::new(lo, hi, y)?,
        groups,
        feature_names: features.iter().map(|&c| header[c].clone()).collect(),
        x: Array2::from_shape_vec((n, features.len()), x).expect("row-major feature buffer"),
    })
}

pub fn load_intervals(path: &Path) -> Result<AuditInput> {
    let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_intervals(std::io::BufReader::new(f))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub n: usize,
    pub coverage: f64,
    pub length: f64,
    pub corr: f64,
    pub hsic: f64,
    /// Present when the file has feature columns.
    pub wsc: Option<f64>,
    pub delta_wsc: Option<f64>,
    pub groups: Vec<GroupMetrics>,
    /// Present when a baseline file was given.
    pub pair: Option<PairMetrics>,
}

/// Marginal, dependence and slab metrics, plus ILS metrics against an
/// optional baseline on the same rows.
pub fn audit(
    input: &AuditInput,
    baseline: Option<&AuditInput>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<AuditReport> {
    let b = &input.intervals;
    let cov = coverage(b);
    let has_x = input.x.ncols() > 0;
    let w = if has_x {
        Some(wsc(input.x.view(), &b.covered(), &cfg.wsc, seed)?)
    } else {
        None
    };
    let pair = match baseline {
        Some(base) => {
            if base.intervals.len() != b.len() {
                return Err(bad(format!(
                    "baseline has {} rows, audited file has {}",
                    base.intervals.len(),
                    b.len()
                )));
            }
            if base.intervals.y != b.y {
                return Err(bad("baseline responses differ from the audited file"));
            }
            if !has_x {
                return Err(bad("pair metrics need feature columns"));
            }
            Some(compare_pair(input.x.view(), &base.intervals, b, &cfg.tree)?)
        }
        None => None,
    };
    Ok(AuditReport {
        n: b.len(),
        coverage: cov,
        length: mean_length(b),
        corr: corr_metric(b)?,
        hsic: hsic_metric(b)?,
        wsc: w,
        delta_wsc: w.map(|w| (w - cov).abs()),
        groups: match &input.groups {
            Some(g) => group_metrics(b, g)?,
            None => Vec::new(),
        },
        pair,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_roles() {
        let text = "row,x1,lo,hi,y,group,x2\n0,1.5,0,1,0.5,0,3\n1,2.5,0,2,3,1,4\n";
        let a = read_intervals(text.as_bytes()).unwrap();
        assert_eq!(a.feature_names, ["x1", "x2"]);
        assert_eq!(a.x.row(1).to_vec(), [2.5, 4.0]);
        assert_eq!(a.groups, Some(vec![0, 1]));
        assert_eq!(a.intervals.covered(), [true, false]);
    }

    #[test]
    fn rejects_malformed() {
        for text in [
            "lo,hi\n0,1\n",
            "lo,hi,y\n",
            "lo,hi,y\n0,1,nan\n",
            "lo,hi,y\n2,1,0\n",
            "lo,hi,y,group\n0,1,0,-1\n",
            "lo,hi,y,a,a\n0,1,0,1,1\n",
            "lo,hi,y\n0,1\n",
        ] {
            assert!(read_intervals(text.as_bytes()).is_err(), "{text:?}");
        }
    }

    #[test]
    fn metrics_without_features() {
        let a = read_intervals("lo,hi,y\n0,1,0.5\n0,2,3\n0,3,1\n0,4,5\n".as_bytes()).unwrap();
        let r = audit(&a, None, &EvalConfig::default(), 0).unwrap();
        assert_eq!((r.n, r.coverage, r.length), (4, 0.5, 2.5));
        assert_eq!(r.wsc, None);
        assert!(audit(&a, Some(&a), &EvalConfig::default(), 0).is_err());
    }
}
