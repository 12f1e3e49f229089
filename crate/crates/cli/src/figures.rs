//! Plot data from a finished run directory.
//!
//! `figure1_<method>_seed<k>.csv` holds per-epoch coverage in long format;
//! `figure2_<method>.csv` bins pooled test rows by interval length.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::run::{create_dir, create_file, TraceEntry};

pub const FIGURE1_COLUMNS: [&str; 6] = [
    "epoch",
    "split",
    "group",
    "method",
    "coverage",
    "is_best_epoch",
];
pub const FIGURE2_BINS: usize = 100;

#[derive(Debug, Deserialize)]
struct IndexRow {
    method: String,
    seed: u64,
    best_epoch: usize,
}

impl From<IndexRow> for TraceEntry {
    fn from(r: IndexRow) -> Self {
        Self {
            method: r.method,
            seed: r.seed,
            best_epoch: r.best_epoch,
            epochs: 0,
        }
    }
}

/// One length bin of pooled test rows.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LengthBin {
    pub bin: usize,
    pub count: usize,
    pub mean_length: f64,
    pub coverage: f64,
}

/// Sort rows by length and cut them into `bins` nearly equal consecutive
/// bins; bin `b` holds sorted positions `b n / bins .. (b + 1) n / bins`.
pub fn bin_by_length(lengths: &[f64], covered: &[bool], bins: usize) -> Vec<LengthBin> {
    let n = lengths.len();
    let bins = bins.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lengths[a].total_cmp(&lengths[b]).then(a.cmp(&b)));
    (0..bins)
        .map(|b| {
            let rows = &order[b * n / bins..(b + 1) * n / bins];
            let count = rows.len();
            LengthBin {
                bin: b,
                count,
                mean_length: rows.iter().map(|&i| lengths[i]).sum::<f64>() / count as f64,
                coverage: rows.iter().filter(|&&i| covered[i]).count() as f64 / count as f64,
            }
        })
        .collect()
}

fn read_index(run: &Path) -> Result<Vec<TraceEntry>> {
    let path = run.join("traces").join("index.csv");
    if !path.is_file() {
        return Err(CliError::MissingTraces(run.to_path_buf()));
    }
    let mut rdr = csv::Reader::from_path(&path)?;
    let rows = rdr
        .deserialize::<IndexRow>()
        .map(|r| r.map(TraceEntry::from))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if rows.is_empty() {
        return Err(CliError::MissingTraces(run.to_path_buf()));
    }
    Ok(rows)
}

/// Rewrite one trace as figure-1 rows, keeping epochs with a coverage value.
fn figure1(trace: &Path, entry: &TraceEntry, out: &Path) -> Result<()> {
    if !trace.is_file() {
        return Err(CliError::MissingTraces(trace.to_path_buf()));
    }
    let mut rdr = csv::Reader::from_path(trace)?;
    let mut w = csv::Writer::from_writer(create_file(out)?);
    w.write_record(FIGURE1_COLUMNS)?;
    for rec in rdr.records() {
        let rec = rec?;
        let (epoch, split, group, coverage) = (&rec[0], &rec[1], &rec[2], &rec[3]);
        if coverage.is_empty() {
            continue;
        }
        let best = epoch.parse::<usize>().is_ok_and(|e| e == entry.best_epoch);
        w.write_record([
            epoch,
            split,
            group,
            &entry.method,
            coverage,
            if best { "1" } else { "0" },
        ])?;
    }
    w.flush().map_err(|e| CliError::io(out, e))
}

/// Parse `<label>_seed<k>.csv`.
fn interval_file_label(name: &str) -> Option<(String, u64)> {
    let stem = name.strip_suffix(".csv")?;
    let (label, seed) = stem.rsplit_once("_seed")?;
    Some((label.to_string(), seed.parse().ok()?))
}

fn read_lengths(path: &Path, lengths: &mut Vec<f64>, covered: &mut Vec<bool>) -> Result<()> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Config(format!("{}: missing column {name}", path.display())))
    };
    let (lo, hi, y) = (col("lo")?, col("hi")?, col("y")?);
    for rec in rdr.records() {
        let rec = rec?;
        let num = |k: usize| {
            rec[k].parse::<f64>().map_err(|_| {
                CliError::Config(format!(
                    "{}: non-numeric value {:?}",
                    path.display(),
                    &rec[k]
                ))
            })
        };
        let (l, h, v) = (num(lo)?, num(hi)?, num(y)?);
        lengths.push(h - l);
        covered.push(l <= v && v <= h);
    }
    Ok(())
}

/// Write both figure datasets under `out` (default `<run>/figures`).
pub fn figures(run: &Path, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let index = read_index(run)?;
    let out = out.map_or_else(|| run.join("figures"), Path::to_path_buf);
    create_dir(&out)?;
    let mut written = Vec::new();
    for entry in &index {
        let stem = format!("{}_seed{}", entry.method, entry.seed);
        let path = out.join(format!("figure1_{stem}.csv"));
        figure1(
            &run.join("traces").join(format!("{stem}.csv")),
            entry,
            &path,
        )?;
        written.push(path);
    }

    let mut files: BTreeMap<String, Vec<(u64, PathBuf)>> = BTreeMap::new();
    let dir = run.join("intervals");
    if dir.is_dir() {
        for e in fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))? {
            let e = e.map_err(|e| CliError::io(&dir, e))?;
            if let Some((label, seed)) = e.file_name().to_str().and_then(interval_file_label) {
                files.entry(label).or_default().push((seed, e.path()));
            }
        }
    }
    for (label, mut paths) in files {
        paths.sort();
        let (mut lengths, mut covered) = (Vec::new(), Vec::new());
        for (_, p) in &paths {
            read_lengths(p, &mut lengths, &mut covered)?;
        }
        if lengths.is_empty() {
            continue;
        }
        let path = out.join(format!("figure2_{label}.csv"));
        let mut w = csv::Writer::from_writer(create_file(&path)?);
        for b in bin_by_length(&lengths, &covered, FIGURE2_BINS) {
            w.serialize(b)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
