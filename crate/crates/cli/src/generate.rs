//! Synthetic dataset export with the true conditional quantiles alongside.

use std::path::{Path, PathBuf};

use oqr::data::{generate_synthetic, SyntheticSpec};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::run::create_file;

/// What was written, echoed as JSON by the command.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenerateReport {
    #[serde(flatten)]
    pub spec: SyntheticSpec,
    pub alpha: f64,
    pub name: String,
    pub rows: usize,
    pub columns: usize,
    pub data: PathBuf,
    pub oracle: PathBuf,
}

/// `data.csv` -> `data_oracle.csv` in the same directory.
pub fn oracle_path(data: &Path) -> PathBuf {
    let stem = data.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    data.with_file_name(format!("{stem}_oracle.csv"))
}

/// Write the sample to `out` and its oracle interval at level `alpha`
/// (`row, scale, q_lo, q_hi`) to the sidecar file.
pub fn generate(spec: &SyntheticSpec, alpha: f64, out: &Path) -> Result<GenerateReport> {
    spec.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Config(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let (ds, oracle) = generate_synthetic(spec)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        crate::run::create_dir(dir)?;
    }
    ds.write_csv(create_file(out)?)?;

    let sidecar = oracle_path(out);
    let mut w = csv::Writer::from_writer(create_file(&sidecar)?);
    w.write_record(["row", "scale", "q_lo", "q_hi"])?;
    for (i, row) in ds.x.rows().into_iter().enumerate() {
        let x = row.to_vec();
        let (lo, hi) = oracle.interval(&x, alpha);
        w.write_record([
            i.to_string(),
            oracle.scale(&x).to_string(),
            lo.to_string(),
            hi.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&sidecar, e))?;

    Ok(GenerateReport {
        spec: spec.clone(),
        alpha,
        name: ds.name.clone(),
        rows: ds.len(),
        columns: ds.dim() + 1,
        data: out.to_path_buf(),
        oracle: sidecar,
    })
}
