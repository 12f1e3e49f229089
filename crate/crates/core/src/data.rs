//! Datasets: the two-group synthetic generator with its analytic quantiles,
//! CSV ingestion, seeded splits and train-statistics preprocessing.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{check_len, check_level, Error, Result};
use crate::losses::{IntervalBatch, QuantileFunction};
use crate::rng;

/// Feature count of the synthetic task, including the group column.
pub const SYNTHETIC_DIM: usize = 50;
/// Probability of the majority group.
pub const MAJORITY_PROB: f64 = 0.8;
/// Multiplier of the heteroscedastic signal term.
pub const SIGNAL_SCALE: f64 = 0.03;
/// Upper bound of the uniform non-group features.
pub const FEATURE_MAX: f64 = 5.0;

/// Standard normal quantile function.
pub fn normal_quantile(tau: f64) -> f64 {
    Normal::standard().inverse_cdf(tau)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    /// Noise scale of the minority group.
    pub lambda: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n: usize, lambda: f64, seed: u64) -> Self {
        Self { n, lambda, seed }
    }

    /// The low-noise setting, `lambda = 3`.
    pub fn low(n: usize, seed: u64) -> Self {
        Self::new(n, 3.0, seed)
    }

    /// The high-noise setting, `lambda = 10`.
    pub fn high(n: usize, seed: u64) -> Self {
        Self::new(n, 10.0, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter(
                "synthetic n must be at least 1".into(),
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Exact conditional quantiles of the synthetic response.
///
/// Given `x`, the response is a zero-mean Gaussian with standard deviation
/// `0.03 beta'x` in group 0 and `sqrt((0.03 gamma'x)^2 + lambda^2)` in group 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleQuantiles {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub lambda: f64,
}

fn unit_uniform<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / norm).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl OracleQuantiles {
    /// Coefficients drawn from the spec seed; independent of `n`.
    pub fn from_spec(spec: &SyntheticSpec) -> Self {
        let mut r = rng::stream(spec.seed, "coefficients");
        let beta = unit_uniform(&mut r, SYNTHETIC_DIM);
        let gamma = unit_uniform(&mut r, SYNTHETIC_DIM);
        Self {
            beta,
            gamma,
            lambda: spec.lambda,
        }
    }

    fn is_minority(x: &[f64]) -> bool {
        x[0] >= 0.5
    }

    /// Conditional standard deviation of `y` at `x`.
    pub fn scale(&self, x: &[f64]) -> f64 {
        if Self::is_minority(x) {
            (SIGNAL_SCALE * dot(&self.gamma, x)).hypot(self.lambda)
        } else {
            SIGNAL_SCALE * dot(&self.beta, x)
        }
    }

    pub fn quantile(&self, x: &[f64], tau: f64) -> f64 {
        self.scale(x) * normal_quantile(tau)
    }

    /// `[q_{alpha/2}(x), q_{1-alpha/2}(x)]`.
    pub fn interval(&self, x: &[f64], alpha: f64) -> (f64, f64) {
        let s = self.scale(x);
        (
            s * normal_quantile(alpha / 2.0),
            s * normal_quantile(1.0 - alpha / 2.0),
        )
    }

    /// Draw a response at `x` from the generative model.
    pub fn sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> f64 {
        let e1: f64 = rng.sample(StandardNormal);
        let e2: f64 = rng.sample(StandardNormal);
        if Self::is_minority(x) {
            SIGNAL_SCALE * dot(&self.gamma, x) * e1 + self.lambda * e2
        } else {
            SIGNAL_SCALE * dot(&self.beta, x) * e1
        }
    }

    /// Oracle intervals for every row of `x` (original feature units).
    pub fn intervals(&self, x: ArrayView2<f64>, y: &[f64], alpha: f64) -> Result<IntervalBatch> {
        check_level("alpha", alpha)?;
        check_len(x.nrows(), y.len())?;
        let (lo, hi) = x
            .outer_iter()
            .map(|row| self.interval(row.as_slice().expect("row-major"), alpha))
            .unzip();
        IntervalBatch::new(lo, hi, y.to_vec())
    }
}

impl QuantileFunction for OracleQuantiles {
    fn quantiles(&self, x: ArrayView2<f64>, taus: &[f64]) -> Result<Vec<f64>> {
        check_len(x.nrows(), taus.len())?;
        Ok(x.outer_iter()
            .zip(taus)
            .map(|(row, &t)| self.quantile(&row.to_vec(), t))
            .collect())
    }
}

/// `[q_{alpha/2}(x), q_{1-alpha/2}(x)]` of the synthetic model.
pub fn oracle_interval(x: &[f64], alpha: f64, oracle: &OracleQuantiles) -> Result<(f64, f64)> {
    check_level("alpha", alpha)?;
    if x.len() != SYNTHETIC_DIM {
        return Err(Error::DimensionMismatch {
            layer: "oracle input".into(),
            expected: SYNTHETIC_DIM,
            actual: x.len(),
        });
    }
    Ok(oracle.interval(x, alpha))
}

/// Disjoint row-index sets.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    #[serde(default)]
    pub calibration: Vec<usize>,
}

impl Split {
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self
            .train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .chain(&self.calibration)
        {
            if i >= n {
                return Err(Error::InvalidParameter(format!(
                    "split index {i} out of bounds for {n} rows"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidParameter(format!(
                    "row {i} appears in two split sets"
                )));
            }
        }
        Ok(())
    }
}

/// Split proportions in the order train, validation, test, calibration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    #[serde(default)]
    pub calibration: f64,
}

impl Fractions {
    pub fn new(train: f64, validation: f64, test: f64) -> Self {
        Self {
            train,
            validation,
            test,
            calibration: 0.0,
        }
    }

    /// 72% / 8% / 20%.
    pub fn synthetic() -> Self {
        Self::new(0.72, 0.08, 0.20)
    }

    /// 54% / 6% / 40%.
    pub fn real() -> Self {
        Self::new(0.54, 0.06, 0.40)
    }

    /// 54% / 6% / 20% test / 20% calibration.
    pub fn conformal() -> Self {
        Self {
            calibration: 0.20,
            ..Self::new(0.54, 0.06, 0.20)
        }
    }

    fn as_array(&self) -> [f64; 4] {
        [self.train, self.validation, self.test, self.calibration]
    }

    pub fn validate(&self) -> Result<()> {
        let parts = self.as_array();
        if parts.iter().any(|f| f.is_nan() || *f < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "negative split fraction in {parts:?}"
            )));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "split fractions sum to {total}, expected 1"
            )));
        }
        Ok(())
    }

    /// Set sizes from rounded cumulative boundaries; they always sum to `n`.
    pub fn sizes(&self, n: usize) -> [usize; 4] {
        let parts = self.as_array();
        let last = parts.iter().rposition(|&f| f > 0.0).unwrap_or(0);
        let mut sizes = [0; 4];
        let mut cum = 0.0;
        let mut prev = 0;
        for (k, f) in parts.iter().enumerate() {
            cum += f;
            let bound = if k >= last {
                n
            } else {
                ((cum * n as f64).round() as usize).min(n)
            };
            sizes[k] = bound - prev;
            prev = bound;
        }
        sizes
    }
}

/// Training-split statistics used to standardize features and response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
    /// Training minimum subtracted before `log(y - min + 1)`, when enabled.
    pub y_log_shift: Option<f64>,
}

impl Preprocessing {
    pub fn transform_x(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.x_mean.len() {
            return Err(Error::DimensionMismatch {
                layer: "preprocessing".into(),
                expected: self.x_mean.len(),
                actual: x.ncols(),
            });
        }
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - self.x_mean[j]) / self.x_std[j]);
        }
        Ok(out)
    }

    pub fn restore_x(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| v * self.x_std[j] + self.x_mean[j]);
        }
        out
    }

    fn log_y(&self, y: f64) -> f64 {
        match self.y_log_shift {
            Some(shift) => (y - shift + 1.0).ln(),
            None => y,
        }
    }

    pub fn transform_y(&self, y: f64) -> f64 {
        (self.log_y(y) - self.y_mean) / self.y_std
    }

    /// Map a standardized response (or quantile) back to original units.
    pub fn restore_y(&self, z: f64) -> f64 {
        let v = z * self.y_std + self.y_mean;
        match self.y_log_shift {
            Some(shift) => v.exp() - 1.0 + shift,
            None => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x: Array2<f64>,
    pub y: Vec<f64>,
    pub group: Option<Vec<u32>>,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub split: Split,
    pub preprocessing: Option<Preprocessing>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, x: Array2<f64>, y: Vec<f64>) -> Result<Self> {
        check_len(x.nrows(), y.len())?;
        let feature_names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        Ok(Self {
            name: name.into(),
            x,
            y,
            group: None,
            feature_names,
            target_name: "y".into(),
            split: Split::default(),
            preprocessing: None,
        })
    }

    pub fn with_group(mut self, group: Vec<u32>) -> Result<Self> {
        check_len(self.y.len(), group.len())?;
        self.group = Some(group);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn rows(&self, idx: &[usize]) -> Array2<f64> {
        self.x.select(Axis(0), idx)
    }

    pub fn targets(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.y[i]).collect()
    }

    pub fn groups(&self, idx: &[usize]) -> Option<Vec<u32>> {
        self.group
            .as_ref()
            .map(|g| idx.iter().map(|&i| g[i]).collect())
    }

    /// Responses of `idx` in original units.
    pub fn original_targets(&self, idx: &[usize]) -> Vec<f64> {
        match &self.preprocessing {
            Some(p) => idx.iter().map(|&i| p.restore_y(self.y[i])).collect(),
            None => self.targets(idx),
        }
    }

    /// Features of `idx` in original units.
    pub fn original_rows(&self, idx: &[usize]) -> Array2<f64> {
        let rows = self.rows(idx);
        match &self.preprocessing {
            Some(p) => p.restore_x(rows.view()),
            None => rows,
        }
    }

    /// Write features and target with a header row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.feature_names.clone();
        header.push(self.target_name.clone());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for (row, y) in self.x.outer_iter().zip(&self.y) {
            record.clear();
            record.extend(row.iter().map(|v| v.to_string()));
            record.push(y.to_string());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Draw a synthetic dataset. Column 0 is the group indicator.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, OracleQuantiles)> {
    spec.validate()?;
    let oracle = OracleQuantiles::from_spec(spec);
    let mut r = rng::stream(spec.seed, "rows");
    let feature = Uniform::new(0.0, FEATURE_MAX).expect("valid range");
    let mut x = Array2::zeros((spec.n, SYNTHETIC_DIM));
    let mut y = Vec::with_capacity(spec.n);
    let mut group = Vec::with_capacity(spec.n);
    for (i, mut row) in x.outer_iter_mut().enumerate() {
        let g = u32::from(r.random::<f64>() >= MAJORITY_PROB);
        row[0] = f64::from(g);
        for v in row.iter_mut().skip(1) {
            *v = r.sample(feature);
        }
        y.push(oracle.sample(row.as_slice().expect("row-major"), &mut r));
        group.push(g);
        debug_assert_eq!(group.len(), i + 1);
    }
    let name = format!("synthetic_lambda{}", spec.lambda);
    let ds = Dataset::new(name, x, y)?.with_group(group)?;
    Ok((ds, oracle))
}

/// Random partition of the rows according to `fractions`.
pub fn split(dataset: &Dataset, fractions: &Fractions, seed: u64) -> Result<Dataset> {
    fractions.validate()?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng::stream(seed, rng::SPLIT));
    let sizes = fractions.sizes(dataset.len());
    let mut parts = Vec::with_capacity(4);
    let mut start = 0;
    for s in sizes {
        parts.push(order[start..start + s].to_vec());
        start += s;
    }
    let mut out = dataset.clone();
    out.split = Split {
        calibration: parts.pop().unwrap_or_default(),
        test: parts.pop().unwrap_or_default(),
        validation: parts.pop().unwrap_or_default(),
        train: parts.pop().unwrap_or_default(),
    };
    Ok(out)
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn nonzero_std(std: f64, mean: f64, column: &str) -> Result<f64> {
    if std.is_nan() || std <= 1e-12 * mean.abs().max(1.0) {
        return Err(Error::ZeroVariance {
            column: column.to_string(),
        });
    }
    Ok(std)
}

/// Optional log transform of `y`, then z-scores of every feature column and
/// of `y`, all using training-split statistics.
pub fn preprocess(dataset: &Dataset, log_transform_y: bool) -> Result<Dataset> {
    let train = &dataset.split.train;
    if train.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    dataset.split.validate(dataset.len())?;
    let y_log_shift = log_transform_y.then(|| {
        train
            .iter()
            .map(|&i| dataset.y[i])
            .fold(f64::INFINITY, f64::min)
    });
    let mut p = Preprocessing {
        x_mean: Vec::with_capacity(dataset.dim()),
        x_std: Vec::with_capacity(dataset.dim()),
        y_mean: 0.0,
        y_std: 1.0,
        y_log_shift,
    };
    for (j, col) in dataset.x.axis_iter(Axis(1)).enumerate() {
        let (m, s) = mean_std(train.iter().map(|&i| col[i]));
        p.x_mean.push(m);
        p.x_std.push(nonzero_std(s, m, &dataset.feature_names[j])?);
    }
    let (m, s) = mean_std(train.iter().map(|&i| p.log_y(dataset.y[i])));
    p.y_mean = m;
    p.y_std = nonzero_std(s, m, &dataset.target_name)?;

    let x = p.transform_x(dataset.x.view())?;
    let mut y = Vec::with_capacity(dataset.len());
    for (i, &v) in dataset.y.iter().enumerate() {
        let z = p.transform_y(v);
        if !z.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "log transform of `{}` is undefined at row {i} (value {v})",
                dataset.target_name
            )));
        }
        y.push(z);
    }
    Ok(Dataset {
        x,
        y,
        preprocessing: Some(p),
        ..dataset.clone()
    })
}

/// Column roles of a CSV dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub target: String,
    /// Column holding a nonnegative integer group id; it stays a feature.
    #[serde(default)]
    pub group: Option<String>,
    #[serde(default)]
    pub log_transform_y: bool,
}

impl CsvSchema {
    pub fn new(target: impl Into<String>) -> Self {
        Self {
            target: target.into(),
            group: None,
            log_transform_y: false,
        }
    }
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::NonNumeric {
        row,
        column: column.to_string(),
        value: cell.to_string(),
    })?;
    if !v.is_finite() {
        return Err(Error::NonNumeric {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        });
    }
    Ok(v)
}

/// Parse a headed CSV; every column but the target becomes a feature.
/// Row numbers in errors count data rows from 1.
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema, name: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let target = header
        .iter()
        .position(|h| *h == schema.target)
        .ok_or_else(|| Error::MissingColumn(schema.target.clone()))?;
    let group_col = match &schema.group {
        Some(g) => Some(
            header
                .iter()
                .position(|h| h == g)
                .ok_or_else(|| Error::MissingColumn(g.clone()))?,
        ),
        None => None,
    };
    let features: Vec<usize> = (0..header.len()).filter(|&j| j != target).collect();
    let mut values = Vec::new();
    let mut y = Vec::new();
    let mut group = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for &j in &features {
            values.push(parse_cell(&record[j], row, &header[j])?);
        }
        y.push(parse_cell(&record[target], row, &header[target])?);
        if let Some(g) = group_col {
            let v = parse_cell(&record[g], row, &header[g])?;
            if v < 0.0 || v.fract() != 0.0 || v > f64::from(u32::MAX) {
                return Err(Error::NonNumeric {
                    row,
                    column: header[g].clone(),
                    value: record[g].to_string(),
                });
            }
            group.push(v as u32);
        }
    }
    let x = Array2::from_shape_vec((y.len(), features.len()), values)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut ds = Dataset::new(name, x, y)?;
    ds.feature_names = features.iter().map(|&j| header[j].clone()).collect();
    ds.target_name = header[target].clone();
    if group_col.is_some() {
        ds = ds.with_group(group)?;
    }
    Ok(ds)
}

/// Load a CSV file; the dataset is named after the file stem.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), schema, &name)
}
