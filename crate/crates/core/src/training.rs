//! Mini-batch training with early stopping on a validation risk.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Preprocessing};
use crate::error::{check_len, check_level, Error, Result};
use crate::losses::{
    interval_score, pinball_pair, AlphaSampling, IntervalBatch, LossKind, ObjectiveConfig,
    OrthogonalObjective, PenaltyKind, SMOOTH_SLOPE,
};
use crate::metrics::coverage;
use crate::nn::{self, AdamConfig, AdamState, Architecture, Batch, Checkpoint, Mlp, Mode};
use crate::rng;

/// What the early-stopping rule monitors on the validation split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationLoss {
    /// Quantile loss without the penalty.
    Base,
    /// The full penalized objective.
    Objective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub penalty: PenaltyKind,
    pub gamma: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub architecture: Architecture,
    pub smooth_slope: f64,
    pub alpha_sampling: AlphaSampling,
    /// Trailing batches smaller than this skip the penalty.
    pub min_penalty_batch: usize,
    pub validation_loss: ValidationLoss,
    /// Grid size for the interval-score validation risk.
    pub validation_levels: usize,
    /// Record train/test coverage per group after every epoch.
    pub track_coverage: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Pinball,
            penalty: PenaltyKind::None,
            gamma: 0.0,
            alpha: 0.1,
            batch_size: 1024,
            adam: AdamConfig::default(),
            max_epochs: 10_000,
            patience: 200,
            seed: 0,
            architecture: Architecture::synthetic(),
            smooth_slope: SMOOTH_SLOPE,
            alpha_sampling: AlphaSampling::PerSample,
            min_penalty_batch: 64,
            validation_loss: ValidationLoss::Base,
            validation_levels: 10,
            track_coverage: false,
        }
    }
}

impl TrainConfig {
    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            loss: self.loss,
            penalty: self.penalty,
            gamma: self.gamma,
            alpha: self.alpha,
            smooth_slope: self.smooth_slope,
            alpha_sampling: self.alpha_sampling,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective().validate()?;
        if self.patience == 0 {
            return Err(Error::InvalidParameter(
                "patience must be at least 1".into(),
            ));
        }
        if self.batch_size == 0 || (self.gamma > 0.0 && self.batch_size < 2) {
            return Err(Error::InvalidParameter(format!(
                "batch size {} is too small",
                self.batch_size
            )));
        }
        if self.validation_levels == 0 {
            return Err(Error::InvalidParameter(
                "validation_levels must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.architecture.dropout) {
            return Err(Error::InvalidParameter(format!(
                "dropout must lie in [0, 1), got {}",
                self.architecture.dropout
            )));
        }
        Ok(())
    }
}

/// Coverage of one split (and group, when given) after an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub split: String,
    pub group: Option<u32>,
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub coverage: Vec<CoverageRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainTrace {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    /// Long format: `epoch, split, group, coverage, loss`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "split", "group", "coverage", "loss"])?;
        let group_name = |g: Option<u32>| g.map_or_else(|| "all".to_string(), |g| g.to_string());
        for e in &self.epochs {
            let epoch = e.epoch.to_string();
            let find = |split: &str| {
                e.coverage
                    .iter()
                    .find(|c| c.split == split && c.group.is_none())
                    .map(|c| c.coverage.to_string())
                    .unwrap_or_default()
            };
            w.write_record([
                &epoch,
                "train",
                "all",
                &find("train"),
                &e.train_loss.to_string(),
            ])?;
            w.write_record([
                &epoch,
                "validation",
                "all",
                &find("validation"),
                &e.validation_loss.to_string(),
            ])?;
            for c in &e.coverage {
                let covered_above =
                    c.group.is_none() && (c.split == "train" || c.split == "validation");
                if !covered_above {
                    w.write_record([
                        &epoch,
                        &c.split,
                        &group_name(c.group),
                        &c.coverage.to_string(),
                        "",
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// A trained network with the preprocessing needed to use it on raw data.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileModel {
    pub mlp: Mlp,
    pub preprocessing: Option<Preprocessing>,
    pub config: TrainConfig,
}

fn uncrossed(lo: Vec<f64>, hi: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    lo.into_iter()
        .zip(hi)
        .map(|(l, h)| if h < l { (h, l) } else { (l, h) })
        .unzip()
}

impl QuantileModel {
    /// Interval endpoints at `alpha/2` and `1 - alpha/2` for inputs already
    /// in model units, in model units.
    pub fn predict_scaled(&self, x: ArrayView2<f64>, alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        check_level("alpha", alpha)?;
        let n = x.nrows();
        let lo = self.mlp.quantiles(x, &vec![alpha / 2.0; n])?.to_vec();
        let hi = self.mlp.quantiles(x, &vec![1.0 - alpha / 2.0; n])?.to_vec();
        Ok(uncrossed(lo, hi))
    }

    fn restore(&self, (lo, hi): (Vec<f64>, Vec<f64>)) -> (Vec<f64>, Vec<f64>) {
        match &self.preprocessing {
            Some(p) => (
                lo.into_iter().map(|v| p.restore_y(v)).collect(),
                hi.into_iter().map(|v| p.restore_y(v)).collect(),
            ),
            None => (lo, hi),
        }
    }

    /// Interval endpoints for raw features, in original response units.
    pub fn predict_bounds(&self, x: ArrayView2<f64>, alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let scaled = match &self.preprocessing {
            Some(p) => self.predict_scaled(p.transform_x(x)?.view(), alpha)?,
            None => self.predict_scaled(x, alpha)?,
        };
        Ok(self.restore(scaled))
    }

    /// Intervals for raw features paired with raw responses.
    pub fn predict_intervals(
        &self,
        x: ArrayView2<f64>,
        y: &[f64],
        alpha: f64,
    ) -> Result<IntervalBatch> {
        check_len(x.nrows(), y.len())?;
        let (lo, hi) = self.predict_bounds(x, alpha)?;
        IntervalBatch::new(lo, hi, y.to_vec())
    }

    /// Intervals for rows of a (preprocessed) dataset, in original units.
    pub fn dataset_intervals(
        &self,
        dataset: &Dataset,
        rows: &[usize],
        alpha: f64,
    ) -> Result<IntervalBatch> {
        let scaled = self.predict_scaled(dataset.rows(rows).view(), alpha)?;
        let (lo, hi) = self.restore(scaled);
        IntervalBatch::new(lo, hi, dataset.original_targets(rows))
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::json!({
            "train": self.config,
            "preprocessing": self.preprocessing,
        });
        Ok(Checkpoint::from_model(&self.mlp, meta))
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let config = serde_json::from_value(ckpt.config.get("train").cloned().unwrap_or_default())
            .map_err(|e| Error::Checkpoint(format!("training config: {e}")))?;
        let preprocessing = serde_json::from_value(
            ckpt.config
                .get("preprocessing")
                .cloned()
                .unwrap_or_default(),
        )
        .map_err(|e| Error::Checkpoint(format!("preprocessing: {e}")))?;
        Ok(Self {
            mlp: ckpt.into_model()?,
            preprocessing,
            config,
        })
    }
}

/// Mean base loss over `(x, y)` in eval mode.
///
/// Pinball runs use the training levels; interval-score runs average the
/// score over a midpoint grid of miscoverage levels.
pub fn base_risk(mlp: &Mlp, x: ArrayView2<f64>, y: &[f64], config: &TrainConfig) -> Result<f64> {
    check_len(x.nrows(), y.len())?;
    let n = y.len();
    if n == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let alphas: Vec<f64> = match config.loss {
        LossKind::Pinball => vec![config.alpha],
        LossKind::IntervalScore => {
            let k = config.validation_levels;
            (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect()
        }
    };
    let mut total = 0.0;
    for &a in &alphas {
        let lo = mlp.quantiles(x, &vec![a / 2.0; n])?;
        let hi = mlp.quantiles(x, &vec![1.0 - a / 2.0; n])?;
        total += (0..n)
            .map(|i| match config.loss {
                LossKind::Pinball => pinball_pair(y[i], lo[i], hi[i], a),
                LossKind::IntervalScore => interval_score(y[i], lo[i], hi[i], a),
            })
            .sum::<f64>();
    }
    Ok(total / (n * alphas.len()) as f64)
}

fn objective_risk(mlp: &Mlp, x: ArrayView2<f64>, y: &[f64], config: &TrainConfig) -> Result<f64> {
    let objective = OrthogonalObjective::new(config.objective());
    let mut levels = rng::stream(config.seed, "validation-levels");
    let (mut total, mut count) = (0.0, 0usize);
    let chunk = config.batch_size.max(2);
    for (index, start) in (0..y.len()).step_by(chunk).enumerate() {
        let end = (start + chunk).min(y.len());
        let batch = Batch {
            index,
            x: x.slice(ndarray::s![start..end, ..]),
            y: &y[start..end],
        };
        let mut obj = objective;
        obj.penalty_enabled = end - start >= config.min_penalty_batch.max(2);
        let v = nn::objective_value(
            mlp,
            &batch,
            &obj,
            Mode::Eval,
            &mut levels,
            &mut rng::stream(0, "unused"),
        )?;
        total += v * (end - start) as f64;
        count += end - start;
    }
    Ok(total / count as f64)
}

fn validation_risk(mlp: &Mlp, x: ArrayView2<f64>, y: &[f64], config: &TrainConfig) -> Result<f64> {
    match config.validation_loss {
        ValidationLoss::Base => base_risk(mlp, x, y, config),
        ValidationLoss::Objective => objective_risk(mlp, x, y, config),
    }
}

fn coverage_records(
    mlp: &Mlp,
    split: &str,
    x: ArrayView2<f64>,
    y: &[f64],
    groups: Option<&[u32]>,
    alpha: f64,
) -> Result<Vec<CoverageRecord>> {
    let n = y.len();
    let lo = mlp.quantiles(x, &vec![alpha / 2.0; n])?.to_vec();
    let hi = mlp.quantiles(x, &vec![1.0 - alpha / 2.0; n])?.to_vec();
    let (lo, hi) = uncrossed(lo, hi);
    let batch = IntervalBatch::new(lo, hi, y.to_vec())?;
    let mut out = vec![CoverageRecord {
        split: split.into(),
        group: None,
        coverage: coverage(&batch),
    }];
    if let Some(g) = groups {
        for gm in crate::metrics::group_metrics(&batch, g)? {
            out.push(CoverageRecord {
                split: split.into(),
                group: Some(gm.group),
                coverage: gm.coverage,
            });
        }
    }
    Ok(out)
}

struct SplitData {
    x: Array2<f64>,
    y: Vec<f64>,
    groups: Option<Vec<u32>>,
}

impl SplitData {
    fn new(ds: &Dataset, rows: &[usize]) -> Self {
        Self {
            x: ds.rows(rows),
            y: ds.targets(rows),
            groups: ds.groups(rows),
        }
    }
}

/// Fit a quantile network on the training split, keeping the parameters of
/// the epoch with the lowest validation risk.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(QuantileModel, TrainTrace)> {
    config.validate()?;
    let split = &dataset.split;
    split.validate(dataset.len())?;
    if split.train.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    if split.validation.is_empty() {
        return Err(Error::InvalidParameter(
            "training needs a nonempty validation split".into(),
        ));
    }
    let train = SplitData::new(dataset, &split.train);
    let valid = SplitData::new(dataset, &split.validation);
    let test = (config.track_coverage && !split.test.is_empty())
        .then(|| SplitData::new(dataset, &split.test));

    let mut mlp = Mlp::new(
        dataset.dim(),
        &config.architecture,
        &mut rng::stream(config.seed, rng::INIT),
    )?;
    let mut adam = AdamState::new(&mlp, config.adam);
    let mut shuffle_rng = rng::stream(config.seed, rng::SHUFFLE);
    let mut level_rng = rng::stream(config.seed, rng::LEVELS);
    let mut dropout_rng = rng::stream(config.seed, rng::DROPOUT);
    let objective = OrthogonalObjective::new(config.objective());

    let n = train.y.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = (f64::INFINITY, 0usize, mlp.clone());
    let mut epochs = Vec::new();
    let mut yb = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (index, chunk) in order.chunks(config.batch_size).enumerate() {
            let xb = train.x.select(Axis(0), chunk);
            yb.clear();
            yb.extend(chunk.iter().map(|&i| train.y[i]));
            let mut obj = objective;
            obj.penalty_enabled =
                chunk.len() == config.batch_size || chunk.len() >= config.min_penalty_batch;
            if chunk.len() < 2 {
                obj.penalty_enabled = false;
            }
            let batch = Batch {
                index,
                x: xb.view(),
                y: &yb,
            };
            let (value, grads) = nn::loss_gradients(
                &mlp,
                &batch,
                &obj,
                Mode::Train,
                &mut level_rng,
                &mut dropout_rng,
            )
            .map_err(|e| match e {
                Error::NonFiniteLoss { batch, .. } => Error::NonFiniteLoss {
                    epoch: Some(epoch),
                    batch,
                },
                other => other,
            })?;
            adam.step(&mut mlp, &grads)?;
            epoch_loss += value * chunk.len() as f64;
        }
        let validation_loss = validation_risk(&mlp, valid.x.view(), &valid.y, config)?;
        if !validation_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: Some(epoch),
                batch: 0,
            });
        }
        let mut cov = Vec::new();
        if config.track_coverage {
            cov.extend(coverage_records(
                &mlp,
                "train",
                train.x.view(),
                &train.y,
                train.groups.as_deref(),
                config.alpha,
            )?);
            if let Some(t) = &test {
                cov.extend(coverage_records(
                    &mlp,
                    "test",
                    t.x.view(),
                    &t.y,
                    t.groups.as_deref(),
                    config.alpha,
                )?);
            }
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / n as f64,
            validation_loss,
            coverage: cov,
        });
        if validation_loss < best.0 {
            best = (validation_loss, epoch, mlp.clone());
        }
        if epoch - best.1 >= config.patience {
            break;
        }
    }
    let model = QuantileModel {
        mlp: best.2,
        preprocessing: dataset.preprocessing.clone(),
        config: config.clone(),
    };
    Ok((
        model,
        TrainTrace {
            epochs,
            best_epoch: best.1,
        },
    ))
}

/// Penalty multipliers on record, by dataset name.
///
/// Returns 0 without a penalty. Pinball multipliers are scaled by 0.1
/// inside the objective, not here.
pub fn gamma_for(dataset_name: &str, loss: LossKind, penalty: PenaltyKind) -> Result<f64> {
    let name = dataset_name.to_ascii_lowercase();
    let unknown = || Error::UnknownDataset(dataset_name.to_string());
    let key = if name.starts_with("synthetic") {
        "synthetic"
    } else {
        name.as_str()
    };
    let value = match (penalty, loss) {
        (PenaltyKind::None, _) => return Ok(0.0),
        (PenaltyKind::Corr, LossKind::Pinball) => match key {
            "synthetic" | "facebook_1" | "facebook_2" | "blog_data" | "meps_19" | "meps_20"
            | "meps_21" => 0.5,
            "bio" | "kin8nm" | "naval" => 0.1,
            _ => return Err(unknown()),
        },
        (PenaltyKind::Hsic, LossKind::Pinball) => match key {
            "facebook_1" | "facebook_2" | "blog_data" | "meps_21" => 0.5,
            "bio" | "kin8nm" | "naval" | "meps_19" | "meps_20" => 0.1,
            _ => return Err(unknown()),
        },
        (PenaltyKind::Corr, LossKind::IntervalScore) => match key {
            "facebook_1" | "facebook_2" | "kin8nm" => 0.5,
            "blog_data" => 1.0,
            "bio" | "naval" => 0.1,
            "synthetic" | "meps_19" | "meps_20" | "meps_21" => 3.0,
            _ => return Err(unknown()),
        },
        (PenaltyKind::Hsic, LossKind::IntervalScore) => return Err(unknown()),
    };
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, preprocess, split, Fractions, SyntheticSpec};
    use crate::nn::Dense;
    use ndarray::{array, Array1};

    fn small_config() -> TrainConfig {
        TrainConfig {
            batch_size: 64,
            max_epochs: 30,
            patience: 5,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn small_dataset() -> Dataset {
        let (ds, _) = generate_synthetic(&SyntheticSpec::low(400, 1)).unwrap();
        preprocess(&split(&ds, &Fractions::synthetic(), 0).unwrap(), false).unwrap()
    }

    #[test]
    fn gamma_table_lookups() {
        assert_eq!(
            gamma_for("facebook_1", LossKind::Pinball, PenaltyKind::Corr).unwrap(),
            0.5
        );
        assert_eq!(
            gamma_for(
                "synthetic_lambda10",
                LossKind::IntervalScore,
                PenaltyKind::Corr
            )
            .unwrap(),
            3.0
        );
        assert_eq!(
            gamma_for("meps_19", LossKind::Pinball, PenaltyKind::Hsic).unwrap(),
            0.1
        );
        assert_eq!(
            gamma_for("blog_data", LossKind::IntervalScore, PenaltyKind::Corr).unwrap(),
            1.0
        );
        assert_eq!(
            gamma_for("anything", LossKind::Pinball, PenaltyKind::None).unwrap(),
            0.0
        );
        assert!(matches!(
            gamma_for("mystery", LossKind::Pinball, PenaltyKind::Corr),
            Err(Error::UnknownDataset(_))
        ));
        assert!(gamma_for("synthetic", LossKind::Pinball, PenaltyKind::Hsic).is_err());
    }

    #[test]
    fn zero_gamma_penalty_matches_vanilla() {
        let ds = small_dataset();
        let vanilla = train(&ds, &small_config()).unwrap();
        let cfg = TrainConfig {
            penalty: PenaltyKind::Corr,
            ..small_config()
        };
        let zeroed = train(&ds, &cfg).unwrap();
        assert_eq!(vanilla.0.mlp, zeroed.0.mlp);
        assert_eq!(vanilla.1, zeroed.1);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = small_dataset();
        let cfg = TrainConfig {
            penalty: PenaltyKind::Hsic,
            gamma: 0.5,
            loss: LossKind::IntervalScore,
            track_coverage: true,
            ..small_config()
        };
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.0.mlp, b.0.mlp);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn early_stopping_contract() {
        let ds = small_dataset();
        let cfg = TrainConfig {
            max_epochs: 400,
            patience: 3,
            adam: AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            ..small_config()
        };
        let (model, trace) = train(&ds, &cfg).unwrap();
        assert!(trace.epochs.len() <= trace.best_epoch + cfg.patience);
        let min = trace
            .epochs
            .iter()
            .map(|e| e.validation_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(trace.best().validation_loss, min);
        let valid_x = ds.rows(&ds.split.validation);
        let valid_y = ds.targets(&ds.split.validation);
        assert_eq!(
            base_risk(&model.mlp, valid_x.view(), &valid_y, &cfg).unwrap(),
            min
        );
    }

    #[test]
    fn constant_target_is_learned() {
        let n = 200;
        let x = Array2::from_shape_fn((n, 2), |(i, j)| ((i * (j + 3)) % 17) as f64 / 17.0);
        let mut ds = Dataset::new("const", x, vec![0.7; n]).unwrap();
        ds = split(&ds, &Fractions::new(0.8, 0.2, 0.0), 0).unwrap();
        let cfg = TrainConfig {
            batch_size: 32,
            max_epochs: 300,
            patience: 300,
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        };
        let (model, _) = train(&ds, &cfg).unwrap();
        let (lo, hi) = model.predict_bounds(ds.x.view(), 0.1).unwrap();
        for (l, h) in lo.iter().zip(&hi) {
            assert!((l - 0.7).abs() < 0.05 && (h - 0.7).abs() < 0.05, "{l} {h}");
        }
    }

    #[test]
    fn zero_network_gives_degenerate_intervals() {
        let mlp = Mlp::zeros(3, &Architecture::synthetic()).unwrap();
        let model = QuantileModel {
            mlp,
            preprocessing: None,
            config: TrainConfig::default(),
        };
        let x = Array2::from_elem((4, 3), 1.5);
        let b = model.predict_intervals(x.view(), &[0.0; 4], 0.1).unwrap();
        assert_eq!(b.lo, vec![0.0; 4]);
        assert_eq!(b.lengths(), vec![0.0; 4]);
    }

    /// A 1-feature ReLU network whose output is exactly
    /// `x + z_{0.95} (tau - 0.5) / 0.45`, i.e. the 5% and 95% quantiles of
    /// `y = x + N(0, 1)` at the two training levels.
    fn probe_model() -> Mlp {
        let slope = crate::data::normal_quantile(0.95) / 0.45;
        let first = Dense {
            weight: array![[1.0, 0.0], [0.0, 1.0]],
            bias: Array1::from(vec![100.0, 0.0]),
        };
        let second = Dense {
            weight: array![[1.0, 0.0], [0.0, 1.0]],
            bias: Array1::zeros(2),
        };
        let out = Dense {
            weight: array![[1.0], [slope]],
            bias: Array1::from(vec![-100.0 - 0.5 * slope]),
        };
        Mlp::from_layers(vec![first, second, out], 0.0).unwrap()
    }

    #[test]
    fn oracle_mimicking_model_covers() {
        let mlp = probe_model();
        let model = QuantileModel {
            mlp,
            preprocessing: None,
            config: TrainConfig::default(),
        };
        let mut r = rng::stream(11, "probe");
        use rand::Rng;
        let n = 20_000;
        let x = Array2::from_shape_fn((n, 1), |_| r.random::<f64>() * 4.0 - 2.0);
        let y: Vec<f64> = (0..n)
            .map(|i| x[[i, 0]] + r.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let b = model.predict_intervals(x.view(), &y, 0.1).unwrap();
        assert!((coverage(&b) - 0.9).abs() < 0.01);
    }

    #[test]
    fn inverse_transform_commutes() {
        let ds = small_dataset();
        let (model, _) = train(&ds, &small_config()).unwrap();
        let rows = &ds.split.test;
        let raw = ds.original_rows(rows);
        let via_raw = model.predict_bounds(raw.view(), 0.1).unwrap();
        let via_scaled = model.dataset_intervals(&ds, rows, 0.1).unwrap();
        for i in 0..rows.len() {
            assert!((via_raw.0[i] - via_scaled.lo[i]).abs() < 1e-9);
            assert!((via_raw.1[i] - via_scaled.hi[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trip_keeps_predictions() {
        let ds = small_dataset();
        let (model, _) = train(&ds, &small_config()).unwrap();
        let text = model.to_checkpoint().unwrap().to_json().unwrap();
        let back = QuantileModel::from_checkpoint(Checkpoint::from_json(&text).unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn trace_csv_layout() {
        let ds = small_dataset();
        let cfg = TrainConfig {
            max_epochs: 2,
            track_coverage: true,
            ..small_config()
        };
        let (_, trace) = train(&ds, &cfg).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,split,group,coverage,loss");
        assert!(lines[1].starts_with("1,train,all,"));
        assert!(lines[2].starts_with("1,validation,all,,"));
        assert!(lines.iter().any(|l| l.starts_with("2,test,1,")));
    }

    #[test]
    fn rejects_invalid_configs() {
        let ds = small_dataset();
        for cfg in [
            TrainConfig {
                patience: 0,
                ..small_config()
            },
            TrainConfig {
                gamma: -1.0,
                ..small_config()
            },
            TrainConfig {
                batch_size: 1,
                gamma: 0.5,
                penalty: PenaltyKind::Corr,
                ..small_config()
            },
            TrainConfig {
                alpha: 1.5,
                ..small_config()
            },
        ] {
            assert!(matches!(train(&ds, &cfg), Err(Error::InvalidParameter(_))));
        }
    }
}
