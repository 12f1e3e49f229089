//! Run specifications, read from TOML or JSON and adjusted by flags.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use oqr::data::{CsvSchema, Fractions, SyntheticSpec};
use oqr::losses::{LossKind, PenaltyKind};
use oqr::metrics::EvalConfig;
use oqr::nn::Architecture;
use oqr::training::{gamma_for, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

fn config_err(msg: impl std::fmt::Display) -> CliError {
    CliError::Config(msg.to_string())
}

/// Where trial data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_lambda")]
        lambda: f64,
        /// Seed of the generated sample; trial seeds only drive splits and training.
        #[serde(default = "default_data_seed")]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        target: String,
        #[serde(default)]
        group: Option<String>,
        #[serde(default)]
        log_transform_y: bool,
        /// Dataset name used for penalty lookup; defaults to the file stem.
        #[serde(default)]
        name: Option<String>,
    },
}

fn default_n() -> usize {
    7000
}

fn default_lambda() -> f64 {
    3.0
}

fn default_data_seed() -> u64 {
    1
}

impl DatasetSource {
    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        match self {
            Self::Synthetic { n, lambda, seed } => Some(SyntheticSpec::new(*n, *lambda, *seed)),
            Self::Csv { .. } => None,
        }
    }

    pub fn csv_schema(&self) -> Option<CsvSchema> {
        match self {
            Self::Csv {
                target,
                group,
                log_transform_y,
                ..
            } => Some(CsvSchema {
                target: target.clone(),
                group: group.clone(),
                log_transform_y: *log_transform_y,
            }),
            Self::Synthetic { .. } => None,
        }
    }

    pub fn is_synthetic(&self) -> bool {
        matches!(self, Self::Synthetic { .. })
    }
}

/// Penalty multiplier: a number, or `"auto"` for the per-dataset table.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum GammaSpec {
    #[default]
    Auto,
    Value(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GammaRepr {
    Value(f64),
    Keyword(String),
}

impl Serialize for GammaSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Auto => GammaRepr::Keyword("auto".into()),
            Self::Value(g) => GammaRepr::Value(*g),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GammaSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match GammaRepr::deserialize(d)? {
            GammaRepr::Value(g) if g.is_finite() && g >= 0.0 => Ok(Self::Value(g)),
            GammaRepr::Value(g) => Err(serde::de::Error::custom(format!(
                "gamma must be finite and nonnegative, got {g}"
            ))),
            GammaRepr::Keyword(k) if k == "auto" => Ok(Self::Auto),
            GammaRepr::Keyword(k) => Err(serde::de::Error::custom(format!(
                "gamma must be a number or \"auto\", got {k:?}"
            ))),
        }
    }
}

impl GammaSpec {
    fn check(&self) -> Result<()> {
        match self {
            Self::Value(g) if !(g.is_finite() && *g >= 0.0) => Err(config_err(format!(
                "gamma must be finite and nonnegative, got {g}"
            ))),
            _ => Ok(()),
        }
    }

    fn value(&self) -> Option<f64> {
        match self {
            Self::Value(g) => Some(*g),
            Self::Auto => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub loss: LossKind,
    pub penalty: PenaltyKind,
    #[serde(default)]
    pub gamma: GammaSpec,
}

impl MethodSpec {
    pub fn new(loss: LossKind, penalty: PenaltyKind) -> Self {
        Self {
            loss,
            penalty,
            gamma: GammaSpec::Auto,
        }
    }

    /// `pinball_vanilla`, `interval_score_corr`, ...
    pub fn label(&self) -> String {
        let penalty = match self.penalty {
            PenaltyKind::None => "vanilla",
            PenaltyKind::Corr => "corr",
            PenaltyKind::Hsic => "hsic",
        };
        format!("{}_{penalty}", loss_name(self.loss))
    }

    /// Multiplier after resolving `auto` against the dataset name.
    pub fn resolve_gamma(&self, dataset: &str) -> Result<f64> {
        if self.penalty == PenaltyKind::None {
            return Ok(0.0);
        }
        match self.gamma.value() {
            Some(g) => Ok(g),
            None => gamma_for(dataset, self.loss, self.penalty)
                .map_err(|e| config_err(format!("{e}; set gamma explicitly for {}", self.label()))),
        }
    }
}

pub fn loss_name(loss: LossKind) -> &'static str {
    match loss {
        LossKind::Pinball => "pinball",
        LossKind::IntervalScore => "interval_score",
    }
}

pub fn parse_loss(s: &str) -> Result<LossKind> {
    match s.replace('-', "_").as_str() {
        "pinball" => Ok(LossKind::Pinball),
        "interval_score" | "interval" => Ok(LossKind::IntervalScore),
        _ => Err(config_err(format!(
            "unknown loss {s:?}; expected pinball or interval_score"
        ))),
    }
}

pub fn parse_penalty(s: &str) -> Result<PenaltyKind> {
    match s {
        "none" | "vanilla" => Ok(PenaltyKind::None),
        "corr" => Ok(PenaltyKind::Corr),
        "hsic" => Ok(PenaltyKind::Hsic),
        _ => Err(config_err(format!(
            "unknown penalty {s:?}; expected none, corr or hsic"
        ))),
    }
}

/// Seeds as `a..b` (exclusive), `a-b` (inclusive), or a comma list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let num = |t: &str| {
        t.trim()
            .parse::<u64>()
            .map_err(|_| config_err(format!("invalid seed {t:?} in {s:?}")))
    };
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b)?);
        return Ok((a..b).collect());
    }
    if let Some((a, b)) = s.split_once('-') {
        let (a, b) = (num(a)?, num(b)?);
        return Ok((a..=b).collect());
    }
    s.split(',').map(num).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Text(String),
}

impl Default for SeedSpec {
    fn default() -> Self {
        Self::List((0..30).collect())
    }
}

impl SeedSpec {
    pub fn seeds(&self) -> Result<Vec<u64>> {
        match self {
            Self::List(v) => Ok(v.clone()),
            Self::Text(s) => parse_seeds(s),
        }
    }
}

/// A full experiment: one dataset, a method matrix and a seed list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub seeds: SeedSpec,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Also report split-conformal intervals, using a calibration split.
    #[serde(default)]
    pub conformalize: bool,
    #[serde(default)]
    pub fractions: Option<Fractions>,
    /// Overrides applied to the default training configuration.
    #[serde(default)]
    pub training: Map<String, Value>,
    #[serde(default)]
    pub evaluation: EvalConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Write a checkpoint per trained model.
    #[serde(default)]
    pub save_models: bool,
    /// Worker threads; defaults to the number of logical cores.
    #[serde(default)]
    pub jobs: Option<usize>,
}

fn default_alpha() -> f64 {
    0.1
}

/// Flag values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seeds: Option<String>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub gamma: Option<f64>,
    pub penalty: Option<String>,
    pub loss: Option<String>,
    pub conformalize: bool,
}

impl RunConfig {
    pub fn new(dataset: DatasetSource) -> Self {
        Self {
            dataset,
            methods: Vec::new(),
            seeds: SeedSpec::default(),
            alpha: default_alpha(),
            conformalize: false,
            fractions: None,
            training: Map::new(),
            evaluation: EvalConfig::default(),
            output: None,
            save_models: false,
            jobs: None,
        }
    }

    pub fn parse(text: &str, json: bool) -> Result<Self> {
        if json {
            serde_json::from_str(text).map_err(config_err)
        } else {
            toml::from_str(text).map_err(config_err)
        }
    }

    /// Read a `.json` or TOML file; relative CSV paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg = Self::parse(&text, json)?;
        if let DatasetSource::Csv { path: csv, .. } = &mut cfg.dataset {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = &o.seeds {
            self.seeds = SeedSpec::List(parse_seeds(s)?);
        }
        if let Some(out) = &o.out {
            self.output = Some(out.clone());
        }
        if o.jobs.is_some() {
            self.jobs = o.jobs;
        }
        if o.conformalize {
            self.conformalize = true;
        }
        let loss = o.loss.as_deref().map(parse_loss).transpose()?;
        let penalty = o.penalty.as_deref().map(parse_penalty).transpose()?;
        if loss.is_some() || penalty.is_some() || o.gamma.is_some() {
            let mut methods = self.method_matrix();
            for m in &mut methods {
                if let Some(l) = loss {
                    m.loss = l;
                }
                if m.penalty != PenaltyKind::None {
                    if let Some(p) = penalty {
                        m.penalty = p;
                    }
                    if let Some(g) = o.gamma {
                        m.gamma = GammaSpec::Value(g);
                    }
                }
            }
            let mut seen = BTreeSet::new();
            methods.retain(|m| seen.insert(m.label()));
            self.methods = methods;
        }
        Ok(())
    }

    /// Methods to run; vanilla and correlation-penalized pinball by default.
    pub fn method_matrix(&self) -> Vec<MethodSpec> {
        if self.methods.is_empty() {
            vec![
                MethodSpec::new(LossKind::Pinball, PenaltyKind::None),
                MethodSpec::new(LossKind::Pinball, PenaltyKind::Corr),
            ]
        } else {
            self.methods.clone()
        }
    }

    pub fn fractions(&self) -> Fractions {
        match (self.fractions, self.conformalize) {
            (Some(f), _) => f,
            (None, true) => Fractions::conformal(),
            (None, false) if self.dataset.is_synthetic() => Fractions::synthetic(),
            (None, false) => Fractions::real(),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output
            .clone()
            .unwrap_or_else(|| PathBuf::from("oqr-out"))
    }

    /// Defaults for this dataset kind with the `training` table merged in.
    pub fn base_training(&self) -> Result<TrainConfig> {
        let mut base = TrainConfig {
            alpha: self.alpha,
            track_coverage: true,
            ..TrainConfig::default()
        };
        if !self.dataset.is_synthetic() {
            base.architecture = Architecture::real();
        }
        let mut value = serde_json::to_value(&base)?;
        let Value::Object(fields) = &mut value else {
            unreachable!("training config serializes to an object");
        };
        for (key, v) in &self.training {
            match key.as_str() {
                "loss" | "penalty" | "gamma" | "seed" | "alpha" => {
                    return Err(config_err(format!(
                        "training.{key} is set per method or trial, not in the training table"
                    )))
                }
                _ if !fields.contains_key(key) => {
                    return Err(config_err(format!("unknown training option {key:?}")))
                }
                _ => {}
            }
            match (fields.get_mut(key), v) {
                (Some(Value::Object(dst)), Value::Object(src)) => {
                    for (k, x) in src {
                        if !dst.contains_key(k) {
                            return Err(config_err(format!("unknown training option {key}.{k}")));
                        }
                        dst.insert(k.clone(), x.clone());
                    }
                }
                _ => {
                    fields.insert(key.clone(), v.clone());
                }
            }
        }
        let cfg: TrainConfig =
            serde_json::from_value(value).map_err(|e| config_err(format!("training: {e}")))?;
        cfg.validate().map_err(config_err)?;
        Ok(cfg)
    }

    /// Check everything that does not need the data.
    pub fn validate(&self) -> Result<()> {
        let seeds = self.seeds.seeds()?;
        if seeds.is_empty() {
            return Err(config_err("seed list is empty"));
        }
        let distinct: BTreeSet<_> = seeds.iter().collect();
        if distinct.len() != seeds.len() {
            return Err(config_err("seeds must be distinct"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_err(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if let Some(spec) = self.dataset.synthetic_spec() {
            spec.validate().map_err(config_err)?;
        }
        let fractions = self.fractions();
        fractions.validate().map_err(config_err)?;
        if self.conformalize && fractions.calibration <= 0.0 {
            return Err(config_err(
                "conformalize needs a positive calibration fraction",
            ));
        }
        if self.jobs == Some(0) {
            return Err(config_err("jobs must be at least 1"));
        }
        let methods = self.method_matrix();
        let mut labels = BTreeSet::new();
        for m in &methods {
            m.gamma.check()?;
            if !labels.insert(m.label()) {
                return Err(config_err(format!("method {} listed twice", m.label())));
            }
        }
        self.base_training()?;
        Ok(())
    }
}
