//! The experiment runner: per-seed trials over the method matrix, then
//! aggregation into metric tables.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use oqr::conformal::{calibrate, conformalize};
use oqr::data::{generate_synthetic, load_csv, preprocess, split, Dataset};
use oqr::losses::{IntervalBatch, PenaltyKind};
use oqr::metrics::report::{
    aggregate_rows, write_aggregate_csv, write_trials_csv, AggregateRow, MetricValues, TrialRow,
};
use oqr::metrics::{compare_pair, evaluate, format_improvement, improvement_pct, PairMetrics};
use oqr::training::{train, TrainConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{MethodSpec, RunConfig};
use crate::error::{CliError, Result};

/// Suffix of conformalized method labels.
pub const CQR_SUFFIX: &str = "_cqr";

pub(crate) fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Load or generate the dataset named by the spec.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let config = |e: oqr::Error| CliError::Config(e.to_string());
    if let Some(spec) = cfg.dataset.synthetic_spec() {
        return Ok(generate_synthetic(&spec).map_err(config)?.0);
    }
    let crate::config::DatasetSource::Csv { path, name, .. } = &cfg.dataset else {
        unreachable!("non-synthetic source is a CSV");
    };
    let schema = cfg.dataset.csv_schema().expect("csv source has a schema");
    let mut ds = load_csv(path, &schema)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(name) = name {
        ds.name = name.clone();
    }
    Ok(ds)
}

/// A method with its multiplier resolved for the dataset.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedMethod {
    pub label: String,
    #[serde(flatten)]
    pub spec: MethodSpec,
    pub gamma_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupRow {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub group: u32,
    pub n: usize,
    pub coverage: f64,
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairRow {
    pub dataset: String,
    pub baseline: String,
    pub treated: String,
    pub seed: u64,
    pub metrics: PairMetrics,
}

fn write_pairs(path: &Path, pairs: &[PairRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_file(path)?);
    w.write_record([
        "dataset",
        "baseline",
        "treated",
        "seed",
        "ils_size",
        "baseline_delta_ils",
        "treated_delta_ils",
        "baseline_delta_node",
        "treated_delta_node",
    ])?;
    for p in pairs {
        let m = &p.metrics;
        w.write_record([
            p.dataset.clone(),
            p.baseline.clone(),
            p.treated.clone(),
            p.seed.to_string(),
            m.ils_size.to_string(),
            m.baseline_delta_ils.to_string(),
            m.treated_delta_ils.to_string(),
            m.baseline_delta_node.to_string(),
            m.treated_delta_node.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceEntry {
    pub method: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs: usize,
}

#[derive(Clone, Debug, Default)]
pub struct TrialOutput {
    pub rows: Vec<TrialRow>,
    pub groups: Vec<GroupRow>,
    pub pairs: Vec<PairRow>,
    pub traces: Vec<TraceEntry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Failure {
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out: PathBuf,
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub trials: Vec<TrialRow>,
    pub aggregate: Vec<AggregateRow>,
    pub failures: Vec<Failure>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    dataset: &'a str,
    seeds: &'a [u64],
    methods: &'a [ResolvedMethod],
    config: &'a RunConfig,
    failures: &'a [Failure],
}

struct Trial<'a> {
    cfg: &'a RunConfig,
    data: &'a Dataset,
    methods: &'a [ResolvedMethod],
    base: &'a TrainConfig,
    out: &'a Path,
}

/// Evaluated intervals of one method variant.
struct Variant {
    label: String,
    method: usize,
    conformal: bool,
    intervals: IntervalBatch,
}

/// Intervals with the evaluated feature rows, so `audit` can recompute the
/// run's metrics from the file alone.
fn write_intervals(
    path: &Path,
    rows: &[usize],
    groups: Option<&[u32]>,
    b: &IntervalBatch,
    x: ArrayView2<f64>,
    feature_names: &[String],
) -> Result<()> {
    const RESERVED: [&str; 5] = ["row", "group", "lo", "hi", "y"];
    let mut w = csv::Writer::from_writer(create_file(path)?);
    let mut header: Vec<String> = vec!["row".into()];
    if groups.is_some() {
        header.push("group".into());
    }
    header.extend(["lo", "hi", "y"].map(String::from));
    header.extend(feature_names.iter().map(|f| {
        if RESERVED.contains(&f.as_str()) {
            format!("feature_{f}")
        } else {
            f.clone()
        }
    }));
    w.write_record(&header)?;
    for (k, &row) in rows.iter().enumerate() {
        let mut rec = vec![row.to_string()];
        if let Some(g) = groups {
            rec.push(g[k].to_string());
        }
        rec.extend([b.lo[k].to_string(), b.hi[k].to_string(), b.y[k].to_string()]);
        rec.extend(x.row(k).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

impl Trial<'_> {
    fn run(&self, seed: u64) -> Result<TrialOutput> {
        let alpha = self.cfg.alpha;
        let d = split(self.data, &self.cfg.fractions(), seed)?;
        let d = preprocess(
            &d,
            self.cfg
                .dataset
                .csv_schema()
                .is_some_and(|s| s.log_transform_y),
        )?;
        let test = &d.split.test;
        let x_test = d.rows(test);
        let groups = d.groups(test);
        let mut out = TrialOutput::default();
        let mut variants = Vec::new();

        for (k, m) in self.methods.iter().enumerate() {
            let tc = TrainConfig {
                loss: m.spec.loss,
                penalty: m.spec.penalty,
                gamma: m.gamma_value,
                seed,
                ..self.base.clone()
            };
            let (model, trace) = train(&d, &tc)?;
            let stem = format!("{}_seed{seed}", m.label);
            trace.write_csv(create_file(
                &self.out.join("traces").join(format!("{stem}.csv")),
            )?)?;
            out.traces.push(TraceEntry {
                method: m.label.clone(),
                seed,
                best_epoch: trace.best_epoch,
                epochs: trace.epochs.len(),
            });
            if self.cfg.save_models {
                let path = self.out.join("models").join(format!("{stem}.json"));
                fs::write(&path, model.to_checkpoint()?.to_json()?)
                    .map_err(|e| CliError::io(&path, e))?;
            }
            let raw = model.dataset_intervals(&d, test, alpha)?;
            let adjusted = if self.cfg.conformalize {
                let cal = model.dataset_intervals(&d, &d.split.calibration, alpha)?;
                Some(conformalize(&raw, &calibrate(&cal, alpha)?))
            } else {
                None
            };
            variants.push(Variant {
                label: m.label.clone(),
                method: k,
                conformal: false,
                intervals: raw,
            });
            if let Some(intervals) = adjusted {
                variants.push(Variant {
                    label: format!("{}{CQR_SUFFIX}", m.label),
                    method: k,
                    conformal: true,
                    intervals,
                });
            }
        }

        let mut rows = Vec::new();
        for v in &variants {
            let path = self
                .out
                .join("intervals")
                .join(format!("{}_seed{seed}.csv", v.label));
            write_intervals(
                &path,
                test,
                groups.as_deref(),
                &v.intervals,
                x_test.view(),
                &d.feature_names,
            )?;
            let m = evaluate(
                x_test.view(),
                &v.intervals,
                groups.as_deref(),
                &self.cfg.evaluation,
                seed,
            )?;
            out.groups.extend(m.groups.iter().map(|g| GroupRow {
                dataset: d.name.clone(),
                method: v.label.clone(),
                seed,
                group: g.group,
                n: g.n,
                coverage: g.coverage,
                length: g.length,
            }));
            rows.push(TrialRow {
                dataset: d.name.clone(),
                method: v.label.clone(),
                seed,
                values: MetricValues {
                    coverage: m.coverage,
                    length: m.length,
                    corr: m.corr,
                    hsic: m.hsic,
                    wsc: m.wsc,
                    delta_wsc: m.delta_wsc,
                    delta_ils: None,
                    delta_node: None,
                },
            });
        }

        // Baseline rows take their ILS metrics from their first pair.
        for (bi, b) in variants.iter().enumerate() {
            let bm = &self.methods[b.method].spec;
            if bm.penalty != PenaltyKind::None {
                continue;
            }
            for (ti, t) in variants.iter().enumerate() {
                let tm = &self.methods[t.method].spec;
                if tm.penalty == PenaltyKind::None
                    || tm.loss != bm.loss
                    || t.conformal != b.conformal
                {
                    continue;
                }
                let p = compare_pair(
                    x_test.view(),
                    &b.intervals,
                    &t.intervals,
                    &self.cfg.evaluation.tree,
                )?;
                let treated = &mut rows[ti].values;
                treated.delta_ils = Some(p.treated_delta_ils);
                treated.delta_node = Some(p.treated_delta_node);
                let base = &mut rows[bi].values;
                if base.delta_ils.is_none() {
                    base.delta_ils = Some(p.baseline_delta_ils);
                    base.delta_node = Some(p.baseline_delta_node);
                }
                out.pairs.push(PairRow {
                    dataset: d.name.clone(),
                    baseline: b.label.clone(),
                    treated: t.label.clone(),
                    seed,
                    metrics: p,
                });
            }
        }
        out.rows = rows;
        Ok(out)
    }
}

fn write_serialized<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_file(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Lower-is-better metrics compared between each pair's aggregate means.
const IMPROVEMENT_METRICS: [&str; 5] = ["corr", "hsic", "delta_wsc", "delta_ils", "delta_node"];

fn metric(v: &MetricValues, name: &str) -> Option<f64> {
    match name {
        "corr" => Some(v.corr),
        "hsic" => Some(v.hsic),
        "delta_wsc" => Some(v.delta_wsc),
        "delta_ils" => v.delta_ils,
        "delta_node" => v.delta_node,
        _ => None,
    }
}

fn write_improvements(path: &Path, aggregate: &[AggregateRow], pairs: &[PairRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create_file(path)?);
    w.write_record([
        "dataset",
        "baseline",
        "treated",
        "metric",
        "baseline_mean",
        "treated_mean",
        "improvement_pct",
    ])?;
    let mut seen = Vec::new();
    for p in pairs {
        let key = (p.dataset.as_str(), p.baseline.as_str(), p.treated.as_str());
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        let find = |m: &str| {
            aggregate
                .iter()
                .find(|a| a.dataset == p.dataset && a.method == m)
        };
        let (Some(b), Some(t)) = (find(&p.baseline), find(&p.treated)) else {
            continue;
        };
        for name in IMPROVEMENT_METRICS {
            if let (Some(bv), Some(tv)) = (metric(&b.mean, name), metric(&t.mean, name)) {
                w.write_record([
                    p.dataset.as_str(),
                    p.baseline.as_str(),
                    p.treated.as_str(),
                    name,
                    &bv.to_string(),
                    &tv.to_string(),
                    &format_improvement(improvement_pct(bv, tv)),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Run every trial and write the output tables.
///
/// Trial failures are recorded under `errors/` and reported in the
/// summary; the remaining trials still run and aggregate.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let seeds = cfg.seeds.seeds()?;
    let data = load_dataset(cfg)?;
    let methods = cfg
        .method_matrix()
        .into_iter()
        .map(|spec| {
            Ok(ResolvedMethod {
                label: spec.label(),
                gamma_value: spec.resolve_gamma(&data.name)?,
                spec,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let base = cfg.base_training()?;

    let out = cfg.output_dir();
    let mut dirs = vec!["traces", "intervals", "errors"];
    if cfg.save_models {
        dirs.push("models");
    }
    for sub in dirs {
        create_dir(&out.join(sub))
            .map_err(|e| CliError::Config(format!("output directory not writable: {e}")))?;
    }

    let trial = Trial {
        cfg,
        data: &data,
        methods: &methods,
        base: &base,
        out: &out,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<TrialOutput>> =
        pool.install(|| seeds.par_iter().map(|&s| trial.run(s)).collect());

    let mut all = TrialOutput::default();
    let mut failures = Vec::new();
    for (&seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(t) => {
                all.rows.extend(t.rows);
                all.groups.extend(t.groups);
                all.pairs.extend(t.pairs);
                all.traces.extend(t.traces);
            }
            Err(e) => {
                let path = out.join("errors").join(format!("seed{seed}.txt"));
                fs::write(&path, format!("{e}\n")).map_err(|e| CliError::io(&path, e))?;
                failures.push(Failure {
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }

    let aggregate = aggregate_rows(&all.rows);
    write_trials_csv(&all.rows, create_file(&out.join("metrics.csv"))?)?;
    write_aggregate_csv(&aggregate, create_file(&out.join("aggregate.csv"))?)?;
    write_json(&out.join("aggregate.json"), &aggregate)?;
    write_serialized(&out.join("groups.csv"), &all.groups)?;
    write_pairs(&out.join("pairs.csv"), &all.pairs)?;
    write_serialized(&out.join("traces").join("index.csv"), &all.traces)?;
    write_improvements(&out.join("improvements.csv"), &aggregate, &all.pairs)?;
    let manifest = Manifest {
        dataset: &data.name,
        seeds: &seeds,
        methods: &methods,
        config: cfg,
        failures: &failures,
    };
    write_json(&out.join("manifest.json"), &manifest)?;

    Ok(RunSummary {
        out,
        dataset: data.name,
        seeds,
        trials: all.rows,
        aggregate,
        failures,
    })
}
