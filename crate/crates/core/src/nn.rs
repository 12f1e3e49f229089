//! Dense feed-forward network used as the quantile function class.
//!
//! The network takes `p + 1` inputs (features followed by the quantile
//! level) and emits a single quantile estimate. Hidden layers use ReLU and
//! optional inverted dropout; the output layer is linear. Gradients are
//! computed by a hand-written layer backward pass over batched inputs, and
//! parameters are updated with Adam.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Hidden-layer widths and dropout rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub dropout: f64,
}

impl Architecture {
    /// Two hidden layers of 64 units, no dropout.
    pub fn synthetic() -> Self {
        Self {
            hidden: vec![64, 64],
            dropout: 0.0,
        }
    }

    /// Three hidden layers of 64 units with dropout 0.1.
    pub fn real() -> Self {
        Self {
            hidden: vec![64, 64, 64],
            dropout: 0.1,
        }
    }
}

/// One affine layer. `weight` has shape `[inputs, outputs]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and bias.
    pub fn uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self {
            weight: Array2::from_shape_simple_fn((inputs, outputs), || dist.sample(rng)),
            bias: Array1::from_shape_simple_fn(outputs, || dist.sample(rng)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    dropout: f64,
}

/// Per-layer state recorded by [`Mlp::forward_cached`] for the backward pass.
#[derive(Debug)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    // ReLU derivative times dropout scale for each hidden layer
    masks: Vec<Array2<f64>>,
}

/// Gradient of a scalar objective with respect to every parameter, laid out
/// like the model's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    /// Flattened in the same order as [`Mlp::params`].
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }
}

impl Mlp {
    /// Randomly initialized network for `features` inputs plus the level.
    pub fn new<R: Rng + ?Sized>(features: usize, arch: &Architecture, rng: &mut R) -> Result<Self> {
        let widths = Self::widths(features, arch);
        let layers = widths
            .windows(2)
            .map(|w| Dense::uniform(w[0], w[1], rng))
            .collect();
        Self::from_layers(layers, arch.dropout)
    }

    /// All-zero network; useful as a fixed reference model.
    pub fn zeros(features: usize, arch: &Architecture) -> Result<Self> {
        let widths = Self::widths(features, arch);
        let layers = widths
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        Self::from_layers(layers, arch.dropout)
    }

    fn widths(features: usize, arch: &Architecture) -> Vec<usize> {
        let mut widths = Vec::with_capacity(arch.hidden.len() + 2);
        widths.push(features + 1);
        widths.extend_from_slice(&arch.hidden);
        widths.push(1);
        widths
    }

    pub fn from_layers(layers: Vec<Dense>, dropout: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter(
                "network needs at least one layer".into(),
            ));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidParameter(format!(
                "dropout rate must lie in [0, 1), got {dropout}"
            )));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(Error::DimensionMismatch {
                    layer: format!("layer {k} bias"),
                    expected: layer.outputs(),
                    actual: layer.bias.len(),
                });
            }
            if layer.inputs() == 0 {
                return Err(Error::InvalidParameter(format!("layer {k} has no inputs")));
            }
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::DimensionMismatch {
                    layer: format!("layer {}", k + 1),
                    expected: pair[0].outputs(),
                    actual: pair[1].inputs(),
                });
            }
        }
        let last = layers.last().expect("nonempty");
        if last.outputs() != 1 {
            return Err(Error::DimensionMismatch {
                layer: "output layer".into(),
                expected: 1,
                actual: last.outputs(),
            });
        }
        Ok(Self { layers, dropout })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    /// Width of the input row: features plus the quantile level.
    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn features(&self) -> usize {
        self.input_dim() - 1
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Quantile estimate `f_tau(x)` for a single feature vector.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        tau: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<f64> {
        if x.len() != self.features() {
            return Err(Error::DimensionMismatch {
                layer: "layer 0 (input)".into(),
                expected: self.features(),
                actual: x.len(),
            });
        }
        let mut row = Array2::zeros((1, x.len() + 1));
        for (dst, &src) in row.iter_mut().zip(x) {
            *dst = src;
        }
        row[[0, x.len()]] = tau;
        Ok(self.forward_rows(row.view(), mode, rng)?[0])
    }

    /// Forward pass over rows of `[features..., tau]`.
    pub fn forward_rows<R: Rng + ?Sized>(
        &self,
        inputs: ArrayView2<f64>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Array1<f64>> {
        self.run(inputs, mode, rng, false).map(|(out, _)| out)
    }

    /// Eval-mode forward pass; needs no randomness.
    pub fn predict_rows(&self, inputs: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.forward_rows(inputs, Mode::Eval, &mut NoRng)
    }

    /// Eval-mode quantiles at a per-row level.
    pub fn quantiles(&self, x: ArrayView2<f64>, taus: &[f64]) -> Result<Array1<f64>> {
        crate::error::check_len(x.nrows(), taus.len())?;
        let plan = LevelPlan {
            heads: vec![taus.to_vec()],
        };
        self.predict_rows(stack_inputs(x, &plan).view())
    }

    pub fn forward_cached<R: Rng + ?Sized>(
        &self,
        inputs: ArrayView2<f64>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array1<f64>, ForwardCache)> {
        self.run(inputs, mode, rng, true)
            .map(|(out, cache)| (out, cache.expect("cache requested")))
    }

    fn run<R: Rng + ?Sized>(
        &self,
        inputs: ArrayView2<f64>,
        mode: Mode,
        rng: &mut R,
        keep: bool,
    ) -> Result<(Array1<f64>, Option<ForwardCache>)> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                layer: "layer 0 (input)".into(),
                expected: self.input_dim(),
                actual: inputs.ncols(),
            });
        }
        let drop = mode == Mode::Train && self.dropout > 0.0;
        let keep_scale = 1.0 / (1.0 - self.dropout);
        let mut cache = keep.then(|| ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            masks: Vec::with_capacity(self.layers.len() - 1),
        });
        let last = self.layers.len() - 1;
        let mut act = inputs.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = act.dot(&layer.weight);
            z += &layer.bias;
            if k == last {
                if let Some(c) = cache.as_mut() {
                    c.inputs.push(act);
                }
                act = z;
                break;
            }
            let mut mask = z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            if drop {
                let coin = Uniform::new(0.0, 1.0).expect("unit interval");
                mask.mapv_inplace(|m| {
                    if coin.sample(rng) < self.dropout {
                        0.0
                    } else {
                        m * keep_scale
                    }
                });
            }
            z *= &mask;
            if let Some(c) = cache.as_mut() {
                c.inputs.push(act);
                c.masks.push(mask);
            }
            act = z;
        }
        let out = act.index_axis_move(Axis(1), 0);
        Ok((out, cache))
    }

    /// Backpropagate `d_out = d objective / d output` through a cached pass.
    pub fn backward(&self, cache: &ForwardCache, d_out: ArrayView1<f64>) -> Result<Gradients> {
        let rows = cache.inputs[0].nrows();
        if d_out.len() != rows {
            return Err(Error::DimensionMismatch {
                layer: "output layer".into(),
                expected: rows,
                actual: d_out.len(),
            });
        }
        let mut delta = d_out.to_owned().insert_axis(Axis(1));
        let mut layers = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let a = &cache.inputs[k];
            layers.push(Dense {
                weight: a.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if k > 0 {
                let mut next = delta.dot(&self.layers[k].weight.t());
                next *= &cache.masks[k - 1];
                delta = next;
            }
        }
        layers.reverse();
        Ok(Gradients { layers })
    }
}

/// Quantile levels to query for every sample of a batch: `heads[h][i]` is
/// the level of head `h` for sample `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelPlan {
    pub heads: Vec<Vec<f64>>,
}

impl LevelPlan {
    pub fn constant(n: usize, levels: &[f64]) -> Self {
        Self {
            heads: levels.iter().map(|&t| vec![t; n]).collect(),
        }
    }
}

pub struct ObjectiveValue {
    pub value: f64,
    /// Derivative of `value` with respect to every head output.
    pub grads: Vec<Vec<f64>>,
}

/// A scalar training objective over network outputs at planned levels.
pub trait Objective {
    fn plan<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> LevelPlan;

    fn evaluate(&self, y: &[f64], plan: &LevelPlan, outputs: &[Vec<f64>])
        -> Result<ObjectiveValue>;
}

pub struct Batch<'a> {
    pub index: usize,
    pub x: ArrayView2<'a, f64>,
    pub y: &'a [f64],
}

/// Rows `[x_i, heads[h][i]]` for every head, head-major.
pub fn stack_inputs(x: ArrayView2<f64>, plan: &LevelPlan) -> Array2<f64> {
    let (n, p) = x.dim();
    let mut rows = Array2::zeros((n * plan.heads.len(), p + 1));
    for (h, levels) in plan.heads.iter().enumerate() {
        let mut block = rows.slice_mut(ndarray::s![h * n..(h + 1) * n, ..]);
        block.slice_mut(ndarray::s![.., ..p]).assign(&x);
        for (dst, &t) in block.column_mut(p).iter_mut().zip(levels) {
            *dst = t;
        }
    }
    rows
}

fn split_heads(out: &Array1<f64>, heads: usize, n: usize) -> Vec<Vec<f64>> {
    (0..heads)
        .map(|h| out.slice(ndarray::s![h * n..(h + 1) * n]).to_vec())
        .collect()
}

/// Objective value on a batch (forward only).
pub fn objective_value<O: Objective, R1: Rng + ?Sized, R2: Rng + ?Sized>(
    model: &Mlp,
    batch: &Batch,
    objective: &O,
    mode: Mode,
    level_rng: &mut R1,
    dropout_rng: &mut R2,
) -> Result<f64> {
    let n = batch.y.len();
    crate::error::check_len(batch.x.nrows(), n)?;
    let plan = objective.plan(n, level_rng);
    let out = model.forward_rows(stack_inputs(batch.x, &plan).view(), mode, dropout_rng)?;
    let value = objective
        .evaluate(batch.y, &plan, &split_heads(&out, plan.heads.len(), n))?
        .value;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: None,
            batch: batch.index,
        });
    }
    Ok(value)
}

/// Objective value and its gradient with respect to every parameter.
pub fn loss_gradients<O: Objective, R1: Rng + ?Sized, R2: Rng + ?Sized>(
    model: &Mlp,
    batch: &Batch,
    objective: &O,
    mode: Mode,
    level_rng: &mut R1,
    dropout_rng: &mut R2,
) -> Result<(f64, Gradients)> {
    let n = batch.y.len();
    crate::error::check_len(batch.x.nrows(), n)?;
    let plan = objective.plan(n, level_rng);
    let (out, cache) =
        model.forward_cached(stack_inputs(batch.x, &plan).view(), mode, dropout_rng)?;
    let ov = objective.evaluate(batch.y, &plan, &split_heads(&out, plan.heads.len(), n))?;
    if !ov.value.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: None,
            batch: batch.index,
        });
    }
    let d_out: Array1<f64> = ov.grads.iter().flatten().copied().collect();
    let grads = model.backward(&cache, d_out.view())?;
    Ok((ov.value, grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment accumulators shaped like the model.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Dense>,
    v: Vec<Dense>,
    step: u64,
}

impl AdamState {
    pub fn new(model: &Mlp, config: AdamConfig) -> Self {
        let zeros: Vec<Dense> = model
            .layers
            .iter()
            .map(|l| Dense::zeros(l.inputs(), l.outputs()))
            .collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `model` in place.
    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != model.layers.len() || self.m.len() != model.layers.len() {
            return Err(Error::DimensionMismatch {
                layer: "gradient layer count".into(),
                expected: model.layers.len(),
                actual: grads.layers.len(),
            });
        }
        for (k, (g, p)) in grads.layers.iter().zip(&model.layers).enumerate() {
            if g.weight.dim() != p.weight.dim() || g.bias.len() != p.bias.len() {
                return Err(Error::DimensionMismatch {
                    layer: format!("layer {k} gradient"),
                    expected: p.weight.len() + p.bias.len(),
                    actual: g.weight.len() + g.bias.len(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: &f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((p, m), v), g) in model
            .layers
            .iter_mut()
            .zip(&mut self.m)
            .zip(&mut self.v)
            .zip(&grads.layers)
        {
            Zip::from(&mut p.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .and(&g.weight)
                .for_each(update);
            Zip::from(&mut p.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(update);
        }
        Ok(())
    }
}

const CHECKPOINT_FORMAT: &str = "oqr-mlp";
const CHECKPOINT_VERSION: u32 = 1;

/// Serialized network: layer shapes, row-major `[inputs, outputs]` weights,
/// biases and an echo of the training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dropout: f64,
    pub layers: Vec<LayerRecord>,
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &Mlp, config: serde_json::Value) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dropout: model.dropout,
            layers: model
                .layers
                .iter()
                .map(|l| LayerRecord {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
            config,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format {:?}",
                ckpt.format
            )));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn into_model(self) -> Result<Mlp> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (k, rec) in self.layers.into_iter().enumerate() {
            let expected = rec
                .inputs
                .checked_mul(rec.outputs)
                .ok_or_else(|| Error::Checkpoint(format!("layer {k} shape overflows")))?;
            if rec.weight.len() != expected {
                return Err(Error::Checkpoint(format!(
                    "layer {k}: weight has {} values, shape needs {expected}",
                    rec.weight.len()
                )));
            }
            if rec.bias.len() != rec.outputs {
                return Err(Error::Checkpoint(format!(
                    "layer {k}: bias has {} values, expected {}",
                    rec.bias.len(),
                    rec.outputs
                )));
            }
            let weight = Array2::from_shape_vec((rec.inputs, rec.outputs), rec.weight)
                .map_err(|e| Error::Checkpoint(format!("layer {k}: {e}")))?;
            layers.push(Dense {
                weight,
                bias: Array1::from(rec.bias),
            });
        }
        Mlp::from_layers(layers, self.dropout)
    }
}

/// Stand-in generator for eval-mode passes, which never draw.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("eval-mode forward pass drew a random number")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("eval-mode forward pass drew a random number")
    }
    fn fill_bytes(&mut self, _dst: &mut [u8]) {
        unreachable!("eval-mode forward pass drew a random number")
    }
}
