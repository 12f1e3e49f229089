//! Training objectives: pinball and interval-score losses, the smooth
//! coverage indicator, and the correlation / HSIC orthogonality penalties.
//!
//! Every differentiable piece comes in a value form and a `_grad` form; the
//! [`OrthogonalObjective`] composes them into the penalized quantile
//! objective consumed by [`crate::nn::loss_gradients`].

use ndarray::ArrayView2;
use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, check_level, Error, Result};
use crate::hsic::{self, HsicConfig};
use crate::nn::{LevelPlan, Mlp, Objective, ObjectiveValue};

/// Default slope of the tanh coverage indicator.
pub const SMOOTH_SLOPE: f64 = 5e3;

/// Lower and upper interval endpoints with the responses they should cover.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalBatch {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub y: Vec<f64>,
}

impl IntervalBatch {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        check_len(lo.len(), hi.len())?;
        check_len(lo.len(), y.len())?;
        if lo.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        Ok(Self { lo, hi, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// `hi - lo`; negative where the endpoints cross.
    pub fn lengths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    /// Exact indicator of `lo <= y <= hi`.
    pub fn covered(&self) -> Vec<bool> {
        (0..self.len())
            .map(|i| self.lo[i] <= self.y[i] && self.y[i] <= self.hi[i])
            .collect()
    }

    pub fn covered_f64(&self) -> Vec<f64> {
        self.covered()
            .into_iter()
            .map(|c| f64::from(u8::from(c)))
            .collect()
    }

    pub fn smooth_coverage(&self, slope: f64) -> Vec<f64> {
        (0..self.len())
            .map(|i| smooth_coverage(self.y[i], self.lo[i], self.hi[i], slope))
            .collect()
    }

    /// Swap crossed endpoints so that every interval is valid.
    pub fn uncrossed(mut self) -> Self {
        for (l, h) in self.lo.iter_mut().zip(self.hi.iter_mut()) {
            if *h < *l {
                std::mem::swap(l, h);
            }
        }
        self
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            lo: rows.iter().map(|&i| self.lo[i]).collect(),
            hi: rows.iter().map(|&i| self.hi[i]).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

/// Check loss `rho_alpha(y, yhat)`.
pub fn pinball(y: f64, yhat: f64, alpha: f64) -> f64 {
    pinball_grad(y, yhat, alpha).0
}

/// Pinball value and its derivative in `yhat`.
pub fn pinball_grad(y: f64, yhat: f64, alpha: f64) -> (f64, f64) {
    let r = y - yhat;
    if r > 0.0 {
        (alpha * r, -alpha)
    } else {
        ((1.0 - alpha) * -r, 1.0 - alpha)
    }
}

/// Sum of pinball losses at `alpha/2` (lower) and `1 - alpha/2` (upper).
pub fn pinball_pair(y: f64, lo: f64, hi: f64, alpha: f64) -> f64 {
    pinball(y, lo, alpha / 2.0) + pinball(y, hi, 1.0 - alpha / 2.0)
}

pub fn interval_score(y: f64, lo: f64, hi: f64, alpha: f64) -> f64 {
    interval_score_grad(y, lo, hi, alpha).0
}

/// Interval score with derivatives in `lo` and `hi`.
pub fn interval_score_grad(y: f64, lo: f64, hi: f64, alpha: f64) -> (f64, f64, f64) {
    let scale = 2.0 / alpha;
    let mut value = hi - lo;
    let (mut d_lo, mut d_hi) = (-1.0, 1.0);
    if y < lo {
        value += scale * (lo - y);
        d_lo += scale;
    }
    if y > hi {
        value += scale * (y - hi);
        d_hi -= scale;
    }
    (value, d_lo, d_hi)
}

/// `(tanh(c * min(y - lo, hi - y)) + 1) / 2`.
pub fn smooth_coverage(y: f64, lo: f64, hi: f64, slope: f64) -> f64 {
    0.5 * ((slope * (y - lo).min(hi - y)).tanh() + 1.0)
}

/// Smooth coverage with derivatives in `lo` and `hi`.
pub fn smooth_coverage_grad(y: f64, lo: f64, hi: f64, slope: f64) -> (f64, f64, f64) {
    let (below, above) = (y - lo, hi - y);
    let t = (slope * below.min(above)).tanh();
    let d_margin = 0.5 * slope * (1.0 - t * t);
    let value = 0.5 * (t + 1.0);
    if below <= above {
        (value, -d_margin, 0.0)
    } else {
        (value, 0.0, d_margin)
    }
}

/// Penalty value with derivatives in both arguments.
#[derive(Clone, Debug, PartialEq)]
pub struct PenaltyGrad {
    pub value: f64,
    pub d_l: Vec<f64>,
    pub d_v: Vec<f64>,
}

fn check_pair(l: &[f64], v: &[f64]) -> Result<()> {
    check_len(l.len(), v.len())?;
    if l.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: l.len(),
        });
    }
    Ok(())
}

/// Absolute Pearson correlation with population moments; 0 when either
/// input has zero variance.
pub fn penalty_corr(l: &[f64], v: &[f64]) -> Result<f64> {
    penalty_corr_grad(l, v).map(|g| g.value)
}

pub fn penalty_corr_grad(l: &[f64], v: &[f64]) -> Result<PenaltyGrad> {
    check_pair(l, v)?;
    let n = l.len() as f64;
    let ml = l.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let (mut cov, mut var_l, mut var_v) = (0.0, 0.0, 0.0);
    for (a, b) in l.iter().zip(v) {
        let (da, db) = (a - ml, b - mv);
        cov += da * db;
        var_l += da * da;
        var_v += db * db;
    }
    cov /= n;
    var_l /= n;
    var_v /= n;
    if var_l * var_v == 0.0 {
        return Ok(PenaltyGrad {
            value: 0.0,
            d_l: vec![0.0; l.len()],
            d_v: vec![0.0; l.len()],
        });
    }
    let (sl, sv) = (var_l.sqrt(), var_v.sqrt());
    let r = cov / (sl * sv);
    let sign = r.signum();
    let d_l = l
        .iter()
        .zip(v)
        .map(|(a, b)| sign * ((b - mv) / (n * sl * sv) - r * (a - ml) / (n * var_l)))
        .collect();
    let d_v = l
        .iter()
        .zip(v)
        .map(|(a, b)| sign * ((a - ml) / (n * sl * sv) - r * (b - mv) / (n * var_v)))
        .collect();
    Ok(PenaltyGrad {
        value: r.abs().min(1.0),
        d_l,
        d_v,
    })
}

/// Square root of the (clamped) HSIC estimate.
pub fn penalty_hsic(l: &[f64], v: &[f64]) -> Result<f64> {
    check_pair(l, v)?;
    Ok(hsic::hsic_estimate(l, v, &HsicConfig::default())?
        .max(0.0)
        .sqrt())
}

pub fn penalty_hsic_grad(l: &[f64], v: &[f64]) -> Result<PenaltyGrad> {
    check_pair(l, v)?;
    let (h, gl, gv) = hsic::hsic_gradient(l, v, &HsicConfig::default())?;
    if h <= 0.0 {
        return Ok(PenaltyGrad {
            value: 0.0,
            d_l: vec![0.0; l.len()],
            d_v: vec![0.0; l.len()],
        });
    }
    let root = h.sqrt();
    let scale = 0.5 / root;
    Ok(PenaltyGrad {
        value: root,
        d_l: gl.into_iter().map(|g| g * scale).collect(),
        d_v: gv.into_iter().map(|g| g * scale).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Pinball,
    IntervalScore,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    None,
    Corr,
    Hsic,
}

/// How miscoverage levels are drawn for the interval-score risk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSampling {
    /// One `alpha ~ U(0, 1)` per sample.
    PerSample,
    /// One `alpha ~ U(0, 1)` shared by the batch.
    PerBatch,
    Fixed(f64),
}

pub fn draw_alphas<R: Rng + ?Sized>(sampling: AlphaSampling, n: usize, rng: &mut R) -> Vec<f64> {
    match sampling {
        AlphaSampling::PerSample => (0..n).map(|_| rng.sample(Open01)).collect(),
        AlphaSampling::PerBatch => vec![rng.sample(Open01); n],
        AlphaSampling::Fixed(a) => vec![a; n],
    }
}

/// Anything that maps feature rows and per-row levels to quantiles.
pub trait QuantileFunction {
    fn quantiles(&self, x: ArrayView2<f64>, taus: &[f64]) -> Result<Vec<f64>>;
}

impl QuantileFunction for Mlp {
    fn quantiles(&self, x: ArrayView2<f64>, taus: &[f64]) -> Result<Vec<f64>> {
        Mlp::quantiles(self, x, taus).map(|a| a.to_vec())
    }
}

/// Monte-Carlo estimate of `E_{alpha ~ U(0,1)}[interval_score]` on a batch.
pub fn interval_score_risk<M, R>(
    model: &M,
    x: ArrayView2<f64>,
    y: &[f64],
    sampling: AlphaSampling,
    rng: &mut R,
) -> Result<f64>
where
    M: QuantileFunction + ?Sized,
    R: Rng + ?Sized,
{
    check_len(x.nrows(), y.len())?;
    if y.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let alphas = draw_alphas(sampling, y.len(), rng);
    let lo_levels: Vec<f64> = alphas.iter().map(|a| a / 2.0).collect();
    let hi_levels: Vec<f64> = alphas.iter().map(|a| 1.0 - a / 2.0).collect();
    let lo = model.quantiles(x, &lo_levels)?;
    let hi = model.quantiles(x, &hi_levels)?;
    let total: f64 = (0..y.len())
        .map(|i| interval_score(y[i], lo[i], hi[i], alphas[i]))
        .sum();
    Ok(total / y.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub loss: LossKind,
    pub penalty: PenaltyKind,
    pub gamma: f64,
    /// Target miscoverage of the penalized interval.
    pub alpha: f64,
    pub smooth_slope: f64,
    pub alpha_sampling: AlphaSampling,
}

impl ObjectiveConfig {
    pub fn new(loss: LossKind, penalty: PenaltyKind, gamma: f64) -> Self {
        Self {
            loss,
            penalty,
            gamma,
            alpha: 0.1,
            smooth_slope: SMOOTH_SLOPE,
            alpha_sampling: AlphaSampling::PerSample,
        }
    }

    /// Multiplier applied to the penalty; pinball runs scale `gamma` by 0.1.
    pub fn effective_gamma(&self) -> f64 {
        match self.loss {
            LossKind::Pinball => 0.1 * self.gamma,
            LossKind::IntervalScore => self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_level("alpha", self.alpha)?;
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be finite and nonnegative, got {}",
                self.gamma
            )));
        }
        if self.smooth_slope.is_nan() || self.smooth_slope <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "smooth coverage slope must be positive, got {}",
                self.smooth_slope
            )));
        }
        if let AlphaSampling::Fixed(a) = self.alpha_sampling {
            check_level("sampled alpha", a)?;
        }
        Ok(())
    }
}

/// Base quantile loss plus `gamma * R(L, V_smooth)` over a batch.
#[derive(Clone, Copy, Debug)]
pub struct OrthogonalObjective {
    pub config: ObjectiveConfig,
    /// Lets the training loop drop the penalty on undersized batches.
    pub penalty_enabled: bool,
}

impl OrthogonalObjective {
    pub fn new(config: ObjectiveConfig) -> Self {
        Self {
            config,
            penalty_enabled: true,
        }
    }

    fn penalized(&self) -> bool {
        self.penalty_enabled && self.config.penalty != PenaltyKind::None && self.config.gamma > 0.0
    }

    /// Head indices `(lo, hi)` of the fixed-level interval fed to the penalty.
    fn penalty_heads(&self) -> (usize, usize) {
        match self.config.loss {
            LossKind::Pinball => (0, 1),
            LossKind::IntervalScore => (2, 3),
        }
    }
}

impl Objective for OrthogonalObjective {
    fn plan<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> LevelPlan {
        let alpha = self.config.alpha;
        match self.config.loss {
            LossKind::Pinball => LevelPlan::constant(n, &[alpha / 2.0, 1.0 - alpha / 2.0]),
            LossKind::IntervalScore => {
                let alphas = draw_alphas(self.config.alpha_sampling, n, rng);
                let mut heads = vec![
                    alphas.iter().map(|a| a / 2.0).collect(),
                    alphas.iter().map(|a| 1.0 - a / 2.0).collect(),
                ];
                if self.penalized() {
                    heads.push(vec![alpha / 2.0; n]);
                    heads.push(vec![1.0 - alpha / 2.0; n]);
                }
                LevelPlan { heads }
            }
        }
    }

    fn evaluate(
        &self,
        y: &[f64],
        plan: &LevelPlan,
        outputs: &[Vec<f64>],
    ) -> Result<ObjectiveValue> {
        let n = y.len();
        if n == 0 {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        let mut grads: Vec<Vec<f64>> = outputs.iter().map(|o| vec![0.0; o.len()]).collect();
        let nf = n as f64;
        let (lo, hi) = (&outputs[0], &outputs[1]);
        let mut base = 0.0;
        match self.config.loss {
            LossKind::Pinball => {
                let a = self.config.alpha;
                for i in 0..n {
                    let (vl, gl) = pinball_grad(y[i], lo[i], a / 2.0);
                    let (vh, gh) = pinball_grad(y[i], hi[i], 1.0 - a / 2.0);
                    base += vl + vh;
                    grads[0][i] = gl / nf;
                    grads[1][i] = gh / nf;
                }
            }
            LossKind::IntervalScore => {
                for i in 0..n {
                    let a = 2.0 * plan.heads[0][i];
                    let (v, gl, gh) = interval_score_grad(y[i], lo[i], hi[i], a);
                    base += v;
                    grads[0][i] = gl / nf;
                    grads[1][i] = gh / nf;
                }
            }
        }
        let mut value = base / nf;
        if self.penalized() {
            let (hl, hh) = self.penalty_heads();
            let m = match self.config.penalty {
                PenaltyKind::Hsic => (n / 2).max(2),
                _ => n,
            };
            if n < 2 {
                return Err(Error::TooFewSamples { needed: 2, got: n });
            }
            let c = self.config.smooth_slope;
            let mut lengths = Vec::with_capacity(m);
            let mut cover = Vec::with_capacity(m);
            let mut d_cover = Vec::with_capacity(m);
            for i in 0..m {
                let (l, h) = (outputs[hl][i], outputs[hh][i]);
                let (v, dvl, dvh) = smooth_coverage_grad(y[i], l, h, c);
                lengths.push(h - l);
                cover.push(v);
                d_cover.push((dvl, dvh));
            }
            let pg = match self.config.penalty {
                PenaltyKind::Corr => penalty_corr_grad(&lengths, &cover)?,
                PenaltyKind::Hsic => penalty_hsic_grad(&lengths, &cover)?,
                PenaltyKind::None => unreachable!("penalized() excludes None"),
            };
            let g = self.config.effective_gamma();
            value += g * pg.value;
            for i in 0..m {
                let (dvl, dvh) = d_cover[i];
                grads[hl][i] += g * (-pg.d_l[i] + pg.d_v[i] * dvl);
                grads[hh][i] += g * (pg.d_l[i] + pg.d_v[i] * dvh);
            }
        }
        Ok(ObjectiveValue { value, grads })
    }
}
