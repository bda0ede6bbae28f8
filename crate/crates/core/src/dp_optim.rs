//! Per-example clipping, Gaussian noisy aggregation, and DP-SGD / DP-AdamW
//! steps restricted to a layer subset.
//!
//! Aggregation sums clipped per-example gradients in batch order, adds one
//! draw of `N(0, σ²C² I)` to the sum, then divides by the batch size. A clip
//! norm of `f64::INFINITY` disables clipping, which together with `σ = 0`
//! expresses non-private training through the same code path.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example};
use crate::error::{Error, Result};
use crate::nn::{LayerGradMap, LayerSubset, LayeredModel};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpTrainConfig {
    /// Clip norm `C`; `f64::INFINITY` (serialized as `null`) disables clipping.
    #[serde(with = "crate::serde_inf")]
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub learning_rate: f64,
    /// Expected batch size; the aggregation denominator.
    pub batch_size: usize,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for DpTrainConfig {
    fn default() -> Self {
        Self {
            clip_norm: 1.0,
            noise_multiplier: 0.0,
            learning_rate: 0.01,
            batch_size: 64,
            steps: 200,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl DpTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip norm must be > 0");
        }
        if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
            return bad("noise multiplier must be finite and >= 0");
        }
        if self.clip_norm.is_infinite() && self.noise_multiplier > 0.0 {
            return bad("noise requires a finite clip norm");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("AdamW betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eps must be > 0 and weight decay >= 0");
        }
        Ok(())
    }
}

/// `g / max(1, ‖g‖₂ / C)` with the norm taken over all layers jointly.
pub fn clip(grad: &LayerGradMap, clip_norm: f64) -> LayerGradMap {
    let factor = (grad.norm() / clip_norm).max(1.0);
    let mut out = grad.clone();
    out.div(factor);
    out
}

/// Clipped sum in the given order, plus `N(0, σ²C²)` per coordinate. The
/// zero map `template` fixes the shape (so empty batches still get noise).
fn noisy_sum<'a>(
    grads: impl IntoIterator<Item = &'a LayerGradMap>,
    template: &LayerGradMap,
    clip_norm: f64,
    sigma: f64,
    rng: &mut StreamRng,
) -> Result<LayerGradMap> {
    if sigma < 0.0 || (sigma > 0.0 && !clip_norm.is_finite()) {
        return Err(Error::Config(format!(
            "invalid noise setting sigma={sigma}, C={clip_norm}"
        )));
    }
    let mut sum = template.zeros_like();
    for g in grads {
        sum.add_assign(&clip(g, clip_norm))?;
    }
    if sigma > 0.0 {
        let std = sigma * clip_norm;
        for (_, v) in sum.iter_mut() {
            for x in v.iter_mut() {
                *x += rng::gaussian(rng, std);
            }
        }
    }
    Ok(sum)
}

/// `(1/|B|)(Σᵢ clip(gᵢ, C) + z)`, `z ~ N(0, σ²C² I)`, with `|B| = grads.len()`.
pub fn noisy_aggregate(
    grads: &[LayerGradMap],
    clip_norm: f64,
    sigma: f64,
    rng: &mut StreamRng,
) -> Result<LayerGradMap> {
    let first = grads.first().ok_or(Error::EmptyBatch)?;
    let mut s = noisy_sum(grads, first, clip_norm, sigma, rng)?;
    s.div(grads.len() as f64);
    Ok(s)
}

/// Noisy mean gradient for a batch, normalized by the configured (expected)
/// batch size rather than the realized one.
pub fn private_gradient(
    model: &LayeredModel,
    batch: &[Example],
    subset: &LayerSubset,
    cfg: &DpTrainConfig,
    rng: &mut StreamRng,
) -> Result<LayerGradMap> {
    let template = model.params(subset)?.zeros_like();
    let grads = batch
        .iter()
        .map(|ex| model.per_example_grad(ex, subset))
        .collect::<Result<Vec<_>>>()?;
    let mut s = noisy_sum(&grads, &template, cfg.clip_norm, cfg.noise_multiplier, rng)?;
    s.div(cfg.batch_size as f64);
    Ok(s)
}

pub fn dp_sgd_step(
    model: &mut LayeredModel,
    batch: &[Example],
    subset: &LayerSubset,
    cfg: &DpTrainConfig,
    rng: &mut StreamRng,
) -> Result<()> {
    let g = private_gradient(model, batch, subset, cfg, rng)?;
    model.apply_update(&g, -cfg.learning_rate)
}

/// AdamW moments over the trainable subset.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: LayerGradMap,
    pub v: LayerGradMap,
    pub t: u64,
}

impl AdamState {
    pub fn new(model: &LayeredModel, subset: &LayerSubset) -> Result<Self> {
        let zeros = model.params(subset)?.zeros_like();
        Ok(Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        })
    }
}

/// One AdamW update from an already aggregated gradient: bias-corrected
/// moments and decoupled weight decay on the trainable layers.
pub fn adamw_update(
    model: &mut LayeredModel,
    grad: &LayerGradMap,
    cfg: &DpTrainConfig,
    state: &mut AdamState,
) -> Result<()> {
    state.m.check_same_shape(grad)?;
    state.v.check_same_shape(grad)?;
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut params = model.params(&grad.subset())?;
    for (((_, m), (_, v)), ((_, p), (_, g))) in state
        .m
        .iter_mut()
        .zip(state.v.iter_mut())
        .zip(params.iter_mut().zip(grad.iter()))
    {
        for i in 0..g.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let decay = cfg.weight_decay * p[i];
            p[i] -= cfg.learning_rate * (m_hat / (v_hat.sqrt() + cfg.eps) + decay);
        }
    }
    model.set_params(&params)
}

pub fn dp_adamw_step(
    model: &mut LayeredModel,
    batch: &[Example],
    subset: &LayerSubset,
    cfg: &DpTrainConfig,
    state: &mut AdamState,
    rng: &mut StreamRng,
) -> Result<()> {
    if state.m.subset() != *subset {
        return Err(Error::Config(
            "AdamW state does not match the trainable subset".into(),
        ));
    }
    let g = private_gradient(model, batch, subset, cfg, rng)?;
    adamw_update(model, &g, cfg, state)
}

/// Poisson subsampling: each index is included independently with
/// probability `q`.
pub fn poisson_batch(n: usize, q: f64, rng: &mut StreamRng) -> Vec<usize> {
    (0..n)
        .filter(|_| rng.random_bool(q.clamp(0.0, 1.0)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    AdamW,
}

/// Sampling rate `q = |B| / n`, capped at 1.
pub fn sampling_rate(batch_size: usize, n: usize) -> f64 {
    (batch_size as f64 / n as f64).min(1.0)
}

/// Runs `cfg.steps` private steps on Poisson batches drawn from `data`.
/// Step `t` uses the stream `(seed, t)` for both sampling and noise.
pub fn train(
    model: &mut LayeredModel,
    data: &Dataset,
    subset: &LayerSubset,
    cfg: &DpTrainConfig,
    optimizer: Optimizer,
    seed: u64,
) -> Result<()> {
    cfg.validate()?;
    model.validate_subset(subset)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let q = sampling_rate(cfg.batch_size, data.len());
    let mut state = AdamState::new(model, subset)?;
    for t in 0..cfg.steps {
        let mut r = rng::stream(seed, &[t as u64]);
        let idx = poisson_batch(data.len(), q, &mut r);
        let batch: Vec<Example> = idx.iter().map(|&i| data.examples[i].clone()).collect();
        match optimizer {
            Optimizer::Sgd => dp_sgd_step(model, &batch, subset, cfg, &mut r)?,
            Optimizer::AdamW => dp_adamw_step(model, &batch, subset, cfg, &mut state, &mut r)?,
        }
    }
    if model
        .params(subset)?
        .iter()
        .any(|(_, v)| v.iter().any(|x| !x.is_finite()))
    {
        return Err(Error::Numeric(
            "non-finite parameters after training".into(),
        ));
    }
    Ok(())
}
