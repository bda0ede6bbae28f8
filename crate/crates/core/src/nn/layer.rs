use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Dense,
    Activation,
    /// A dense layer with a low-rank adapter attached at construction time.
    LowRankAdapter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input: usize,
    pub output: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl LayerSpec {
    pub fn dense(input: usize, output: usize) -> Self {
        Self {
            kind: LayerKind::Dense,
            input,
            output,
            rank: None,
            seed: 0,
        }
    }

    pub fn tanh(width: usize) -> Self {
        Self {
            kind: LayerKind::Activation,
            input: width,
            output: width,
            rank: None,
            seed: 0,
        }
    }

    pub fn adapter(input: usize, output: usize, rank: usize) -> Self {
        Self {
            kind: LayerKind::LowRankAdapter,
            input,
            output,
            rank: Some(rank),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 {
            return Err(Error::InvalidLayerSpec("widths must be positive".into()));
        }
        match self.kind {
            LayerKind::Activation if self.input != self.output => {
                Err(Error::InvalidLayerSpec(format!(
                    "activation {}→{} must preserve width",
                    self.input, self.output
                )))
            }
            LayerKind::LowRankAdapter => {
                let r = self.rank.unwrap_or(0);
                check_rank(r, self.input, self.output)
            }
            _ => Ok(()),
        }
    }
}

pub(crate) fn check_rank(rank: usize, input: usize, output: usize) -> Result<()> {
    if rank == 0 || rank > input.min(output) {
        return Err(Error::InvalidLayerSpec(format!(
            "adapter rank {rank} must lie in 1..={} for a {input}→{output} layer",
            input.min(output)
        )));
    }
    Ok(())
}

/// Fully connected layer. `params` holds the row-major `output × input`
/// weight matrix followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub params: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            input,
            output,
            params: vec![0.0; output * input + output],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and bias.
    pub fn init(input: usize, output: usize, rng: &mut StreamRng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let params = (0..output * input + output)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            input,
            output,
            params,
        }
    }

    pub fn weight(&self) -> &[f64] {
        &self.params[..self.output * self.input]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.output * self.input..]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let w = self.weight();
        let b = self.bias();
        (0..self.output)
            .map(|o| {
                let row = &w[o * self.input..(o + 1) * self.input];
                row.iter().zip(x).fold(b[o], |acc, (wi, xi)| acc + wi * xi)
            })
            .collect()
    }

    /// Accumulates `dW = δ xᵀ`, `db = δ` into `grad`.
    fn param_grad(&self, x: &[f64], delta: &[f64]) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.params.len());
        for &d in delta {
            g.extend(x.iter().map(|&xi| d * xi));
        }
        g.extend_from_slice(delta);
        g
    }

    /// `Wᵀ δ`
    fn input_grad(&self, delta: &[f64]) -> Vec<f64> {
        let w = self.weight();
        let mut dx = vec![0.0; self.input];
        for (o, &d) in delta.iter().enumerate() {
            let row = &w[o * self.input..(o + 1) * self.input];
            for (dxi, wi) in dx.iter_mut().zip(row) {
                *dxi += wi * d;
            }
        }
        dx
    }
}

/// Low-rank update `B A` on top of a frozen dense layer. `params` holds the
/// row-major down-projection `A` (`rank × input`) followed by the row-major
/// up-projection `B` (`output × rank`).
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub rank: usize,
    pub input: usize,
    pub output: usize,
    pub params: Vec<f64>,
}

impl Adapter {
    /// Random down-projection, zero up-projection.
    pub fn init(input: usize, output: usize, rank: usize, rng: &mut StreamRng) -> Result<Self> {
        check_rank(rank, input, output)?;
        let bound = 1.0 / (input as f64).sqrt();
        let mut params: Vec<f64> = (0..rank * input)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        params.extend(std::iter::repeat_n(0.0, output * rank));
        Ok(Self {
            rank,
            input,
            output,
            params,
        })
    }

    pub fn down(&self) -> &[f64] {
        &self.params[..self.rank * self.input]
    }

    pub fn up(&self) -> &[f64] {
        &self.params[self.rank * self.input..]
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let a = self.down();
        (0..self.rank)
            .map(|r| {
                a[r * self.input..(r + 1) * self.input]
                    .iter()
                    .zip(x)
                    .map(|(ai, xi)| ai * xi)
                    .sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Tanh { width: usize },
    Adapted { base: Dense, adapter: Adapter },
}

impl Layer {
    pub fn input(&self) -> usize {
        match self {
            Layer::Dense(d) => d.input,
            Layer::Tanh { width } => *width,
            Layer::Adapted { base, .. } => base.input,
        }
    }

    pub fn output(&self) -> usize {
        match self {
            Layer::Dense(d) => d.output,
            Layer::Tanh { width } => *width,
            Layer::Adapted { base, .. } => base.output,
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Tanh { .. } => LayerKind::Activation,
            Layer::Adapted { .. } => LayerKind::LowRankAdapter,
        }
    }

    /// The trainable parameter view of this layer. For an adapted layer that
    /// is the adapter; the host weights are frozen.
    pub fn params(&self) -> &[f64] {
        match self {
            Layer::Dense(d) => &d.params,
            Layer::Tanh { .. } => &[],
            Layer::Adapted { adapter, .. } => &adapter.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Layer::Dense(d) => &mut d.params,
            Layer::Tanh { .. } => &mut [],
            Layer::Adapted { adapter, .. } => &mut adapter.params,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Tanh { .. } => x.iter().map(|v| v.tanh()).collect(),
            Layer::Adapted { base, adapter } => {
                let mut y = base.forward(x);
                let h = adapter.hidden(x);
                let b = adapter.up();
                for (o, yo) in y.iter_mut().enumerate() {
                    let row = &b[o * adapter.rank..(o + 1) * adapter.rank];
                    *yo += row.iter().zip(&h).map(|(bi, hi)| bi * hi).sum::<f64>();
                }
                y
            }
        }
    }

    /// Backpropagates `delta = ∂L/∂y` through the layer given its input `x`
    /// and output `y`. Returns `(parameter gradient, ∂L/∂x)`; either can be
    /// skipped by the flags.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        y: &[f64],
        delta: &[f64],
        want_params: bool,
        want_input: bool,
    ) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
        match self {
            Layer::Dense(d) => (
                want_params.then(|| d.param_grad(x, delta)),
                want_input.then(|| d.input_grad(delta)),
            ),
            Layer::Tanh { .. } => (
                None,
                want_input.then(|| {
                    delta
                        .iter()
                        .zip(y)
                        .map(|(d, yi)| d * (1.0 - yi * yi))
                        .collect()
                }),
            ),
            Layer::Adapted { base, adapter } => {
                let r = adapter.rank;
                let up = adapter.up();
                let mut dh = vec![0.0; r];
                for (o, &d) in delta.iter().enumerate() {
                    for (k, dhk) in dh.iter_mut().enumerate() {
                        *dhk += up[o * r + k] * d;
                    }
                }
                let params = want_params.then(|| {
                    let h = adapter.hidden(x);
                    let mut g = Vec::with_capacity(adapter.params.len());
                    for &dhk in &dh {
                        g.extend(x.iter().map(|&xi| dhk * xi));
                    }
                    for &d in delta {
                        g.extend(h.iter().map(|&hk| d * hk));
                    }
                    g
                });
                let input = want_input.then(|| {
                    let mut dx = base.input_grad(delta);
                    let down = adapter.down();
                    for (k, &dhk) in dh.iter().enumerate() {
                        for (i, dxi) in dx.iter_mut().enumerate() {
                            *dxi += down[k * adapter.input + i] * dhk;
                        }
                    }
                    dx
                });
                (params, input)
            }
        }
    }
}
