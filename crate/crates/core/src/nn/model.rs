use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::layer::{Adapter, Dense, Layer, LayerKind, LayerSpec};
use crate::data::{Dataset, Example};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// A sorted set of 1-based layer indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayerSubset(BTreeSet<usize>);

impl LayerSubset {
    pub fn new(layers: impl IntoIterator<Item = usize>) -> Self {
        Self(layers.into_iter().collect())
    }

    pub fn single(layer: usize) -> Self {
        Self::new([layer])
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn contains(&self, layer: usize) -> bool {
        self.0.contains(&layer)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn union(&self, other: &LayerSubset) -> LayerSubset {
        Self(self.0.union(&other.0).copied().collect())
    }

    pub fn first(&self) -> Option<usize> {
        self.0.first().copied()
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }
}

impl fmt::Display for LayerSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.iter().map(|l| l.to_string()).collect();
        write!(f, "{}", parts.join(";"))
    }
}

impl FromIterator<usize> for LayerSubset {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        Self::new(iter)
    }
}

/// Per-layer vectors keyed by 1-based layer index: gradients, updates, or
/// parameter snapshots restricted to a trainable subset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerGradMap(BTreeMap<usize, Vec<f64>>);

impl LayerGradMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, layer: usize, v: Vec<f64>) {
        self.0.insert(layer, v);
    }

    pub fn get(&self, layer: usize) -> Option<&[f64]> {
        self.0.get(&layer).map(Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.0.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (usize, &mut Vec<f64>)> {
        self.0.iter_mut().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn subset(&self) -> LayerSubset {
        self.keys().collect()
    }

    /// Total number of coordinates over all layers.
    pub fn dim(&self) -> usize {
        self.0.values().map(Vec::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self(
            self.0
                .iter()
                .map(|(k, v)| (*k, vec![0.0; v.len()]))
                .collect(),
        )
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.values().flatten().map(|v| v * v).sum()
    }

    /// L2 norm over the concatenation of all layers.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.0.values_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn div(&mut self, d: f64) {
        self.0.values_mut().flatten().for_each(|v| *v /= d);
    }

    /// `self += other`; both maps must share keys and shapes.
    pub fn add_assign(&mut self, other: &LayerGradMap) -> Result<()> {
        self.check_same_shape(other)?;
        for (k, v) in self.0.iter_mut() {
            for (a, b) in v.iter_mut().zip(&other.0[k]) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn dot(&self, other: &LayerGradMap) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .0
            .iter()
            .flat_map(|(k, v)| v.iter().zip(&other.0[k]))
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn check_same_shape(&self, other: &LayerGradMap) -> Result<()> {
        if self.0.len() != other.0.len() {
            return Err(Error::DimensionMismatch {
                expected: self.0.len(),
                got: other.0.len(),
            });
        }
        for (k, v) in &self.0 {
            match other.0.get(k) {
                Some(o) if o.len() == v.len() => {}
                Some(o) => {
                    return Err(Error::DimensionMismatch {
                        expected: v.len(),
                        got: o.len(),
                    })
                }
                None => return Err(Error::InvalidLayer(*k)),
            }
        }
        Ok(())
    }

    /// Concatenates all layers in key order.
    pub fn flatten(&self) -> Vec<f64> {
        self.0.values().flatten().copied().collect()
    }

    /// Inverse of [`flatten`](Self::flatten) using `self` as the shape template.
    pub fn unflatten_like(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: flat.len(),
            });
        }
        let mut out = BTreeMap::new();
        let mut off = 0;
        for (k, v) in &self.0 {
            out.insert(*k, flat[off..off + v.len()].to_vec());
            off += v.len();
        }
        Ok(Self(out))
    }
}

impl FromIterator<(usize, Vec<f64>)> for LayerGradMap {
    fn from_iter<T: IntoIterator<Item = (usize, Vec<f64>)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredModel {
    specs: Vec<LayerSpec>,
    seed: u64,
    layers: Vec<Layer>,
}

/// Builds a model from a width-consistent chain of layer specs. Parameters
/// are a deterministic function of `seed` and each spec's own seed.
pub fn build_model(specs: &[LayerSpec], seed: u64) -> Result<LayeredModel> {
    if specs.is_empty() {
        return Err(Error::InvalidLayerSpec("model has no layers".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        s.validate()?;
        if i > 0 && specs[i - 1].output != s.input {
            return Err(Error::WidthMismatch {
                index: i + 1,
                expected: specs[i - 1].output,
                got: s.input,
            });
        }
    }
    let layers = specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut r = rng::stream(seed, &[tag::MODEL, (i + 1) as u64, s.seed]);
            Ok(match s.kind {
                LayerKind::Dense => Layer::Dense(Dense::init(s.input, s.output, &mut r)),
                LayerKind::Activation => Layer::Tanh { width: s.input },
                LayerKind::LowRankAdapter => {
                    let base = Dense::init(s.input, s.output, &mut r);
                    let adapter = Adapter::init(s.input, s.output, s.rank.unwrap_or(0), &mut r)?;
                    Layer::Adapted { base, adapter }
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayeredModel {
        specs: specs.to_vec(),
        seed,
        layers,
    })
}

impl LayeredModel {
    /// Assembles a model from explicit layers (checkpoint loading, tests).
    pub fn from_parts(specs: Vec<LayerSpec>, seed: u64, layers: Vec<Layer>) -> Result<Self> {
        if specs.len() != layers.len() || layers.is_empty() {
            return Err(Error::InvalidLayerSpec(
                "spec and layer counts differ or are zero".into(),
            ));
        }
        for i in 1..layers.len() {
            if layers[i - 1].output() != layers[i].input() {
                return Err(Error::WidthMismatch {
                    index: i + 1,
                    expected: layers[i - 1].output(),
                    got: layers[i].input(),
                });
            }
        }
        Ok(Self {
            specs,
            seed,
            layers,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Layer `index` (1-based).
    pub fn layer(&self, index: usize) -> Option<&Layer> {
        index.checked_sub(1).and_then(|i| self.layers.get(i))
    }

    pub fn layer_mut(&mut self, index: usize) -> Option<&mut Layer> {
        index.checked_sub(1).and_then(|i| self.layers.get_mut(i))
    }

    /// Total layer count `L`, activations included.
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].output()
    }

    /// Trainable parameter count `d_ℓ` of layer `index` (0 for activations).
    pub fn layer_param_count(&self, index: usize) -> usize {
        self.layer(index).map_or(0, Layer::param_count)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// `d_Λ = Σ_{ℓ∈Λ} d_ℓ`
    pub fn subset_dim(&self, subset: &LayerSubset) -> usize {
        subset.iter().map(|l| self.layer_param_count(l)).sum()
    }

    /// 1-based indices of layers that carry parameters.
    pub fn parameterized_layers(&self) -> Vec<usize> {
        (1..=self.layers.len())
            .filter(|&l| self.layer_param_count(l) > 0)
            .collect()
    }

    pub fn all_parameterized(&self) -> LayerSubset {
        self.parameterized_layers().into_iter().collect()
    }

    pub fn validate_subset(&self, subset: &LayerSubset) -> Result<()> {
        if subset.is_empty() {
            return Err(Error::EmptyTrainable);
        }
        for l in subset.iter() {
            if self.layer_param_count(l) == 0 {
                return Err(Error::InvalidLayer(l));
            }
        }
        Ok(())
    }

    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.input_width() {
            return Err(Error::DimensionMismatch {
                expected: self.input_width(),
                got: features.len(),
            });
        }
        Ok(self
            .layers
            .iter()
            .fold(features.to_vec(), |x, layer| layer.forward(&x)))
    }

    /// Inputs to every layer plus the final output.
    fn forward_trace(&self, features: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(features.to_vec());
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("nonempty"));
            acts.push(next);
        }
        acts
    }

    pub fn example_loss(&self, example: &Example) -> Result<f64> {
        let logits = self.forward(&example.features)?;
        loss(&logits, example.label)
    }

    /// Mean cross-entropy over a dataset, summed in index order.
    pub fn mean_loss(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total = 0.0;
        for ex in &data.examples {
            total += self.example_loss(ex)?;
        }
        Ok(total / data.len() as f64)
    }

    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(features)?))
    }

    /// Fraction of examples whose argmax logit (ties toward the smaller
    /// class) equals the label.
    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut correct = 0usize;
        for ex in &data.examples {
            if self.predict(&ex.features)? == ex.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len() as f64)
    }

    /// Gradient of the cross-entropy loss on one example with respect to the
    /// parameters of the trainable layers only.
    pub fn per_example_grad(
        &self,
        example: &Example,
        trainable: &LayerSubset,
    ) -> Result<LayerGradMap> {
        self.validate_subset(trainable)?;
        if example.features.len() != self.input_width() {
            return Err(Error::DimensionMismatch {
                expected: self.input_width(),
                got: example.features.len(),
            });
        }
        let k = self.num_classes();
        if example.label >= k {
            return Err(Error::LabelOutOfRange {
                label: example.label,
                classes: k,
            });
        }
        let acts = self.forward_trace(&example.features);
        let mut delta = softmax(&acts[acts.len() - 1]);
        delta[example.label] -= 1.0;

        let lowest = trainable.first().expect("validated nonempty");
        let mut grads = LayerGradMap::new();
        for idx in (lowest..=self.layers.len()).rev() {
            let layer = &self.layers[idx - 1];
            let want_params = trainable.contains(idx);
            let want_input = idx > lowest;
            let (pg, dx) =
                layer.backward(&acts[idx - 1], &acts[idx], &delta, want_params, want_input);
            if let Some(pg) = pg {
                grads.insert(idx, pg);
            }
            if let Some(dx) = dx {
                delta = dx;
            }
        }
        Ok(grads)
    }

    /// Mean gradient over a dataset, summed in index order.
    pub fn mean_grad(&self, data: &Dataset, trainable: &LayerSubset) -> Result<LayerGradMap> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut acc: Option<LayerGradMap> = None;
        for ex in &data.examples {
            let g = self.per_example_grad(ex, trainable)?;
            match acc.as_mut() {
                None => acc = Some(g),
                Some(a) => a.add_assign(&g)?,
            }
        }
        let mut g = acc.expect("nonempty");
        g.div(data.len() as f64);
        Ok(g)
    }

    /// `θ_ℓ ← θ_ℓ + scale · delta_ℓ` for every key of `delta`; other layers
    /// are not touched.
    pub fn apply_update(&mut self, delta: &LayerGradMap, scale: f64) -> Result<()> {
        for (idx, d) in delta.iter() {
            let n = self.layer_param_count(idx);
            if n == 0 {
                return Err(Error::InvalidLayer(idx));
            }
            if n != d.len() {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: d.len(),
                });
            }
        }
        for (idx, d) in delta.iter() {
            let params = self.layer_mut(idx).expect("checked").params_mut();
            for (p, v) in params.iter_mut().zip(d) {
                *p += scale * v;
            }
        }
        Ok(())
    }

    /// Copies the trainable parameters of `subset`.
    pub fn params(&self, subset: &LayerSubset) -> Result<LayerGradMap> {
        self.validate_subset(subset)?;
        Ok(subset
            .iter()
            .map(|l| (l, self.layer(l).expect("validated").params().to_vec()))
            .collect())
    }

    /// Overwrites the trainable parameters of the layers keyed in `values`.
    pub fn set_params(&mut self, values: &LayerGradMap) -> Result<()> {
        for (idx, v) in values.iter() {
            let n = self.layer_param_count(idx);
            if n == 0 {
                return Err(Error::InvalidLayer(idx));
            }
            if n != v.len() {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
        }
        for (idx, v) in values.iter() {
            self.layer_mut(idx)
                .expect("checked")
                .params_mut()
                .copy_from_slice(v);
        }
        Ok(())
    }

    /// Replaces dense layer `index` with the same layer plus a rank-`rank`
    /// adapter (random down-projection, zero up-projection). The adapter
    /// becomes the layer's trainable parameter view.
    pub fn attach_adapter(&self, index: usize, rank: usize, seed: u64) -> Result<LayeredModel> {
        let base = match self.layer(index) {
            Some(Layer::Dense(d)) => d.clone(),
            Some(_) => {
                return Err(Error::InvalidLayerSpec(format!(
                    "layer {index} is not a dense layer"
                )))
            }
            None => return Err(Error::InvalidLayer(index)),
        };
        let mut r = rng::stream(seed, &[tag::ADAPTER, index as u64]);
        let adapter = Adapter::init(base.input, base.output, rank, &mut r)?;
        let mut out = self.clone();
        out.specs[index - 1].kind = LayerKind::LowRankAdapter;
        out.specs[index - 1].rank = Some(rank);
        out.layers[index - 1] = Layer::Adapted { base, adapter };
        Ok(out)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln()
}

/// Cross-entropy `-log softmax(logits)[label]`.
pub fn loss(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    Ok((log_sum_exp(logits) - logits[label]).max(0.0))
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
