//! Layer selection by perturbation-aware temporary training.
//!
//! Each candidate subset is trained for a few full-batch steps on the
//! synthetic train split while a worst-case perturbation of the size of the
//! downstream DP noise is injected into every update, then scored by
//! accuracy on the synthetic validation split.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dp_optim::clip;
use crate::error::{Error, Result};
use crate::nn::{LayerGradMap, LayerSubset, LayeredModel};
use crate::rng::{self, tag, StreamRng};

/// A differentiable scalar function of a flat parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Mean loss of `model` on `data` as a function of the parameters of `subset`.
pub struct ModelObjective<'a> {
    model: &'a LayeredModel,
    template: LayerGradMap,
    subset: LayerSubset,
    data: &'a Dataset,
}

impl<'a> ModelObjective<'a> {
    pub fn new(model: &'a LayeredModel, subset: &LayerSubset, data: &'a Dataset) -> Result<Self> {
        model.validate_subset(subset)?;
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            model,
            template: model.params(subset)?,
            subset: subset.clone(),
            data,
        })
    }

    pub fn point(&self) -> Vec<f64> {
        self.template.flatten()
    }

    fn at(&self, x: &[f64]) -> Result<LayeredModel> {
        let mut m = self.model.clone();
        m.set_params(&self.template.unflatten_like(x)?)?;
        Ok(m)
    }
}

impl Objective for ModelObjective<'_> {
    fn dim(&self) -> usize {
        self.template.dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        self.at(x)?.mean_loss(self.data)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.at(x)?.mean_grad(self.data, &self.subset)?.flatten())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum PerturbationMode {
    /// Closed form from one gradient at the probe point `θ − ηg`.
    #[default]
    FirstOrder,
    /// First-order start refined by projected ascent on the sphere.
    Pga {
        steps: usize,
    },
    /// Uniformly random direction of norm ρ.
    Random,
    None,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn scaled_to(v: &[f64], rho: f64) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 || rho == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x * rho / n).collect()
    }
}

fn step_point(theta: &[f64], g: &[f64], xi: &[f64], eta: f64) -> Vec<f64> {
    theta
        .iter()
        .zip(g)
        .zip(xi)
        .map(|((t, g), x)| t - eta * (g + x))
        .collect()
}

/// `ξ` with `‖ξ‖ ≤ ρ` that (approximately) maximizes `F(θ − η(g + ξ))`.
pub fn worst_case_on<O: Objective + ?Sized>(
    obj: &O,
    theta: &[f64],
    g: &[f64],
    rho: f64,
    eta: f64,
    mode: PerturbationMode,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    if !(rho >= 0.0) {
        return Err(Error::Config(format!("radius must be >= 0, got {rho}")));
    }
    let d = obj.dim();
    if theta.len() != d || g.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: theta.len().min(g.len()),
        });
    }
    if rho == 0.0 || mode == PerturbationMode::None {
        return Ok(vec![0.0; d]);
    }
    if mode == PerturbationMode::Random {
        let dir: Vec<f64> = (0..d).map(|_| rng::gaussian(rng, 1.0)).collect();
        return Ok(scaled_to(&dir, rho));
    }
    let zero = vec![0.0; d];
    let ascent = |xi: &[f64]| -> Result<Vec<f64>> {
        let grad = obj.gradient(&step_point(theta, g, xi, eta))?;
        Ok(grad.iter().map(|v| -v).collect())
    };
    let first = scaled_to(&ascent(&zero)?, rho);
    let PerturbationMode::Pga { steps } = mode else {
        return Ok(first);
    };
    if norm(&first) == 0.0 {
        return Ok(first);
    }
    let loss = |xi: &[f64]| obj.value(&step_point(theta, g, xi, eta));
    let mut best_val = loss(&first)?;
    let mut best = first.clone();
    let mut xi = first;
    for _ in 0..steps {
        let dir = scaled_to(&ascent(&xi)?, rho);
        let moved: Vec<f64> = xi.iter().zip(&dir).map(|(a, b)| a + b).collect();
        xi = scaled_to(&moved, rho);
        if norm(&xi) == 0.0 {
            break;
        }
        let v = loss(&xi)?;
        if v > best_val {
            best_val = v;
            best = xi.clone();
        }
    }
    Ok(best)
}

/// `σ C √d_Λ / |B|`: expected norm of the per-update DP noise.
pub fn effective_rho(sigma: f64, clip_norm: f64, dim: usize, batch_size: usize) -> f64 {
    sigma * clip_norm * (dim as f64).sqrt() / batch_size as f64
}

/// Worst-case perturbation of the parameters of `subset`, as a layer map.
#[allow(clippy::too_many_arguments)]
pub fn worst_case_perturbation(
    model: &LayeredModel,
    subset: &LayerSubset,
    g: &LayerGradMap,
    rho: f64,
    eta: f64,
    data: &Dataset,
    mode: PerturbationMode,
    rng: &mut StreamRng,
) -> Result<LayerGradMap> {
    let obj = ModelObjective::new(model, subset, data)?;
    obj.template.check_same_shape(g)?;
    let xi = worst_case_on(&obj, &obj.point(), &g.flatten(), rho, eta, mode, rng)?;
    g.unflatten_like(&xi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Radius {
    /// Match the downstream noise: `σ C √d_Λ / |B|`.
    Matched {
        noise_multiplier: f64,
        batch_size: usize,
    },
    Explicit {
        rho: f64,
    },
}

impl Radius {
    pub fn rho(&self, clip_norm: f64, dim: usize) -> f64 {
        match *self {
            Radius::Matched {
                noise_multiplier,
                batch_size,
            } => effective_rho(noise_multiplier, clip_norm, dim, batch_size),
            Radius::Explicit { rho } => rho,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub mode: PerturbationMode,
    pub radius: Radius,
    pub top_k: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            learning_rate: 0.5,
            clip_norm: 1.0,
            mode: PerturbationMode::FirstOrder,
            radius: Radius::Explicit { rho: 0.0 },
            top_k: 2,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("selection needs lr >= 0 and clip > 0".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        match self.radius {
            Radius::Matched {
                noise_multiplier,
                batch_size,
            } if !(noise_multiplier >= 0.0) || batch_size == 0 => Err(Error::Config(
                "matched radius needs sigma >= 0 and batch > 0".into(),
            )),
            Radius::Explicit { rho } if !(rho >= 0.0) => {
                Err(Error::Config("radius must be >= 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Copy of `base` after `cfg.steps` updates `θ_Λ ← θ_Λ − η(g_Λ + ξ*)`, where
/// `g_Λ` is the full-split mean gradient clipped to `C` and `ξ*` is
/// recomputed every step.
pub fn temp_train(
    base: &LayeredModel,
    subset: &LayerSubset,
    train: &Dataset,
    cfg: &SelectionConfig,
    rng: &mut StreamRng,
) -> Result<LayeredModel> {
    cfg.validate()?;
    base.validate_subset(subset)?;
    let mut model = base.clone();
    if cfg.steps == 0 {
        return Ok(model);
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let rho = cfg.radius.rho(cfg.clip_norm, base.subset_dim(subset));
    for _ in 0..cfg.steps {
        let g = clip(&model.mean_grad(train, subset)?, cfg.clip_norm);
        let xi = worst_case_perturbation(
            &model,
            subset,
            &g,
            rho,
            cfg.learning_rate,
            train,
            cfg.mode,
            rng,
        )?;
        let mut step = g;
        step.add_assign(&xi)?;
        model.apply_update(&step, -cfg.learning_rate)?;
    }
    Ok(model)
}

/// Validation accuracy.
pub fn score(model: &LayeredModel, val: &Dataset) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    model.accuracy(val)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Family {
    /// One singleton per parameterized layer; `Λ*` is the union of the best `k`.
    PerLayer,
    /// Given subsets; `Λ*` is the best one.
    Explicit { subsets: Vec<LayerSubset> },
}

pub fn candidate_family(model: &LayeredModel, family: &Family) -> Result<Vec<LayerSubset>> {
    let out: Vec<LayerSubset> = match family {
        Family::PerLayer => model
            .parameterized_layers()
            .into_iter()
            .map(LayerSubset::single)
            .collect(),
        Family::Explicit { subsets } => {
            for s in subsets {
                model.validate_subset(s)?;
            }
            subsets.clone()
        }
    };
    if out.is_empty() {
        return Err(Error::Config("candidate family is empty".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub subset: LayerSubset,
    pub dim: usize,
    pub rho: f64,
    pub perf: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// In family order.
    pub candidates: Vec<CandidateScore>,
    /// Candidate positions, best first.
    pub ranking: Vec<usize>,
    pub chosen: LayerSubset,
    pub config: SelectionConfig,
    pub family: Family,
    pub base_seed: u64,
}

/// Scores every candidate on its own copy of `model`. Ranking is by `Perf`
/// descending, ties toward the lexicographically smaller subset.
pub fn select(
    model: &LayeredModel,
    family: &Family,
    train: &Dataset,
    val: &Dataset,
    cfg: &SelectionConfig,
    base_seed: u64,
) -> Result<SelectionReport> {
    cfg.validate()?;
    let subsets = candidate_family(model, family)?;
    if matches!(family, Family::PerLayer) && cfg.top_k > subsets.len() {
        return Err(Error::Config(format!(
            "top_k {} exceeds {} candidate layers",
            cfg.top_k,
            subsets.len()
        )));
    }
    let mut candidates = Vec::with_capacity(subsets.len());
    for subset in subsets {
        let mut tags = vec![tag::SELECTION];
        tags.extend(subset.iter().map(|l| l as u64));
        let seed = rng::derive_seed(base_seed, &tags);
        let mut r = rng::stream(seed, &[]);
        let trained = temp_train(model, &subset, train, cfg, &mut r)?;
        let dim = model.subset_dim(&subset);
        candidates.push(CandidateScore {
            rho: cfg.radius.rho(cfg.clip_norm, dim),
            perf: score(&trained, val)?,
            dim,
            subset,
            seed,
        });
    }
    let mut ranking: Vec<usize> = (0..candidates.len()).collect();
    ranking.sort_by(|&a, &b| {
        candidates[b]
            .perf
            .total_cmp(&candidates[a].perf)
            .then_with(|| candidates[a].subset.cmp(&candidates[b].subset))
    });
    let chosen = match family {
        Family::PerLayer => ranking[..cfg.top_k]
            .iter()
            .fold(LayerSubset::default(), |acc, &i| {
                acc.union(&candidates[i].subset)
            }),
        Family::Explicit { .. } => candidates[ranking[0]].subset.clone(),
    };
    Ok(SelectionReport {
        candidates,
        ranking,
        chosen,
        config: cfg.clone(),
        family: family.clone(),
        base_seed,
    })
}

impl SelectionReport {
    /// CSV with one row per candidate: layers, dimension, radius, score, rank.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["layers", "dim", "rho", "perf", "rank"])?;
        for (rank, &i) in self.ranking.iter().enumerate() {
            let c = &self.candidates[i];
            w.write_record([
                c.subset.to_string(),
                c.dim.to_string(),
                c.rho.to_string(),
                c.perf.to_string(),
                (rank + 1).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Layer indices of the candidates, best first.
    pub fn ranked_subsets(&self) -> Vec<&LayerSubset> {
        self.ranking
            .iter()
            .map(|&i| &self.candidates[i].subset)
            .collect()
    }
}

/// Draws a uniformly random subset of `k` parameterized layers.
pub fn random_layers(model: &LayeredModel, k: usize, rng: &mut StreamRng) -> Result<LayerSubset> {
    let mut pool = model.parameterized_layers();
    if k == 0 || k > pool.len() {
        return Err(Error::Config(format!(
            "cannot draw {k} of {} layers",
            pool.len()
        )));
    }
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        out.push(pool.swap_remove(rng.random_range(0..pool.len())));
    }
    Ok(LayerSubset::new(out))
}
