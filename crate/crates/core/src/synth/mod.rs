//! Private synthetic data: candidates are voted for by their nearest private
//! neighbours, the vote histogram is released with Gaussian noise, and the
//! top-voted candidates are kept with noisy-majority labels.

mod pool;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::accountant::{calibrate_sigma, MechanismEvent, PrivacyLedger, Stage};
use crate::data::{self, Dataset, Example};
use crate::error::{Error, Result};
use crate::nn::argmax;
use crate::rng::{self, tag, StreamRng};

pub use pool::{
    generate_candidates, CandidatePool, Encoder, EncoderKind, GeneratorConfig, MixtureComponent,
    Provenance,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt(),
            Metric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

/// How the vote histogram is released.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReleaseMode {
    /// Noise the candidate×class table once; the candidate marginal is the
    /// row sum of the noisy table.
    #[default]
    Joint,
    /// Noise the marginal and the candidate×class table independently.
    TwoRelease,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteHistogram {
    /// `counts[j][c]`: private examples of class `c` whose nearest candidate is `j`.
    pub counts: Vec<Vec<u64>>,
    pub marginal: Vec<u64>,
    pub noisy: Option<Vec<Vec<f64>>>,
    pub noisy_marginal: Option<Vec<f64>>,
    /// Noise scale of the released marginal (per candidate).
    pub sigma_hist: Option<f64>,
    /// Noise scale of each candidate×class cell.
    pub sigma_lab: Option<f64>,
}

impl VoteHistogram {
    pub fn num_candidates(&self) -> usize {
        self.counts.len()
    }

    pub fn num_classes(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn total(&self) -> u64 {
        self.marginal.iter().sum()
    }

    pub fn is_private(&self) -> bool {
        self.noisy.is_some()
    }

    fn noisy_parts(&self) -> Result<(&[Vec<f64>], &[f64])> {
        match (&self.noisy, &self.noisy_marginal) {
            (Some(n), Some(m)) => Ok((n, m)),
            _ => Err(Error::Config("histogram has not been privatized".into())),
        }
    }
}

fn nearest(point: &[f64], candidates: &[Vec<f64>], metric: Metric) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in candidates.iter().enumerate() {
        let d = metric.distance(point, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

/// Exact vote counts; ties go to the smallest candidate index.
pub fn vote(
    private: &Dataset,
    pool: &CandidatePool,
    encoder: &Encoder,
    metric: Metric,
) -> Result<VoteHistogram> {
    if pool.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = private.num_classes;
    let encoded: Vec<Vec<f64>> = pool
        .points()
        .iter()
        .map(|p| encoder.encode(p))
        .collect::<Result<_>>()?;
    let mut counts = vec![vec![0u64; classes]; pool.len()];
    for ex in &private.examples {
        let e = encoder.encode(&ex.features)?;
        counts[nearest(&e, &encoded, metric)][ex.label] += 1;
    }
    let marginal = counts.iter().map(|row| row.iter().sum()).collect();
    Ok(VoteHistogram {
        counts,
        marginal,
        noisy: None,
        noisy_marginal: None,
        sigma_hist: None,
        sigma_lab: None,
    })
}

/// Adds independent Gaussian noise in cell order. In joint mode `sigma_hist`
/// is not drawn from; the recorded marginal scale is `√K · sigma_lab`.
pub fn privatize(
    hist: &VoteHistogram,
    sigma_hist: f64,
    sigma_lab: f64,
    mode: ReleaseMode,
    rng: &mut StreamRng,
) -> Result<VoteHistogram> {
    if !(sigma_hist >= 0.0) || !(sigma_lab >= 0.0) {
        return Err(Error::Privacy("noise scales must be >= 0".into()));
    }
    let noisy: Vec<Vec<f64>> = hist
        .counts
        .iter()
        .map(|row| {
            row.iter()
                .map(|&h| h as f64 + rng::gaussian(rng, sigma_lab))
                .collect()
        })
        .collect();
    let (noisy_marginal, sigma_hist) = match mode {
        ReleaseMode::Joint => (
            noisy.iter().map(|row| row.iter().sum()).collect(),
            (hist.num_classes() as f64).sqrt() * sigma_lab,
        ),
        ReleaseMode::TwoRelease => (
            hist.marginal
                .iter()
                .map(|&h| h as f64 + rng::gaussian(rng, sigma_hist))
                .collect(),
            sigma_hist,
        ),
    };
    Ok(VoteHistogram {
        noisy: Some(noisy),
        noisy_marginal: Some(noisy_marginal),
        sigma_hist: Some(sigma_hist),
        sigma_lab: Some(sigma_lab),
        ..hist.clone()
    })
}

/// Indices of the `k` largest scores, ties toward the smaller index,
/// returned in ascending index order.
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(Error::Config(format!(
            "cannot select {k} of {} candidates",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn select_topk(hist: &VoteHistogram, k_syn: usize) -> Result<Vec<usize>> {
    top_k(hist.noisy_parts()?.1, k_syn)
}

/// Noisy-majority label of each selected candidate.
pub fn label(hist: &VoteHistogram, selected: &[usize]) -> Result<Vec<usize>> {
    let (noisy, _) = hist.noisy_parts()?;
    selected
        .iter()
        .map(|&j| {
            noisy
                .get(j)
                .map(|row| argmax(row))
                .ok_or_else(|| Error::Config(format!("candidate {j} out of range")))
        })
        .collect()
}

/// Shuffles `0..n` and cuts at `round(train_fraction · n)`.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[tag::SPLIT]));
    let cut = ((train_fraction * n as f64).round() as usize).min(n);
    let val = idx.split_off(cut);
    (idx, val)
}

/// Noise for the histogram release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SynthNoise {
    /// Calibrate σ so the release costs at most `epsilon` at `delta`.
    Budget { epsilon: f64, delta: f64 },
    /// Use σ directly; `0` disables noise and records no event.
    Fixed { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub metric: Metric,
    pub mode: ReleaseMode,
    pub k_syn: usize,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub noise_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            metric: Metric::Euclidean,
            mode: ReleaseMode::Joint,
            k_syn: 1024,
            train_fraction: 0.7,
            split_seed: 0,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    /// Selected candidate indices, ascending.
    pub selected: Vec<usize>,
    /// `labels[i]` belongs to `selected[i]`.
    pub labels: Vec<usize>,
    /// Positions into `selected`.
    pub train_positions: Vec<usize>,
    pub val_positions: Vec<usize>,
    pub train: Dataset,
    pub val: Dataset,
    pub sigma_hist: f64,
    pub sigma_lab: f64,
    pub mode: ReleaseMode,
    pub events: Vec<MechanismEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSidecar {
    pub selected: Vec<usize>,
    pub labels: Vec<usize>,
    pub train_positions: Vec<usize>,
    pub val_positions: Vec<usize>,
    pub sigma_hist: f64,
    pub sigma_lab: f64,
    pub mode: ReleaseMode,
    pub events: Vec<MechanismEvent>,
}

impl SyntheticDataset {
    pub fn records(&self) -> usize {
        self.selected.len()
    }

    pub fn sidecar(&self) -> SynthSidecar {
        SynthSidecar {
            selected: self.selected.clone(),
            labels: self.labels.clone(),
            train_positions: self.train_positions.clone(),
            val_positions: self.val_positions.clone(),
            sigma_hist: self.sigma_hist,
            sigma_lab: self.sigma_lab,
            mode: self.mode,
            events: self.events.clone(),
        }
    }

    /// Writes `train.csv`, `val.csv` and `synthetic.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        data::save_dataset(dir.join("train.csv"), &self.train)?;
        data::save_dataset(dir.join("val.csv"), &self.val)?;
        std::fs::write(
            dir.join("synthetic.json"),
            serde_json::to_string_pretty(&self.sidecar())?,
        )?;
        Ok(())
    }

    /// Both splits together, in `selected` order.
    pub fn all(&self) -> Dataset {
        let mut pos: Vec<(usize, &Example)> = self
            .train_positions
            .iter()
            .zip(&self.train.examples)
            .chain(self.val_positions.iter().zip(&self.val.examples))
            .map(|(&p, e)| (p, e))
            .collect();
        pos.sort_by_key(|(p, _)| *p);
        Dataset {
            examples: pos.into_iter().map(|(_, e)| e.clone()).collect(),
            num_classes: self.train.num_classes,
        }
    }
}

/// Noise scale and accounting events for the chosen release.
fn release_noise(noise: SynthNoise, mode: ReleaseMode) -> Result<(f64, Vec<MechanismEvent>)> {
    let releases = match mode {
        ReleaseMode::Joint => 1,
        ReleaseMode::TwoRelease => 2,
    };
    let sigma = match noise {
        SynthNoise::Fixed { sigma } => {
            if !(sigma >= 0.0) || !sigma.is_finite() {
                return Err(Error::Privacy(format!(
                    "sigma must be finite and >= 0, got {sigma}"
                )));
            }
            sigma
        }
        SynthNoise::Budget { epsilon, delta } => calibrate_sigma(epsilon, delta, 1.0, releases)?,
    };
    let events = if sigma > 0.0 {
        vec![MechanismEvent {
            count: releases,
            ..MechanismEvent::gaussian(sigma, 1.0)
        }]
    } else {
        Vec::new()
    };
    Ok((sigma, events))
}

/// Vote, release, select, label and split. The release is the only step that
/// touches private data and the only one recorded in `ledger`.
pub fn build_synthetic_dataset(
    private: &Dataset,
    pool: &CandidatePool,
    encoder: &Encoder,
    noise: SynthNoise,
    cfg: &SynthConfig,
    ledger: &mut PrivacyLedger,
) -> Result<SyntheticDataset> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
    }
    let hist = vote(private, pool, encoder, cfg.metric)?;
    let (sigma, events) = release_noise(noise, cfg.mode)?;
    let mut rng = rng::stream(cfg.noise_seed, &[tag::SYNTH_NOISE]);
    let noisy = privatize(&hist, sigma, sigma, cfg.mode, &mut rng)?;
    for e in &events {
        ledger.record(Stage::Synthetic, "vote-histogram", *e)?;
    }
    let selected = select_topk(&noisy, cfg.k_syn)?;
    let labels = label(&noisy, &selected)?;
    let (train_positions, val_positions) =
        split_indices(selected.len(), cfg.train_fraction, cfg.split_seed);
    let make = |positions: &[usize]| {
        Dataset::new(
            positions
                .iter()
                .map(|&p| Example::new(pool.get(selected[p]).to_vec(), labels[p]))
                .collect(),
            private.num_classes,
        )
    };
    Ok(SyntheticDataset {
        train: make(&train_positions)?,
        val: make(&val_positions)?,
        selected,
        labels,
        train_positions,
        val_positions,
        sigma_hist: noisy.sigma_hist.unwrap_or(0.0),
        sigma_lab: sigma,
        mode: cfg.mode,
        events,
    })
}
