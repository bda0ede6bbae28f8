use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data;
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Generated,
    Imported,
}

/// Unlabeled candidate feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    points: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl CandidatePool {
    pub fn new(points: Vec<Vec<f64>>, provenance: Provenance) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyDataset)?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::Config("candidates need at least one feature".into()));
        }
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Ok(Self { points, provenance })
    }

    pub fn import(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(data::read_features(path)?, Provenance::Imported)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn get(&self, j: usize) -> &[f64] {
        &self.points[j]
    }
}

/// One isotropic Gaussian component of the local generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mean: Vec<f64>,
    pub std: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub components: Vec<MixtureComponent>,
    /// Number of seed samples drawn from the mixture.
    pub seed_count: usize,
    /// Perturbed copies per seed sample.
    pub variations: usize,
    /// Standard deviation of the per-coordinate jitter applied to copies.
    pub perturbation: f64,
}

impl GeneratorConfig {
    pub fn pool_size(&self) -> usize {
        (self.variations + 1) * self.seed_count
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .components
            .first()
            .ok_or_else(|| Error::Config("generator mixture is empty".into()))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::Config(
                "mixture components need a nonempty mean".into(),
            ));
        }
        for c in &self.components {
            if c.mean.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.mean.len(),
                });
            }
            if !(c.std >= 0.0) || !(c.weight >= 0.0) || !c.weight.is_finite() {
                return Err(Error::Config(
                    "component std and weight must be >= 0".into(),
                ));
            }
        }
        if !(self.components.iter().map(|c| c.weight).sum::<f64>() > 0.0) {
            return Err(Error::Config("mixture weights sum to zero".into()));
        }
        if self.seed_count == 0 {
            return Err(Error::Config("seed_count must be >= 1".into()));
        }
        if !(self.perturbation >= 0.0) {
            return Err(Error::Config("perturbation must be >= 0".into()));
        }
        Ok(())
    }
}

fn pick_component(components: &[MixtureComponent], rng: &mut StreamRng) -> usize {
    let total: f64 = components.iter().map(|c| c.weight).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, c) in components.iter().enumerate() {
        if u < c.weight {
            return i;
        }
        u -= c.weight;
    }
    components.iter().rposition(|c| c.weight > 0.0).unwrap_or(0)
}

/// Draws `seed_count` mixture samples; each is followed in the pool by its
/// `variations` jittered copies.
pub fn generate_candidates(cfg: &GeneratorConfig, rng: &mut StreamRng) -> Result<CandidatePool> {
    cfg.validate()?;
    let mut points = Vec::with_capacity(cfg.pool_size());
    for _ in 0..cfg.seed_count {
        let c = &cfg.components[pick_component(&cfg.components, rng)];
        let base: Vec<f64> = c
            .mean
            .iter()
            .map(|m| m + rng::gaussian(rng, c.std))
            .collect();
        let copies: Vec<Vec<f64>> = (0..cfg.variations)
            .map(|_| {
                base.iter()
                    .map(|b| b + rng::gaussian(rng, cfg.perturbation))
                    .collect()
            })
            .collect();
        points.push(base);
        points.extend(copies);
    }
    CandidatePool::new(points, Provenance::Generated)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    Identity,
    RandomProjection,
}

/// Public feature map applied to both private and candidate points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub kind: EncoderKind,
    pub seed: u64,
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(skip)]
    matrix: Vec<f64>,
}

impl Encoder {
    pub fn identity(dim: usize) -> Self {
        Self {
            kind: EncoderKind::Identity,
            seed: 0,
            input_dim: dim,
            output_dim: dim,
            matrix: Vec::new(),
        }
    }

    /// Gaussian projection with entries `N(0, 1/output_dim)`.
    pub fn random_projection(input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::Config(
                "projection dimensions must be positive".into(),
            ));
        }
        let mut rng = rng::stream(seed, &[]);
        let std = 1.0 / (output_dim as f64).sqrt();
        let matrix = (0..input_dim * output_dim)
            .map(|_| rng::gaussian(&mut rng, std))
            .collect();
        Ok(Self {
            kind: EncoderKind::RandomProjection,
            seed,
            input_dim,
            output_dim,
            matrix,
        })
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(match self.kind {
            EncoderKind::Identity => x.to_vec(),
            EncoderKind::RandomProjection => self
                .matrix
                .chunks_exact(self.input_dim)
                .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
                .collect(),
        })
    }
}
