//! Executable checks of the one-step noise/signal trade-off on quadratics and
//! of worst-case selection on finite risk tables, plus a grid-search oracle
//! for the worst-case perturbation.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::select::Objective;

/// Two-sided 99% standard-normal quantile.
const Z99: f64 = 2.575_829_303_548_901;

/// `F(θ) = ½ θᵀAθ` with `A` symmetric PSD and `β = λ_max(A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticProblem {
    pub a: Vec<Vec<f64>>,
    pub beta: f64,
    pub theta: Vec<f64>,
}

impl QuadraticProblem {
    pub fn new(a: Vec<Vec<f64>>, theta: Vec<f64>) -> Result<Self> {
        let n = a.len();
        if n == 0 || theta.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: theta.len(),
            });
        }
        if let Some(row) = a.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: row.len(),
            });
        }
        let scale = a
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1.0);
        let asymmetric = (0..n).any(|i| (0..i).any(|j| (a[i][j] - a[j][i]).abs() > 1e-12 * scale));
        if asymmetric {
            return Err(Error::Numeric("matrix is not symmetric".into()));
        }
        let m = DMatrix::from_fn(n, n, |i, j| a[i][j]);
        let eig = SymmetricEigen::new(m).eigenvalues;
        let min = eig.min();
        if min < -1e-10 * scale {
            return Err(Error::Numeric(format!(
                "matrix is not PSD (eigenvalue {min})"
            )));
        }
        Ok(Self {
            beta: eig.max().max(0.0),
            a,
            theta,
        })
    }

    pub fn diagonal(diag: &[f64], theta: Vec<f64>) -> Result<Self> {
        let n = diag.len();
        let a = (0..n)
            .map(|i| (0..n).map(|j| if i == j { diag[i] } else { 0.0 }).collect())
            .collect();
        Self::new(a, theta)
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn value_at(&self, x: &[f64]) -> f64 {
        0.5 * self
            .a
            .iter()
            .zip(x)
            .map(|(row, xi)| xi * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .sum::<f64>()
    }

    pub fn gradient_at(&self, x: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl Objective for QuadraticProblem {
    fn dim(&self) -> usize {
        self.theta.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.value_at(x))
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.gradient_at(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    /// `bound − measured`.
    pub margin: f64,
    pub trials: usize,
    /// Half-width of the 99% confidence interval of `measured` (0 when exact).
    pub half_width: f64,
    pub violated: bool,
    /// Named diagnostics that are reported, not asserted.
    pub diagnostics: Vec<(String, f64)>,
    pub inputs: serde_json::Value,
}

impl BoundReport {
    fn new(
        name: &str,
        measured: f64,
        bound: f64,
        trials: usize,
        half_width: f64,
        diagnostics: Vec<(String, f64)>,
        inputs: serde_json::Value,
    ) -> Self {
        Self {
            name: name.into(),
            measured,
            bound,
            margin: bound - measured,
            trials,
            half_width,
            violated: measured > bound + half_width + 1e-12 * bound.abs().max(1.0),
            diagnostics,
            inputs,
        }
    }

    pub fn diagnostic(&self, key: &str) -> Option<f64> {
        self.diagnostics
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| *v)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_coords(coords: &[usize], dim: usize) -> Result<()> {
    if coords.is_empty() {
        return Err(Error::EmptyTrainable);
    }
    let mut seen = vec![false; dim];
    for &c in coords {
        if c >= dim || std::mem::replace(&mut seen[c], true) {
            return Err(Error::Config(format!("invalid or repeated coordinate {c}")));
        }
    }
    Ok(())
}

/// `‖∇_Λ F‖² / ‖∇F‖²`.
pub fn signal_retention(gradient: &[f64], coords: &[usize]) -> Result<f64> {
    check_coords(coords, gradient.len())?;
    let full: f64 = gradient.iter().map(|g| g * g).sum();
    if full == 0.0 {
        return Err(Error::Numeric("full gradient is zero".into()));
    }
    Ok(coords
        .iter()
        .map(|&c| gradient[c] * gradient[c])
        .sum::<f64>()
        / full)
}

/// `⟨∇_Λ F, g_Λ⟩ / ‖∇_Λ F‖²`, or `None` when the projected gradient is zero.
pub fn alignment_coefficient(gradient: &[f64], g: &[f64], coords: &[usize]) -> Option<f64> {
    let den: f64 = coords.iter().map(|&c| gradient[c] * gradient[c]).sum();
    (den > 0.0).then(|| coords.iter().map(|&c| gradient[c] * g[c]).sum::<f64>() / den)
}

#[derive(Serialize)]
struct TradeoffInputs<'a> {
    problem: &'a QuadraticProblem,
    coords: &'a [usize],
    eta: f64,
    sigma: f64,
    clip_norm: f64,
    trials: usize,
    seed: u64,
}

/// Monte Carlo check of
/// `E F(θ⁺) ≤ F(θ) − η⟨∇_Λ F, g_Λ⟩ + (βη²/2)‖g_Λ‖² + (βη²/2) d_Λ σ²C²`
/// where `θ⁺ = θ − η(g_Λ + z_Λ)`, `g_Λ` is the clipped projected gradient and
/// `z_Λ ~ N(0, σ²C² I)` on the coordinates `coords` (0-based).
#[allow(clippy::too_many_arguments)]
pub fn verify_noise_tradeoff(
    problem: &QuadraticProblem,
    coords: &[usize],
    eta: f64,
    sigma: f64,
    clip_norm: f64,
    trials: usize,
    seed: u64,
) -> Result<BoundReport> {
    let n = problem.dim();
    check_coords(coords, n)?;
    if trials < 2 {
        return Err(Error::Config("need at least two trials".into()));
    }
    if !(clip_norm > 0.0) || !(sigma >= 0.0) || !(eta >= 0.0) {
        return Err(Error::Config("need C > 0, sigma >= 0, eta >= 0".into()));
    }
    let grad = problem.gradient_at(&problem.theta);
    let mut g = vec![0.0; n];
    for &c in coords {
        g[c] = grad[c];
    }
    let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if clip_norm.is_finite() && gn > clip_norm {
        g.iter_mut().for_each(|v| *v *= clip_norm / gn);
    }
    let g_sq: f64 = g.iter().map(|v| v * v).sum();
    let inner: f64 = coords.iter().map(|&c| grad[c] * g[c]).sum();
    let d = coords.len() as f64;
    let noise_var = sigma * sigma * clip_norm * clip_norm;
    let noise_std = if sigma == 0.0 { 0.0 } else { sigma * clip_norm };
    let f0 = problem.value_at(&problem.theta);
    let half_b = problem.beta * eta * eta / 2.0;
    let bound = f0 - eta * inner + half_b * g_sq + half_b * d * noise_var;

    let base: Vec<f64> = problem
        .theta
        .iter()
        .zip(&g)
        .map(|(t, gv)| t - eta * gv)
        .collect();
    let mut r = rng::stream(seed, &[rng::tag::TEST]);
    let mut x = base.clone();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..trials {
        x.copy_from_slice(&base);
        for &c in coords {
            x[c] -= eta * rng::gaussian(&mut r, noise_std);
        }
        let f = problem.value_at(&x);
        sum += f;
        sum_sq += f * f;
    }
    let t = trials as f64;
    let mean = sum / t;
    let var = ((sum_sq - t * mean * mean) / (t - 1.0)).max(0.0);
    let half_width = Z99 * (var / t).sqrt();
    let trace: f64 = coords.iter().map(|&c| problem.a[c][c]).sum();
    let exact = problem.value_at(&base) + eta * eta * noise_var * trace / 2.0;
    let mut diagnostics = vec![("exact_mean".to_string(), exact)];
    if let Ok(s) = signal_retention(&grad, coords) {
        diagnostics.push(("signal_retention".into(), s));
    }
    if let Some(a) = alignment_coefficient(&grad, &g, coords) {
        diagnostics.push(("alignment".into(), a));
    }
    let inputs = serde_json::to_value(TradeoffInputs {
        problem,
        coords,
        eta,
        sigma,
        clip_norm,
        trials,
        seed,
    })?;
    Ok(BoundReport::new(
        "noise-signal trade-off",
        mean,
        bound,
        trials,
        half_width,
        diagnostics,
        inputs,
    ))
}

/// Finite instance of worst-case selection: risks of each candidate under
/// each perturbation on a grid inside the ρ-ball, on synthetic and private
/// data, plus tail mass `alpha_tail` of noise falling outside the ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferInstance {
    pub candidates: Vec<String>,
    pub r_syn: Vec<Vec<f64>>,
    pub r_pri: Vec<Vec<f64>>,
    /// Probability of each grid point; sums to `1 − alpha_tail`.
    pub probs: Vec<f64>,
    pub alpha_tail: f64,
    /// Private risk of the chosen candidate when noise leaves the ball.
    pub tail_value: f64,
    pub bound_b: f64,
    pub tau: f64,
}

impl TransferInstance {
    pub fn max_gap(&self) -> f64 {
        self.r_syn
            .iter()
            .flatten()
            .zip(self.r_pri.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.candidates.len();
        let k = self.probs.len();
        if q == 0 || k == 0 {
            return Err(Error::Config("empty candidate family or grid".into()));
        }
        let shape_ok = |t: &[Vec<f64>]| t.len() == q && t.iter().all(|r| r.len() == k);
        if !shape_ok(&self.r_syn) || !shape_ok(&self.r_pri) {
            return Err(Error::Config("risk tables must be |Q| × |grid|".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha_tail) || self.probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Config("probabilities must be nonnegative".into()));
        }
        let total = self.probs.iter().sum::<f64>() + self.alpha_tail;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        let in_range = |v: f64| (0.0..=self.bound_b).contains(&v);
        if !self.r_pri.iter().flatten().all(|&v| in_range(v)) || !in_range(self.tail_value) {
            return Err(Error::Config("private risks must lie in [0, B]".into()));
        }
        if self.tau + 1e-12 < self.max_gap() {
            return Err(Error::Config(format!(
                "tau {} is below the measured gap {}",
                self.tau,
                self.max_gap()
            )));
        }
        Ok(())
    }
}

fn row_max(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Picks `Λ* = argmin_Λ max_grid R_syn` and checks
/// `E[R_pri(Λ*, Z)] ≤ min_Λ max_grid R_pri + 2τ + α_tail·B` exactly.
pub fn verify_selection_transfer(instance: &TransferInstance) -> Result<BoundReport> {
    instance.validate()?;
    let chosen = (0..instance.candidates.len())
        .min_by(|&a, &b| {
            row_max(&instance.r_syn[a])
                .total_cmp(&row_max(&instance.r_syn[b]))
                .then(a.cmp(&b))
        })
        .expect("nonempty");
    let measured = instance.r_pri[chosen]
        .iter()
        .zip(&instance.probs)
        .map(|(r, p)| r * p)
        .sum::<f64>()
        + instance.alpha_tail * instance.tail_value;
    let min_sup = instance
        .r_pri
        .iter()
        .map(|r| row_max(r))
        .fold(f64::INFINITY, f64::min);
    let bound = min_sup + 2.0 * instance.tau + instance.alpha_tail * instance.bound_b;
    let diagnostics = vec![
        ("chosen".into(), chosen as f64),
        ("min_sup_private".into(), min_sup),
        ("max_gap".into(), instance.max_gap()),
    ];
    Ok(BoundReport::new(
        "worst-case selection transfer",
        measured,
        bound,
        0,
        0.0,
        diagnostics,
        serde_json::to_value(instance)?,
    ))
}

/// Grid points of the ρ-ball in `dim ≤ 3` dimensions: the cube lattice with
/// `2·resolution + 1` points per axis clipped to the ball, plus the sphere
/// sampled at angular step `π / (4·resolution)`.
pub fn ball_grid(dim: usize, rho: f64, resolution: usize) -> Result<Vec<Vec<f64>>> {
    if dim == 0 || dim > 3 {
        return Err(Error::Config(format!(
            "grid search supports 1 to 3 dimensions, got {dim}"
        )));
    }
    if resolution == 0 || !(rho >= 0.0) {
        return Err(Error::Config("need resolution >= 1 and rho >= 0".into()));
    }
    if rho == 0.0 {
        return Ok(vec![vec![0.0; dim]]);
    }
    let r = resolution as i64;
    let axis: Vec<f64> = (-r..=r).map(|i| rho * i as f64 / r as f64).collect();
    let mut points = Vec::new();
    let mut idx = vec![0usize; dim];
    'lattice: loop {
        let p: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
        if p.iter().map(|v| v * v).sum::<f64>() <= rho * rho * (1.0 + 1e-12) {
            points.push(p);
        }
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < axis.len() {
                continue 'lattice;
            }
            *slot = 0;
        }
        break;
    }
    let steps = 8 * resolution;
    let angle = |i: usize| std::f64::consts::TAU * i as f64 / steps as f64;
    match dim {
        1 => points.extend([vec![-rho], vec![rho]]),
        2 => points.extend((0..steps).map(|i| vec![rho * angle(i).cos(), rho * angle(i).sin()])),
        _ => {
            for i in 0..=steps / 2 {
                let polar = angle(i);
                let ring = if i == 0 || i == steps / 2 { 1 } else { steps };
                for j in 0..ring {
                    let az = angle(j);
                    points.push(vec![
                        rho * polar.sin() * az.cos(),
                        rho * polar.sin() * az.sin(),
                        rho * polar.cos(),
                    ]);
                }
            }
        }
    }
    Ok(points)
}

/// Exhaustive search over [`ball_grid`] for the `ξ` maximizing
/// `F(θ − η(g + ξ))`; ties keep the first point found.
pub fn brute_force_worst_case<O: Objective + ?Sized>(
    obj: &O,
    theta: &[f64],
    eta: f64,
    g: &[f64],
    rho: f64,
    resolution: usize,
) -> Result<Vec<f64>> {
    let d = obj.dim();
    if theta.len() != d || g.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: theta.len().min(g.len()),
        });
    }
    let mut best = vec![0.0; d];
    let mut best_val = f64::NEG_INFINITY;
    for xi in ball_grid(d, rho, resolution)? {
        let x: Vec<f64> = (0..d).map(|i| theta[i] - eta * (g[i] + xi[i])).collect();
        let v = obj.value(&x)?;
        if v > best_val {
            best_val = v;
            best = xi;
        }
    }
    Ok(best)
}
