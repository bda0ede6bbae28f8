use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default Rényi orders: 1.25, 1.5, 1.75, 2, 3, …, 64, 128, 256.
pub fn default_orders() -> Vec<f64> {
    let mut v = vec![1.25, 1.5, 1.75];
    v.extend((2..=64).map(f64::from));
    v.extend([128.0, 256.0]);
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    pub orders: Vec<f64>,
    pub epsilons: Vec<f64>,
}

impl RdpCurve {
    pub fn zero(orders: &[f64]) -> Self {
        Self {
            orders: orders.to_vec(),
            epsilons: vec![0.0; orders.len()],
        }
    }

    /// Coordinate-wise addition; both curves must share the order grid.
    pub fn add(&self, other: &RdpCurve) -> Result<RdpCurve> {
        if self.orders != other.orders {
            return Err(Error::Privacy(
                "RDP curves use different order grids".into(),
            ));
        }
        Ok(Self {
            orders: self.orders.clone(),
            epsilons: self
                .epsilons
                .iter()
                .zip(&other.epsilons)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn scaled(&self, factor: f64) -> RdpCurve {
        Self {
            orders: self.orders.clone(),
            epsilons: self.epsilons.iter().map(|e| e * factor).collect(),
        }
    }
}

/// A (possibly subsampled, repeated) Gaussian mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismEvent {
    pub sigma: f64,
    pub sensitivity: f64,
    pub sampling_rate: f64,
    pub count: u64,
}

impl MechanismEvent {
    pub fn gaussian(sigma: f64, sensitivity: f64) -> Self {
        Self {
            sigma,
            sensitivity,
            sampling_rate: 1.0,
            count: 1,
        }
    }

    pub fn subsampled(sigma: f64, sampling_rate: f64, count: u64) -> Self {
        Self {
            sigma,
            sensitivity: 1.0,
            sampling_rate,
            count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Privacy(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !(self.sensitivity > 0.0) || !self.sensitivity.is_finite() {
            return Err(Error::Privacy("sensitivity must be > 0".into()));
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return Err(Error::Privacy("sampling rate must lie in (0, 1]".into()));
        }
        if self.count == 0 {
            return Err(Error::Privacy("event count must be >= 1".into()));
        }
        Ok(())
    }

    /// RDP of a single application at order `alpha`. Subsampled events use
    /// the integer-order bound at `ceil(alpha)`, valid because RDP is
    /// nondecreasing in the order.
    pub fn rdp_single(&self, alpha: f64) -> Result<f64> {
        if self.sampling_rate >= 1.0 {
            gaussian_rdp(self.sigma, self.sensitivity, alpha)
        } else {
            let order = alpha.ceil().max(2.0) as u32;
            subsampled_gaussian_rdp(self.sampling_rate, self.sigma / self.sensitivity, order)
        }
    }
}

/// `α Δ² / (2σ²)`
pub fn gaussian_rdp(sigma: f64, sensitivity: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(Error::Privacy(format!(
            "Rényi order must be > 1, got {alpha}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::Privacy(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(alpha * sensitivity * sensitivity / (2.0 * sigma * sigma))
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Integer-order RDP bound for the Poisson-subsampled Gaussian mechanism
/// with unit sensitivity:
///
/// `1/(α−1) · log Σ_{j=0}^{α} C(α,j) (1−q)^{α−j} q^j exp(j(j−1)/(2σ²))`,
/// evaluated in log space.
pub fn subsampled_gaussian_rdp(q: f64, sigma: f64, alpha: u32) -> Result<f64> {
    if alpha < 2 {
        return Err(Error::Privacy(format!(
            "subsampled bound needs an integer order >= 2, got {alpha}"
        )));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Privacy(format!(
            "sampling rate must lie in (0, 1], got {q}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::Privacy(format!("sigma must be > 0, got {sigma}")));
    }
    let a = alpha as i64;
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let mut ln_binom = 0.0f64;
    let mut acc = f64::NEG_INFINITY;
    for j in 0..=a {
        if j > 0 {
            ln_binom += ((a - j + 1) as f64).ln() - (j as f64).ln();
        }
        let rest = a - j;
        let term_1mq = if rest == 0 { 0.0 } else { rest as f64 * ln_1mq };
        let term_q = if j == 0 { 0.0 } else { j as f64 * ln_q };
        let term = ln_binom + term_1mq + term_q + (j * (j - 1)) as f64 / (2.0 * sigma * sigma);
        acc = log_add_exp(acc, term);
    }
    Ok((acc / (a - 1) as f64).max(0.0))
}

/// Curve of one event, all repetitions included, on the given orders.
pub fn event_curve(event: &MechanismEvent, orders: &[f64]) -> Result<RdpCurve> {
    event.validate()?;
    let epsilons = orders
        .iter()
        .map(|&a| Ok(event.rdp_single(a)? * event.count as f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(RdpCurve {
        orders: orders.to_vec(),
        epsilons,
    })
}

/// Additive RDP composition on the default order grid.
pub fn compose(events: &[MechanismEvent]) -> Result<RdpCurve> {
    compose_on(events, &default_orders())
}

pub fn compose_on(events: &[MechanismEvent], orders: &[f64]) -> Result<RdpCurve> {
    if events.is_empty() {
        return Err(Error::Privacy("nothing to compose".into()));
    }
    events.iter().try_fold(RdpCurve::zero(orders), |acc, e| {
        acc.add(&event_curve(e, orders)?)
    })
}

/// `min_α [ε(α) + log(1/δ)/(α−1)]` over the curve's orders, with the
/// minimizing order.
pub fn to_epsilon_delta_with_order(curve: &RdpCurve, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Privacy(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let ln_inv = (1.0 / delta).ln();
    curve
        .orders
        .iter()
        .zip(&curve.epsilons)
        .map(|(&a, &e)| (e + ln_inv / (a - 1.0), a))
        .fold(None, |best: Option<(f64, f64)>, cand| match best {
            Some(b) if b.0 <= cand.0 => Some(b),
            _ => Some(cand),
        })
        .ok_or_else(|| Error::Privacy("empty RDP curve".into()))
}

pub fn to_epsilon_delta(curve: &RdpCurve, delta: f64) -> Result<f64> {
    Ok(to_epsilon_delta_with_order(curve, delta)?.0)
}

pub const SIGMA_MIN: f64 = 0.3;
pub const SIGMA_MAX: f64 = 1e3;

/// Smallest noise multiplier in `[0.3, 1000]` such that `steps` subsampled
/// Gaussian events at rate `q` convert to at most `target_eps` at `delta`.
pub fn calibrate_sigma(target_eps: f64, delta: f64, q: f64, steps: u64) -> Result<f64> {
    if !(target_eps > 0.0) {
        return Err(Error::Privacy(format!(
            "target epsilon must be > 0, got {target_eps}"
        )));
    }
    if steps == 0 {
        return Err(Error::Privacy("steps must be >= 1".into()));
    }
    let orders = default_orders();
    let eps_at = |sigma: f64| -> Result<f64> {
        let curve = event_curve(&MechanismEvent::subsampled(sigma, q, steps), &orders)?;
        to_epsilon_delta(&curve, delta)
    };
    if eps_at(SIGMA_MAX)? > target_eps {
        return Err(Error::BudgetInfeasible {
            target: target_eps,
            lo: SIGMA_MIN,
            hi: SIGMA_MAX,
        });
    }
    if eps_at(SIGMA_MIN)? <= target_eps {
        return Ok(SIGMA_MIN);
    }
    let (mut lo, mut hi) = (SIGMA_MIN, SIGMA_MAX);
    for _ in 0..200 {
        if hi - lo <= 1e-10 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if eps_at(mid)? <= target_eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
