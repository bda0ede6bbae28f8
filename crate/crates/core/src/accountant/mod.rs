//! Rényi-DP accounting for (subsampled) Gaussian mechanisms.
//!
//! Curves live on a fixed order grid and compose by addition; conversion to
//! `(ε, δ)` takes the minimum of `ε(α) + log(1/δ)/(α−1)` over that grid.

mod ledger;
mod rdp;

pub use ledger::{
    split_budget, LedgerEntry, LedgerReport, PrivacyLedger, PrivacySpec, Stage, StageReport,
};
pub use rdp::{
    calibrate_sigma, compose, compose_on, default_orders, event_curve, gaussian_rdp,
    subsampled_gaussian_rdp, to_epsilon_delta, to_epsilon_delta_with_order, MechanismEvent,
    RdpCurve, SIGMA_MAX, SIGMA_MIN,
};
