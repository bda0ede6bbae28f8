use serde::{Deserialize, Serialize};

use super::rdp::{compose, to_epsilon_delta_with_order, MechanismEvent, RdpCurve};
use crate::error::{Error, Result};

/// End-to-end budget and its split between the two data-touching stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    pub epsilon: f64,
    pub delta: f64,
    pub epsilon_syn: f64,
    pub epsilon_ft: f64,
    pub delta_syn: f64,
    pub delta_ft: f64,
}

/// `ε_ft = ε − ε_syn`, `δ_syn = δ_ft = δ/2`.
pub fn split_budget(epsilon_total: f64, delta_total: f64, epsilon_syn: f64) -> Result<PrivacySpec> {
    if !(epsilon_total > 0.0) || !epsilon_total.is_finite() {
        return Err(Error::Privacy(format!(
            "total epsilon must be > 0, got {epsilon_total}"
        )));
    }
    if !(delta_total > 0.0 && delta_total < 1.0) {
        return Err(Error::Privacy(format!(
            "delta must lie in (0, 1), got {delta_total}"
        )));
    }
    if !(epsilon_syn >= 0.0) || epsilon_syn >= epsilon_total {
        return Err(Error::Privacy(format!(
            "synthetic-stage epsilon {epsilon_syn} must lie in [0, {epsilon_total})"
        )));
    }
    Ok(PrivacySpec {
        epsilon: epsilon_total,
        delta: delta_total,
        epsilon_syn,
        epsilon_ft: epsilon_total - epsilon_syn,
        delta_syn: delta_total / 2.0,
        delta_ft: delta_total / 2.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Synthetic,
    Selection,
    FineTune,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Synthetic, Stage::Selection, Stage::FineTune];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub stage: Stage,
    pub label: String,
    pub event: MechanismEvent,
}

/// Record of every noise-adding event. Entries must be appended in stage
/// order: no synthetic-stage event after a fine-tuning event.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    entries: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub events: Vec<LedgerEntry>,
    pub curve: Option<RdpCurve>,
    pub epsilon: f64,
    pub delta: f64,
    pub best_order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerReport {
    pub spec: PrivacySpec,
    pub stages: Vec<StageReport>,
    /// Sum of per-stage epsilons (sequential composition).
    pub total_epsilon: f64,
    /// Sum of per-stage deltas.
    pub total_delta: f64,
    /// All events composed in RDP and converted once at `total_delta`;
    /// never larger than `total_epsilon`.
    pub rdp_total_epsilon: f64,
}

impl PrivacyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(
        &mut self,
        stage: Stage,
        label: impl Into<String>,
        event: MechanismEvent,
    ) -> Result<()> {
        event.validate()?;
        if let Some(last) = self.entries.last() {
            if last.stage > stage {
                return Err(Error::Privacy(format!(
                    "{stage:?} event recorded after a {:?} event",
                    last.stage
                )));
            }
        }
        self.entries.push(LedgerEntry {
            stage,
            label: label.into(),
            event,
        });
        Ok(())
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stage_events(&self, stage: Stage) -> Vec<MechanismEvent> {
        self.entries
            .iter()
            .filter(|e| e.stage == stage)
            .map(|e| e.event)
            .collect()
    }

    /// `(ε, best order)` of one stage at `delta`; zero for a stage with no events.
    pub fn stage_epsilon(&self, stage: Stage, delta: f64) -> Result<(f64, Option<f64>)> {
        let events = self.stage_events(stage);
        if events.is_empty() {
            return Ok((0.0, None));
        }
        let (eps, order) = to_epsilon_delta_with_order(&compose(&events)?, delta)?;
        Ok((eps, Some(order)))
    }

    pub fn report(&self, spec: &PrivacySpec) -> Result<LedgerReport> {
        let mut stages = Vec::new();
        let mut total_epsilon = 0.0;
        let mut total_delta = 0.0;
        for stage in Stage::ALL {
            let delta = match stage {
                Stage::Synthetic => spec.delta_syn,
                Stage::Selection => 0.0,
                Stage::FineTune => spec.delta_ft,
            };
            let events: Vec<LedgerEntry> = self
                .entries
                .iter()
                .filter(|e| e.stage == stage)
                .cloned()
                .collect();
            let (curve, epsilon, best_order, delta) = if events.is_empty() {
                (None, 0.0, None, 0.0)
            } else {
                let curve = compose(&events.iter().map(|e| e.event).collect::<Vec<_>>())?;
                let (eps, order) = to_epsilon_delta_with_order(&curve, delta)?;
                (Some(curve), eps, Some(order), delta)
            };
            total_epsilon += epsilon;
            total_delta += delta;
            stages.push(StageReport {
                stage,
                events,
                curve,
                epsilon,
                delta,
                best_order,
            });
        }
        let rdp_total_epsilon = if self.entries.is_empty() {
            0.0
        } else {
            let all: Vec<MechanismEvent> = self.entries.iter().map(|e| e.event).collect();
            to_epsilon_delta_with_order(&compose(&all)?, total_delta)?.0
        };
        Ok(LedgerReport {
            spec: *spec,
            stages,
            total_epsilon,
            total_delta,
            rdp_total_epsilon,
        })
    }
}

impl LedgerReport {
    pub fn stage(&self, stage: Stage) -> &StageReport {
        self.stages
            .iter()
            .find(|s| s.stage == stage)
            .expect("report covers every stage")
    }

    /// Accounted totals must not exceed the configured budget.
    pub fn check_budget(&self) -> Result<()> {
        let slack = 1e-9 * self.spec.epsilon;
        if self.total_epsilon > self.spec.epsilon + slack
            || self.total_delta > self.spec.delta * (1.0 + 1e-12)
        {
            return Err(Error::BudgetViolation {
                accounted: self.total_epsilon,
                configured: self.spec.epsilon,
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
