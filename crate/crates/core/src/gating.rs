//! Gating policies: the streaming threshold gate with two-phase calibration
//! and EMA proportional control, plus the oracle-greedy, random-skip, and
//! advantage helpers the harness compares it against.

use serde::{Deserialize, Serialize};

use crate::numerics::nearest_rank_percentile;
use crate::rng::SeededRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Skip,
    Update,
}

impl Decision {
    pub fn is_update(self) -> bool {
        matches!(self, Decision::Update)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Calibrating,
    Online,
}

/// One gate decision with the evidence it was made on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub decision: Decision,
    pub signal: f64,
    pub tau_at_decision: f64,
    pub phase: Phase,
}

/// Streaming threshold controller.
///
/// Calibration phase: the first `n_cal` signals are buffered, decisions
/// default to UPDATE, and on the n_cal-th signal the threshold is set to the
/// (1 - target_rate) nearest-rank percentile of the buffer. Online phase:
/// d = 1[signal > tau] (strict; signal == tau skips), then
/// tau <- tau + alpha (r - rho) |tau| using the pre-decision EMA, then
/// r <- (1 - alpha) r + alpha d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdController {
    pub tau: f64,
    pub ema_rate: f64,
    pub target_rate: f64,
    pub alpha: f64,
    pub n_cal: usize,
    pub calibration_buffer: Vec<f64>,
    pub phase: Phase,
    /// Decision returned while calibrating; default on.
    pub warmup_decision: Decision,
}

impl ThresholdController {
    pub fn new(target_rate: f64, alpha: f64, n_cal: usize) -> Result<Self> {
        // rho = 1 is a degenerate but valid budget (always update).
        if !(target_rate > 0.0 && target_rate <= 1.0) {
            return Err(Error::Config(format!(
                "target rate must be in (0,1], got {target_rate}"
            )));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("alpha must be in [0,1], got {alpha}")));
        }
        if n_cal == 0 {
            return Err(Error::Config("n_cal must be >= 1".into()));
        }
        Ok(Self {
            tau: 0.0,
            ema_rate: target_rate,
            target_rate,
            alpha,
            n_cal,
            calibration_buffer: Vec::with_capacity(n_cal),
            phase: Phase::Calibrating,
            warmup_decision: Decision::Update,
        })
    }

    /// Feed one signal, get the decision for it, and advance the controller.
    pub fn observe_and_decide(&mut self, signal: f64) -> Result<GateDecision> {
        if !signal.is_finite() {
            return Err(Error::NonFinite(format!("gate signal {signal}")));
        }
        match self.phase {
            Phase::Calibrating => {
                self.calibration_buffer.push(signal);
                let out = GateDecision {
                    decision: self.warmup_decision,
                    signal,
                    tau_at_decision: self.tau,
                    phase: Phase::Calibrating,
                };
                if self.calibration_buffer.len() >= self.n_cal {
                    self.tau = nearest_rank_percentile(
                        &self.calibration_buffer,
                        1.0 - self.target_rate,
                    )?;
                    self.ema_rate = self.target_rate;
                    self.phase = Phase::Online;
                }
                Ok(out)
            }
            Phase::Online => {
                let tau_at_decision = self.tau;
                let decision = if signal > tau_at_decision {
                    Decision::Update
                } else {
                    Decision::Skip
                };
                // Threshold moves on the pre-decision EMA, then the EMA
                // absorbs the decision.
                self.tau += self.alpha * (self.ema_rate - self.target_rate) * self.tau.abs();
                self.ema_rate = (1.0 - self.alpha) * self.ema_rate
                    + self.alpha * if decision.is_update() { 1.0 } else { 0.0 };
                Ok(GateDecision {
                    decision,
                    signal,
                    tau_at_decision,
                    phase: Phase::Online,
                })
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Oracle advantage of updating on a chunk: a = CE(SKIP) - CE(UPDATE), nats.
pub fn oracle_advantage(ce_skip: f64, ce_update: f64) -> f64 {
    ce_skip - ce_update
}

/// Half-up rounding of the budget rho * k.
pub fn budget(k: usize, rho: f64) -> usize {
    ((rho * k as f64) + 0.5).floor() as usize
}

/// Mark the `budget(k, rho)` chunks with the largest advantages, ties broken
/// toward lower indices.
pub fn oracle_select(advantages: &[f64], rho: f64) -> Result<Vec<bool>> {
    if advantages.is_empty() {
        return Err(Error::Empty("oracle_select on no chunks".into()));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("rho must be in [0,1], got {rho}")));
    }
    Ok(select_top_m(advantages, budget(advantages.len(), rho)))
}

/// Top-m indices by value, deterministic: ties go to the lower index.
pub fn select_top_m(values: &[f64], m: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .expect("non-finite selection value")
            .then(a.cmp(&b))
    });
    let mut out = vec![false; values.len()];
    for &idx in order.iter().take(m.min(values.len())) {
        out[idx] = true;
    }
    out
}

/// Exactly `budget(k, rho)` uniformly random positions from a seeded stream.
pub fn random_select(k: usize, rho: f64, seed: u64) -> Result<Vec<bool>> {
    if k == 0 {
        return Err(Error::Empty("random_select on no chunks".into()));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("rho must be in [0,1], got {rho}")));
    }
    Ok(random_select_m(k, budget(k, rho), seed))
}

/// Exactly m random positions: shuffle indices with the derived stream, take
/// the first m.
pub fn random_select_m(k: usize, m: usize, seed: u64) -> Vec<bool> {
    let mut indices: Vec<usize> = (0..k).collect();
    let mut rng = SeededRng::derive(seed, "random-select");
    rng.shuffle(&mut indices);
    let mut out = vec![false; k];
    for &idx in indices.iter().take(m.min(k)) {
        out[idx] = true;
    }
    out
}
