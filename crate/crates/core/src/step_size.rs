//! Step-size policies and the caps they must respect.
//!
//! With `τ > 1` every policy keeps `η_t ≤ 1/(4L(τ − 1))`, the condition under
//! which the client-drift bounds hold. Constant steps must additionally
//! satisfy `η ≤ min{1/(8L), 1/(4√6·L·(τ − 1))}`. The `τ`-dependent caps are
//! inactive when `τ = 1`.

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{FedSeaError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSizePolicy {
    Constant {
        eta: f64,
        /// Skip the cap check (ablation runs).
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        allow_unsafe: bool,
    },
    TheoryConvex,
    DecayingStronglyConvex,
    CustomSequence {
        etas: Vec<f64>,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        allow_unsafe: bool,
    },
}

impl StepSizePolicy {
    pub(crate) fn validate(&self, horizon: usize) -> Result<()> {
        match self {
            StepSizePolicy::Constant { eta, .. } if !(eta.is_finite() && *eta > 0.0) => Err(
                FedSeaError::Config(format!("constant step size must be positive, got {eta}")),
            ),
            StepSizePolicy::CustomSequence { etas, .. } => {
                if etas.len() != horizon {
                    return Err(FedSeaError::Config(format!(
                        "custom step-size sequence has {} entries for horizon {horizon}",
                        etas.len()
                    )));
                }
                check_positive_non_increasing(etas)
            }
            _ => Ok(()),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(
            self,
            StepSizePolicy::Constant { .. } | StepSizePolicy::TheoryConvex
        )
    }
}

/// Problem constants a policy may need.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    /// `L`
    pub smoothness: f64,
    /// `μ`
    pub strong_convexity: f64,
    /// `D`
    pub initial_distance: f64,
    /// `σ̄²`
    pub sigma_bar_sq: f64,
    /// `K̄²`
    pub k_bar_sq: f64,
}

/// `1/(4L(τ−1))`, or `+∞` when `τ = 1`.
pub fn drift_cap(smoothness: f64, sync_period: usize) -> f64 {
    if sync_period > 1 {
        1.0 / (4.0 * smoothness * (sync_period - 1) as f64)
    } else {
        f64::INFINITY
    }
}

/// `min{1/(8L), 1/(4√6·L·(τ−1))}` with the second term dropped at `τ = 1`.
pub fn constant_step_cap(smoothness: f64, sync_period: usize) -> f64 {
    let base = 1.0 / (8.0 * smoothness);
    if sync_period > 1 {
        base.min(1.0 / (4.0 * 6f64.sqrt() * smoothness * (sync_period - 1) as f64))
    } else {
        base
    }
}

fn check_positive_non_increasing(etas: &[f64]) -> Result<()> {
    if let Some(bad) = etas.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(FedSeaError::Config(format!(
            "step sizes must be positive and finite, got {bad}"
        )));
    }
    if let Some(w) = etas.windows(2).find(|w| w[1] > w[0]) {
        return Err(FedSeaError::Config(format!(
            "step sizes must be non-increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Expands the configured policy into `η_1, …, η_T`.
pub fn resolve_step_sizes(
    config: &ExperimentConfig,
    constants: &ModelConstants,
) -> Result<Vec<f64>> {
    let l = constants.smoothness;
    if !(l.is_finite() && l > 0.0) {
        return Err(FedSeaError::Config(format!(
            "smoothness must be positive, got {l}"
        )));
    }
    let tau = config.sync_period;
    let horizon = config.horizon;
    let etas = match &config.step_size_policy {
        StepSizePolicy::Constant { eta, allow_unsafe } => {
            let cap = constant_step_cap(l, tau);
            if !allow_unsafe && *eta > cap {
                return Err(FedSeaError::StepSizePrecondition { eta: *eta, cap });
            }
            vec![*eta; horizon]
        }
        StepSizePolicy::TheoryConvex => {
            let mut eta = constant_step_cap(l, tau);
            let noise = horizon as f64
                * (constants.sigma_bar_sq / config.num_clients as f64 + l * constants.k_bar_sq);
            if noise > 0.0 && constants.initial_distance > 0.0 {
                eta = eta.min(constants.initial_distance / noise.sqrt());
            }
            vec![eta; horizon]
        }
        StepSizePolicy::DecayingStronglyConvex => {
            let mu = constants.strong_convexity;
            if !(mu.is_finite() && mu > 0.0) {
                return Err(FedSeaError::Config(
                    "decaying step sizes need a strongly convex loss (mu > 0)".into(),
                ));
            }
            let cap = drift_cap(l, tau);
            (1..=horizon)
                .map(|t| (2.0 / (mu * t as f64)).min(cap))
                .collect()
        }
        StepSizePolicy::CustomSequence { etas, allow_unsafe } => {
            if !allow_unsafe {
                let cap = drift_cap(l, tau);
                if let Some(eta) = etas.iter().find(|e| **e > cap) {
                    return Err(FedSeaError::StepSizePrecondition { eta: *eta, cap });
                }
            }
            etas.clone()
        }
    };
    check_positive_non_increasing(&etas)?;
    Ok(etas)
}
