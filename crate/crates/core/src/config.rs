//! Experiment configuration documents.
//!
//! A config is a single JSON document:
//!
//! ```json
//! {
//!   "num_clients": 4, "horizon": 4096, "sync_period": 4, "dimension": 2,
//!   "step_size_policy": { "kind": "theory_convex" },
//!   "projection_radius": "unbounded",
//!   "replicates": 64, "seed": 7,
//!   "loss_spec": { "family": "mean_quadratic" },
//!   "adversary_spec": { "kind": "static_iid", "mean": [0.5, 0.0], "variance": 1.0 }
//! }
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversary::AdversarySpec;
use crate::error::{FedSeaError, Result};
use crate::losses::LossSpec;
use crate::step_size::StepSizePolicy;
use crate::vector::Vector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unbounded {
    Unbounded,
}

/// Radius of the centered Euclidean ball `𝒳`, or `"unbounded"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProjectionRadius {
    Finite(f64),
    Unbounded(Unbounded),
}

impl Default for ProjectionRadius {
    fn default() -> Self {
        ProjectionRadius::Unbounded(Unbounded::Unbounded)
    }
}

/// The feasible set: a centered closed ball, or all of `ℝ^d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Domain {
    radius: Option<f64>,
}

impl Domain {
    pub fn ball(radius: f64) -> Self {
        Self {
            radius: Some(radius),
        }
    }

    pub fn unbounded() -> Self {
        Self { radius: None }
    }

    pub fn radius(&self) -> Option<f64> {
        self.radius
    }

    pub fn contains(&self, x: &Vector) -> bool {
        match self.radius {
            Some(r) => x.norm() <= r,
            None => true,
        }
    }
}

impl From<ProjectionRadius> for Domain {
    fn from(value: ProjectionRadius) -> Self {
        match value {
            ProjectionRadius::Finite(r) => Domain::ball(r),
            ProjectionRadius::Unbounded(_) => Domain::unbounded(),
        }
    }
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `M`
    pub num_clients: usize,
    /// `T`
    pub horizon: usize,
    /// `τ`
    pub sync_period: usize,
    /// `d`
    pub dimension: usize,
    pub step_size_policy: StepSizePolicy,
    #[serde(default)]
    pub projection_radius: ProjectionRadius,
    pub replicates: usize,
    pub seed: u64,
    pub loss_spec: LossSpec,
    pub adversary_spec: AdversarySpec,
    /// `x_1`; the origin when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_point: Option<Vector>,
    /// The bound `D` on the initial distance. Computed as `‖x_1 − x*‖` by the
    /// oracles when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_distance: Option<f64>,
    /// Averaging happens after step `t` when `(t − 1) mod τ == sync_phase`.
    /// Zero reproduces the algorithm as written; `τ − 1` averages after steps
    /// `τ, 2τ, …`.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub sync_phase: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn domain(&self) -> Domain {
        self.projection_radius.into()
    }

    pub fn initial_point(&self) -> Vector {
        self.initial_point
            .clone()
            .unwrap_or_else(|| Vector::zeros(self.dimension))
    }

    /// SHA-256 of the compact JSON serialization, hex encoded.
    pub fn config_hash(&self) -> Result<String> {
        let canonical = serde_json::to_string(self)?;
        let digest = Sha256::digest(canonical.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FedSeaError::Config(msg));
        if self.num_clients == 0 {
            return bad("num_clients must be at least 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.sync_period == 0 {
            return bad("sync_period must be at least 1".into());
        }
        if self.sync_period > self.horizon {
            return bad(format!(
                "sync_period {} exceeds horizon {}",
                self.sync_period, self.horizon
            ));
        }
        if self.dimension == 0 {
            return bad("dimension must be at least 1".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.sync_phase >= self.sync_period {
            return bad(format!(
                "sync_phase {} must be below sync_period {}",
                self.sync_phase, self.sync_period
            ));
        }
        if let ProjectionRadius::Finite(r) = self.projection_radius {
            if !(r.is_finite() && r > 0.0) {
                return bad(format!("projection_radius must be positive, got {r}"));
            }
        }
        if let Some(d) = self.initial_distance {
            if !(d.is_finite() && d >= 0.0) {
                return bad(format!("initial_distance must be non-negative, got {d}"));
            }
        }
        let x1 = self.initial_point();
        x1.check_dim(self.dimension)?;
        if !self.domain().contains(&x1) {
            return bad("initial_point lies outside the projection ball".into());
        }
        self.step_size_policy.validate(self.horizon)?;
        self.adversary_spec
            .build(self.num_clients, self.horizon, self.dimension)?;
        Ok(())
    }
}
