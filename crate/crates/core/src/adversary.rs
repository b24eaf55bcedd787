//! Oblivious adversary schedules `(t, m) ↦ D_{t,m}`.
//!
//! Schedules are deterministic functions of the configuration, so the
//! heterogeneity constants they induce can be computed before any simulation.
//! Time steps are 1-based (`1 ≤ t ≤ T`); clients are 0-based (`0 ≤ m < M`).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{FedSeaError, Result};
use crate::rng::DistParams;
use crate::vector::Vector;

/// Total-trace variance of `D_{t,m}`: one level for every client, or one per
/// client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VarianceLevels {
    Uniform(f64),
    PerClient(Vec<f64>),
}

impl VarianceLevels {
    fn get(&self, m: usize) -> f64 {
        match self {
            VarianceLevels::Uniform(v) => *v,
            VarianceLevels::PerClient(v) => v[m],
        }
    }

    fn validate(&self, clients: usize) -> Result<()> {
        let values: &[f64] = match self {
            VarianceLevels::Uniform(v) => std::slice::from_ref(v),
            VarianceLevels::PerClient(v) => {
                if v.len() != clients {
                    return Err(FedSeaError::Config(format!(
                        "{} variance levels for {clients} clients",
                        v.len()
                    )));
                }
                v
            }
        };
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(FedSeaError::Config(
                "variance levels must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanShift {
    /// First step at which the offset applies.
    pub at: usize,
    pub offset: Vector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversarySpec {
    /// One fixed distribution for every client and step.
    StaticIid { mean: Vector, variance: f64 },
    /// Fixed per-client distributions.
    StaticHeterogeneous {
        means: Vec<Vector>,
        variance: VarianceLevels,
    },
    /// `mean(t, m) = b_m + v·t`; a single base mean is shared by all clients.
    DriftingMeans {
        base_means: Vec<Vector>,
        velocity: Vector,
        variance: VarianceLevels,
    },
    /// `mean(t, m) = base + offset_m + c·cos(2π(t − 1)/P)·direction`.
    /// With `P = 2` the mean is `base + c` on odd steps and `base − c` on even
    /// steps.
    CyclicMeans {
        base: Vector,
        amplitude: f64,
        period: usize,
        /// Defaults to the first coordinate axis.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        direction: Option<Vector>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        client_offsets: Option<Vec<Vector>>,
        variance: VarianceLevels,
    },
    /// Step changes of the mean at configured times.
    PiecewiseShift {
        base_means: Vec<Vector>,
        shifts: Vec<MeanShift>,
        variance: VarianceLevels,
    },
    /// Point masses at `points[(t − 1) mod len]` for every client.
    DiracAdversarial { points: Vec<Vector> },
}

/// Exact first two moments of `D_{t,m}` (variance as total trace).
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: Vector,
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdversarySchedule {
    spec: AdversarySpec,
    clients: usize,
    horizon: usize,
    dim: usize,
}

fn check_means(means: &[Vector], clients: usize, dim: usize, shared_ok: bool) -> Result<()> {
    let ok_len = means.len() == clients || (shared_ok && means.len() == 1);
    if !ok_len {
        return Err(FedSeaError::Config(format!(
            "{} means supplied for {clients} clients",
            means.len()
        )));
    }
    means.iter().try_for_each(|m| m.check_dim(dim))
}

impl AdversarySpec {
    pub fn build(&self, clients: usize, horizon: usize, dim: usize) -> Result<AdversarySchedule> {
        match self {
            AdversarySpec::StaticIid { mean, variance } => {
                mean.check_dim(dim)?;
                VarianceLevels::Uniform(*variance).validate(clients)?;
            }
            AdversarySpec::StaticHeterogeneous { means, variance } => {
                check_means(means, clients, dim, false)?;
                variance.validate(clients)?;
            }
            AdversarySpec::DriftingMeans {
                base_means,
                velocity,
                variance,
            } => {
                check_means(base_means, clients, dim, true)?;
                velocity.check_dim(dim)?;
                variance.validate(clients)?;
            }
            AdversarySpec::CyclicMeans {
                base,
                amplitude,
                period,
                direction,
                client_offsets,
                variance,
            } => {
                base.check_dim(dim)?;
                if *period == 0 {
                    return Err(FedSeaError::Config(
                        "cycle period must be at least 1".into(),
                    ));
                }
                if !amplitude.is_finite() {
                    return Err(FedSeaError::Config("cycle amplitude must be finite".into()));
                }
                if let Some(d) = direction {
                    d.check_dim(dim)?;
                }
                if let Some(offsets) = client_offsets {
                    check_means(offsets, clients, dim, false)?;
                }
                variance.validate(clients)?;
            }
            AdversarySpec::PiecewiseShift {
                base_means,
                shifts,
                variance,
            } => {
                check_means(base_means, clients, dim, true)?;
                for s in shifts {
                    s.offset.check_dim(dim)?;
                    if s.at == 0 {
                        return Err(FedSeaError::Config("shift times are 1-based".into()));
                    }
                }
                variance.validate(clients)?;
            }
            AdversarySpec::DiracAdversarial { points } => {
                if points.is_empty() {
                    return Err(FedSeaError::Config(
                        "dirac schedule needs at least one point".into(),
                    ));
                }
                points.iter().try_for_each(|p| p.check_dim(dim))?;
            }
        }
        Ok(AdversarySchedule {
            spec: self.clone(),
            clients,
            horizon,
            dim,
        })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            AdversarySpec::StaticIid { .. } => "static_iid",
            AdversarySpec::StaticHeterogeneous { .. } => "static_heterogeneous",
            AdversarySpec::DriftingMeans { .. } => "drifting_means",
            AdversarySpec::CyclicMeans { .. } => "cyclic_means",
            AdversarySpec::PiecewiseShift { .. } => "piecewise_shift",
            AdversarySpec::DiracAdversarial { .. } => "dirac_adversarial",
        }
    }

    /// Same schedule with every variance level replaced by `level`.
    pub fn with_variance(&self, level: f64) -> Result<AdversarySpec> {
        let mut spec = self.clone();
        match &mut spec {
            AdversarySpec::StaticIid { variance, .. } => *variance = level,
            AdversarySpec::StaticHeterogeneous { variance, .. }
            | AdversarySpec::DriftingMeans { variance, .. }
            | AdversarySpec::CyclicMeans { variance, .. }
            | AdversarySpec::PiecewiseShift { variance, .. } => {
                *variance = VarianceLevels::Uniform(level)
            }
            AdversarySpec::DiracAdversarial { .. } => {
                return Err(FedSeaError::Config(
                    "dirac_adversarial has no variance to sweep".into(),
                ))
            }
        }
        Ok(spec)
    }

    /// Same schedule with its heterogeneity amplitude set to `amplitude`.
    ///
    /// For cyclic schedules this is the cycle amplitude. For schedules with
    /// per-client base means, every client's deviation from the centroid of
    /// the base means is rescaled by `amplitude`.
    pub fn with_amplitude(&self, amplitude: f64) -> Result<AdversarySpec> {
        let mut spec = self.clone();
        match &mut spec {
            AdversarySpec::CyclicMeans { amplitude: a, .. } => *a = amplitude,
            AdversarySpec::StaticHeterogeneous { means, .. }
            | AdversarySpec::DriftingMeans {
                base_means: means, ..
            }
            | AdversarySpec::PiecewiseShift {
                base_means: means, ..
            } => {
                let centroid = Vector::mean_of(means);
                for m in means.iter_mut() {
                    let dev = m.sub(&centroid);
                    *m = centroid.add(&dev.scaled(amplitude));
                }
            }
            AdversarySpec::StaticIid { .. } | AdversarySpec::DiracAdversarial { .. } => {
                return Err(FedSeaError::Config(format!(
                    "{} has no heterogeneity amplitude",
                    self.kind_name()
                )))
            }
        }
        Ok(spec)
    }
}

impl AdversarySchedule {
    pub fn spec(&self) -> &AdversarySpec {
        &self.spec
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_index(&self, t: usize, m: usize) -> Result<()> {
        if t == 0 || t > self.horizon || m >= self.clients {
            return Err(FedSeaError::IndexOutOfRange {
                t,
                m,
                horizon: self.horizon,
                clients: self.clients,
            });
        }
        Ok(())
    }

    fn mean_unchecked(&self, t: usize, m: usize) -> Vector {
        let pick = |means: &[Vector]| -> Vector {
            if means.len() == 1 {
                means[0].clone()
            } else {
                means[m].clone()
            }
        };
        match &self.spec {
            AdversarySpec::StaticIid { mean, .. } => mean.clone(),
            AdversarySpec::StaticHeterogeneous { means, .. } => means[m].clone(),
            AdversarySpec::DriftingMeans {
                base_means,
                velocity,
                ..
            } => {
                let mut mean = pick(base_means);
                mean.axpy(t as f64, velocity);
                mean
            }
            AdversarySpec::CyclicMeans {
                base,
                amplitude,
                period,
                direction,
                client_offsets,
                ..
            } => {
                let phase = (t - 1) % period;
                let wave = if 2 * phase == *period {
                    -1.0
                } else if phase == 0 {
                    1.0
                } else {
                    (2.0 * PI * phase as f64 / *period as f64).cos()
                };
                let mut mean = base.clone();
                match direction {
                    Some(d) => mean.axpy(amplitude * wave, d),
                    None => mean.as_mut_slice()[0] += amplitude * wave,
                }
                if let Some(offsets) = client_offsets {
                    mean.axpy(1.0, &offsets[m]);
                }
                mean
            }
            AdversarySpec::PiecewiseShift {
                base_means, shifts, ..
            } => {
                let mut mean = pick(base_means);
                for s in shifts.iter().filter(|s| s.at <= t) {
                    mean.axpy(1.0, &s.offset);
                }
                mean
            }
            AdversarySpec::DiracAdversarial { points } => points[(t - 1) % points.len()].clone(),
        }
    }

    fn variance_unchecked(&self, m: usize) -> f64 {
        match &self.spec {
            AdversarySpec::StaticIid { variance, .. } => *variance,
            AdversarySpec::StaticHeterogeneous { variance, .. }
            | AdversarySpec::DriftingMeans { variance, .. }
            | AdversarySpec::CyclicMeans { variance, .. }
            | AdversarySpec::PiecewiseShift { variance, .. } => variance.get(m),
            AdversarySpec::DiracAdversarial { .. } => 0.0,
        }
    }

    /// `D_{t,m}`. Zero variance yields a point mass.
    pub fn dist_params(&self, t: usize, m: usize) -> Result<DistParams> {
        self.check_index(t, m)?;
        let mean = self.mean_unchecked(t, m);
        let variance = self.variance_unchecked(m);
        Ok(if variance == 0.0 {
            DistParams::PointMass { at: mean }
        } else {
            DistParams::Gaussian { mean, variance }
        })
    }

    /// Exact moments of `D_{t,m}`; `None` outside the schedule's index range.
    pub fn analytic_moments(&self, t: usize, m: usize) -> Option<Moments> {
        self.check_index(t, m).ok()?;
        Some(Moments {
            mean: self.mean_unchecked(t, m),
            variance: self.variance_unchecked(m),
        })
    }

    /// True when `D_{t,m}` never depends on `m`.
    pub fn is_client_independent(&self) -> bool {
        match &self.spec {
            AdversarySpec::StaticIid { .. } | AdversarySpec::DiracAdversarial { .. } => true,
            AdversarySpec::StaticHeterogeneous { means, variance } => {
                means.windows(2).all(|w| w[0] == w[1]) && uniform(variance)
            }
            AdversarySpec::DriftingMeans {
                base_means,
                variance,
                ..
            }
            | AdversarySpec::PiecewiseShift {
                base_means,
                variance,
                ..
            } => base_means.windows(2).all(|w| w[0] == w[1]) && uniform(variance),
            AdversarySpec::CyclicMeans {
                client_offsets,
                variance,
                ..
            } => {
                client_offsets
                    .as_ref()
                    .is_none_or(|o| o.windows(2).all(|w| w[0] == w[1]))
                    && uniform(variance)
            }
        }
    }
}

fn uniform(v: &VarianceLevels) -> bool {
    match v {
        VarianceLevels::Uniform(_) => true,
        VarianceLevels::PerClient(v) => v.windows(2).all(|w| w[0] == w[1]),
    }
}
