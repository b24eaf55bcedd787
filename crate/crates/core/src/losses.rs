//! Stochastic loss families `f(x, ξ)`.
//!
//! The functional form is fixed for a whole experiment; the adversary only
//! moves the data distribution. Each family knows its smoothness constant `L`
//! and strong-convexity constant `μ` for the expected losses
//! `f_{t,m}(x) = E_{ξ∼D_{t,m}} f(x, ξ)`.
//!
//! | family               | sample `ξ`             | `f(x, ξ)`                  | `L`            | `μ`            |
//! |----------------------|------------------------|----------------------------|----------------|----------------|
//! | `mean_quadratic`     | `ξ ∈ ℝ^d`              | `½‖x − ξ‖²`                | 1              | 1              |
//! | `gaussian_linreg`    | `(a, b)`, `b = a·w + ε`| `½(a·x − b)²`              | `max_i Σ_ii`   | `min_i Σ_ii`   |
//! | `empirical_logistic` | `(a, y)`, `y ∈ {±1}`   | `log(1 + exp(−y a·x))`     | `max_i Σ_ii/4` | 0              |
//!
//! Features `a` are drawn from `N(0, diag(feature_variances))`. For the two
//! supervised families the distribution parameters of the adversary carry the
//! ground-truth weight `w` (as the mean) and the label-noise variance.

use serde::{Deserialize, Serialize};

use crate::config::Domain;
use crate::error::{FedSeaError, Result};
use crate::rng::{sample_with, DistParams, SampleStream};
use crate::vector::Vector;

fn default_mc_budget() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LossSpec {
    MeanQuadratic,
    GaussianLinreg {
        feature_variances: Vec<f64>,
    },
    EmpiricalLogistic {
        feature_variances: Vec<f64>,
        /// Frozen samples per `(t, m)` defining the Monte Carlo expected loss.
        #[serde(default = "default_mc_budget")]
        mc_budget: usize,
    },
}

/// One observation `ξ`.
#[derive(Clone, Debug, PartialEq)]
pub enum Sample {
    Point(Vector),
    Labeled { features: Vector, target: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossModel {
    spec: LossSpec,
    dim: usize,
    smoothness: f64,
    strong_convexity: f64,
}

impl LossModel {
    pub fn from_spec(spec: &LossSpec, dim: usize) -> Result<Self> {
        let (smoothness, strong_convexity) = match spec {
            LossSpec::MeanQuadratic => (1.0, 1.0),
            LossSpec::GaussianLinreg { feature_variances } => {
                check_feature_variances(feature_variances, dim)?;
                (max_of(feature_variances), min_of(feature_variances))
            }
            LossSpec::EmpiricalLogistic {
                feature_variances,
                mc_budget,
            } => {
                check_feature_variances(feature_variances, dim)?;
                if *mc_budget < 1000 {
                    return Err(FedSeaError::Config(format!(
                        "logistic mc_budget must be at least 1000, got {mc_budget}"
                    )));
                }
                (max_of(feature_variances) / 4.0, 0.0)
            }
        };
        Ok(Self {
            spec: spec.clone(),
            dim,
            smoothness,
            strong_convexity,
        })
    }

    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `L`
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    /// `μ` (0 when only convex)
    pub fn strong_convexity(&self) -> f64 {
        self.strong_convexity
    }

    pub fn family_name(&self) -> &'static str {
        match self.spec {
            LossSpec::MeanQuadratic => "mean_quadratic",
            LossSpec::GaussianLinreg { .. } => "gaussian_linreg",
            LossSpec::EmpiricalLogistic { .. } => "empirical_logistic",
        }
    }

    /// Whether expected losses have closed forms.
    pub fn is_analytic(&self) -> bool {
        !matches!(self.spec, LossSpec::EmpiricalLogistic { .. })
    }

    /// Diagonal Hessian of every expected loss, for the two quadratic families.
    pub fn curvature(&self) -> Option<Vec<f64>> {
        match &self.spec {
            LossSpec::MeanQuadratic => Some(vec![1.0; self.dim]),
            LossSpec::GaussianLinreg { feature_variances } => Some(feature_variances.clone()),
            LossSpec::EmpiricalLogistic { .. } => None,
        }
    }

    pub fn mc_budget(&self) -> Option<usize> {
        match self.spec {
            LossSpec::EmpiricalLogistic { mc_budget, .. } => Some(mc_budget),
            _ => None,
        }
    }

    fn feature_variances(&self) -> &[f64] {
        match &self.spec {
            LossSpec::GaussianLinreg { feature_variances }
            | LossSpec::EmpiricalLogistic {
                feature_variances, ..
            } => feature_variances,
            LossSpec::MeanQuadratic => &[],
        }
    }

    fn check_dist(&self, dist: &DistParams) -> Result<()> {
        dist.validate()?;
        dist.mean().check_dim(self.dim)
    }

    /// Draws `ξ ∼ dist` from the stream.
    pub fn draw(&self, dist: &DistParams, stream: &mut SampleStream) -> Result<Sample> {
        self.check_dist(dist)?;
        match &self.spec {
            LossSpec::MeanQuadratic => Ok(Sample::Point(sample_with(stream, dist)?)),
            LossSpec::GaussianLinreg { .. } | LossSpec::EmpiricalLogistic { .. } => {
                let features = Vector::from_raw(
                    self.feature_variances()
                        .iter()
                        .map(|s| s.sqrt() * stream.standard_normal())
                        .collect(),
                );
                let noise = dist.variance().sqrt() * stream.standard_normal();
                let signal = features.dot(dist.mean()) + noise;
                let target = match self.spec {
                    LossSpec::GaussianLinreg { .. } => signal,
                    _ => {
                        if signal >= 0.0 {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                };
                Ok(Sample::Labeled { features, target })
            }
        }
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        match (&self.spec, sample) {
            (LossSpec::MeanQuadratic, Sample::Point(xi)) => xi.check_dim(self.dim),
            (LossSpec::MeanQuadratic, _) => Err(FedSeaError::UnsupportedDistribution(
                "mean_quadratic expects point samples".into(),
            )),
            (_, Sample::Labeled { features, .. }) => features.check_dim(self.dim),
            (_, Sample::Point(_)) => Err(FedSeaError::UnsupportedDistribution(
                "supervised families expect labeled samples".into(),
            )),
        }
    }

    /// Realized loss `f(x, ξ)`.
    pub fn loss(&self, x: &Vector, sample: &Sample) -> Result<f64> {
        x.check_dim(self.dim)?;
        self.check_sample(sample)?;
        Ok(match (&self.spec, sample) {
            (LossSpec::MeanQuadratic, Sample::Point(xi)) => 0.5 * x.dist_sq(xi),
            (LossSpec::GaussianLinreg { .. }, Sample::Labeled { features, target }) => {
                let r = features.dot(x) - target;
                0.5 * r * r
            }
            (_, Sample::Labeled { features, target }) => softplus(-target * features.dot(x)),
            _ => unreachable!("sample kind checked above"),
        })
    }

    /// `∇_x f(x, ξ)` in closed form.
    pub fn stochastic_gradient(&self, x: &Vector, sample: &Sample) -> Result<Vector> {
        x.check_dim(self.dim)?;
        self.check_sample(sample)?;
        Ok(match (&self.spec, sample) {
            (LossSpec::MeanQuadratic, Sample::Point(xi)) => x.sub(xi),
            (LossSpec::GaussianLinreg { .. }, Sample::Labeled { features, target }) => {
                features.scaled(features.dot(x) - target)
            }
            (_, Sample::Labeled { features, target }) => {
                features.scaled(-target * sigmoid(-target * features.dot(x)))
            }
            _ => unreachable!("sample kind checked above"),
        })
    }

    /// Closed-form `f_{t,m}(x) = E_{ξ∼dist} f(x, ξ)`.
    pub fn expected_loss(&self, dist: &DistParams, x: &Vector) -> Result<f64> {
        self.check_dist(dist)?;
        x.check_dim(self.dim)?;
        match &self.spec {
            LossSpec::MeanQuadratic => Ok(0.5 * x.dist_sq(dist.mean()) + 0.5 * dist.variance()),
            LossSpec::GaussianLinreg { feature_variances } => {
                let u = x.sub(dist.mean());
                Ok(0.5 * weighted_norm_sq(feature_variances, &u) + 0.5 * dist.variance())
            }
            LossSpec::EmpiricalLogistic { .. } => {
                Err(FedSeaError::AnalyticUnavailable("empirical_logistic"))
            }
        }
    }

    /// Closed-form `∇f_{t,m}(x)`.
    pub fn expected_gradient(&self, dist: &DistParams, x: &Vector) -> Result<Vector> {
        self.check_dist(dist)?;
        x.check_dim(self.dim)?;
        match &self.spec {
            LossSpec::MeanQuadratic => Ok(x.sub(dist.mean())),
            LossSpec::GaussianLinreg { feature_variances } => {
                let u = x.sub(dist.mean());
                Ok(Vector::from_raw(
                    feature_variances
                        .iter()
                        .zip(u.as_slice())
                        .map(|(s, ui)| s * ui)
                        .collect(),
                ))
            }
            LossSpec::EmpiricalLogistic { .. } => {
                Err(FedSeaError::AnalyticUnavailable("empirical_logistic"))
            }
        }
    }

    /// Exact `E‖∇f(x, ξ) − ∇f_{t,m}(x)‖²` at a given point.
    pub fn gradient_variance(&self, dist: &DistParams, x: &Vector) -> Result<f64> {
        self.check_dist(dist)?;
        x.check_dim(self.dim)?;
        match &self.spec {
            LossSpec::MeanQuadratic => Ok(dist.variance()),
            LossSpec::GaussianLinreg { feature_variances } => {
                let u = x.sub(dist.mean());
                let q = linreg_variance_weights(feature_variances);
                let trace: f64 = feature_variances.iter().sum();
                Ok(weighted_norm_sq(&q, &u) + dist.variance() * trace)
            }
            LossSpec::EmpiricalLogistic { .. } => {
                Err(FedSeaError::AnalyticUnavailable("empirical_logistic"))
            }
        }
    }

    /// `σ²_{t,m}`: the supremum of the gradient variance over the domain.
    ///
    /// * `mean_quadratic`: the variance is x-independent.
    /// * `gaussian_linreg`: `uᵀΣ²u + (uᵀΣu)·tr Σ + s²·tr Σ` with `u = x − w`,
    ///   maximized exactly over the ball; unbounded on an unbounded domain.
    /// * `empirical_logistic`: the certified bound `tr Σ ≥ E‖∇f(x, ξ)‖²`,
    ///   valid for every `x` because `|σ(·)| ≤ 1`.
    pub fn variance_bound(&self, dist: &DistParams, domain: &Domain) -> Result<f64> {
        self.check_dist(dist)?;
        match &self.spec {
            LossSpec::MeanQuadratic => Ok(dist.variance()),
            LossSpec::GaussianLinreg { feature_variances } => {
                let radius = domain.radius().ok_or(FedSeaError::UnboundedVariance)?;
                let q = linreg_variance_weights(feature_variances);
                let trace: f64 = feature_variances.iter().sum();
                let (peak, _) = max_diag_quadratic_on_ball(&q, dist.mean().as_slice(), radius);
                Ok(peak + dist.variance() * trace)
            }
            LossSpec::EmpiricalLogistic {
                feature_variances, ..
            } => Ok(feature_variances.iter().sum()),
        }
    }
}

fn check_feature_variances(v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(FedSeaError::DimensionMismatch {
            expected: dim,
            found: v.len(),
        });
    }
    if v.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(FedSeaError::Config(
            "feature variances must be finite and positive".into(),
        ));
    }
    Ok(())
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn weighted_norm_sq(weights: &[f64], u: &Vector) -> f64 {
    weights
        .iter()
        .zip(u.as_slice())
        .map(|(w, ui)| w * ui * ui)
        .sum()
}

/// Diagonal of `Σ² + tr(Σ)·Σ`.
fn linreg_variance_weights(feature_variances: &[f64]) -> Vec<f64> {
    let trace: f64 = feature_variances.iter().sum();
    feature_variances
        .iter()
        .map(|s| s * s + trace * s)
        .collect()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Maximizes `Σ_i q_i (x_i − c_i)²` over `‖x‖ ≤ r` for `q_i ≥ 0`.
///
/// The maximum of a convex quadratic sits on the sphere. Stationary points
/// satisfy `x_i = −q_i c_i / (λ − q_i)` with `λ ≥ max q`; `‖x(λ)‖` is
/// decreasing on `(max q, ∞)` so the multiplier is found by bisection. When
/// `c` has no component along the top eigenspace the solution may sit at
/// `λ = max q` with the slack norm placed on a top coordinate.
pub(crate) fn max_diag_quadratic_on_ball(q: &[f64], c: &[f64], r: f64) -> (f64, Vec<f64>) {
    let objective = |x: &[f64]| -> f64 {
        q.iter()
            .zip(x.iter().zip(c))
            .map(|(qi, (xi, ci))| qi * (xi - ci) * (xi - ci))
            .sum()
    };
    let q_max = max_of(q);
    if q_max <= 0.0 {
        let x = vec![0.0; q.len()];
        return (objective(&x), x);
    }
    let point_at = |lambda: f64| -> Vec<f64> {
        q.iter()
            .zip(c)
            .map(|(qi, ci)| {
                if lambda > *qi {
                    -qi * ci / (lambda - qi)
                } else {
                    0.0
                }
            })
            .collect()
    };
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let top: Vec<usize> = (0..q.len()).filter(|&i| q[i] == q_max).collect();
    let aligned = top.iter().any(|&i| c[i] != 0.0);

    if !aligned {
        let mut x = point_at(q_max);
        let n = norm(&x);
        if n <= r {
            x[top[0]] = (r * r - n * n).max(0.0).sqrt();
            return (objective(&x), x);
        }
    }

    let c_norm = norm(c);
    let mut lo = q_max;
    let mut hi = q_max + q_max * c_norm / r + 1.0;
    while norm(&point_at(hi)) > r {
        hi = q_max + 2.0 * (hi - q_max);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm(&point_at(mid)) > r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = point_at(hi);
    let n = norm(&x);
    if n > 0.0 {
        for xi in &mut x {
            *xi *= r / n;
        }
    }
    (objective(&x), x)
}
