//! Analysis-side quantities the learner never sees.
//!
//! For the two quadratic families every expected loss has the form
//! `f_{t,m}(x) = ½(x − μ_{t,m})ᵀA(x − μ_{t,m}) + ½v_{t,m}` with a diagonal `A`
//! shared by all `(t, m)`, so comparators and heterogeneity constants are
//! closed form. The logistic family has no closed form; its expected losses
//! are replaced by a frozen Monte Carlo surrogate (one keyed sample per
//! `(t, m)`), which then defines the experiment's ground truth everywhere:
//! regret, `K_t²`, comparators and bound audits.

use serde::{Deserialize, Serialize};

use crate::adversary::AdversarySchedule;
use crate::config::Domain;
use crate::engine::project;
use crate::error::{FedSeaError, Result};
use crate::losses::{sigmoid, softplus, LossModel, Sample};
use crate::rng::{DistParams, Purpose, StreamKey};
use crate::vector::Vector;

/// Relative gradient-norm tolerance for comparator solvers.
pub const SOLVER_TOLERANCE: f64 = 1e-8;
/// Iteration cap for comparator solvers.
pub const SOLVER_MAX_ITERATIONS: usize = 100_000;
/// Most negative `K_t²` accepted as rounding before the comparator is blamed.
pub const NEGATIVE_GAP_TOLERANCE: f64 = 1e-9;

const ZETA_ASCENT_STARTS: usize = 32;
const ZETA_ASCENT_ITERATIONS: usize = 60;
const ZETA_BOUNDARY_SAMPLES: usize = 10_000;

/// `½(x − c)ᵀ diag(a) (x − c) + offset`
#[derive(Clone, Debug, PartialEq)]
pub struct DiagQuadratic {
    pub curvature: Vec<f64>,
    pub center: Vector,
    pub offset: f64,
}

impl DiagQuadratic {
    pub fn value(&self, x: &Vector) -> f64 {
        let q: f64 = self
            .curvature
            .iter()
            .zip(x.as_slice().iter().zip(self.center.as_slice()))
            .map(|(a, (xi, ci))| a * (xi - ci) * (xi - ci))
            .sum();
        0.5 * q + self.offset
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        Vector::from_raw(
            self.curvature
                .iter()
                .zip(x.as_slice().iter().zip(self.center.as_slice()))
                .map(|(a, (xi, ci))| a * (xi - ci))
                .collect(),
        )
    }
}

/// A frozen labeled point of the logistic surrogate.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPoint {
    pub features: Vector,
    pub label: f64,
}

/// An expected loss `f_{t,m}` or `f_t`, ready for repeated evaluation.
#[derive(Clone, Debug)]
pub enum Objective<'a> {
    Quadratic(DiagQuadratic),
    /// Average of the logistic loss over equally sized frozen blocks.
    Empirical(Vec<&'a [LabeledPoint]>),
}

impl Objective<'_> {
    pub fn value(&self, x: &Vector) -> f64 {
        match self {
            Objective::Quadratic(q) => q.value(x),
            Objective::Empirical(blocks) => {
                let mut total = 0.0;
                let mut count = 0usize;
                for block in blocks {
                    for p in block.iter() {
                        total += softplus(-p.label * p.features.dot(x));
                    }
                    count += block.len();
                }
                total / count as f64
            }
        }
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        match self {
            Objective::Quadratic(q) => q.gradient(x),
            Objective::Empirical(blocks) => {
                let mut g = Vector::zeros(x.dim());
                let mut count = 0usize;
                for block in blocks {
                    for p in block.iter() {
                        let w = -p.label * sigmoid(-p.label * p.features.dot(x));
                        g.axpy(w, &p.features);
                    }
                    count += block.len();
                }
                g.scaled(1.0 / count as f64)
            }
        }
    }

    /// Upper bound on the gradient's Lipschitz constant.
    fn lipschitz_bound(&self) -> f64 {
        match self {
            Objective::Quadratic(q) => q.curvature.iter().copied().fold(0.0, f64::max),
            Objective::Empirical(blocks) => {
                let mut total = 0.0;
                let mut count = 0usize;
                for block in blocks {
                    total += block.iter().map(|p| p.features.norm_sq()).sum::<f64>();
                    count += block.len();
                }
                0.25 * total / count as f64
            }
        }
    }
}

/// Evaluates the expected losses of one experiment.
pub struct ExpectationOracle {
    model: LossModel,
    schedule: AdversarySchedule,
    domain: Domain,
    /// `[t − 1][m]` frozen samples, logistic family only.
    surrogate: Option<Vec<Vec<Vec<LabeledPoint>>>>,
}

impl ExpectationOracle {
    pub fn new(
        model: &LossModel,
        schedule: &AdversarySchedule,
        domain: Domain,
        seed: u64,
    ) -> Result<Self> {
        if model.dim() != schedule.dim() {
            return Err(FedSeaError::DimensionMismatch {
                expected: model.dim(),
                found: schedule.dim(),
            });
        }
        let surrogate = match model.mc_budget() {
            None => None,
            Some(budget) => {
                let mut per_step = Vec::with_capacity(schedule.horizon());
                for t in 1..=schedule.horizon() {
                    let mut per_client = Vec::with_capacity(schedule.clients());
                    for m in 0..schedule.clients() {
                        let dist = schedule.dist_params(t, m)?;
                        let mut stream =
                            StreamKey::new(seed, 0, t as u64, m as u64, Purpose::Oracle).stream();
                        let mut block = Vec::with_capacity(budget);
                        for _ in 0..budget {
                            if let Sample::Labeled { features, target } =
                                model.draw(&dist, &mut stream)?
                            {
                                block.push(LabeledPoint {
                                    features,
                                    label: target,
                                });
                            }
                        }
                        per_client.push(block);
                    }
                    per_step.push(per_client);
                }
                Some(per_step)
            }
        };
        Ok(Self {
            model: model.clone(),
            schedule: schedule.clone(),
            domain,
            surrogate,
        })
    }

    pub fn model(&self) -> &LossModel {
        &self.model
    }

    pub fn schedule(&self) -> &AdversarySchedule {
        &self.schedule
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn horizon(&self) -> usize {
        self.schedule.horizon()
    }

    pub fn clients(&self) -> usize {
        self.schedule.clients()
    }

    fn local_quadratic(&self, curvature: &[f64], dist: &DistParams) -> DiagQuadratic {
        DiagQuadratic {
            curvature: curvature.to_vec(),
            center: dist.mean().clone(),
            offset: 0.5 * dist.variance(),
        }
    }

    /// `f_{t,m}`
    pub fn local_objective(&self, t: usize, m: usize) -> Result<Objective<'_>> {
        let dist = self.schedule.dist_params(t, m)?;
        match (&self.surrogate, self.model.curvature()) {
            (_, Some(a)) => Ok(Objective::Quadratic(self.local_quadratic(&a, &dist))),
            (Some(s), None) => Ok(Objective::Empirical(vec![&s[t - 1][m]])),
            (None, None) => Err(FedSeaError::AnalyticUnavailable(self.model.family_name())),
        }
    }

    /// `f_t = (1/M) Σ_m f_{t,m}`
    pub fn global_objective(&self, t: usize) -> Result<Objective<'_>> {
        let clients = self.clients();
        match (&self.surrogate, self.model.curvature()) {
            (_, Some(a)) => {
                let dists = (0..clients)
                    .map(|m| self.schedule.dist_params(t, m))
                    .collect::<Result<Vec<_>>>()?;
                let means: Vec<Vector> = dists.iter().map(|d| d.mean().clone()).collect();
                let center = Vector::mean_of(&means);
                let offset = dists
                    .iter()
                    .map(|d| {
                        let spread: f64 = a
                            .iter()
                            .zip(d.mean().as_slice().iter().zip(center.as_slice()))
                            .map(|(ai, (mi, ci))| ai * (mi - ci) * (mi - ci))
                            .sum();
                        0.5 * spread + 0.5 * d.variance()
                    })
                    .sum::<f64>()
                    / clients as f64;
                Ok(Objective::Quadratic(DiagQuadratic {
                    curvature: a,
                    center,
                    offset,
                }))
            }
            (Some(s), None) => {
                if t == 0 || t > self.horizon() {
                    return Err(FedSeaError::IndexOutOfRange {
                        t,
                        m: 0,
                        horizon: self.horizon(),
                        clients,
                    });
                }
                Ok(Objective::Empirical(
                    s[t - 1].iter().map(|b| b.as_slice()).collect(),
                ))
            }
            (None, None) => Err(FedSeaError::AnalyticUnavailable(self.model.family_name())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparatorMethod {
    ClosedForm,
    OfflineSolver,
    MonteCarloSolver,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparatorSet {
    /// `x*`
    pub best_in_hindsight: Vector,
    /// `x_t*`, index `t − 1`
    pub per_step_optima: Vec<Vector>,
    pub method: ComparatorMethod,
    /// `‖∇F(x*)‖` (gradient mapping norm on a bounded domain)
    pub hindsight_residual: f64,
    pub per_step_residuals: Vec<f64>,
    /// `f_t(x*)`
    pub hindsight_losses: Vec<f64>,
    /// `f_t(x_t*)`
    pub optimum_losses: Vec<f64>,
}

/// Projected gradient descent on a smooth convex objective, started at `start`.
/// Returns the minimizer and its gradient-mapping norm.
fn minimize(
    value_grad: impl Fn(&Vector) -> Vector,
    lipschitz: f64,
    start: &Vector,
    domain: &Domain,
    tolerance: f64,
) -> Result<(Vector, f64)> {
    let step = 1.0 / lipschitz.max(1e-300);
    let mut x = project(start, domain).0;
    for _ in 0..SOLVER_MAX_ITERATIONS {
        let g = value_grad(&x);
        let mut next = x.clone();
        next.axpy(-step, &g);
        let next = project(&next, domain).0;
        let residual = next.sub(&x).norm() / step;
        x = next;
        if residual <= tolerance {
            return Ok((x, residual));
        }
    }
    Err(FedSeaError::Solver(format!(
        "no convergence within {SOLVER_MAX_ITERATIONS} iterations"
    )))
}

fn gradient_mapping_norm(x: &Vector, g: &Vector, lipschitz: f64, domain: &Domain) -> f64 {
    if domain.radius().is_none() {
        return g.norm();
    }
    let step = 1.0 / lipschitz.max(1e-300);
    let mut next = x.clone();
    next.axpy(-step, g);
    project(&next, domain).0.sub(x).norm() / step
}

/// Computes `x*` and every `x_t*`.
///
/// Quadratic families use closed forms (grand mean and per-step means of the
/// centers, which must lie inside `𝒳`). The logistic family runs projected
/// gradient descent on the frozen surrogate. `start` is the reference point
/// used for the relative tolerance (the experiment's `x_1`).
pub fn compute_comparators(oracle: &ExpectationOracle, start: &Vector) -> Result<ComparatorSet> {
    let horizon = oracle.horizon();
    let domain = oracle.domain();
    let objectives = (1..=horizon)
        .map(|t| oracle.global_objective(t))
        .collect::<Result<Vec<_>>>()?;
    let total_gradient = |x: &Vector| -> Vector {
        let mut g = Vector::zeros(x.dim());
        for o in &objectives {
            g.axpy(1.0, &o.gradient(x));
        }
        g
    };
    let hindsight_tol = SOLVER_TOLERANCE * total_gradient(start).norm().max(1.0);

    let (best, per_step, method) = if oracle.model().is_analytic() {
        let centers: Vec<Vector> = objectives
            .iter()
            .map(|o| match o {
                Objective::Quadratic(q) => q.center.clone(),
                Objective::Empirical(_) => unreachable!("analytic families are quadratic"),
            })
            .collect();
        let best = Vector::mean_of(&centers);
        if !domain.contains(&best) || centers.iter().any(|c| !domain.contains(c)) {
            return Err(FedSeaError::Solver(
                "closed-form optimum lies outside the projection ball".into(),
            ));
        }
        (best, centers, ComparatorMethod::ClosedForm)
    } else {
        let lipschitz = objectives
            .iter()
            .map(|o| o.lipschitz_bound())
            .fold(0.0, f64::max);
        let scale = 1.0 / horizon as f64;
        let (best, _) = minimize(
            |x| total_gradient(x).scaled(scale),
            lipschitz,
            start,
            &domain,
            hindsight_tol * scale,
        )?;
        let mut per_step = Vec::with_capacity(horizon);
        for o in &objectives {
            let tol = SOLVER_TOLERANCE * o.gradient(start).norm().max(1.0);
            let (xt, _) = minimize(|x| o.gradient(x), o.lipschitz_bound(), &best, &domain, tol)?;
            per_step.push(xt);
        }
        (best, per_step, ComparatorMethod::MonteCarloSolver)
    };

    let total_lipschitz: f64 = objectives.iter().map(|o| o.lipschitz_bound()).sum();
    let hindsight_residual =
        gradient_mapping_norm(&best, &total_gradient(&best), total_lipschitz, &domain);
    if hindsight_residual > hindsight_tol {
        return Err(FedSeaError::Solver(format!(
            "best-in-hindsight residual {hindsight_residual:e} exceeds tolerance {hindsight_tol:e}"
        )));
    }
    let mut per_step_residuals = Vec::with_capacity(horizon);
    for (o, xt) in objectives.iter().zip(&per_step) {
        let r = gradient_mapping_norm(xt, &o.gradient(xt), o.lipschitz_bound(), &domain);
        let tol = SOLVER_TOLERANCE * o.gradient(start).norm().max(1.0);
        if r > tol {
            return Err(FedSeaError::Solver(format!(
                "per-step optimum residual {r:e} exceeds tolerance {tol:e}"
            )));
        }
        per_step_residuals.push(r);
    }
    let hindsight_losses = objectives.iter().map(|o| o.value(&best)).collect();
    let optimum_losses = objectives
        .iter()
        .zip(&per_step)
        .map(|(o, xt)| o.value(xt))
        .collect();
    Ok(ComparatorSet {
        best_in_hindsight: best,
        per_step_optima: per_step,
        method,
        hindsight_residual,
        per_step_residuals,
        hindsight_losses,
        optimum_losses,
    })
}

/// `ζ_t²` together with how it was obtained.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialHeterogeneity {
    pub value: f64,
    /// False when the maximum over `𝒳` was approximated; the value is then a
    /// lower-bound witness attained at `witness`.
    pub exact: bool,
    pub witness: Option<Vector>,
}

fn gradient_gap(locals: &[Objective<'_>], global: &Objective<'_>, x: &Vector) -> f64 {
    let g = global.gradient(x);
    locals
        .iter()
        .map(|o| o.gradient(x).dist_sq(&g))
        .sum::<f64>()
        / locals.len() as f64
}

/// `ζ_t² = max_{x∈𝒳} (1/M) Σ_m ‖∇f_{t,m}(x) − ∇f_t(x)‖²`.
///
/// The gap is x-independent for the quadratic families. For the logistic
/// family the maximum is approximated by multi-start projected gradient
/// ascent and a uniform boundary sample; the larger value is reported.
pub fn spatial_heterogeneity(
    oracle: &ExpectationOracle,
    t: usize,
    seed: u64,
) -> Result<SpatialHeterogeneity> {
    spatial_heterogeneity_within(oracle, t, seed, None)
}

/// As [`spatial_heterogeneity`], but maximizing over the ball of `radius`
/// instead of the oracle's domain when one is given.
pub fn spatial_heterogeneity_within(
    oracle: &ExpectationOracle,
    t: usize,
    seed: u64,
    radius: Option<f64>,
) -> Result<SpatialHeterogeneity> {
    let clients = oracle.clients();
    if let Some(a) = oracle.model().curvature() {
        let dists = (0..clients)
            .map(|m| oracle.schedule().dist_params(t, m))
            .collect::<Result<Vec<_>>>()?;
        let means: Vec<Vector> = dists.iter().map(|d| d.mean().clone()).collect();
        let center = Vector::mean_of(&means);
        let value = means
            .iter()
            .map(|mu| {
                a.iter()
                    .zip(mu.as_slice().iter().zip(center.as_slice()))
                    .map(|(ai, (mi, ci))| (ai * (mi - ci)).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / clients as f64;
        return Ok(SpatialHeterogeneity {
            value,
            exact: true,
            witness: None,
        });
    }

    let radius = radius
        .or(oracle.domain().radius())
        .ok_or(FedSeaError::ZetaUndefined)?;
    let domain = Domain::ball(radius);
    let dim = oracle.model().dim();
    let locals = (0..clients)
        .map(|m| oracle.local_objective(t, m))
        .collect::<Result<Vec<_>>>()?;
    let global = oracle.global_objective(t)?;
    let gap = |x: &Vector| gradient_gap(&locals, &global, x);

    let mut stream = StreamKey::new(seed, 0, t as u64, 0, Purpose::Probe).stream();
    let mut best = (f64::NEG_INFINITY, Vector::zeros(dim));
    let h = 1e-6 * radius.max(1.0);
    for start in 0..ZETA_ASCENT_STARTS {
        let mut x = if start == 0 {
            Vector::zeros(dim)
        } else {
            let u = stream.uniform().powf(1.0 / dim as f64);
            stream.on_sphere(dim, radius * u)
        };
        let mut value = gap(&x);
        let mut step = 0.1 * radius;
        for _ in 0..ZETA_ASCENT_ITERATIONS {
            let grad = Vector::from_raw(
                (0..dim)
                    .map(|i| {
                        let mut up = x.clone();
                        up.as_mut_slice()[i] += h;
                        let mut down = x.clone();
                        down.as_mut_slice()[i] -= h;
                        (gap(&up) - gap(&down)) / (2.0 * h)
                    })
                    .collect(),
            );
            let n = grad.norm();
            if n == 0.0 {
                break;
            }
            let mut candidate = x.clone();
            candidate.axpy(step / n, &grad);
            let candidate = project(&candidate, &domain).0;
            let cv = gap(&candidate);
            if cv > value {
                x = candidate;
                value = cv;
                step *= 1.5;
            } else {
                step *= 0.5;
                if step < 1e-9 * radius {
                    break;
                }
            }
        }
        if value > best.0 {
            best = (value, x);
        }
    }
    for _ in 0..ZETA_BOUNDARY_SAMPLES {
        let x = stream.on_sphere(dim, radius);
        let value = gap(&x);
        if value > best.0 {
            best = (value, x);
        }
    }
    Ok(SpatialHeterogeneity {
        value: best.0,
        exact: false,
        witness: Some(best.1),
    })
}

/// `K_t² = f_t(x*) − f_t(x_t*)`, clamped at zero within rounding.
pub fn temporal_heterogeneity(comparators: &ComparatorSet, t: usize) -> Result<f64> {
    let value = comparators.hindsight_losses[t - 1] - comparators.optimum_losses[t - 1];
    if value < -NEGATIVE_GAP_TOLERANCE {
        return Err(FedSeaError::NegativeTemporalGap { t, value });
    }
    Ok(value.max(0.0))
}

/// `σ_t² = (1/M) Σ_m σ²_{t,m}` for every step.
pub fn variance_profile(oracle: &ExpectationOracle) -> Result<Vec<f64>> {
    let clients = oracle.clients();
    (1..=oracle.horizon())
        .map(|t| {
            let mut total = 0.0;
            for m in 0..clients {
                let dist = oracle.schedule().dist_params(t, m)?;
                total += oracle.model().variance_bound(&dist, &oracle.domain())?;
            }
            Ok(total / clients as f64)
        })
        .collect()
}

/// Per-step heterogeneity and variance with their averages and maxima.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityProfile {
    pub zeta_sq: Vec<f64>,
    pub k_sq: Vec<f64>,
    pub sigma_sq: Vec<f64>,
    pub zeta_bar_sq: f64,
    pub k_bar_sq: f64,
    pub sigma_bar_sq: f64,
    pub zeta_max_sq: f64,
    pub k_max_sq: f64,
    pub sigma_max_sq: f64,
    /// False when any `ζ_t²` is an approximation.
    pub zeta_exact: bool,
}

fn average(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn maximum(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

impl HeterogeneityProfile {
    pub fn from_arrays(
        zeta_sq: Vec<f64>,
        k_sq: Vec<f64>,
        sigma_sq: Vec<f64>,
        zeta_exact: bool,
    ) -> Self {
        Self {
            zeta_bar_sq: average(&zeta_sq),
            k_bar_sq: average(&k_sq),
            sigma_bar_sq: average(&sigma_sq),
            zeta_max_sq: maximum(&zeta_sq),
            k_max_sq: maximum(&k_sq),
            sigma_max_sq: maximum(&sigma_sq),
            zeta_sq,
            k_sq,
            sigma_sq,
            zeta_exact,
        }
    }

    /// Whether the stored aggregates equal those recomputed from the arrays.
    pub fn is_consistent(&self) -> bool {
        let again = Self::from_arrays(
            self.zeta_sq.clone(),
            self.k_sq.clone(),
            self.sigma_sq.clone(),
            self.zeta_exact,
        );
        again == *self
    }
}

pub fn heterogeneity_profile(
    oracle: &ExpectationOracle,
    comparators: &ComparatorSet,
    seed: u64,
) -> Result<HeterogeneityProfile> {
    let horizon = oracle.horizon();
    let mut zeta = Vec::with_capacity(horizon);
    let mut exact = true;
    for t in 1..=horizon {
        let z = spatial_heterogeneity(oracle, t, seed)?;
        exact &= z.exact;
        zeta.push(z.value);
    }
    let k = (1..=horizon)
        .map(|t| temporal_heterogeneity(comparators, t))
        .collect::<Result<Vec<_>>>()?;
    let sigma = variance_profile(oracle)?;
    Ok(HeterogeneityProfile::from_arrays(zeta, k, sigma, exact))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Running mean and variance (Welford).
#[derive(Clone, Copy, Debug, Default)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Sample mean of `f(x, ξ)` over `budget` draws of the keyed stream.
pub fn mc_expected_loss(
    model: &LossModel,
    dist: &DistParams,
    x: &Vector,
    budget: usize,
    key: &StreamKey,
) -> Result<McEstimate> {
    if budget < 1000 {
        return Err(FedSeaError::InsufficientBudget(format!(
            "Monte Carlo budget {budget} is below 1000"
        )));
    }
    let mut stream = key.stream();
    let mut stats = RunningStats::default();
    for _ in 0..budget {
        let s = model.draw(dist, &mut stream)?;
        stats.push(model.loss(x, &s)?);
    }
    Ok(McEstimate {
        estimate: stats.mean(),
        std_error: stats.std_error(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{AdversarySpec, VarianceLevels};
    use crate::losses::LossSpec;

    fn v(c: &[f64]) -> Vector {
        Vector::new(c.to_vec()).unwrap()
    }

    fn quad_oracle(
        spec: AdversarySpec,
        clients: usize,
        horizon: usize,
        dim: usize,
    ) -> ExpectationOracle {
        let model = LossModel::from_spec(&LossSpec::MeanQuadratic, dim).unwrap();
        let schedule = spec.build(clients, horizon, dim).unwrap();
        ExpectationOracle::new(&model, &schedule, Domain::unbounded(), 1).unwrap()
    }

    fn heterogeneous(means: &[&[f64]]) -> AdversarySpec {
        AdversarySpec::StaticHeterogeneous {
            means: means.iter().map(|m| v(m)).collect(),
            variance: VarianceLevels::Uniform(1.0),
        }
    }

    #[test]
    fn static_iid_comparators() {
        let mu = v(&[0.3, -0.7]);
        let o = quad_oracle(
            AdversarySpec::StaticIid {
                mean: mu.clone(),
                variance: 1.0,
            },
            3,
            10,
            2,
        );
        let c = compute_comparators(&o, &Vector::zeros(2)).unwrap();
        assert_eq!(c.best_in_hindsight, mu);
        assert!(c.per_step_optima.iter().all(|x| *x == mu));
        assert_eq!(c.method, ComparatorMethod::ClosedForm);
        for t in 1..=10 {
            assert_eq!(temporal_heterogeneity(&c, t).unwrap(), 0.0);
            assert_eq!(spatial_heterogeneity(&o, t, 0).unwrap().value, 0.0);
        }
    }

    #[test]
    fn cyclic_comparators_and_temporal_gap() {
        let c_amp = 1.5;
        let o = quad_oracle(
            AdversarySpec::CyclicMeans {
                base: v(&[0.0]),
                amplitude: c_amp,
                period: 2,
                direction: None,
                client_offsets: None,
                variance: VarianceLevels::Uniform(1.0),
            },
            2,
            8,
            1,
        );
        let c = compute_comparators(&o, &Vector::zeros(1)).unwrap();
        assert_eq!(c.best_in_hindsight[0], 0.0);
        for t in 1..=8 {
            let expect = if t % 2 == 1 { c_amp } else { -c_amp };
            assert_eq!(c.per_step_optima[t - 1][0], expect);
            assert!((temporal_heterogeneity(&c, t).unwrap() - c_amp * c_amp / 2.0).abs() < 1e-12);
            assert_eq!(spatial_heterogeneity(&o, t, 0).unwrap().value, 0.0);
        }
    }

    #[test]
    fn spatial_heterogeneity_examples() {
        let o = quad_oracle(heterogeneous(&[&[1.0, 0.0], &[-1.0, 0.0]]), 2, 3, 2);
        let c = compute_comparators(&o, &Vector::zeros(2)).unwrap();
        assert_eq!(c.best_in_hindsight, Vector::zeros(2));
        assert_eq!(c.per_step_optima[0], Vector::zeros(2));
        assert_eq!(spatial_heterogeneity(&o, 1, 0).unwrap().value, 1.0);
        assert_eq!(temporal_heterogeneity(&c, 2).unwrap(), 0.0);

        let o = quad_oracle(
            heterogeneous(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]]),
            4,
            2,
            2,
        );
        assert_eq!(spatial_heterogeneity(&o, 2, 0).unwrap().value, 1.0);
    }

    #[test]
    fn variance_profile_examples() {
        let o = quad_oracle(
            AdversarySpec::StaticHeterogeneous {
                means: vec![v(&[0.0]), v(&[0.0])],
                variance: VarianceLevels::PerClient(vec![0.0, 2.0]),
            },
            2,
            4,
            1,
        );
        assert_eq!(variance_profile(&o).unwrap(), vec![1.0; 4]);
        let o = quad_oracle(
            AdversarySpec::DiracAdversarial {
                points: vec![v(&[1.0]), v(&[-1.0])],
            },
            2,
            4,
            1,
        );
        assert_eq!(variance_profile(&o).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn global_objective_matches_average_of_local_losses() {
        let model = LossModel::from_spec(
            &LossSpec::GaussianLinreg {
                feature_variances: vec![2.0, 0.5],
            },
            2,
        )
        .unwrap();
        let schedule = AdversarySpec::StaticHeterogeneous {
            means: vec![v(&[1.0, 0.2]), v(&[-0.3, 0.4]), v(&[0.0, -1.0])],
            variance: VarianceLevels::PerClient(vec![0.1, 0.0, 0.7]),
        }
        .build(3, 2, 2)
        .unwrap();
        let o = ExpectationOracle::new(&model, &schedule, Domain::unbounded(), 0).unwrap();
        let x = v(&[0.4, -0.9]);
        let direct: f64 = (0..3)
            .map(|m| {
                model
                    .expected_loss(&schedule.dist_params(1, m).unwrap(), &x)
                    .unwrap()
            })
            .sum::<f64>()
            / 3.0;
        let via = o.global_objective(1).unwrap().value(&x);
        assert!((direct - via).abs() < 1e-14, "{direct} vs {via}");
    }

    #[test]
    fn profile_aggregates_are_consistent() {
        let p = HeterogeneityProfile::from_arrays(
            vec![0.1, 0.3, 0.2],
            vec![0.0, 1.0, 0.5],
            vec![1.0, 1.0, 4.0],
            true,
        );
        assert!(p.is_consistent());
        assert_eq!(p.k_max_sq, 1.0);
        assert_eq!(p.sigma_bar_sq, 2.0);
    }

    #[test]
    fn mc_point_mass_is_exact() {
        let model = LossModel::from_spec(&LossSpec::MeanQuadratic, 2).unwrap();
        let dist = DistParams::PointMass { at: v(&[1.0, 1.0]) };
        let x = v(&[0.0, 2.0]);
        let est = mc_expected_loss(
            &model,
            &dist,
            &x,
            1000,
            &StreamKey::new(0, 0, 1, 0, Purpose::Probe),
        )
        .unwrap();
        assert_eq!(est.estimate, 1.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn mc_budget_floor() {
        let model = LossModel::from_spec(&LossSpec::MeanQuadratic, 1).unwrap();
        let dist = DistParams::PointMass { at: v(&[1.0]) };
        assert!(matches!(
            mc_expected_loss(
                &model,
                &dist,
                &v(&[0.0]),
                999,
                &StreamKey::new(0, 0, 1, 0, Purpose::Probe)
            ),
            Err(FedSeaError::InsufficientBudget(_))
        ));
    }

    #[test]
    fn out_of_ball_optimum_is_loud() {
        let model = LossModel::from_spec(&LossSpec::MeanQuadratic, 1).unwrap();
        let schedule = AdversarySpec::StaticIid {
            mean: v(&[5.0]),
            variance: 1.0,
        }
        .build(1, 2, 1)
        .unwrap();
        let o = ExpectationOracle::new(&model, &schedule, Domain::ball(1.0), 0).unwrap();
        assert!(matches!(
            compute_comparators(&o, &Vector::zeros(1)),
            Err(FedSeaError::Solver(_))
        ));
    }

    #[test]
    fn negative_gap_is_reported() {
        let c = ComparatorSet {
            best_in_hindsight: Vector::zeros(1),
            per_step_optima: vec![Vector::zeros(1)],
            method: ComparatorMethod::ClosedForm,
            hindsight_residual: 0.0,
            per_step_residuals: vec![0.0],
            hindsight_losses: vec![1.0],
            optimum_losses: vec![1.0 + 1e-6],
        };
        assert!(matches!(
            temporal_heterogeneity(&c, 1),
            Err(FedSeaError::NegativeTemporalGap { .. })
        ));
    }
}
