//! Theorem-level regret bounds and audits of the intermediate lemmas.
//!
//! All bounds use unit leading constants, so they are compared with measured
//! regret only up to a fitted constant.

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::engine::{consensus_error, SimState, TraceRecord};
use crate::error::{FedSeaError, Result};
use crate::oracles::{ComparatorSet, ExpectationOracle, HeterogeneityProfile, RunningStats};
use crate::rng::{Purpose, StreamKey};
use crate::step_size::drift_cap;
use crate::vector::Vector;

/// Relative tolerance of the per-step smoothness inequality.
pub const LEMMA1_TOLERANCE: f64 = 1e-9;
/// Relative tolerance of the moving-target identity.
pub const SPLIT_TOLERANCE: f64 = 1e-9;
/// Monte Carlo slack, in standard errors, for the stochastic audits.
pub const AUDIT_SIGMAS: f64 = 5.0;
/// Fewest replicates accepted by the replicate-averaged drift audit.
pub const LEMMA3_MIN_REPLICATES: usize = 32;

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Terms {
    /// `D²/η`
    pub init_term: f64,
    /// `Tη(σ̄²/M + LK̄²)`
    pub variance_term: f64,
    /// `Tη²L(τ−1)(σ̄² + (τ−1)ζ̄²)`
    pub spatial_drift: f64,
    /// `Tη²L²(τ−1)²K̄²`
    pub temporal_drift: f64,
    pub total: f64,
}

/// Convex-case bound for a constant step `eta` and initial distance `distance`.
pub fn evaluate_theorem1(
    profile: &HeterogeneityProfile,
    config: &ExperimentConfig,
    smoothness: f64,
    eta: f64,
    distance: f64,
) -> Theorem1Terms {
    let l = smoothness;
    let horizon = config.horizon as f64;
    let lag = (config.sync_period - 1) as f64;
    let m = config.num_clients as f64;
    let init_term = distance * distance / eta;
    let variance_term = horizon * eta * (profile.sigma_bar_sq / m + l * profile.k_bar_sq);
    let spatial_drift =
        horizon * eta * eta * l * lag * (profile.sigma_bar_sq + lag * profile.zeta_bar_sq);
    let temporal_drift = horizon * eta * eta * l * l * lag * lag * profile.k_bar_sq;
    Theorem1Terms {
        init_term,
        variance_term,
        spatial_drift,
        temporal_drift,
        total: init_term + variance_term + spatial_drift + temporal_drift,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Terms {
    /// `(σ²_max/M + LK²_max)(1 + ln T)/μ`
    pub log_term: f64,
    /// `L²τ(σ²_max + τζ²_max + τLK²_max)/μ³`
    pub drift_term: f64,
    /// First `t` with `4L/(μt) + 288L³(τ−1)²/(μ³t²) < 1/2`.
    pub t0: usize,
    /// The max-of-ceilings expression for `t0`.
    pub t0_closed_form: usize,
    /// Measured head error over `t < t0`, when a trajectory summary was supplied.
    pub e_head: Option<f64>,
    /// The head weights times `LD²/2`.
    pub e_head_cap: f64,
    /// Sum of the log, drift and head terms (the cap stands in for a missing
    /// measurement).
    pub total: f64,
}

fn t0_condition(t: usize, kappa: f64, smoothness: f64, mu: f64, lag: f64) -> bool {
    let t = t as f64;
    4.0 * kappa / t + 288.0 * smoothness.powi(3) * lag * lag / (mu.powi(3) * t * t) < 0.5
}

/// `inf{t ≥ 1 : 4L/(μt) + 288L³(τ−1)²/(μ³t²) < 1/2}`
pub fn theorem2_t0(smoothness: f64, mu: f64, sync_period: usize) -> usize {
    let kappa = smoothness / mu;
    let lag = (sync_period - 1) as f64;
    // Positive root of t²/2 − 4κt − 288L³(τ−1)²/μ³ = 0.
    let a = 4.0 * kappa;
    let b = 288.0 * smoothness.powi(3) * lag * lag / mu.powi(3);
    let root = a + (a * a + 2.0 * b).sqrt();
    let mut t = (root.floor() as usize).saturating_sub(2).max(1);
    while t > 1 && t0_condition(t - 1, kappa, smoothness, mu, lag) {
        t -= 1;
    }
    while !t0_condition(t, kappa, smoothness, mu, lag) {
        t += 1;
    }
    t
}

/// `max{⌈8L(τ−1)²/μ⌉, ⌈(4L/μ)(1 + √(1 + 36L(τ−1)²/μ))⌉}`
pub fn theorem2_t0_closed_form(smoothness: f64, mu: f64, sync_period: usize) -> usize {
    let kappa = smoothness / mu;
    let lag = (sync_period - 1) as f64;
    let first = (8.0 * kappa * lag * lag).ceil();
    let second = (4.0 * kappa * (1.0 + (1.0 + 36.0 * kappa * lag * lag).sqrt())).ceil();
    first.max(second).max(1.0) as usize
}

/// `L/(μt) + L³(τ−1)²/(μ³t²)`
pub fn head_weight(t: usize, smoothness: f64, mu: f64, sync_period: usize) -> f64 {
    let t = t as f64;
    let lag = (sync_period - 1) as f64;
    smoothness / (mu * t) + smoothness.powi(3) * lag * lag / (mu.powi(3) * t * t)
}

/// Strongly convex bound. `virtual_gaps[t − 1]` is the replicate mean of
/// `f_t(x_t) − f_t(x*)`; its positive part enters the head error.
pub fn evaluate_theorem2(
    profile: &HeterogeneityProfile,
    config: &ExperimentConfig,
    smoothness: f64,
    mu: f64,
    distance: f64,
    virtual_gaps: Option<&[f64]>,
) -> Result<Theorem2Terms> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(FedSeaError::Config(
            "strongly convex bound needs mu > 0".into(),
        ));
    }
    let l = smoothness;
    let tau = config.sync_period as f64;
    let m = config.num_clients as f64;
    let horizon = config.horizon;
    let log_term =
        (profile.sigma_max_sq / m + l * profile.k_max_sq) * (1.0 + (horizon as f64).ln()) / mu;
    let drift_term = l
        * l
        * tau
        * (profile.sigma_max_sq + tau * profile.zeta_max_sq + tau * l * profile.k_max_sq)
        / mu.powi(3);
    let t0 = theorem2_t0(l, mu, config.sync_period);
    let t0_closed_form = theorem2_t0_closed_form(l, mu, config.sync_period);
    let head_end = t0.min(horizon + 1);
    let weights: Vec<f64> = (1..head_end)
        .map(|t| head_weight(t, l, mu, config.sync_period))
        .collect();
    let e_head_cap = compensated_sum(weights.iter().map(|w| w * l * distance * distance / 2.0));
    let e_head = virtual_gaps
        .map(|gaps| compensated_sum(weights.iter().zip(gaps).map(|(w, g)| w * g.max(0.0))));
    Ok(Theorem2Terms {
        log_term,
        drift_term,
        t0,
        t0_closed_form,
        e_head,
        e_head_cap,
        total: log_term + drift_term + e_head.unwrap_or(e_head_cap),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Verdict {
    pub steps_checked: usize,
    pub violations: usize,
    /// Largest `(LHS − RHS)/(1 + |RHS|)`.
    pub max_relative_excess: f64,
    /// Largest `|LHS − RHS|/(1 + |RHS|)`.
    pub max_relative_gap: f64,
    pub pass: bool,
}

impl Lemma1Verdict {
    pub fn merge(&self, other: &Lemma1Verdict) -> Lemma1Verdict {
        Lemma1Verdict {
            steps_checked: self.steps_checked + other.steps_checked,
            violations: self.violations + other.violations,
            max_relative_excess: self.max_relative_excess.max(other.max_relative_excess),
            max_relative_gap: self.max_relative_gap.max(other.max_relative_gap),
            pass: self.pass && other.pass,
        }
    }
}

/// Checks `(1/M)Σ_m f_t(x_{t,m}) − f_t(x*) ≤ f_t(x_t) − f_t(x*) + (L/2)V_t` at every step.
pub fn audit_lemma1(
    trace: &[TraceRecord],
    comparators: &ComparatorSet,
    smoothness: f64,
) -> Lemma1Verdict {
    let mut verdict = Lemma1Verdict {
        steps_checked: 0,
        violations: 0,
        max_relative_excess: f64::NEG_INFINITY,
        max_relative_gap: 0.0,
        pass: true,
    };
    for r in trace {
        let reference = comparators.hindsight_losses[r.t - 1];
        let lhs = r.mean_expected_loss() - reference;
        let rhs = r.virtual_loss - reference + 0.5 * smoothness * r.consensus_error;
        let scale = 1.0 + rhs.abs();
        let excess = (lhs - rhs) / scale;
        verdict.steps_checked += 1;
        verdict.max_relative_excess = verdict.max_relative_excess.max(excess);
        verdict.max_relative_gap = verdict.max_relative_gap.max(excess.abs());
        if excess > LEMMA1_TOLERANCE {
            verdict.violations += 1;
            verdict.pass = false;
        }
    }
    verdict
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Verdict {
    pub t: usize,
    /// Monte Carlo mean of `‖(1/M)Σ_m g_{t,m}‖²`.
    pub estimate: f64,
    pub std_error: f64,
    /// `10σ_t²/M + 2L²V_t + 4L(f_t(x_t) − f_t(x_t*))`
    pub rhs: f64,
    pub sigma_sq: f64,
    pub consensus_error: f64,
    pub optimality_gap: f64,
    pub pass: bool,
}

/// Resamples every `ξ_{t,m}` at a frozen state and compares the mean squared
/// norm of the averaged stochastic gradient with its bound.
pub fn audit_lemma2(
    state: &SimState,
    oracle: &ExpectationOracle,
    comparators: &ComparatorSet,
    seed: u64,
    budget: usize,
) -> Result<Lemma2Verdict> {
    if budget < 1000 {
        return Err(FedSeaError::InsufficientBudget(format!(
            "Monte Carlo budget {budget} is below 1000"
        )));
    }
    let t = state.t;
    let model = oracle.model();
    let schedule = oracle.schedule();
    let clients = state.clients.len();
    let dists = (0..clients)
        .map(|m| schedule.dist_params(t, m))
        .collect::<Result<Vec<_>>>()?;

    let mut stats = RunningStats::default();
    for b in 0..budget {
        let mut total = Vector::zeros(model.dim());
        for (m, (x, dist)) in state.clients.iter().zip(&dists).enumerate() {
            let mut stream =
                StreamKey::new(seed, b as u64, t as u64, m as u64, Purpose::Audit).stream();
            let sample = model.draw(dist, &mut stream)?;
            total.axpy(1.0, &model.stochastic_gradient(x, &sample)?);
        }
        stats.push(total.scaled(1.0 / clients as f64).norm_sq());
    }

    let mut sigma_sq = 0.0;
    for dist in &dists {
        sigma_sq += model.variance_bound(dist, &oracle.domain())?;
    }
    sigma_sq /= clients as f64;
    let l = model.smoothness();
    let v = consensus_error(state);
    let average = Vector::mean_of(&state.clients);
    let gap = oracle.global_objective(t)?.value(&average) - comparators.optimum_losses[t - 1];
    let rhs = 10.0 * sigma_sq / clients as f64 + 2.0 * l * l * v + 4.0 * l * gap;
    let std_error = stats.std_error();
    if std_error > 0.1 * rhs.abs() && std_error > 0.0 {
        return Err(FedSeaError::InsufficientBudget(format!(
            "standard error {std_error:e} exceeds 10% of the bound {rhs:e} at t = {t}"
        )));
    }
    Ok(Lemma2Verdict {
        t,
        estimate: stats.mean(),
        std_error,
        rhs,
        sigma_sq,
        consensus_error: v,
        optimality_gap: gap,
        pass: stats.mean() <= rhs + AUDIT_SIGMAS * std_error,
    })
}

/// Per-replicate `(Σ_t V_t, Σ_t [f_t(x_t) − f_t(x_t*)])`.
pub fn lemma3_sums(trace: &[TraceRecord], comparators: &ComparatorSet) -> (f64, f64) {
    (
        compensated_sum(trace.iter().map(|r| r.consensus_error)),
        compensated_sum(
            trace
                .iter()
                .map(|r| r.virtual_loss - comparators.optimum_losses[r.t - 1]),
        ),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma3Verdict {
    /// Replicate mean of `Σ_t V_t`.
    pub lhs: f64,
    pub lhs_std_error: f64,
    /// `4η²(τ−1)Σ_t(σ_t² + 3(τ−1)ζ_t²) + 12η²(τ−1)²L·mean Σ_t[f_t(x_t) − f_t(x_t*)]`
    pub rhs: f64,
    /// Standard error of the per-replicate `LHS − RHS`, the quantity tested.
    pub margin_std_error: f64,
    pub replicates: usize,
    pub pass: bool,
}

/// Replicate-averaged consensus-error audit for a constant step `eta`.
pub fn audit_lemma3(
    sums: &[(f64, f64)],
    profile: &HeterogeneityProfile,
    config: &ExperimentConfig,
    smoothness: f64,
    eta: f64,
) -> Result<Lemma3Verdict> {
    if sums.len() < LEMMA3_MIN_REPLICATES {
        return Err(FedSeaError::AuditPrecondition(format!(
            "{} replicates supplied, at least {LEMMA3_MIN_REPLICATES} required",
            sums.len()
        )));
    }
    let cap = drift_cap(smoothness, config.sync_period);
    if eta > cap * (1.0 + 1e-12) {
        return Err(FedSeaError::StepSizePrecondition { eta, cap });
    }
    let lag = (config.sync_period - 1) as f64;
    let fixed = 4.0
        * eta
        * eta
        * lag
        * compensated_sum(
            profile
                .sigma_sq
                .iter()
                .zip(&profile.zeta_sq)
                .map(|(s, z)| s + 3.0 * lag * z),
        );
    let coupling = 12.0 * eta * eta * lag * lag * smoothness;

    let mut lhs = RunningStats::default();
    let mut gap = RunningStats::default();
    let mut margin = RunningStats::default();
    for &(v, g) in sums {
        lhs.push(v);
        gap.push(g);
        margin.push(v - coupling * g);
    }
    let rhs = fixed + coupling * gap.mean();
    let margin_std_error = margin.std_error();
    Ok(Lemma3Verdict {
        lhs: lhs.mean(),
        lhs_std_error: lhs.std_error(),
        rhs,
        margin_std_error,
        replicates: sums.len(),
        pass: margin.mean() <= fixed + AUDIT_SIGMAS * margin_std_error,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovingTargetSplit {
    /// `Σ_t [f_t(x_t) − f_t(x*)]`
    pub virtual_regret_sum: f64,
    /// `Σ_t K_t²`
    pub k_sum: f64,
    /// `Σ_t [f_t(x_t) − f_t(x_t*)]`
    pub total: f64,
}

/// Splits the per-step optimality gap along the trajectory and checks that
/// the two parts add up.
pub fn moving_target_split(
    trace: &[TraceRecord],
    comparators: &ComparatorSet,
) -> Result<MovingTargetSplit> {
    let virtual_regret_sum = compensated_sum(
        trace
            .iter()
            .map(|r| r.virtual_loss - comparators.hindsight_losses[r.t - 1]),
    );
    let k_sum = compensated_sum(
        trace
            .iter()
            .map(|r| comparators.hindsight_losses[r.t - 1] - comparators.optimum_losses[r.t - 1]),
    );
    let total = compensated_sum(
        trace
            .iter()
            .map(|r| r.virtual_loss - comparators.optimum_losses[r.t - 1]),
    );
    let error = (virtual_regret_sum + k_sum - total).abs();
    let scale = total
        .abs()
        .max(virtual_regret_sum.abs())
        .max(k_sum.abs())
        .max(1.0);
    if error > SPLIT_TOLERANCE * scale {
        return Err(FedSeaError::AuditFailed(format!(
            "moving-target split off by {error:e} (total {total:e})"
        )));
    }
    Ok(MovingTargetSplit {
        virtual_regret_sum,
        k_sum,
        total,
    })
}

/// Bounds and audits attached to an experiment's result document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub smoothness: f64,
    pub strong_convexity: f64,
    /// `D`
    pub initial_distance: f64,
    pub theorem1: Option<Theorem1Terms>,
    pub theorem2: Option<Theorem2Terms>,
    /// Replicate mean of `R_T`.
    pub empirical_regret: f64,
    pub empirical_regret_std_error: f64,
    pub lemma1: Lemma1Verdict,
    pub lemma3: Option<Lemma3Verdict>,
    /// Replicate means of the split sums.
    pub moving_target: MovingTargetSplit,
    /// Steps (summed over replicates) where the projection was active.
    pub projected_steps: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::AdversarySpec;
    use crate::losses::LossSpec;
    use crate::oracles::ComparatorMethod;
    use crate::step_size::StepSizePolicy;

    fn config(clients: usize, tau: usize, horizon: usize) -> ExperimentConfig {
        ExperimentConfig {
            num_clients: clients,
            horizon,
            sync_period: tau,
            dimension: 1,
            step_size_policy: StepSizePolicy::TheoryConvex,
            projection_radius: Default::default(),
            replicates: 1,
            seed: 0,
            loss_spec: LossSpec::MeanQuadratic,
            adversary_spec: AdversarySpec::StaticIid {
                mean: Vector::zeros(1),
                variance: 1.0,
            },
            initial_point: None,
            initial_distance: None,
            sync_phase: 0,
        }
    }

    fn profile(sigma: f64, zeta: f64, k: f64, horizon: usize) -> HeterogeneityProfile {
        HeterogeneityProfile::from_arrays(
            vec![zeta; horizon],
            vec![k; horizon],
            vec![sigma; horizon],
            true,
        )
    }

    #[test]
    fn theorem1_arithmetic() {
        let terms = evaluate_theorem1(
            &profile(1.0, 0.0, 0.0, 100),
            &config(4, 1, 100),
            1.0,
            0.05,
            1.0,
        );
        assert!((terms.total - 21.25).abs() < 1e-12);
        assert_eq!(terms.spatial_drift, 0.0);
        assert_eq!(terms.temporal_drift, 0.0);
        let terms = evaluate_theorem1(
            &profile(0.0, 0.0, 0.0, 10),
            &config(4, 3, 10),
            1.0,
            0.1,
            2.0,
        );
        assert!((terms.total - 40.0).abs() < 1e-12);
    }

    #[test]
    fn theorem1_drift_terms() {
        // T = 10, η = 0.1, L = 2, τ = 3, σ̄² = 1, ζ̄² = 0.5, K̄² = 0.25
        let terms = evaluate_theorem1(
            &profile(1.0, 0.5, 0.25, 10),
            &config(2, 3, 10),
            2.0,
            0.1,
            0.0,
        );
        assert!((terms.spatial_drift - 10.0 * 0.01 * 2.0 * 2.0 * 2.0).abs() < 1e-12);
        assert!((terms.temporal_drift - 10.0 * 0.01 * 4.0 * 4.0 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn t0_examples() {
        assert_eq!(theorem2_t0(1.0, 1.0, 1), 9);
        for (l, mu, tau) in [(1.0, 1.0, 4), (3.0, 0.5, 2), (10.0, 1.0, 8), (1.0, 0.01, 1)] {
            let t0 = theorem2_t0(l, mu, tau);
            let lag = (tau - 1) as f64;
            assert!(t0_condition(t0, l / mu, l, mu, lag));
            if t0 > 1 {
                assert!(!t0_condition(t0 - 1, l / mu, l, mu, lag));
            }
        }
        assert_eq!(theorem2_t0_closed_form(1.0, 1.0, 1), 8);
    }

    #[test]
    fn theorem2_reductions() {
        let p = profile(1.0, 0.0, 0.0, 64);
        let c = config(4, 1, 64);
        let terms = evaluate_theorem2(&p, &c, 1.0, 1.0, 1.0, None).unwrap();
        assert!((terms.log_term - (1.0 + 64f64.ln()) / 4.0).abs() < 1e-12);
        assert_eq!(terms.drift_term, 1.0);
        assert_eq!(terms.t0, 9);
        let expected_cap: f64 = (1..9).map(|t| 0.5 / t as f64).sum();
        assert!((terms.e_head_cap - expected_cap).abs() < 1e-12);
        assert!(evaluate_theorem2(&p, &c, 1.0, 0.0, 1.0, None).is_err());
    }

    fn comparators(hindsight: Vec<f64>, optimum: Vec<f64>) -> ComparatorSet {
        let t = hindsight.len();
        ComparatorSet {
            best_in_hindsight: Vector::zeros(1),
            per_step_optima: vec![Vector::zeros(1); t],
            method: ComparatorMethod::ClosedForm,
            hindsight_residual: 0.0,
            per_step_residuals: vec![0.0; t],
            hindsight_losses: hindsight,
            optimum_losses: optimum,
        }
    }

    fn record(t: usize, locals: Vec<f64>, virtual_loss: f64, v: f64) -> TraceRecord {
        TraceRecord {
            t,
            eta: 0.1,
            realized_losses: locals.clone(),
            expected_losses: locals,
            virtual_loss,
            consensus_error: v,
            synced: false,
            projected: false,
        }
    }

    #[test]
    fn lemma1_detects_violation() {
        let c = comparators(vec![0.0; 2], vec![0.0; 2]);
        let good = vec![
            record(1, vec![1.0, 1.0], 1.0, 0.0),
            record(2, vec![1.5, 0.5], 0.9, 0.4),
        ];
        assert!(audit_lemma1(&good, &c, 1.0).pass);
        let bad = vec![record(1, vec![2.0, 2.0], 1.0, 0.0)];
        let verdict = audit_lemma1(&bad, &c, 1.0);
        assert!(!verdict.pass);
        assert_eq!(verdict.violations, 1);
    }

    #[test]
    fn split_identity_and_cyclic_k_sum() {
        let c = comparators(vec![1.125; 4], vec![0.0; 4]);
        let trace: Vec<_> = (1..=4)
            .map(|t| record(t, vec![2.0], 2.0 + t as f64, 0.0))
            .collect();
        let split = moving_target_split(&trace, &c).unwrap();
        assert_eq!(split.k_sum, 4.5);
        assert!((split.virtual_regret_sum + split.k_sum - split.total).abs() < 1e-12);
    }

    #[test]
    fn lemma3_preconditions() {
        let p = profile(1.0, 0.0, 0.0, 10);
        let c = config(2, 4, 10);
        assert!(matches!(
            audit_lemma3(&[(0.0, 0.0); 10], &p, &c, 1.0, 0.01),
            Err(FedSeaError::AuditPrecondition(_))
        ));
        assert!(matches!(
            audit_lemma3(&[(0.0, 0.0); 32], &p, &c, 1.0, 0.1),
            Err(FedSeaError::StepSizePrecondition { .. })
        ));
        let verdict = audit_lemma3(&[(0.0, 0.0); 32], &p, &config(2, 1, 10), 1.0, 0.1).unwrap();
        assert_eq!(verdict.lhs, 0.0);
        assert_eq!(verdict.rhs, 0.0);
        assert!(verdict.pass);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let values = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(values), 2.0);
    }
}
