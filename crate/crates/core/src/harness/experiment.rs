use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::AdversarySchedule;
use crate::bounds::{
    audit_lemma1, audit_lemma3, compensated_sum, evaluate_theorem1, evaluate_theorem2, lemma3_sums,
    moving_target_split, BoundReport, Lemma1Verdict, MovingTargetSplit, LEMMA3_MIN_REPLICATES,
};
use crate::config::ExperimentConfig;
use crate::engine::run_replicate;
use crate::error::{FedSeaError, Result};
use crate::losses::LossModel;
use crate::oracles::{
    compute_comparators, spatial_heterogeneity_within, temporal_heterogeneity, variance_profile,
    ComparatorMethod, ComparatorSet, ExpectationOracle, HeterogeneityProfile, RunningStats,
};
use crate::step_size::{drift_cap, resolve_step_sizes, ModelConstants};
use crate::vector::Vector;

/// Everything computed before the first replicate runs.
pub struct PreparedExperiment {
    pub config: ExperimentConfig,
    pub model: LossModel,
    pub schedule: AdversarySchedule,
    pub oracle: ExpectationOracle,
    pub comparators: ComparatorSet,
    /// `K_t²`
    pub k_sq: Vec<f64>,
    /// `σ_t²`
    pub sigma_sq: Vec<f64>,
    pub constants: ModelConstants,
    pub steps: Vec<f64>,
}

pub fn prepare(config: &ExperimentConfig) -> Result<PreparedExperiment> {
    config.validate()?;
    let model = LossModel::from_spec(&config.loss_spec, config.dimension)?;
    let schedule =
        config
            .adversary_spec
            .build(config.num_clients, config.horizon, config.dimension)?;
    let oracle = ExpectationOracle::new(&model, &schedule, config.domain(), config.seed)?;
    let x1 = config.initial_point();
    let comparators = compute_comparators(&oracle, &x1)?;
    let k_sq = (1..=config.horizon)
        .map(|t| temporal_heterogeneity(&comparators, t))
        .collect::<Result<Vec<_>>>()?;
    let sigma_sq = variance_profile(&oracle)?;
    let horizon = config.horizon as f64;
    let constants = ModelConstants {
        smoothness: model.smoothness(),
        strong_convexity: model.strong_convexity(),
        initial_distance: config
            .initial_distance
            .unwrap_or_else(|| x1.dist_sq(&comparators.best_in_hindsight).sqrt()),
        sigma_bar_sq: sigma_sq.iter().sum::<f64>() / horizon,
        k_bar_sq: k_sq.iter().sum::<f64>() / horizon,
    };
    let steps = resolve_step_sizes(config, &constants)?;
    Ok(PreparedExperiment {
        config: config.clone(),
        model,
        schedule,
        oracle,
        comparators,
        k_sq,
        sigma_sq,
        constants,
        steps,
    })
}

/// What one replicate contributes to the aggregate.
struct ReplicateSummary {
    /// `(1/M)Σ_m f_t(x_{t,m}) − f_t(x*)`
    increments: Vec<f64>,
    consensus: Vec<f64>,
    /// `f_t(x_t) − f_t(x*)`
    virtual_gaps: Vec<f64>,
    synced: Vec<bool>,
    lemma1: Lemma1Verdict,
    lemma3: (f64, f64),
    split: MovingTargetSplit,
    projected_steps: usize,
    max_norm: f64,
}

fn run_one(prepared: &PreparedExperiment, replicate: u64) -> Result<ReplicateSummary> {
    let p = prepared;
    let trace = run_replicate(
        &p.config,
        &p.model,
        &p.schedule,
        &p.steps,
        &p.oracle,
        replicate,
    )?;
    let hindsight = &p.comparators.hindsight_losses;
    let increments = trace
        .iter()
        .map(|r| r.mean_expected_loss() - hindsight[r.t - 1])
        .collect();
    let virtual_gaps = trace
        .iter()
        .map(|r| r.virtual_loss - hindsight[r.t - 1])
        .collect();
    let consensus = trace.iter().map(|r| r.consensus_error).collect();
    let synced = trace.iter().map(|r| r.synced).collect();
    let projected_steps = trace.iter().filter(|r| r.projected).count();
    let lemma1 = audit_lemma1(&trace, &p.comparators, p.model.smoothness());
    let lemma3 = lemma3_sums(&trace, &p.comparators);
    let split = moving_target_split(&trace, &p.comparators)?;
    // Largest iterate norm is only needed to bound ζ on unbounded domains.
    let max_norm = if p.config.domain().radius().is_none() && !p.model.is_analytic() {
        max_visited_norm(p, replicate)?
    } else {
        0.0
    };
    Ok(ReplicateSummary {
        increments,
        consensus,
        virtual_gaps,
        synced,
        lemma1,
        lemma3,
        split,
        projected_steps,
        max_norm,
    })
}

fn max_visited_norm(p: &PreparedExperiment, replicate: u64) -> Result<f64> {
    let mut sim =
        crate::engine::Simulation::new(&p.config, &p.model, &p.schedule, &p.steps, replicate)?;
    let mut largest = p.config.initial_point().norm();
    while !sim.is_finished() {
        sim.step()?;
        for x in &sim.state().clients {
            largest = largest.max(x.norm());
        }
    }
    Ok(largest)
}

/// Replicate-averaged per-step series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    /// Mean over replicates of the expected regret increment at `t`.
    pub increments: Vec<f64>,
    /// Prefix sums of `increments`.
    pub cumulative: Vec<f64>,
    /// Mean `V_t`.
    pub consensus: Vec<f64>,
    /// Mean `f_t(x_t) − f_t(x*)`.
    pub virtual_gaps: Vec<f64>,
    pub eta: Vec<f64>,
    pub synced: Vec<bool>,
}

/// Aggregated outcome of all replicates of one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub best_in_hindsight: Vector,
    pub comparator_method: ComparatorMethod,
    pub comparator_residual: f64,
    pub profile: HeterogeneityProfile,
    /// How `ζ_t²` was obtained.
    pub zeta_note: String,
    pub curve: RegretCurve,
    /// Final value of the cumulative curve, i.e. the replicate mean of `R_T`.
    pub regret: f64,
    pub regret_std_error: f64,
    pub per_replicate_regret: Vec<f64>,
    pub bounds: BoundReport,
}

fn mean_columns<'a>(
    rows: impl Iterator<Item = &'a Vec<f64>>,
    len: usize,
    count: usize,
) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for row in rows {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / count as f64).collect()
}

fn mean_split(splits: &[MovingTargetSplit]) -> MovingTargetSplit {
    let n = splits.len() as f64;
    MovingTargetSplit {
        virtual_regret_sum: compensated_sum(splits.iter().map(|s| s.virtual_regret_sum)) / n,
        k_sum: compensated_sum(splits.iter().map(|s| s.k_sum)) / n,
        total: compensated_sum(splits.iter().map(|s| s.total)) / n,
    }
}

fn spatial_profile(p: &PreparedExperiment, radius: Option<f64>) -> Result<(Vec<f64>, bool)> {
    let mut zeta = Vec::with_capacity(p.config.horizon);
    let mut exact = true;
    for t in 1..=p.config.horizon {
        let z = spatial_heterogeneity_within(&p.oracle, t, p.config.seed, radius)?;
        exact &= z.exact;
        zeta.push(z.value);
    }
    Ok((zeta, exact))
}

/// Runs every replicate of a prepared experiment on the current rayon pool.
///
/// Replicates execute concurrently but are reduced in index order, so the
/// result does not depend on the number of worker threads.
pub fn run_prepared(p: &PreparedExperiment) -> Result<ExperimentResult> {
    let config = &p.config;
    let horizon = config.horizon;
    let replicates = config.replicates;
    let summaries = (0..replicates as u64)
        .into_par_iter()
        .map(|r| run_one(p, r))
        .collect::<Result<Vec<_>>>()?;

    let increments = mean_columns(summaries.iter().map(|s| &s.increments), horizon, replicates);
    let consensus = mean_columns(summaries.iter().map(|s| &s.consensus), horizon, replicates);
    let virtual_gaps = mean_columns(
        summaries.iter().map(|s| &s.virtual_gaps),
        horizon,
        replicates,
    );
    let mut cumulative = Vec::with_capacity(horizon);
    let mut running = 0.0;
    for inc in &increments {
        running += inc;
        cumulative.push(running);
    }
    let per_replicate_regret: Vec<f64> = summaries
        .iter()
        .map(|s| s.increments.iter().sum::<f64>())
        .collect();
    let mut stats = RunningStats::default();
    for r in &per_replicate_regret {
        stats.push(*r);
    }

    let (zeta_sq, zeta_exact, zeta_note) = if p.model.is_analytic() {
        let (z, e) = spatial_profile(p, None)?;
        (z, e, "closed form".to_string())
    } else if config.domain().radius().is_some() {
        let (z, e) = spatial_profile(p, None)?;
        (
            z,
            e,
            "approximate maximum over the projection ball (lower-bound witness)".to_string(),
        )
    } else {
        let radius = summaries
            .iter()
            .map(|s| s.max_norm)
            .fold(0.0, f64::max)
            .max(1e-12);
        let (z, e) = spatial_profile(p, Some(radius))?;
        let note = format!(
            "approximate maximum over the ball of radius {radius} containing all visited iterates"
        );
        (z, e, note)
    };
    let profile =
        HeterogeneityProfile::from_arrays(zeta_sq, p.k_sq.clone(), p.sigma_sq.clone(), zeta_exact);

    let l = p.constants.smoothness;
    let mu = p.constants.strong_convexity;
    let distance = p.constants.initial_distance;
    let constant_eta = p
        .steps
        .windows(2)
        .all(|w| w[0] == w[1])
        .then_some(p.steps[0]);
    let theorem1 = constant_eta.map(|eta| evaluate_theorem1(&profile, config, l, eta, distance));
    let theorem2 = if mu > 0.0 {
        Some(evaluate_theorem2(
            &profile,
            config,
            l,
            mu,
            distance,
            Some(&virtual_gaps),
        )?)
    } else {
        None
    };
    let lemma1 = summaries
        .iter()
        .skip(1)
        .fold(summaries[0].lemma1.clone(), |acc, s| acc.merge(&s.lemma1));
    let lemma3 = match constant_eta {
        Some(eta)
            if replicates >= LEMMA3_MIN_REPLICATES && eta <= drift_cap(l, config.sync_period) =>
        {
            let sums: Vec<(f64, f64)> = summaries.iter().map(|s| s.lemma3).collect();
            Some(audit_lemma3(&sums, &profile, config, l, eta)?)
        }
        _ => None,
    };
    let splits: Vec<MovingTargetSplit> = summaries.iter().map(|s| s.split.clone()).collect();
    let regret = *cumulative.last().unwrap_or(&0.0);
    let bounds = BoundReport {
        smoothness: l,
        strong_convexity: mu,
        initial_distance: distance,
        theorem1,
        theorem2,
        empirical_regret: regret,
        empirical_regret_std_error: stats.std_error(),
        lemma1,
        lemma3,
        moving_target: mean_split(&splits),
        projected_steps: summaries.iter().map(|s| s.projected_steps).sum(),
    };

    Ok(ExperimentResult {
        config: config.clone(),
        config_hash: config.config_hash()?,
        best_in_hindsight: p.comparators.best_in_hindsight.clone(),
        comparator_method: p.comparators.method,
        comparator_residual: p.comparators.hindsight_residual,
        profile,
        zeta_note,
        curve: RegretCurve {
            increments,
            cumulative,
            consensus,
            virtual_gaps,
            eta: p.steps.clone(),
            synced: summaries[0].synced.clone(),
        },
        regret,
        regret_std_error: stats.std_error(),
        per_replicate_regret,
        bounds,
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_prepared(&prepare(config)?)
}

/// Runs `f` on a dedicated pool with `threads` workers (0 = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| FedSeaError::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}
