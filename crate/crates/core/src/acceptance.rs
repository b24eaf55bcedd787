//! The acceptance suite: end-to-end checks of reduction fidelity, regret
//! scaling, parallel speedup, communication savings, lemma audits, oracle
//! cross-validation and determinism.
//!
//! Every criterion returns a [`CriterionReport`]; errors become failing
//! reports rather than panics so the suite always prints one line per
//! criterion.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversary::{AdversarySpec, MeanShift, VarianceLevels};
use crate::bounds::{audit_lemma2, Lemma1Verdict};
use crate::config::{ExperimentConfig, ProjectionRadius};
use crate::engine::Simulation;
use crate::error::Result;
use crate::harness::{
    emit_sweep, prepare, run_prepared, run_sweep, speedup_study, tau_study, with_threads, FitModel,
    SpeedupTable, SweepResult, SweepSpec,
};
use crate::losses::{LossModel, LossSpec, Sample};
use crate::oracles::RunningStats;
use crate::rng::{sample, Purpose, StreamKey};
use crate::step_size::StepSizePolicy;
use crate::vector::Vector;

pub const REPLICATES: usize = 64;
pub const SCALING_HORIZONS: [usize; 6] = [1 << 10, 1 << 11, 1 << 12, 1 << 13, 1 << 14, 1 << 15];
pub const STUDY_HORIZON: usize = 1 << 14;
/// Largest accepted ratio between measured regret and the unit-constant bound.
pub const MAX_SCALING_CONSTANT: f64 = 50.0;

#[derive(Clone, Debug)]
pub struct CriterionReport {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] criterion {:>2} {}: {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail
        )
    }
}

fn report(id: u8, name: &'static str, outcome: Result<(bool, String)>) -> CriterionReport {
    match outcome {
        Ok((pass, detail)) => CriterionReport {
            id,
            name,
            pass,
            detail,
        },
        Err(e) => CriterionReport {
            id,
            name,
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

fn v(c: &[f64]) -> Vector {
    Vector::new(c.to_vec()).expect("finite literal")
}

fn base_config(adversary: AdversarySpec, policy: StepSizePolicy) -> ExperimentConfig {
    ExperimentConfig {
        num_clients: 4,
        horizon: STUDY_HORIZON,
        sync_period: 4,
        dimension: 2,
        step_size_policy: policy,
        projection_radius: ProjectionRadius::default(),
        replicates: REPLICATES,
        seed: 20_240_601,
        loss_spec: LossSpec::MeanQuadratic,
        adversary_spec: adversary,
        initial_point: None,
        initial_distance: None,
        sync_phase: 0,
    }
}

fn quad_means() -> Vec<Vector> {
    vec![
        v(&[1.0, 0.0]),
        v(&[-1.0, 0.0]),
        v(&[0.0, 1.0]),
        v(&[0.0, -1.0]),
    ]
}

/// Convex scaling sweep: static iid data at distance 0.5 from the start.
pub fn theorem1_sweep_spec() -> SweepSpec {
    let base = base_config(
        AdversarySpec::StaticIid {
            mean: v(&[0.5, 0.0]),
            variance: 1.0,
        },
        StepSizePolicy::TheoryConvex,
    );
    let mut spec = SweepSpec::new(base);
    spec.horizons = Some(SCALING_HORIZONS.to_vec());
    spec
}

/// Strongly convex scaling sweep with decaying steps.
pub fn theorem2_sweep_spec() -> SweepSpec {
    let base = base_config(
        AdversarySpec::StaticIid {
            mean: v(&[1.0, 0.0]),
            variance: 1.0,
        },
        StepSizePolicy::DecayingStronglyConvex,
    );
    let mut spec = SweepSpec::new(base);
    spec.horizons = Some(SCALING_HORIZONS.to_vec());
    spec
}

/// Base config of the speedup studies (`K̄² = 0`).
pub fn speedup_config() -> ExperimentConfig {
    base_config(
        AdversarySpec::StaticIid {
            mean: v(&[0.5, 0.0]),
            variance: 1.0,
        },
        StepSizePolicy::TheoryConvex,
    )
}

/// Cyclic means with `LK̄² = 10σ̄²/16`.
pub fn breakdown_config() -> ExperimentConfig {
    base_config(
        AdversarySpec::CyclicMeans {
            base: v(&[0.5, 0.0]),
            amplitude: 1.25f64.sqrt(),
            period: 2,
            direction: None,
            client_offsets: None,
            variance: VarianceLevels::Uniform(1.0),
        },
        StepSizePolicy::TheoryConvex,
    )
}

/// Four clients with means on the unit axes (`ζ_t² = 1`).
pub fn heterogeneous_config(policy: StepSizePolicy) -> ExperimentConfig {
    let mut c = base_config(
        AdversarySpec::StaticHeterogeneous {
            means: quad_means(),
            variance: VarianceLevels::Uniform(1.0),
        },
        policy,
    );
    c.initial_point = Some(v(&[0.5, 0.0]));
    c
}

fn lemma1_summary(verdicts: &[Lemma1Verdict]) -> Lemma1Verdict {
    verdicts
        .iter()
        .skip(1)
        .fold(verdicts[0].clone(), |acc, v| acc.merge(v))
}

/// Lemma 1 verdicts gathered from the runs of criteria 2 to 6.
#[derive(Default)]
pub struct Lemma1Log {
    verdicts: Vec<(&'static str, Lemma1Verdict)>,
}

impl Lemma1Log {
    fn sweep(&mut self, label: &'static str, sweep: &SweepResult) {
        for c in &sweep.cells {
            self.verdicts.push((label, c.result.bounds.lemma1.clone()));
        }
    }

    fn speedup(&mut self, label: &'static str, table: &SpeedupTable) {
        for r in &table.rows {
            self.verdicts.push((label, r.lemma1.clone()));
        }
    }
}

/// Criterion 1: `M = 1`, `τ = 1` reproduces centralized online SGD bit for bit.
pub fn criterion_1() -> CriterionReport {
    report(
        1,
        "reduction fidelity",
        (|| {
            let horizon = 1000;
            let eta = 0.05;
            let mut config = base_config(
                AdversarySpec::StaticIid {
                    mean: v(&[0.3, -0.2]),
                    variance: 1.0,
                },
                StepSizePolicy::Constant {
                    eta,
                    allow_unsafe: false,
                },
            );
            config.num_clients = 1;
            config.sync_period = 1;
            config.horizon = horizon;
            config.initial_point = Some(v(&[1.0, 1.0]));
            config.validate()?;
            let start = Instant::now();
            let model = LossModel::from_spec(&config.loss_spec, config.dimension)?;
            let schedule = config.adversary_spec.build(1, horizon, 2)?;
            let steps = vec![eta; horizon];
            let mut sim = Simulation::new(&config, &model, &schedule, &steps, 0)?;

            // Straight-line reference: x ← x − η(x − ξ_t).
            let mut x = vec![1.0f64, 1.0];
            let mut mismatches = 0usize;
            for t in 1..=horizon {
                let dist = schedule.dist_params(t, 0)?;
                let xi = sample(
                    &StreamKey::new(config.seed, 0, t as u64, 0, Purpose::Data),
                    &dist,
                )?;
                for (xj, sj) in x.iter_mut().zip(xi.as_slice()) {
                    let g = *xj - sj;
                    *xj -= eta * g;
                }
                sim.step()?;
                let engine = sim.state();
                let same = |a: &Vector| {
                    a.as_slice()
                        .iter()
                        .zip(&x)
                        .all(|(p, q)| p.to_bits() == q.to_bits())
                };
                if !same(&engine.clients[0]) || !same(&engine.average) {
                    mismatches += 1;
                }
            }
            let elapsed = start.elapsed().as_secs_f64();
            Ok((
                mismatches == 0 && elapsed < 1.0,
                format!("{mismatches} mismatching steps of {horizon}, {elapsed:.3} s"),
            ))
        })(),
    )
}

fn scaling_constant(sweep: &SweepResult, theorem2: bool) -> f64 {
    sweep
        .cells
        .iter()
        .filter(|c| c.result.bounds.projected_steps == 0)
        .filter_map(|c| {
            let total = if theorem2 {
                c.result.bounds.theorem2.as_ref()?.total
            } else {
                c.result.bounds.theorem1.as_ref()?.total
            };
            Some(c.result.regret / total)
        })
        .fold(0.0, f64::max)
}

/// Criterion 2: convex regret grows like `√T`.
pub fn criterion_2(log: &mut Lemma1Log) -> CriterionReport {
    report(
        2,
        "theorem 1 sqrt(T) scaling",
        (|| {
            let sweep = run_sweep(&theorem1_sweep_spec())?;
            log.sweep("criterion 2", &sweep);
            let fit = sweep
                .fits
                .iter()
                .find(|f| f.model == FitModel::PowerLaw)
                .cloned()
                .ok_or_else(|| crate::FedSeaError::DegenerateFit("no power-law fit".into()))?;
            let constant = scaling_constant(&sweep, false);
            Ok((
                (0.40..=0.60).contains(&fit.b)
                    && fit.r_squared >= 0.95
                    && constant <= MAX_SCALING_CONSTANT,
                format!(
                    "exponent b = {:.4} +/- {:.4}, R^2 = {:.4}, regret/bound <= {:.3}",
                    fit.b, fit.b_std_error, fit.r_squared, constant
                ),
            ))
        })(),
    )
}

/// Criterion 3: strongly convex regret grows like `log T`.
pub fn criterion_3(log: &mut Lemma1Log) -> CriterionReport {
    report(
        3,
        "theorem 2 log(T) scaling",
        (|| {
            let sweep = run_sweep(&theorem2_sweep_spec())?;
            log.sweep("criterion 3", &sweep);
            let find = |m: FitModel| {
                sweep
                    .fits
                    .iter()
                    .find(|f| f.model == m)
                    .cloned()
                    .ok_or_else(|| crate::FedSeaError::DegenerateFit(format!("no {m:?} fit")))
            };
            let log_fit = find(FitModel::LogLaw)?;
            let power = find(FitModel::PowerLaw)?;
            let constant = scaling_constant(&sweep, true);
            Ok((
            log_fit.r_squared >= 0.95 && power.b <= 0.20 && constant <= MAX_SCALING_CONSTANT,
            format!(
                "log-law a = {:.4}, c = {:.4}, R^2 = {:.4}; power exponent {:.4}; regret/bound <= {:.3}",
                log_fit.a, log_fit.b, log_fit.r_squared, power.b, constant
            ),
        ))
        })(),
    )
}

fn separated(high: (f64, f64), low: (f64, f64)) -> bool {
    high.0 - low.0 > 2.0 * (high.1 * high.1 + low.1 * low.1).sqrt()
}

/// Criterion 4: averaging over `M` clients reduces regret like `1/√M`.
pub fn criterion_4(log: &mut Lemma1Log) -> CriterionReport {
    report(
        4,
        "parallel speedup",
        (|| {
            let table = speedup_study(&speedup_config(), &[1, 4, 16])?;
            log.speedup("criterion 4", &table);
            let r: Vec<(f64, f64)> = table.rows.iter().map(|r| (r.regret, r.std_error)).collect();
            let ratio = table.rows[2].ratio;
            let decreasing = separated(r[0], r[1]) && separated(r[1], r[2]);
            Ok((
                (0.125..=0.5).contains(&ratio) && decreasing && table.warning.is_none(),
                format!(
                    "regret {:.3} / {:.3} / {:.3} for M = 1 / 4 / 16, ratio(16) = {:.4}",
                    r[0].0, r[1].0, r[2].0, ratio
                ),
            ))
        })(),
    )
}

/// Criterion 5: with strong temporal heterogeneity the speedup disappears.
pub fn criterion_5(log: &mut Lemma1Log) -> CriterionReport {
    report(
        5,
        "speedup breakdown",
        (|| {
            let config = breakdown_config();
            let mut at16 = config.clone();
            at16.num_clients = 16;
            let c = prepare(&at16)?.constants;
            let table = speedup_study(&config, &[1, 4, 16])?;
            log.speedup("criterion 5", &table);
            let ratio = table.rows[2].ratio;
            Ok((
                ratio >= 0.6,
                format!(
                    "L*K_bar^2 = {:.4}, sigma_bar^2/16 = {:.4}, ratio(16) = {:.4}",
                    c.smoothness * c.k_bar_sq,
                    c.sigma_bar_sq / 16.0,
                    ratio
                ),
            ))
        })(),
    )
}

/// Criterion 6: infrequent averaging at the reference period costs little.
pub fn criterion_6(log: &mut Lemma1Log) -> CriterionReport {
    report(
        6,
        "communication savings",
        (|| {
            let table = tau_study(&heterogeneous_config(StepSizePolicy::TheoryConvex), &[64])?;
            for r in &table.rows {
                log.verdicts.push(("criterion 6", r.lemma1.clone()));
            }
            let row = |tau: usize| {
                table
                    .rows
                    .iter()
                    .find(|r| r.sync_period == tau)
                    .expect("row present")
            };
            let base = row(1);
            let reference = row(table.reference_period);
            let coarse = row(64);
            let ratio = reference.regret / base.regret;
            Ok((
                ratio <= 1.3
                    && separated(
                        (coarse.regret, coarse.std_error),
                        (base.regret, base.std_error),
                    ),
                format!(
                    "tau* = {}: ratio {:.4}; regret {:.3} (tau = 1) vs {:.3} (tau = 64)",
                    table.reference_period, ratio, base.regret, coarse.regret
                ),
            ))
        })(),
    )
}

/// Criterion 7: the smoothness inequality held at every step of criteria 2 to 6.
pub fn criterion_7(log: &Lemma1Log) -> CriterionReport {
    report(
        7,
        "lemma 1 audit",
        (|| {
            if log.verdicts.is_empty() {
                return Ok((false, "no runs recorded".into()));
            }
            let all: Vec<Lemma1Verdict> = log.verdicts.iter().map(|(_, v)| v.clone()).collect();
            let merged = lemma1_summary(&all);
            let sources: std::collections::BTreeSet<&str> =
                log.verdicts.iter().map(|(s, _)| *s).collect();
            Ok((
            merged.pass && merged.max_relative_gap <= 1e-9,
            format!(
                "{} steps over {} runs from {} criteria, {} violations, max |LHS - RHS|/(1 + |RHS|) = {:e}",
                merged.steps_checked,
                all.len(),
                sources.len(),
                merged.violations,
                merged.max_relative_gap
            ),
        ))
        })(),
    )
}

/// Criterion 8: frozen-state resampling of the averaged stochastic gradient.
pub fn criterion_8() -> CriterionReport {
    report(
        8,
        "lemma 2 audit",
        (|| {
            let mut config = heterogeneous_config(StepSizePolicy::Constant {
                eta: 0.01,
                allow_unsafe: false,
            });
            config.sync_period = 8;
            config.horizon = 64;
            config.replicates = 1;
            let p = prepare(&config)?;
            let frozen: Vec<usize> = (1..=10).map(|k| 3 * k).collect();
            let mut sim = Simulation::new(&p.config, &p.model, &p.schedule, &p.steps, 0)?;
            let mut passes = 0;
            let mut worst = f64::NEG_INFINITY;
            while !sim.is_finished() {
                if frozen.contains(&sim.state().t) {
                    let verdict =
                        audit_lemma2(sim.state(), &p.oracle, &p.comparators, config.seed, 100_000)?;
                    passes += usize::from(verdict.pass);
                    worst = worst.max((verdict.estimate - 5.0 * verdict.std_error) / verdict.rhs);
                }
                sim.step()?;
            }
            Ok((
                passes == frozen.len(),
                format!(
                    "{passes}/{} states pass, max (LHS - 5 SE)/RHS = {worst:.4}",
                    frozen.len()
                ),
            ))
        })(),
    )
}

/// Criterion 9: replicate-averaged consensus error against its bound.
pub fn criterion_9() -> CriterionReport {
    report(
        9,
        "lemma 3 audit",
        (|| {
            let mut config = heterogeneous_config(StepSizePolicy::Constant {
                eta: 0.01,
                allow_unsafe: false,
            });
            config.sync_period = 8;
            config.horizon = 1 << 12;
            let result = run_prepared(&prepare(&config)?)?;
            let verdict = result.bounds.lemma3.ok_or_else(|| {
                crate::FedSeaError::AuditPrecondition("lemma 3 audit not run".into())
            })?;
            Ok((
                verdict.pass,
                format!(
                    "mean sum V_t = {:.5} +/- {:.5}, bound {:.5} ({} replicates)",
                    verdict.lhs, verdict.lhs_std_error, verdict.rhs, verdict.replicates
                ),
            ))
        })(),
    )
}

fn random_vector(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vector {
    v(&(0..dim)
        .map(|_| rng.random_range(-scale..scale))
        .collect::<Vec<_>>())
}

fn random_variances(rng: &mut ChaCha8Rng, clients: usize) -> VarianceLevels {
    if rng.random_bool(0.5) {
        VarianceLevels::Uniform(rng.random_range(0.0..2.0))
    } else {
        VarianceLevels::PerClient((0..clients).map(|_| rng.random_range(0.0..2.0)).collect())
    }
}

/// A random mean-quadratic schedule with every mean inside the unit box.
pub fn random_schedule(
    rng: &mut ChaCha8Rng,
    clients: usize,
    horizon: usize,
    dim: usize,
) -> AdversarySpec {
    match rng.random_range(0..5) {
        0 => AdversarySpec::StaticHeterogeneous {
            means: (0..clients).map(|_| random_vector(rng, dim, 1.0)).collect(),
            variance: random_variances(rng, clients),
        },
        1 => AdversarySpec::DriftingMeans {
            base_means: (0..clients).map(|_| random_vector(rng, dim, 0.5)).collect(),
            velocity: random_vector(rng, dim, 0.5 / horizon as f64),
            variance: random_variances(rng, clients),
        },
        2 => AdversarySpec::CyclicMeans {
            base: random_vector(rng, dim, 0.3),
            amplitude: rng.random_range(0.1..0.5),
            period: rng.random_range(2..6),
            direction: Some(random_vector(rng, dim, 1.0)),
            client_offsets: Some((0..clients).map(|_| random_vector(rng, dim, 0.2)).collect()),
            variance: random_variances(rng, clients),
        },
        3 => AdversarySpec::PiecewiseShift {
            base_means: (0..clients).map(|_| random_vector(rng, dim, 0.5)).collect(),
            shifts: vec![MeanShift {
                at: rng.random_range(2..=horizon),
                offset: random_vector(rng, dim, 0.4),
            }],
            variance: random_variances(rng, clients),
        },
        _ => AdversarySpec::DiracAdversarial {
            points: (0..rng.random_range(1..4))
                .map(|_| random_vector(rng, dim, 1.0))
                .collect(),
        },
    }
}

/// Outcome of cross-validating one schedule.
#[derive(Clone, Debug, Default)]
pub struct CrossValidation {
    pub checks: usize,
    pub failures: usize,
    /// Largest `|closed − brute|` as a fraction of its tolerance.
    pub worst: f64,
    pub max_split_error: f64,
}

fn compare(cv: &mut CrossValidation, closed: f64, brute: f64, se: f64) {
    let diff = (closed - brute).abs();
    let tolerance = 5.0 * se + 1e-9 * (1.0 + closed.abs());
    cv.checks += 1;
    if diff > tolerance {
        cv.failures += 1;
    }
    cv.worst = cv.worst.max(diff / tolerance);
}

/// Checks closed-form `ζ_t²`, `K_t²` and `σ_t²` against brute-force
/// estimators built from the loss primitives only.
pub fn cross_validate(config: &ExperimentConfig, samples: usize) -> Result<CrossValidation> {
    let p = prepare(config)?;
    let result = run_prepared(&p)?;
    let mut cv = CrossValidation::default();
    let model = &p.model;
    let clients = config.num_clients;
    let dim = config.dimension;
    let radius = config.domain().radius().unwrap_or(1.0);
    let x_star = &p.comparators.best_in_hindsight;

    for t in 1..=config.horizon {
        let dists = (0..clients)
            .map(|m| p.schedule.dist_params(t, m))
            .collect::<Result<Vec<_>>>()?;

        // ζ_t²: largest gradient gap over boundary samples.
        let mut probe = StreamKey::new(config.seed, 1, t as u64, 0, Purpose::Probe).stream();
        let mut zeta = 0.0f64;
        for _ in 0..samples {
            let x = probe.on_sphere(dim, radius);
            let grads = dists
                .iter()
                .map(|d| model.expected_gradient(d, &x))
                .collect::<Result<Vec<_>>>()?;
            let mean = Vector::mean_of(&grads);
            let gap = grads.iter().map(|g| g.dist_sq(&mean)).sum::<f64>() / clients as f64;
            zeta = zeta.max(gap);
        }
        compare(&mut cv, result.profile.zeta_sq[t - 1], zeta, 0.0);

        // K_t²: common-random-number differences of realized losses.
        let x_t = &p.comparators.per_step_optima[t - 1];
        let mut k_estimate = 0.0;
        let mut k_var = 0.0;
        let mut sigma_estimate = 0.0;
        let mut sigma_var = 0.0;
        let x_probe = random_point(&mut probe, dim, radius);
        for (m, dist) in dists.iter().enumerate() {
            let mut stream =
                StreamKey::new(config.seed, 2, t as u64, m as u64, Purpose::Probe).stream();
            let mut diff = RunningStats::default();
            let mut draws: Vec<Sample> = Vec::with_capacity(samples);
            for _ in 0..samples {
                let s = model.draw(dist, &mut stream)?;
                diff.push(model.loss(x_star, &s)? - model.loss(x_t, &s)?);
                draws.push(s);
            }
            k_estimate += diff.mean();
            k_var += diff.std_error().powi(2);

            // σ²_{t,m}: sample variance of stochastic gradients at a probe point.
            let grads = draws
                .iter()
                .map(|s| model.stochastic_gradient(&x_probe, s))
                .collect::<Result<Vec<_>>>()?;
            let mean = Vector::mean_of(&grads);
            let mut spread = RunningStats::default();
            for g in &grads {
                spread.push(g.dist_sq(&mean));
            }
            let n = samples as f64;
            sigma_estimate += spread.mean() * n / (n - 1.0);
            sigma_var += (spread.std_error() * n / (n - 1.0)).powi(2);
        }
        let mf = clients as f64;
        compare(
            &mut cv,
            result.profile.k_sq[t - 1],
            k_estimate / mf,
            k_var.sqrt() / mf,
        );
        compare(
            &mut cv,
            result.profile.sigma_sq[t - 1],
            sigma_estimate / mf,
            sigma_var.sqrt() / mf,
        );
    }

    let split = &result.bounds.moving_target;
    let scale = split.total.abs().max(1.0);
    cv.max_split_error = (split.virtual_regret_sum + split.k_sum - split.total).abs() / scale;
    Ok(cv)
}

fn random_point(stream: &mut crate::rng::SampleStream, dim: usize, radius: f64) -> Vector {
    let u = stream.uniform().powf(1.0 / dim as f64);
    stream.on_sphere(dim, radius * u)
}

/// Criterion 10: closed-form heterogeneity against brute force on random schedules.
pub fn criterion_10() -> CriterionReport {
    report(
        10,
        "oracle cross-validation",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            let mut total = CrossValidation::default();
            let schedules = 20;
            for i in 0..schedules {
                let clients = rng.random_range(2..6);
                let dim = rng.random_range(1..4);
                let horizon = rng.random_range(8..17);
                let tau = rng.random_range(1..5);
                let adversary = random_schedule(&mut rng, clients, horizon, dim);
                let config = ExperimentConfig {
                    num_clients: clients,
                    horizon,
                    sync_period: tau,
                    dimension: dim,
                    step_size_policy: StepSizePolicy::Constant {
                        eta: 0.02,
                        allow_unsafe: false,
                    },
                    projection_radius: ProjectionRadius::Finite(5.0),
                    replicates: 4,
                    seed: 1000 + i,
                    loss_spec: LossSpec::MeanQuadratic,
                    adversary_spec: adversary,
                    initial_point: None,
                    initial_distance: None,
                    sync_phase: 0,
                };
                let cv = cross_validate(&config, 4000)?;
                total.checks += cv.checks;
                total.failures += cv.failures;
                total.worst = total.worst.max(cv.worst);
                total.max_split_error = total.max_split_error.max(cv.max_split_error);
            }
            Ok((
            total.failures == 0 && total.max_split_error <= 1e-9,
            format!(
                "{} checks on {schedules} schedules, {} outside tolerance (worst {:.3} of tolerance), max split error {:e}",
                total.checks, total.failures, total.worst, total.max_split_error
            ),
        ))
        })(),
    )
}

fn collect_files(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, root, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// Criterion 11: criterion 2's sweep is byte-identical on 1 and 4 threads.
pub fn criterion_11(scratch: &Path) -> CriterionReport {
    report(
        11,
        "determinism",
        (|| {
            let spec = theorem1_sweep_spec();
            let dirs = [scratch.join("threads_1"), scratch.join("threads_4")];
            for (threads, dir) in [1usize, 4].iter().zip(&dirs) {
                if dir.exists() {
                    fs::remove_dir_all(dir)?;
                }
                let sweep = with_threads(*threads, || run_sweep(&spec))??;
                emit_sweep(&sweep, dir, true)?;
            }
            let mut files = Vec::new();
            collect_files(&dirs[0], &dirs[0], &mut files)?;
            files.sort();
            let mut other = Vec::new();
            collect_files(&dirs[1], &dirs[1], &mut other)?;
            other.sort();
            let mut differing = 0usize;
            for f in &files {
                if fs::read(dirs[0].join(f))? != fs::read(dirs[1].join(f)).unwrap_or_default() {
                    differing += 1;
                }
            }
            Ok((
                files == other && differing == 0 && !files.is_empty(),
                format!("{} files compared, {differing} differ", files.len()),
            ))
        })(),
    )
}

/// Runs every criterion in order, writing scratch output under `scratch`.
pub fn run_all(scratch: &Path) -> Vec<CriterionReport> {
    let mut log = Lemma1Log::default();
    let mut reports = vec![
        criterion_1(),
        criterion_2(&mut log),
        criterion_3(&mut log),
        criterion_4(&mut log),
        criterion_5(&mut log),
        criterion_6(&mut log),
    ];
    reports.push(criterion_7(&log));
    reports.push(criterion_8());
    reports.push(criterion_9());
    reports.push(criterion_10());
    reports.push(criterion_11(scratch));
    reports
}
