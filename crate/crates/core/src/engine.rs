//! The FedSEA simulation: local projected SGD with periodic averaging.

use serde::{Deserialize, Serialize};

use crate::adversary::AdversarySchedule;
use crate::config::{Domain, ExperimentConfig};
use crate::error::{FedSeaError, Result};
use crate::losses::{LossModel, Sample};
use crate::oracles::ExpectationOracle;
use crate::rng::{Purpose, StreamKey};
use crate::vector::Vector;

/// Iterates with norm above this abort the replicate.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Euclidean projection onto the centered ball; also reports whether it moved `x`.
pub fn project(x: &Vector, domain: &Domain) -> (Vector, bool) {
    match domain.radius() {
        Some(r) => {
            let n = x.norm();
            if n > r {
                (x.scaled(r / n), true)
            } else {
                (x.clone(), false)
            }
        }
        None => (x.clone(), false),
    }
}

/// Client iterates at the start of step `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub t: usize,
    pub clients: Vec<Vector>,
    /// `x_t`
    pub average: Vector,
}

impl SimState {
    pub fn uniform(t: usize, x: &Vector, clients: usize) -> Self {
        Self {
            t,
            clients: vec![x.clone(); clients],
            average: x.clone(),
        }
    }

    pub fn from_clients(t: usize, clients: Vec<Vector>) -> Self {
        let average = Vector::mean_of(&clients);
        Self {
            t,
            clients,
            average,
        }
    }

    /// Replaces every client iterate by their mean.
    pub fn synchronize(&mut self) {
        let mean = Vector::mean_of(&self.clients);
        for c in &mut self.clients {
            c.clone_from(&mean);
        }
        self.average = mean;
    }
}

/// `V_t = (1/M) Σ_m ‖x_{t,m} − x_t‖²`, measured from the exact client mean.
pub fn consensus_error(state: &SimState) -> f64 {
    if state.clients.len() == 1 {
        return 0.0;
    }
    let mean = Vector::mean_of(&state.clients);
    state.clients.iter().map(|c| c.dist_sq(&mean)).sum::<f64>() / state.clients.len() as f64
}

/// Whether averaging follows step `t` (1-based).
pub fn is_sync_step(t: usize, sync_period: usize, sync_phase: usize) -> bool {
    (t - 1) % sync_period == sync_phase
}

/// Outcome of one engine step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub t: usize,
    pub eta: f64,
    /// `f(x_{t,m}, ξ_{t,m})`
    pub realized_losses: Vec<f64>,
    /// `∇f(x_{t,m}, ξ_{t,m})`
    pub gradients: Vec<Vector>,
    pub projected: bool,
    pub synced: bool,
}

/// One replicate of Algorithm 1, advanced step by step.
pub struct Simulation<'a> {
    model: &'a LossModel,
    schedule: &'a AdversarySchedule,
    domain: Domain,
    steps: &'a [f64],
    seed: u64,
    replicate: u64,
    sync_period: usize,
    sync_phase: usize,
    state: SimState,
}

impl<'a> Simulation<'a> {
    pub fn new(
        config: &ExperimentConfig,
        model: &'a LossModel,
        schedule: &'a AdversarySchedule,
        steps: &'a [f64],
        replicate: u64,
    ) -> Result<Self> {
        if steps.len() != config.horizon {
            return Err(FedSeaError::Config(format!(
                "{} step sizes for horizon {}",
                steps.len(),
                config.horizon
            )));
        }
        let x1 = config.initial_point();
        x1.check_dim(model.dim())?;
        Ok(Self {
            model,
            schedule,
            domain: config.domain(),
            steps,
            seed: config.seed,
            replicate,
            sync_period: config.sync_period,
            sync_phase: config.sync_phase,
            state: SimState::uniform(1, &x1, config.num_clients),
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn is_finished(&self) -> bool {
        self.state.t > self.steps.len()
    }

    /// Draws `ξ_{t,m}` for the current step.
    pub fn draw(&self, m: usize) -> Result<Sample> {
        let t = self.state.t;
        let dist = self.schedule.dist_params(t, m)?;
        let mut stream =
            StreamKey::new(self.seed, self.replicate, t as u64, m as u64, Purpose::Data).stream();
        self.model.draw(&dist, &mut stream)
    }

    /// Plays step `t`: local updates, projection, and averaging on sync steps.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let t = self.state.t;
        let eta = self.steps[t - 1];
        let clients = self.state.clients.len();
        let mut realized_losses = Vec::with_capacity(clients);
        let mut gradients = Vec::with_capacity(clients);
        let mut next = Vec::with_capacity(clients);
        let mut projected = false;
        for m in 0..clients {
            let sample = self.draw(m)?;
            let x = &self.state.clients[m];
            realized_losses.push(self.model.loss(x, &sample)?);
            let g = self.model.stochastic_gradient(x, &sample)?;
            let mut y = x.clone();
            y.axpy(-eta, &g);
            let (y, moved) = project(&y, &self.domain);
            projected |= moved;
            next.push(y);
            gradients.push(g);
        }

        let average = if projected {
            Vector::mean_of(&next)
        } else {
            let mut total = Vector::zeros(self.state.average.dim());
            for g in &gradients {
                total.axpy(1.0, g);
            }
            let mut avg = self.state.average.clone();
            avg.axpy(-eta / clients as f64, &total);
            avg
        };
        self.state = SimState {
            t: t + 1,
            clients: next,
            average,
        };
        let synced = is_sync_step(t, self.sync_period, self.sync_phase);
        if synced {
            self.state.synchronize();
        }
        debug_assert!({
            let exact = Vector::mean_of(&self.state.clients);
            exact.dist_sq(&self.state.average).sqrt() <= 1e-10 * exact.norm().max(1.0)
        });

        for x in self
            .state
            .clients
            .iter()
            .chain(std::iter::once(&self.state.average))
        {
            let norm = x.norm();
            if !x.is_finite() || norm > DIVERGENCE_THRESHOLD {
                return Err(FedSeaError::Divergence { t, eta, norm });
            }
        }
        Ok(StepOutcome {
            t,
            eta,
            realized_losses,
            gradients,
            projected,
            synced,
        })
    }
}

/// Everything recorded about step `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub eta: f64,
    /// `f(x_{t,m}, ξ_{t,m})`
    pub realized_losses: Vec<f64>,
    /// `f_t(x_{t,m})`
    pub expected_losses: Vec<f64>,
    /// `f_t(x_t)`
    pub virtual_loss: f64,
    /// `V_t`
    pub consensus_error: f64,
    pub synced: bool,
    pub projected: bool,
}

impl TraceRecord {
    /// `(1/M) Σ_m f_t(x_{t,m})`
    pub fn mean_expected_loss(&self) -> f64 {
        self.expected_losses.iter().sum::<f64>() / self.expected_losses.len() as f64
    }
}

/// Runs one replicate, handing each record to `observe` as it is produced.
pub fn run_replicate_with(
    config: &ExperimentConfig,
    model: &LossModel,
    schedule: &AdversarySchedule,
    steps: &[f64],
    oracle: &ExpectationOracle,
    replicate: u64,
    mut observe: impl FnMut(TraceRecord),
) -> Result<()> {
    let mut sim = Simulation::new(config, model, schedule, steps, replicate)?;
    while !sim.is_finished() {
        let t = sim.state().t;
        let objective = oracle.global_objective(t)?;
        let expected_losses: Vec<f64> = sim
            .state()
            .clients
            .iter()
            .map(|x| objective.value(x))
            .collect();
        let virtual_loss = objective.value(&sim.state().average);
        let v = consensus_error(sim.state());
        let outcome = sim.step()?;
        observe(TraceRecord {
            t,
            eta: outcome.eta,
            realized_losses: outcome.realized_losses,
            expected_losses,
            virtual_loss,
            consensus_error: v,
            synced: outcome.synced,
            projected: outcome.projected,
        });
    }
    Ok(())
}

pub fn run_replicate(
    config: &ExperimentConfig,
    model: &LossModel,
    schedule: &AdversarySchedule,
    steps: &[f64],
    oracle: &ExpectationOracle,
    replicate: u64,
) -> Result<Vec<TraceRecord>> {
    let mut trace = Vec::with_capacity(config.horizon);
    run_replicate_with(config, model, schedule, steps, oracle, replicate, |r| {
        trace.push(r)
    })?;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::AdversarySpec;
    use crate::losses::LossSpec;
    use crate::step_size::StepSizePolicy;

    fn v(c: &[f64]) -> Vector {
        Vector::new(c.to_vec()).unwrap()
    }

    fn config(
        clients: usize,
        tau: usize,
        horizon: usize,
        adversary: AdversarySpec,
        x1: Vector,
    ) -> ExperimentConfig {
        ExperimentConfig {
            num_clients: clients,
            horizon,
            sync_period: tau,
            dimension: x1.dim(),
            step_size_policy: StepSizePolicy::Constant {
                eta: 0.1,
                allow_unsafe: true,
            },
            projection_radius: Default::default(),
            replicates: 1,
            seed: 3,
            loss_spec: LossSpec::MeanQuadratic,
            adversary_spec: adversary,
            initial_point: Some(x1),
            initial_distance: None,
            sync_phase: 0,
        }
    }

    fn run(c: &ExperimentConfig) -> Vec<TraceRecord> {
        let model = LossModel::from_spec(&c.loss_spec, c.dimension).unwrap();
        let schedule = c
            .adversary_spec
            .build(c.num_clients, c.horizon, c.dimension)
            .unwrap();
        let oracle = ExpectationOracle::new(&model, &schedule, c.domain(), c.seed).unwrap();
        let steps = vec![0.1; c.horizon];
        run_replicate(c, &model, &schedule, &steps, &oracle, 0).unwrap()
    }

    #[test]
    fn projection_examples() {
        let x = v(&[3.0, 4.0]);
        let (p, moved) = project(&x, &Domain::ball(1.0));
        assert!(moved);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        assert_eq!(project(&x, &Domain::unbounded()), (x.clone(), false));
        assert_eq!(project(&x, &Domain::ball(5.0)), (x, false));
    }

    #[test]
    fn consensus_error_examples() {
        let s = SimState::from_clients(1, vec![v(&[1.0, 0.0]), v(&[-1.0, 0.0])]);
        assert_eq!(consensus_error(&s), 1.0);
        assert_eq!(consensus_error(&SimState::uniform(1, &v(&[2.0]), 3)), 0.0);
        assert_eq!(consensus_error(&SimState::uniform(1, &v(&[2.0]), 1)), 0.0);
    }

    #[test]
    fn single_sgd_step() {
        let model = LossModel::from_spec(&LossSpec::MeanQuadratic, 1).unwrap();
        let c = config(
            1,
            1,
            1,
            AdversarySpec::DiracAdversarial {
                points: vec![v(&[0.0])],
            },
            v(&[1.0]),
        );
        let schedule = c.adversary_spec.build(1, 1, 1).unwrap();
        let steps = [0.1];
        let mut sim = Simulation::new(&c, &model, &schedule, &steps, 0).unwrap();
        sim.step().unwrap();
        assert!((sim.state().clients[0][0] - 0.9).abs() < 1e-15);
        assert!(sim.is_finished());
    }

    #[test]
    fn sync_every_step_keeps_clients_equal() {
        let c = config(
            2,
            1,
            6,
            AdversarySpec::DiracAdversarial {
                points: vec![v(&[1.0]), v(&[-2.0])],
            },
            v(&[0.5]),
        );
        for r in run(&c) {
            assert_eq!(r.consensus_error, 0.0);
            assert!(r.synced);
        }
    }

    #[test]
    fn sync_is_idempotent() {
        let mut s = SimState::from_clients(4, vec![v(&[1.0, 2.0]), v(&[-3.0, 0.5])]);
        s.synchronize();
        let once = s.clone();
        s.synchronize();
        assert_eq!(s, once);
    }

    #[test]
    fn literal_schedule_syncs_after_first_step() {
        let c = config(
            2,
            3,
            7,
            AdversarySpec::StaticHeterogeneous {
                means: vec![v(&[1.0]), v(&[-1.0])],
                variance: crate::adversary::VarianceLevels::Uniform(0.0),
            },
            v(&[0.0]),
        );
        let trace = run(&c);
        let synced: Vec<usize> = trace.iter().filter(|r| r.synced).map(|r| r.t).collect();
        assert_eq!(synced, vec![1, 4, 7]);
        assert_eq!(trace[0].consensus_error, 0.0);
        assert_eq!(trace[1].consensus_error, 0.0);
        assert!(trace[2].consensus_error > 0.0);
        assert_eq!(trace[4].consensus_error, 0.0);
    }

    #[test]
    fn shifted_phase_syncs_at_block_ends() {
        let mut c = config(
            2,
            3,
            6,
            AdversarySpec::StaticHeterogeneous {
                means: vec![v(&[1.0]), v(&[-1.0])],
                variance: crate::adversary::VarianceLevels::Uniform(0.0),
            },
            v(&[0.0]),
        );
        c.sync_phase = 2;
        let trace = run(&c);
        let synced: Vec<usize> = trace.iter().filter(|r| r.synced).map(|r| r.t).collect();
        assert_eq!(synced, vec![3, 6]);
        assert_eq!(trace[3].consensus_error, 0.0);
        assert!(trace[1].consensus_error > 0.0);
    }

    #[test]
    fn divergence_is_reported() {
        let model = LossModel::from_spec(&LossSpec::MeanQuadratic, 1).unwrap();
        let c = config(
            1,
            1,
            200,
            AdversarySpec::DiracAdversarial {
                points: vec![v(&[0.0])],
            },
            v(&[1.0]),
        );
        let schedule = c.adversary_spec.build(1, 200, 1).unwrap();
        let oracle = ExpectationOracle::new(&model, &schedule, c.domain(), 0).unwrap();
        let steps = vec![5.0; 200];
        let err = run_replicate(&c, &model, &schedule, &steps, &oracle, 0).unwrap_err();
        assert!(matches!(err, FedSeaError::Divergence { .. }));
        assert_eq!(err.exit_code(), 3);
    }
}
