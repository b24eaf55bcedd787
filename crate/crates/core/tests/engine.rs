use fedsea::engine::{consensus_error, is_sync_step, run_replicate, SimState, Simulation};
use fedsea::oracles::ExpectationOracle;
use fedsea::{
    AdversarySpec, ExperimentConfig, LossModel, LossSpec, ProjectionRadius, StepSizePolicy,
    VarianceLevels, Vector,
};
use proptest::prelude::*;

fn v(c: &[f64]) -> Vector {
    Vector::new(c.to_vec()).unwrap()
}

fn config(
    clients: usize,
    tau: usize,
    horizon: usize,
    eta: f64,
    adversary: AdversarySpec,
) -> ExperimentConfig {
    ExperimentConfig {
        num_clients: clients,
        horizon,
        sync_period: tau,
        dimension: adversary_dim(&adversary),
        step_size_policy: StepSizePolicy::Constant {
            eta,
            allow_unsafe: false,
        },
        projection_radius: ProjectionRadius::default(),
        replicates: 1,
        seed: 7,
        loss_spec: LossSpec::MeanQuadratic,
        adversary_spec: adversary,
        initial_point: None,
        initial_distance: None,
        sync_phase: 0,
    }
}

fn adversary_dim(a: &AdversarySpec) -> usize {
    match a {
        AdversarySpec::StaticIid { mean, .. } => mean.dim(),
        AdversarySpec::StaticHeterogeneous { means, .. } => means[0].dim(),
        AdversarySpec::DiracAdversarial { points } => points[0].dim(),
        _ => 2,
    }
}

fn run_states(config: &ExperimentConfig) -> Vec<SimState> {
    let model = LossModel::from_spec(&config.loss_spec, config.dimension).unwrap();
    let schedule = config
        .adversary_spec
        .build(config.num_clients, config.horizon, config.dimension)
        .unwrap();
    let steps = vec![
        match config.step_size_policy {
            StepSizePolicy::Constant { eta, .. } => eta,
            _ => unreachable!(),
        };
        config.horizon
    ];
    let mut sim = Simulation::new(config, &model, &schedule, &steps, 0).unwrap();
    let mut states = vec![sim.state().clone()];
    while !sim.is_finished() {
        sim.step().unwrap();
        states.push(sim.state().clone());
    }
    states
}

#[test]
fn two_clients_by_hand() {
    // Client 0 sees +1, client 1 sees −1, η = 0.1, τ = 2: averaging after steps 1 and 3.
    let adversary = AdversarySpec::StaticHeterogeneous {
        means: vec![v(&[1.0]), v(&[-1.0])],
        variance: VarianceLevels::Uniform(0.0),
    };
    let states = run_states(&config(2, 2, 4, 0.1, adversary));
    let clients = |s: &SimState| (s.clients[0].as_slice()[0], s.clients[1].as_slice()[0]);
    let close = |a: f64, b: f64| (a - b).abs() < 1e-15;

    // after step 1: ±0.1, then averaged to 0
    let (a, b) = clients(&states[1]);
    assert!(close(a, 0.0) && close(b, 0.0));
    // after step 2: ±0.1, no averaging
    let (a, b) = clients(&states[2]);
    assert!(close(a, 0.1) && close(b, -0.1), "{a} {b}");
    assert!((consensus_error(&states[2]) - 0.01).abs() < 1e-15);
    // after step 3: 0.1 − 0.1·(0.1 − 1) = 0.19, then averaged
    let (a, b) = clients(&states[3]);
    assert!(close(a, 0.0) && close(b, 0.0));
    let (a, b) = clients(&states[4]);
    assert!(close(a, 0.1) && close(b, -0.1));
    for s in &states {
        assert!(s.average.as_slice()[0].abs() < 1e-15);
    }
}

#[test]
fn two_clients_drift_apart_between_averagings() {
    // τ = 8 averages only after step 1, so steps 2 and 3 start from 0.
    let adversary = AdversarySpec::StaticHeterogeneous {
        means: vec![v(&[1.0]), v(&[-1.0])],
        variance: VarianceLevels::Uniform(0.0),
    };
    let states = run_states(&config(2, 8, 3, 0.1, adversary));
    assert!((states[3].clients[0].as_slice()[0] - 0.19).abs() < 1e-15);
    assert!((states[3].clients[1].as_slice()[0] + 0.19).abs() < 1e-15);
}

#[test]
fn sync_schedule_literal_and_shifted() {
    let literal: Vec<usize> = (1..=9).filter(|&t| is_sync_step(t, 3, 0)).collect();
    assert_eq!(literal, vec![1, 4, 7]);
    let shifted: Vec<usize> = (1..=9).filter(|&t| is_sync_step(t, 3, 2)).collect();
    assert_eq!(shifted, vec![3, 6, 9]);
    assert!((1..=5).all(|t| is_sync_step(t, 1, 0)));
}

fn heterogeneous() -> AdversarySpec {
    AdversarySpec::StaticHeterogeneous {
        means: vec![v(&[1.0, 0.0]), v(&[-1.0, 0.0]), v(&[0.0, 1.0])],
        variance: VarianceLevels::PerClient(vec![0.5, 1.0, 2.0]),
    }
}

#[test]
fn virtual_sequence_follows_averaged_gradient_recursion() {
    let c = config(3, 5, 200, 0.05, heterogeneous());
    let model = LossModel::from_spec(&c.loss_spec, 2).unwrap();
    let schedule = c.adversary_spec.build(3, 200, 2).unwrap();
    let steps = vec![0.05; 200];
    let mut sim = Simulation::new(&c, &model, &schedule, &steps, 0).unwrap();
    let mut recursion = sim.state().average.clone();
    while !sim.is_finished() {
        let out = sim.step().unwrap();
        let g = Vector::mean_of(&out.gradients);
        recursion.axpy(-out.eta, &g);
        let exact = Vector::mean_of(&sim.state().clients);
        assert!(recursion.dist_sq(&exact).sqrt() <= 1e-12, "t = {}", out.t);
        assert!(sim.state().average.dist_sq(&exact).sqrt() <= 1e-12);
    }
}

#[test]
fn single_client_is_unaffected_by_the_sync_period() {
    let a = AdversarySpec::StaticIid {
        mean: v(&[0.3, -0.2]),
        variance: 1.0,
    };
    let s1 = run_states(&config(1, 1, 50, 0.1, a.clone()));
    let s7 = run_states(&config(1, 7, 50, 0.1, a));
    for (x, y) in s1.iter().zip(&s7) {
        assert_eq!(x.clients, y.clients);
    }
}

#[test]
fn replicate_traces_are_reproducible() {
    let c = config(3, 4, 64, 0.05, heterogeneous());
    let model = LossModel::from_spec(&c.loss_spec, 2).unwrap();
    let schedule = c.adversary_spec.build(3, 64, 2).unwrap();
    let steps = vec![0.05; 64];
    let oracle = ExpectationOracle::new(&model, &schedule, c.domain(), c.seed).unwrap();
    let a = run_replicate(&c, &model, &schedule, &steps, &oracle, 3).unwrap();
    let b = run_replicate(&c, &model, &schedule, &steps, &oracle, 3).unwrap();
    let other = run_replicate(&c, &model, &schedule, &steps, &oracle, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, other);
    for r in &a {
        if r.t > 1 && is_sync_step(r.t - 1, 4, 0) {
            // the step following an averaging starts from consensus
            assert_eq!(r.consensus_error, 0.0, "t = {}", r.t);
        }
    }
}

#[test]
fn projection_keeps_iterates_in_the_ball() {
    let mut c = config(
        2,
        3,
        100,
        0.5,
        AdversarySpec::StaticIid {
            mean: v(&[3.0, 0.0]),
            variance: 0.5,
        },
    );
    c.projection_radius = ProjectionRadius::Finite(1.0);
    for s in run_states(&c) {
        for x in &s.clients {
            assert!(x.norm() <= 1.0 + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn synchronization_is_idempotent(points in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..6)) {
        let clients: Vec<Vector> = points.into_iter().map(|p| Vector::new(p).unwrap()).collect();
        let mut s = SimState::from_clients(1, clients);
        s.synchronize();
        let once = s.clone();
        s.synchronize();
        prop_assert_eq!(&once, &s);
        prop_assert_eq!(consensus_error(&s), 0.0);
    }

    #[test]
    fn consensus_error_is_nonnegative_and_translation_invariant(
        points in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 2..6),
        shift in prop::collection::vec(-5.0f64..5.0, 2),
    ) {
        let clients: Vec<Vector> = points.iter().map(|p| Vector::new(p.clone()).unwrap()).collect();
        let shift = Vector::new(shift).unwrap();
        let moved: Vec<Vector> = clients.iter().map(|c| c.add(&shift)).collect();
        let a = consensus_error(&SimState::from_clients(1, clients));
        let b = consensus_error(&SimState::from_clients(1, moved));
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
    }
}
