use fedsea::oracles::RunningStats;
use fedsea::{DistParams, LossModel, LossSpec, Purpose, Sample, StreamKey, Vector};
use proptest::prelude::*;

fn vector(dim: usize, scale: f64) -> impl Strategy<Value = Vector> {
    prop::collection::vec(-scale..scale, dim).prop_map(|c| Vector::new(c).unwrap())
}

fn linreg(dim: usize) -> impl Strategy<Value = LossSpec> {
    prop::collection::vec(0.2f64..3.0, dim)
        .prop_map(|feature_variances| LossSpec::GaussianLinreg { feature_variances })
}

fn analytic_model(dim: usize) -> impl Strategy<Value = LossModel> {
    prop_oneof![Just(LossSpec::MeanQuadratic), linreg(dim)]
        .prop_map(move |s| LossModel::from_spec(&s, dim).unwrap())
}

fn any_model(dim: usize) -> impl Strategy<Value = LossModel> {
    prop_oneof![
        Just(LossSpec::MeanQuadratic),
        linreg(dim),
        prop::collection::vec(0.2f64..3.0, dim).prop_map(|feature_variances| {
            LossSpec::EmpiricalLogistic {
                feature_variances,
                mc_budget: 1000,
            }
        }),
    ]
    .prop_map(move |s| LossModel::from_spec(&s, dim).unwrap())
}

fn gaussian(dim: usize) -> impl Strategy<Value = DistParams> {
    (vector(dim, 2.0), 0.0f64..2.0)
        .prop_map(|(mean, variance)| DistParams::Gaussian { mean, variance })
}

fn draw(model: &LossModel, dist: &DistParams, seed: u64) -> Sample {
    let mut stream = StreamKey::new(seed, 0, 1, 0, Purpose::Probe).stream();
    model.draw(dist, &mut stream).unwrap()
}

fn perturbed(x: &Vector, i: usize, h: f64) -> Vector {
    let mut c = x.as_slice().to_vec();
    c[i] += h;
    Vector::new(c).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stochastic_gradient_matches_finite_differences(
        (model, dist, x) in (1usize..5).prop_flat_map(|d| (any_model(d), gaussian(d), vector(d, 2.0))),
        seed in any::<u64>(),
    ) {
        let s = draw(&model, &dist, seed);
        let g = model.stochastic_gradient(&x, &s).unwrap();
        let h = 1e-5;
        for i in 0..x.dim() {
            let fd = (model.loss(&perturbed(&x, i, h), &s).unwrap() - model.loss(&perturbed(&x, i, -h), &s).unwrap()) / (2.0 * h);
            prop_assert!((fd - g.as_slice()[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "coord {i}: fd {fd} vs {}", g.as_slice()[i]);
        }
    }

    #[test]
    fn expected_gradient_matches_finite_differences(
        (model, dist, x) in (1usize..5).prop_flat_map(|d| (analytic_model(d), gaussian(d), vector(d, 2.0))),
    ) {
        let g = model.expected_gradient(&dist, &x).unwrap();
        let h = 1e-5;
        for i in 0..x.dim() {
            let fd = (model.expected_loss(&dist, &perturbed(&x, i, h)).unwrap()
                - model.expected_loss(&dist, &perturbed(&x, i, -h)).unwrap()) / (2.0 * h);
            prop_assert!((fd - g.as_slice()[i]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn expected_loss_is_smooth_and_strongly_convex(
        (model, dist, x, y) in (1usize..5).prop_flat_map(|d| (analytic_model(d), gaussian(d), vector(d, 3.0), vector(d, 3.0))),
    ) {
        let l = model.smoothness();
        let mu = model.strong_convexity();
        let fx = model.expected_loss(&dist, &x).unwrap();
        let fy = model.expected_loss(&dist, &y).unwrap();
        let gx = model.expected_gradient(&dist, &x).unwrap();
        let gy = model.expected_gradient(&dist, &y).unwrap();
        let d = y.sub(&x);
        let linear = fx + gx.dot(&d);
        let r2 = d.norm_sq();
        let tol = 1e-9 * (1.0 + fx.abs() + fy.abs());
        prop_assert!(fy <= linear + 0.5 * l * r2 + tol);
        prop_assert!(fy >= linear + 0.5 * mu * r2 - tol);
        prop_assert!(gx.sub(&gy).norm() <= l * d.norm() * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn logistic_realized_loss_is_convex_and_smooth(
        (model, dist, x, y) in (1usize..5).prop_flat_map(|d| (any_model(d), gaussian(d), vector(d, 3.0), vector(d, 3.0))),
        seed in any::<u64>(),
    ) {
        prop_assume!(matches!(model.spec(), LossSpec::EmpiricalLogistic { .. }));
        let s = draw(&model, &dist, seed);
        let Sample::Labeled { features, .. } = &s else { unreachable!() };
        let fx = model.loss(&x, &s).unwrap();
        let fy = model.loss(&y, &s).unwrap();
        let g = model.stochastic_gradient(&x, &s).unwrap();
        let d = y.sub(&x);
        let lin = fx + g.dot(&d);
        prop_assert!(fy >= lin - 1e-12 * (1.0 + fy.abs()));
        prop_assert!(fy <= lin + 0.125 * features.norm_sq() * d.norm_sq() + 1e-12 * (1.0 + fy.abs()));
    }

    #[test]
    fn stochastic_gradient_is_unbiased(
        (model, dist, x) in (1usize..4).prop_flat_map(|d| (analytic_model(d), gaussian(d), vector(d, 2.0))),
        seed in any::<u64>(),
    ) {
        let exact = model.expected_gradient(&dist, &x).unwrap();
        let mut stream = StreamKey::new(seed, 0, 1, 0, Purpose::Probe).stream();
        let mut stats: Vec<RunningStats> = (0..x.dim()).map(|_| RunningStats::default()).collect();
        let mut loss = RunningStats::default();
        for _ in 0..4000 {
            let s = model.draw(&dist, &mut stream).unwrap();
            let g = model.stochastic_gradient(&x, &s).unwrap();
            for (st, gi) in stats.iter_mut().zip(g.as_slice()) {
                st.push(*gi);
            }
            loss.push(model.loss(&x, &s).unwrap());
        }
        for (st, e) in stats.iter().zip(exact.as_slice()) {
            prop_assert!((st.mean() - e).abs() <= 5.0 * st.std_error() + 1e-12, "{} vs {e}", st.mean());
        }
        let f = model.expected_loss(&dist, &x).unwrap();
        prop_assert!((loss.mean() - f).abs() <= 5.0 * loss.std_error() + 1e-12);
    }

    #[test]
    fn gradient_variance_matches_sampling(
        (model, dist, x) in (1usize..4).prop_flat_map(|d| (analytic_model(d), gaussian(d), vector(d, 2.0))),
        seed in any::<u64>(),
    ) {
        let exact = model.expected_gradient(&dist, &x).unwrap();
        let var = model.gradient_variance(&dist, &x).unwrap();
        let mut stream = StreamKey::new(seed, 0, 1, 0, Purpose::Probe).stream();
        let mut stats = RunningStats::default();
        for _ in 0..4000 {
            let s = model.draw(&dist, &mut stream).unwrap();
            stats.push(model.stochastic_gradient(&x, &s).unwrap().dist_sq(&exact));
        }
        prop_assert!((stats.mean() - var).abs() <= 5.0 * stats.std_error() + 1e-12, "{} vs {var}", stats.mean());
    }
}

#[test]
fn mean_quadratic_example_values() {
    let model = LossModel::from_spec(&LossSpec::MeanQuadratic, 2).unwrap();
    let x = Vector::new(vec![1.0, 2.0]).unwrap();
    let s = Sample::Point(Vector::new(vec![0.0, 0.0]).unwrap());
    assert_eq!(model.loss(&x, &s).unwrap(), 2.5);
    assert_eq!(
        model.stochastic_gradient(&x, &s).unwrap().as_slice(),
        &[1.0, 2.0]
    );
    let dist = DistParams::Gaussian {
        mean: Vector::zeros(2),
        variance: 1.0,
    };
    assert_eq!(model.expected_loss(&dist, &x).unwrap(), 3.0);
}

#[test]
fn dimension_mismatch_is_rejected() {
    let model = LossModel::from_spec(&LossSpec::MeanQuadratic, 2).unwrap();
    let s = Sample::Point(Vector::zeros(3));
    let err = model.loss(&Vector::zeros(2), &s).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
