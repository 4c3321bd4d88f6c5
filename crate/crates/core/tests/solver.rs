mod common;

use std::sync::Arc;

use bmdp_core::dynamics::{constant_control, mix_controls, ControlField, LqModel, LqParams, ModelCoefficients, SineDrift};
use bmdp_core::measure::{ActionSpace, Measure, Regularizer};
use bmdp_core::solver::{
    calibrate_lambda, fit_rate, mirror_iterate, oracle_optimal_control, random_control, run_mirror_descent,
    theorem_probes, ControlProblem, LambdaChoice, MirrorDescentConfig, OracleConfig, OracleMethod,
};
use bmdp_core::tree::ScenarioTree;
use bmdp_core::Error;
use common::*;
use nalgebra::DMatrix;

fn problem_for(model: Arc<dyn ModelCoefficients>, n_steps: usize, reg: Regularizer, tau: f64) -> ControlProblem {
    ControlProblem::new(ScenarioTree::new(1.0, n_steps, 1).unwrap(), model, reg, tau).unwrap()
}

fn constant_model(value: f64, n: usize) -> Arc<ConstantCost> {
    Arc::new(ConstantCost {
        value,
        actions: ActionSpace::uniform_grid(n, 0.0, 1.0).unwrap(),
    })
}

fn nonlinear_models() -> Vec<Arc<dyn ModelCoefficients>> {
    let mut controlled = LqParams::benchmark();
    controlled.sigma_gain = vec![DMatrix::from_element(1, 1, 0.4)];
    vec![
        benchmark_model(),
        Arc::new(LqModel::new(controlled, benchmark_actions()).unwrap()),
        Arc::new(SineDrift::new(1.0, 0.3, 0.5, benchmark_actions()).unwrap()),
        Arc::new(QuadraticSigma {
            s: 0.5,
            sigma0: 0.3,
            actions: benchmark_actions(),
        }),
    ]
}

#[test]
fn cost_examples() {
    for (value, expected) in [(0.0, 0.0), (1.0, 1.0)] {
        let p = problem_for(constant_model(value, 3), 4, Regularizer::RelativeEntropy, 0.0);
        let mut r = rng(1);
        let c = p.cost(&random_control(&p, &mut r)).unwrap();
        assert!((c.j_tau - expected).abs() < 1e-14);
    }
    let p = lq_problem(4, Regularizer::RelativeEntropy, 0.5);
    let c = p.cost(&p.reference_control()).unwrap();
    assert_eq!(c.entropy, 0.0);
    assert_eq!(c.j_tau, c.j0);
}

#[test]
fn cost_splits_into_running_and_entropy() {
    let mut r = rng(2);
    for reg in all_regularizers(&benchmark_actions()) {
        let p = lq_problem(4, reg, 0.3);
        let c = p.cost(&random_control(&p, &mut r)).unwrap();
        assert!((c.j_tau - c.j0 - 0.3 * c.entropy).abs() < 1e-14);
        assert!(c.entropy > 0.0);
    }
}

fn forward_errors(p: &ControlProblem, pi: &ControlField, other: &ControlField) -> (f64, [f64; 2]) {
    let exact = p.first_variation_unregularized(pi, other).unwrap();
    let base = p.cost(pi).unwrap().j0;
    let errs = [1e-3, 1e-4].map(|eps| {
        let slope = (p.cost(&mix_controls(pi, other, eps)).unwrap().j0 - base) / eps;
        (slope - exact).abs()
    });
    (exact, errs)
}

#[test]
fn first_variation_matches_difference_quotients() {
    for model in nonlinear_models() {
        let p = problem_for(model.clone(), 5, Regularizer::RelativeEntropy, 0.0);
        let mut r = rng(3);
        for _ in 0..5 {
            let pi = random_control(&p, &mut r);
            let other = random_control(&p, &mut r);
            let (exact, [coarse, fine]) = forward_errors(&p, &pi, &other);
            assert!(fine / (1.0 + exact.abs()) <= 1e-3, "{}", model.name());
            let ratio = coarse / fine;
            assert!((8.0..12.5).contains(&ratio), "{} ratio {ratio}", model.name());
        }
    }
}

#[test]
fn regularized_first_variation_matches_central_differences() {
    let mut r = rng(4);
    for reg in all_regularizers(&benchmark_actions()) {
        let p = lq_problem(4, reg, 0.7);
        for _ in 0..3 {
            let pi = random_control(&p, &mut r);
            let other = random_control(&p, &mut r);
            let exact = p.first_variation(&pi, &other).unwrap();
            let j = |eps: f64| p.cost(&mix_controls(&pi, &other, eps)).unwrap().j_tau;
            let eps = 1e-4;
            let central = (j(eps) - j(-eps)) / (2.0 * eps);
            assert!(
                (central - exact).abs() <= 1e-6 * (1.0 + exact.abs()),
                "{} {central} {exact}",
                p.regularizer().name()
            );
        }
    }
}

#[test]
fn first_variation_is_linear_and_vanishes_at_the_base() {
    let p = lq_problem(4, Regularizer::ChiSquared, 0.2);
    let mut r = rng(5);
    let pi = random_control(&p, &mut r);
    let a = random_control(&p, &mut r);
    let b = random_control(&p, &mut r);
    assert!(p.first_variation(&pi, &pi).unwrap().abs() < 1e-15);
    let mixed = p.first_variation(&pi, &mix_controls(&a, &b, 0.35)).unwrap();
    let parts = 0.65 * p.first_variation(&pi, &a).unwrap() + 0.35 * p.first_variation(&pi, &b).unwrap();
    assert!((mixed - parts).abs() < 1e-13);
}

#[test]
fn mirror_iterate_examples() {
    // Zero Hamiltonian gradient leaves the control where it is.
    let p = problem_for(constant_model(1.0, 4), 3, Regularizer::RelativeEntropy, 0.0);
    let mut r = rng(6);
    let pi = random_control(&p, &mut r);
    let (next, _) = mirror_iterate(&p, &pi, 1.0).unwrap();
    assert!(p.sup_distance(&next, &pi) <= 1e-15);

    for reg in all_regularizers(&benchmark_actions()) {
        let p = lq_problem(3, reg, 0.5);
        let pi = random_control(&p, &mut r);
        let (next, _) = mirror_iterate(&p, &pi, 1e12).unwrap();
        assert!(p.sup_distance(&next, &pi) <= 1e-9, "{}", p.regularizer().name());
    }
}

#[test]
fn single_node_step_by_hand() {
    // One step, no noise: X₁ = x₀ + (βx₀ + Bā), Y₀ = G X₁ and the gradient is
    // B G X₁ a + ½ R a² up to a constant.
    let (beta, b, g, x0) = (0.1, 1.0, 1.0, 0.5);
    let model = Arc::new(LqModel::new(LqParams::scalar(beta, b, 0.0, 1.0, 1.0, g, x0), benchmark_actions()).unwrap());
    let p = problem_for(model, 1, Regularizer::RelativeEntropy, 0.0);
    let points = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let prior = Measure::new(vec![0.1, 0.3, 0.2, 0.25, 0.15], uniform(5)).unwrap();
    let abar: f64 = prior.weights().iter().zip(points).map(|(w, a)| w * a).sum();
    let x1 = x0 + beta * x0 + b * abar;
    let lambda = 1.7;
    let raw: Vec<f64> = points
        .iter()
        .zip(prior.weights())
        .map(|(a, w)| w * (-(b * g * x1 * a + 0.5 * a * a) / lambda).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let (next, _) = mirror_iterate(&p, &constant_control(p.tree(), &prior), lambda).unwrap();
    for (got, want) in next.get(0, 0).weights().iter().zip(raw.iter().map(|v| v / total)) {
        assert!((got - want).abs() < 1e-14);
    }
}

#[test]
fn calibration_examples() {
    let config = MirrorDescentConfig::default();
    let p = lq_problem(8, Regularizer::RelativeEntropy, 0.5);
    let c = calibrate_lambda(&p, &config).unwrap();
    assert!(c.lambda < 1024.0);
    assert_eq!(c.candidates[0], 1.0);
    assert_eq!(c.candidates.last(), Some(&c.lambda));

    let p = lq_problem(4, Regularizer::RelativeEntropy, 3.0);
    let c = calibrate_lambda(&p, &config).unwrap();
    assert_eq!(c.candidates[0], 6.0);
    assert!(c.lambda >= 3.0);

    let p = problem_for(constant_model(0.0, 3), 3, Regularizer::ChiSquared, 0.0);
    let c = calibrate_lambda(&p, &config).unwrap();
    assert_eq!(c.lambda, 1.0);
    assert_eq!(c.candidates, vec![1.0]);
}

#[test]
fn trivial_run_stays_at_zero() {
    let p = problem_for(constant_model(0.0, 3), 3, Regularizer::RelativeEntropy, 0.0);
    let config = MirrorDescentConfig {
        lambda: LambdaChoice::Fixed(2.0),
        max_iters: 5,
        tol: -1.0,
        ..Default::default()
    };
    let report = run_mirror_descent(&p, &config, None).unwrap();
    assert_eq!(report.history.len(), 6);
    for rec in &report.history {
        assert_eq!(rec.j_tau, 0.0);
        if let Some(d) = rec.step_divergence {
            assert_eq!(d, 0.0);
        }
    }
}

#[test]
fn tau_above_lambda_is_rejected() {
    let p = lq_problem(2, Regularizer::RelativeEntropy, 5.0);
    let config = MirrorDescentConfig {
        lambda: LambdaChoice::Fixed(4.0),
        ..Default::default()
    };
    assert!(matches!(run_mirror_descent(&p, &config, None), Err(Error::InvalidConfig(_))));
}

#[test]
fn pure_entropy_oracle_returns_the_reference() {
    let reference = vec![0.1, 0.5, 0.4];
    let p = problem_for(constant_model(1.0, 3), 3, Regularizer::RelativeEntropy, 0.8)
        .with_reference(reference.clone())
        .unwrap();
    let o = oracle_optimal_control(&p, &OracleConfig::default()).unwrap();
    assert_eq!(o.method, OracleMethod::Pontryagin);
    for (_, _, m) in o.policy.iter() {
        for (w, r) in m.weights().iter().zip(&reference) {
            assert!((w - r).abs() < 1e-12);
        }
    }
}

#[test]
fn single_step_oracle_by_hand() {
    // π* ∝ exp(-(B G X₁(ā*) a + ½a²)/τ), a scalar fixed point in ā* solved by bisection.
    let (beta, b, g, x0, tau) = (0.1, 1.0, 1.0, 0.5, 0.5);
    let model = Arc::new(LqModel::new(LqParams::scalar(beta, b, 0.0, 1.0, 1.0, g, x0), benchmark_actions()).unwrap());
    let p = problem_for(model, 1, Regularizer::RelativeEntropy, tau);
    let points = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let gibbs = |abar: f64| -> Vec<f64> {
        let x1 = x0 + beta * x0 + b * abar;
        let raw: Vec<f64> = points.iter().map(|a| (-(b * g * x1 * a + 0.5 * a * a) / tau).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|v| v / total).collect()
    };
    let mean = |w: &[f64]| -> f64 { w.iter().zip(points).map(|(w, a)| w * a).sum() };
    let (mut lo, mut hi) = (-1.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid - mean(&gibbs(mid)) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let expected = gibbs(0.5 * (lo + hi));
    let o = oracle_optimal_control(&p, &OracleConfig::default()).unwrap();
    assert!(o.residual <= 1e-10);
    for (got, want) in o.policy.get(0, 0).weights().iter().zip(&expected) {
        assert!((got - want).abs() < 1e-9);
    }
}

fn tiny_deterministic(tau: f64) -> ControlProblem {
    let actions = ActionSpace::uniform_grid(3, -1.0, 1.0).unwrap();
    let mut params = LqParams::benchmark();
    params.sigma0[(0, 0)] = 0.0;
    let model = Arc::new(LqModel::new(params, actions).unwrap());
    problem_for(model, 2, Regularizer::RelativeEntropy, tau)
}

#[test]
fn grid_oracle_limits() {
    let p = lq_problem(8, Regularizer::RelativeEntropy, 0.0);
    assert!(matches!(
        oracle_optimal_control(&p, &OracleConfig::default()),
        Err(Error::OracleTooLarge { .. })
    ));

    let p = tiny_deterministic(0.0);
    let config = OracleConfig {
        grid_divisions: 16,
        ..Default::default()
    };
    let o = oracle_optimal_control(&p, &config).unwrap();
    assert_eq!(o.method, OracleMethod::Grid);
    let run = MirrorDescentConfig {
        lambda: LambdaChoice::Fixed(1.0),
        max_iters: 50,
        tol: 0.0,
        ..Default::default()
    };
    let report = run_mirror_descent(&p, &run, Some(&o)).unwrap();
    let best = report.history.iter().map(|r| r.j_tau).fold(f64::INFINITY, f64::min);
    // The coarse grid is still within a grid cell's worth of the iterates.
    assert!(o.value <= best + 1.0 / 16.0);
}

#[test]
fn probes_on_convex_and_concave_models() {
    let p = lq_problem(4, Regularizer::RelativeEntropy, 0.5);
    let report = theorem_probes(&p, 4.0, 50, 11).unwrap();
    assert_eq!(report.convexity.count, 50);
    assert_eq!(report.convexity.violations, 0);
    assert_eq!(report.three_point.violations, 0);
    assert!(report.smoothness_ratio <= 4.0);
    assert_eq!(report.smoothness.violations, 0);

    let mut params = LqParams::benchmark();
    params.g = DMatrix::from_element(1, 1, -1.0);
    let concave = Arc::new(LqModel::new(params, benchmark_actions()).unwrap());
    let p = problem_for(concave, 4, Regularizer::RelativeEntropy, 0.0);
    let report = theorem_probes(&p, 4.0, 50, 11).unwrap();
    assert!(report.convexity.violations > 0);
}

#[test]
fn regularized_run_respects_the_rate_bound() {
    let p = lq_problem(4, Regularizer::RelativeEntropy, 0.5);
    let o = oracle_optimal_control(&p, &OracleConfig::default()).unwrap();
    let config = MirrorDescentConfig {
        lambda: LambdaChoice::Fixed(4.0),
        max_iters: 60,
        ..Default::default()
    };
    let report = run_mirror_descent(&p, &config, Some(&o)).unwrap();
    assert_eq!(report.dissipation_violations, 0);
    assert!(report.oracle.as_ref().unwrap().certified);
    for rec in &report.history {
        assert!(rec.gap.unwrap() <= rec.bound_value.unwrap() + 1e-9);
    }
    let fit = report.rates.iter().find(|f| f.series == "gap").unwrap();
    assert!(fit.fitted_rate <= report.theoretical_rate + 0.02);
}

#[test]
fn rate_fit_examples() {
    let geometric: Vec<f64> = (0..40).map(|n| 0.9f64.powi(n)).collect();
    let fit = fit_rate("gap", &geometric).unwrap();
    assert!((fit.fitted_rate - 0.9).abs() < 1e-6);
    assert!(fit.r_squared >= 0.999999);
    assert!(fit.geometric);

    let harmonic: Vec<f64> = (1..200).map(|n| 1.0 / n as f64).collect();
    assert!(!fit_rate("gap", &harmonic).unwrap().geometric);
    assert!(matches!(fit_rate("gap", &geometric[..5]), Err(Error::InsufficientData { .. })));
}

#[test]
fn runs_are_reproducible() {
    let p = lq_problem(4, eot_for(&benchmark_actions(), 0.5), 0.5);
    let config = MirrorDescentConfig {
        max_iters: 15,
        ..Default::default()
    };
    let a = run_mirror_descent(&p, &config, None).unwrap();
    let b = run_mirror_descent(&p, &config, None).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
