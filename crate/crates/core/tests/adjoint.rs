#![allow(clippy::needless_range_loop)]

mod common;

use bmdp_core::adjoint::{
    bmo_diagnostic, hamiltonian_dx_field, hamiltonian_flat_derivative, hamiltonian_value, solve_adjoint,
    AdjointScheme, AdjointSolution,
};
use bmdp_core::dynamics::{constant_control, simulate_state, LqModel, LqParams, ModelCoefficients, SineDrift};
use bmdp_core::measure::{ActionSpace, Measure, Regularizer};
use bmdp_core::tree::{NodeField, ScenarioTree};
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn solve(tree: &ScenarioTree, model: &dyn ModelCoefficients, policy: &bmdp_core::dynamics::ControlField) -> AdjointSolution {
    let x = simulate_state(tree, model, policy).unwrap();
    solve_adjoint(tree, model, policy, &x, AdjointScheme::Discrete).unwrap()
}

#[test]
fn no_driver_and_no_terminal_gives_zero() {
    let model = ConstantCost {
        value: 2.0,
        actions: ActionSpace::uniform_grid(3, 0.0, 1.0).unwrap(),
    };
    let tree = ScenarioTree::new(1.0, 4, 1).unwrap();
    let mut r = rng(1);
    let adj = solve(&tree, &model, &random_field(&tree, &uniform(3), &mut r));
    assert!(adj.y.iter().all(|(_, _, y)| y.amax() == 0.0));
    assert!(adj.z.iter().all(|(_, _, z)| z.amax() == 0.0));
}

#[test]
fn linear_terminal_cost_gives_conditional_mean() {
    // β = 0, Q = 0, G = 1: Y(node) = E[X_T | node] and Z = σ₀.
    let model = LqModel::new(LqParams::scalar(0.0, 1.0, 0.4, 0.0, 1.0, 1.0, 0.2), benchmark_actions()).unwrap();
    let tree = ScenarioTree::new(1.0, 5, 1).unwrap();
    let mut r = rng(2);
    let policy = random_field(&tree, &uniform(5), &mut r);
    let x = simulate_state(&tree, &model, &policy).unwrap();
    let adj = solve_adjoint(&tree, &model, &policy, &x, AdjointScheme::Discrete).unwrap();

    // Enumerate the leaves below every node directly.
    for level in 0..=5 {
        let width = tree.nodes_at(5) / tree.nodes_at(level);
        for j in 0..tree.nodes_at(level) {
            let mean: f64 = x.level(5)[j * width..(j + 1) * width].iter().map(|v| v[0]).sum::<f64>() / width as f64;
            assert!((adj.y.get(level, j)[0] - mean).abs() < 1e-13);
        }
    }
    // With the same measure on every path the drift does not depend on the branch.
    let adj = solve(&tree, &model, &constant_control(&tree, &random_measure(&mut r, &uniform(5), 0.1)));
    for (_, _, z) in adj.z.iter() {
        assert!((z[(0, 0)] - 0.4).abs() < 1e-13);
    }
}

#[test]
fn deterministic_tree_is_a_backward_recursion() {
    let (beta, b, q, g, x0) = (-0.4, 1.2, 0.7, 1.3, 0.5);
    let model = LqModel::new(LqParams::scalar(beta, b, 0.0, q, 1.0, g, x0), benchmark_actions()).unwrap();
    let tree = ScenarioTree::new(1.0, 6, 1).unwrap();
    let m = Measure::new(vec![0.1, 0.3, 0.2, 0.15, 0.25], uniform(5)).unwrap();
    let abar: f64 = m.weights().iter().zip([-1.0, -0.5, 0.0, 0.5, 1.0]).map(|(w, a)| w * a).sum();
    let adj = solve(&tree, &model, &constant_control(&tree, &m));

    let dt = tree.dt();
    let mut xs = vec![x0];
    for k in 0..6 {
        xs.push(xs[k] + (beta * xs[k] + b * abar) * dt);
    }
    let mut y = g * xs[6];
    for k in (0..6).rev() {
        y += dt * (beta * y + q * xs[k]);
        for node in adj.y.level(k) {
            assert!((node[0] - y).abs() < 1e-14);
        }
        for z in adj.z.level(k) {
            assert!(z[(0, 0)].abs() < 1e-15);
        }
    }
}

#[test]
fn discrete_backward_identities_hold_at_every_node() {
    let tree = ScenarioTree::new(1.0, 4, 2).unwrap();
    let mut p = LqParams::benchmark();
    p.sigma0 = DMatrix::from_row_slice(1, 2, &[0.3, -0.2]);
    p.sigma_gain = vec![DMatrix::from_row_slice(1, 2, &[0.2, 0.1])];
    let model = LqModel::new(p, benchmark_actions()).unwrap();
    let sine = SineDrift::new(0.8, 0.3, 0.5, benchmark_actions()).unwrap();
    let tree1 = ScenarioTree::new(1.0, 5, 1).unwrap();
    let cases: Vec<(&ScenarioTree, &dyn ModelCoefficients)> = vec![(&tree, &model), (&tree1, &sine)];
    for (tree, model) in cases {
        let mut r = rng(4);
        let policy = random_field(tree, &uniform(5), &mut r);
        let x = simulate_state(tree, model, &policy).unwrap();
        let adj = solve_adjoint(tree, model, &policy, &x, AdjointScheme::Discrete).unwrap();
        for leaf in 0..tree.nodes_at(tree.n_steps()) {
            let expected = model.terminal_cost_dx(x.get(tree.n_steps(), leaf));
            assert_eq!(adj.y.get(tree.n_steps(), leaf), &expected);
        }
        let dx = hamiltonian_dx_field(tree, model, &policy, &x, &adj);
        let dt = tree.dt();
        for level in 0..tree.n_steps() {
            let cond = tree.conditional_expectation(&adj.y, level).unwrap();
            for j in 0..tree.nodes_at(level) {
                let y_hat = adj.y_hat.get(level, j);
                assert!((y_hat - &cond[j]).amax() < 1e-12);
                assert!((adj.y.get(level, j) - (y_hat + dx.get(level, j) * dt)).amax() < 1e-12);
                // Z is the regression coefficient of the child values on ΔW.
                let mut cov = DMatrix::zeros(model.state_dim(), tree.d_prime());
                for c in tree.children(j) {
                    let dw = DVector::from_column_slice(tree.increment(c));
                    cov += (adj.y.get(level + 1, c) - y_hat) * dw.transpose();
                }
                cov /= tree.branching() as f64;
                assert!((cov - adj.z.get(level, j) * dt).amax() < 1e-12);
            }
        }
    }
}

#[test]
fn bmo_examples() {
    let tree = ScenarioTree::new(2.0, 4, 1).unwrap();
    let ny = NodeField::from_fn(&tree, 5, |_, _| DVector::zeros(1));
    let zero = AdjointSolution {
        scheme: AdjointScheme::Discrete,
        y: ny.clone(),
        y_hat: NodeField::from_fn(&tree, 4, |_, _| DVector::zeros(1)),
        z: NodeField::from_fn(&tree, 4, |_, _| DMatrix::zeros(1, 1)),
    };
    assert_eq!(bmo_diagnostic(&tree, &zero).unwrap(), 0.0);
    let constant = AdjointSolution {
        z: NodeField::from_fn(&tree, 4, |_, _| DMatrix::from_element(1, 1, -0.6)),
        ..zero
    };
    assert!((bmo_diagnostic(&tree, &constant).unwrap() - 0.6 * 2f64.sqrt()).abs() < 1e-14);
}

#[test]
fn bmo_is_stable_under_refinement() {
    let model = benchmark_model();
    let m = Measure::uniform(5);
    let value = |n: usize| {
        let tree = ScenarioTree::new(1.0, n, 1).unwrap();
        bmo_diagnostic(&tree, &solve(&tree, model.as_ref(), &constant_control(&tree, &m))).unwrap()
    };
    let (coarse, fine) = (value(4), value(8));
    assert!(coarse > 0.0 && coarse.is_finite());
    assert!((fine / coarse - 1.0).abs() <= 0.2, "{coarse} {fine}");
}

#[test]
fn hamiltonian_examples() {
    let model = benchmark_model();
    let mut r = rng(6);
    let x = DVector::from_element(1, 0.7);
    let m = random_measure(&mut r, &uniform(5), 0.2);
    let (y0, z0) = (DVector::zeros(1), DMatrix::zeros(1, 1));
    for reg in all_regularizers(model.actions()) {
        let h = hamiltonian_value(model.as_ref(), &reg, 0.0, 0.3, &x, &y0, &z0, &m).unwrap();
        assert!((h - model.running_cost(0.3, &x, &m)).abs() < 1e-15);
        let d = hamiltonian_flat_derivative(model.as_ref(), &reg, 0.0, 0.3, &x, &y0, &z0, &m).unwrap();
        for (a, b) in d.iter().zip(model.running_cost_dm(0.3, &x, &m)) {
            assert!((a - b).abs() < 1e-15);
        }

        let (y, z) = (DVector::from_element(1, -1.1), DMatrix::from_element(1, 1, 0.4));
        let h0 = hamiltonian_value(model.as_ref(), &reg, 0.0, 0.3, &x, &y, &z, &m).unwrap();
        let h2 = hamiltonian_value(model.as_ref(), &reg, 2.0, 0.3, &x, &y, &z, &m).unwrap();
        assert!((h2 - h0 - 2.0 * reg.value(&m).unwrap()).abs() < 1e-12);
        let expected = model.drift(0.3, &x, &m).dot(&y) + (model.diffusion(0.3, &x, &m).transpose() * &z).trace()
            + model.running_cost(0.3, &x, &m);
        assert!((h0 - expected).abs() < 1e-14);
    }
}

#[test]
fn lq_hamiltonian_derivative_by_hand() {
    // b = βx + Bā, σ = σ₀, f = ½Qx² + ½R∫a²: δH⁰/δm(a) = B y a + ½R a², centered.
    let model = benchmark_model();
    let points = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let mut r = rng(7);
    for _ in 0..10 {
        let m = random_measure(&mut r, &uniform(5), 0.1);
        let x = DVector::from_element(1, r.random::<f64>());
        let y = DVector::from_element(1, r.random::<f64>() * 2.0 - 1.0);
        let z = DMatrix::from_element(1, 1, r.random::<f64>());
        let raw: Vec<f64> = points.iter().map(|a| y[0] * a + 0.5 * a * a).collect();
        let mean = m.integrate(&raw);
        let d = hamiltonian_flat_derivative(model.as_ref(), &Regularizer::ChiSquared, 0.0, 0.0, &x, &y, &z, &m).unwrap();
        for (got, want) in d.iter().zip(raw.iter().map(|v| v - mean)) {
            assert!((got - want).abs() < 1e-14);
        }
    }
}

#[test]
fn hamiltonian_derivative_matches_difference_quotients() {
    let sine = SineDrift::new(1.0, 0.3, 0.5, benchmark_actions()).unwrap();
    let quad = QuadraticSigma {
        s: 0.5,
        sigma0: 0.3,
        actions: benchmark_actions(),
    };
    let models: Vec<&dyn ModelCoefficients> = vec![&sine, &quad];
    let mut r = rng(9);
    for model in models {
        for reg in all_regularizers(model.actions()) {
            for tau in [0.0, 0.7] {
                let m = random_measure(&mut r, &uniform(5), 0.2);
                let other = random_measure(&mut r, &uniform(5), 0.2);
                let x = DVector::from_element(1, r.random::<f64>());
                let y = DVector::from_element(1, r.random::<f64>() - 0.5);
                let z = DMatrix::from_element(1, 1, r.random::<f64>() - 0.5);
                let h = |eps: f64| {
                    hamiltonian_value(model, &reg, tau, 0.2, &x, &y, &z, &m.mix(&other, eps)).unwrap()
                };
                let d = hamiltonian_flat_derivative(model, &reg, tau, 0.2, &x, &y, &z, &m).unwrap();
                let exact: f64 = d.iter().zip(m.difference(&other)).map(|(a, b)| a * b).sum();
                // Richardson-extrapolated central differences.
                let central = |eps: f64| (h(eps) - h(-eps)) / (2.0 * eps);
                let extrapolated = (4.0 * central(5e-4) - central(1e-3)) / 3.0;
                assert!(
                    (extrapolated - exact).abs() <= 1e-7 * (1.0 + exact.abs()),
                    "{} {} {extrapolated} {exact}",
                    model.name(),
                    reg.name()
                );
            }
        }
    }
}

#[test]
fn implicit_scheme_is_available() {
    let model = benchmark_model();
    let tree = ScenarioTree::new(1.0, 3, 1).unwrap();
    let policy = constant_control(&tree, &Measure::uniform(5));
    let x = simulate_state(&tree, model.as_ref(), &policy).unwrap();
    let adj = solve_adjoint(&tree, model.as_ref(), &policy, &x, AdjointScheme::Implicit).unwrap();
    let dt = tree.dt();
    for level in 0..3 {
        let cond = tree.conditional_expectation(&adj.y, level).unwrap();
        for j in 0..tree.nodes_at(level) {
            let y = adj.y.get(level, j);
            let dx = bmdp_core::adjoint::hamiltonian_dx(
                model.as_ref(),
                tree.time(level),
                x.get(level, j),
                y,
                adj.z.get(level, j),
                policy.get(level, j),
            );
            assert!((y - (&cond[j] + dx * dt)).amax() < 1e-12);
        }
    }
}
