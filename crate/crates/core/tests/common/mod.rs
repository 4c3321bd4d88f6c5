#![allow(dead_code)]

use std::sync::Arc;

use bmdp_core::dynamics::{ControlField, LqModel, LqParams, ModelCoefficients};
use bmdp_core::measure::{ActionSpace, EntropicOt, Measure, Regularizer};
use bmdp_core::solver::ControlProblem;
use bmdp_core::tree::{NodeField, ScenarioTree};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random probability vector with every weight at least `floor / n`.
pub fn random_weights(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|r| (1.0 - floor) * r / total + floor / n as f64).collect()
}

pub fn random_measure(rng: &mut ChaCha8Rng, reference: &[f64], floor: f64) -> Measure {
    Measure::new(random_weights(rng, reference.len(), floor), reference.to_vec()).unwrap()
}

pub fn random_cost(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect()
}

pub fn benchmark_actions() -> ActionSpace {
    ActionSpace::uniform_grid(5, -1.0, 1.0).unwrap()
}

pub fn benchmark_model() -> Arc<LqModel> {
    Arc::new(LqModel::new(LqParams::benchmark(), benchmark_actions()).unwrap())
}

pub fn eot_for(actions: &ActionSpace, kappa: f64) -> Regularizer {
    Regularizer::EntropicOt(EntropicOt::new(actions.squared_distance_cost(), kappa).unwrap())
}

pub fn all_regularizers(actions: &ActionSpace) -> Vec<Regularizer> {
    vec![Regularizer::RelativeEntropy, Regularizer::ChiSquared, eot_for(actions, 0.5)]
}

pub fn lq_problem(n_steps: usize, reg: Regularizer, tau: f64) -> ControlProblem {
    let tree = ScenarioTree::new(1.0, n_steps, 1).unwrap();
    ControlProblem::new(tree, benchmark_model(), reg, tau).unwrap()
}

fn one(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn mean(actions: &ActionSpace, m: &Measure) -> f64 {
    m.weights().iter().zip(actions.points()).map(|(w, a)| w * a[0]).sum()
}

/// `b = 0, σ = 0, f ≡ c, g ≡ 0` on a scalar state.
pub struct ConstantCost {
    pub value: f64,
    pub actions: ActionSpace,
}

impl ModelCoefficients for ConstantCost {
    fn name(&self) -> &str {
        "constant_cost"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn initial_state(&self) -> DVector<f64> {
        DVector::from_element(1, 0.3)
    }
    fn actions(&self) -> &ActionSpace {
        &self.actions
    }
    fn drift(&self, _: f64, _: &DVector<f64>, _: &Measure) -> DVector<f64> {
        DVector::zeros(1)
    }
    fn diffusion(&self, _: f64, _: &DVector<f64>, _: &Measure) -> DMatrix<f64> {
        one(0.0)
    }
    fn running_cost(&self, _: f64, _: &DVector<f64>, _: &Measure) -> f64 {
        self.value
    }
    fn terminal_cost(&self, _: &DVector<f64>) -> f64 {
        0.0
    }
    fn drift_dx(&self, _: f64, _: &DVector<f64>, _: &Measure) -> DMatrix<f64> {
        one(0.0)
    }
    fn diffusion_dx(&self, _: f64, _: &DVector<f64>, _: &Measure) -> Vec<DMatrix<f64>> {
        vec![one(0.0)]
    }
    fn running_cost_dx(&self, _: f64, _: &DVector<f64>, _: &Measure) -> DVector<f64> {
        DVector::zeros(1)
    }
    fn terminal_cost_dx(&self, _: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(1)
    }
    fn drift_dm(&self, _: f64, _: &DVector<f64>, _: &Measure) -> Vec<DVector<f64>> {
        vec![DVector::zeros(1); self.actions.len()]
    }
    fn diffusion_dm(&self, _: f64, _: &DVector<f64>, _: &Measure) -> Vec<DMatrix<f64>> {
        vec![one(0.0); self.actions.len()]
    }
    fn running_cost_dm(&self, _: f64, _: &DVector<f64>, _: &Measure) -> Vec<f64> {
        vec![0.0; self.actions.len()]
    }
    fn drift_dx_dm(&self, _: f64, _: &DVector<f64>, _: &Measure) -> Vec<DMatrix<f64>> {
        vec![one(0.0); self.actions.len()]
    }
    fn diffusion_dx_dm(&self, _: f64, _: &DVector<f64>, _: &Measure) -> Vec<Vec<DMatrix<f64>>> {
        vec![vec![one(0.0)]; self.actions.len()]
    }
    fn running_cost_dx_dm(&self, _: f64, _: &DVector<f64>, _: &Measure) -> Vec<DVector<f64>> {
        vec![DVector::zeros(1); self.actions.len()]
    }
    fn drift_d2m(&self, _: f64, _: &DVector<f64>, _: &Measure, _: &[f64]) -> DVector<f64> {
        DVector::zeros(1)
    }
    fn diffusion_d2m(&self, _: f64, _: &DVector<f64>, _: &Measure, _: &[f64]) -> DMatrix<f64> {
        one(0.0)
    }
    fn running_cost_d2m(&self, _: f64, _: &DVector<f64>, _: &Measure, _: &[f64]) -> f64 {
        0.0
    }
}

/// `b = ā, σ = σ₀ + s ā², f = ½x² + ½∫a², g = ½x²`: a diffusion with a
/// nonzero second measure variation.
pub struct QuadraticSigma {
    pub s: f64,
    pub sigma0: f64,
    pub actions: ActionSpace,
}

impl QuadraticSigma {
    fn centered(&self, m: &Measure) -> Vec<f64> {
        let abar = mean(&self.actions, m);
        self.actions.points().iter().map(|a| a[0] - abar).collect()
    }

    fn costs(&self) -> Vec<f64> {
        self.actions.points().iter().map(|a| 0.5 * a[0] * a[0]).collect()
    }
}

impl ModelCoefficients for QuadraticSigma {
    fn name(&self) -> &str {
        "quadratic_sigma"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn initial_state(&self) -> DVector<f64> {
        DVector::from_element(1, 0.5)
    }
    fn actions(&self) -> &ActionSpace {
        &self.actions
    }
    fn drift(&self, _: f64, _: &DVector<f64>, m: &Measure) -> DVector<f64> {
        DVector::from_element(1, mean(&self.actions, m))
    }
    fn diffusion(&self, _: f64, _: &DVector<f64>, m: &Measure) -> DMatrix<f64> {
        let a = mean(&self.actions, m);
        one(self.sigma0 + self.s * a * a)
    }
    fn running_cost(&self, _: f64, x: &DVector<f64>, m: &Measure) -> f64 {
        0.5 * x[0] * x[0] + m.integrate(&self.costs())
    }
    fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        0.5 * x[0] * x[0]
    }
    fn drift_dx(&self, _: f64, _: &DVector<f64>, _: &Measure) -> DMatrix<f64> {
        one(0.0)
    }
    fn diffusion_dx(&self, _: f64, _: &DVector<f64>, _: &Measure) -> Vec<DMatrix<f64>> {
        vec![one(0.0)]
    }
    fn running_cost_dx(&self, _: f64, x: &DVector<f64>, _: &Measure) -> DVector<f64> {
        x.clone()
    }
    fn terminal_cost_dx(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }
    fn drift_dm(&self, _: f64, _: &DVector<f64>, m: &Measure) -> Vec<DVector<f64>> {
        self.centered(m).iter().map(|c| DVector::from_element(1, *c)).collect()
    }
    fn diffusion_dm(&self, _: f64, _: &DVector<f64>, m: &Measure) -> Vec<DMatrix<f64>> {
        let a = mean(&self.actions, m);
        self.centered(m).iter().map(|c| one(2.0 * self.s * a * c)).collect()
    }
    fn running_cost_dm(&self, _: f64, _: &DVector<f64>, m: &Measure) -> Vec<f64> {
        let costs = self.costs();
        let avg = m.integrate(&costs);
        costs.iter().map(|c| c - avg).collect()
    }
    fn drift_dx_dm(&self, _: f64, _: &DVector<f64>, _: &Measure) -> Vec<DMatrix<f64>> {
        vec![one(0.0); self.actions.len()]
    }
    fn diffusion_dx_dm(&self, _: f64, _: &DVector<f64>, _: &Measure) -> Vec<Vec<DMatrix<f64>>> {
        vec![vec![one(0.0)]; self.actions.len()]
    }
    fn running_cost_dx_dm(&self, _: f64, _: &DVector<f64>, _: &Measure) -> Vec<DVector<f64>> {
        vec![DVector::zeros(1); self.actions.len()]
    }
    fn drift_d2m(&self, _: f64, _: &DVector<f64>, _: &Measure, _: &[f64]) -> DVector<f64> {
        DVector::zeros(1)
    }
    fn diffusion_d2m(&self, _: f64, _: &DVector<f64>, _: &Measure, d: &[f64]) -> DMatrix<f64> {
        let shift: f64 = d.iter().zip(self.actions.points()).map(|(w, a)| w * a[0]).sum();
        one(2.0 * self.s * shift * shift)
    }
    fn running_cost_d2m(&self, _: f64, _: &DVector<f64>, _: &Measure, _: &[f64]) -> f64 {
        0.0
    }
}

pub fn random_field(tree: &ScenarioTree, reference: &[f64], rng: &mut ChaCha8Rng) -> ControlField {
    NodeField::from_fn(tree, tree.n_steps(), |_, _| random_measure(rng, reference, 0.1))
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub fn point_mass(n: usize, i: usize) -> Measure {
    let mut w = vec![0.0; n];
    w[i] = 1.0;
    Measure::new(w, uniform(n)).unwrap()
}
