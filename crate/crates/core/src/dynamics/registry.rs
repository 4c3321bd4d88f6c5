//! Named models beyond the linear-quadratic family.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::ModelCoefficients;
use crate::error::{Error, Result};
use crate::measure::{ActionSpace, Measure};

/// Scalar model with a nonlinear drift, so the Hamiltonian is not convex in `x`:
///
/// ```text
/// b = -α sin(x) + ā(m),   σ = σ₀,   f = ½x² + ½∫a² m(da),   g = ½x².
/// ```
#[derive(Debug, Clone)]
pub struct SineDrift {
    alpha: f64,
    sigma0: f64,
    x0: f64,
    actions: ActionSpace,
    action_cost: Vec<f64>,
}

impl SineDrift {
    pub fn new(alpha: f64, sigma0: f64, x0: f64, actions: ActionSpace) -> Result<Self> {
        if actions.dim() != 1 {
            return Err(Error::InvalidModel("sine_drift needs scalar actions".into()));
        }
        if ![alpha, sigma0, x0].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidModel("sine_drift parameters must be finite".into()));
        }
        let action_cost = actions.points().iter().map(|a| 0.5 * a[0] * a[0]).collect();
        Ok(Self {
            alpha,
            sigma0,
            x0,
            actions,
            action_cost,
        })
    }

    fn mean(&self, m: &Measure) -> f64 {
        m.weights().iter().zip(self.actions.points()).map(|(w, a)| w * a[0]).sum()
    }
}

fn scalar(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

fn scalar_matrix(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

impl ModelCoefficients for SineDrift {
    fn name(&self) -> &str {
        "sine_drift"
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn initial_state(&self) -> DVector<f64> {
        scalar(self.x0)
    }

    fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    fn drift(&self, _t: f64, x: &DVector<f64>, m: &Measure) -> DVector<f64> {
        scalar(-self.alpha * x[0].sin() + self.mean(m))
    }

    fn diffusion(&self, _t: f64, _x: &DVector<f64>, _m: &Measure) -> DMatrix<f64> {
        scalar_matrix(self.sigma0)
    }

    fn running_cost(&self, _t: f64, x: &DVector<f64>, m: &Measure) -> f64 {
        0.5 * x[0] * x[0] + m.integrate(&self.action_cost)
    }

    fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        0.5 * x[0] * x[0]
    }

    fn drift_dx(&self, _t: f64, x: &DVector<f64>, _m: &Measure) -> DMatrix<f64> {
        scalar_matrix(-self.alpha * x[0].cos())
    }

    fn diffusion_dx(&self, _t: f64, _x: &DVector<f64>, _m: &Measure) -> Vec<DMatrix<f64>> {
        vec![scalar_matrix(0.0)]
    }

    fn running_cost_dx(&self, _t: f64, x: &DVector<f64>, _m: &Measure) -> DVector<f64> {
        x.clone()
    }

    fn terminal_cost_dx(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }

    fn drift_dm(&self, _t: f64, _x: &DVector<f64>, m: &Measure) -> Vec<DVector<f64>> {
        let mean = self.mean(m);
        self.actions.points().iter().map(|a| scalar(a[0] - mean)).collect()
    }

    fn diffusion_dm(&self, _t: f64, _x: &DVector<f64>, _m: &Measure) -> Vec<DMatrix<f64>> {
        vec![scalar_matrix(0.0); self.actions.len()]
    }

    fn running_cost_dm(&self, _t: f64, _x: &DVector<f64>, m: &Measure) -> Vec<f64> {
        let mean = m.integrate(&self.action_cost);
        self.action_cost.iter().map(|c| c - mean).collect()
    }

    fn drift_dx_dm(&self, _t: f64, _x: &DVector<f64>, _m: &Measure) -> Vec<DMatrix<f64>> {
        vec![scalar_matrix(0.0); self.actions.len()]
    }

    fn diffusion_dx_dm(&self, _t: f64, _x: &DVector<f64>, _m: &Measure) -> Vec<Vec<DMatrix<f64>>> {
        vec![vec![scalar_matrix(0.0)]; self.actions.len()]
    }

    fn running_cost_dx_dm(&self, _t: f64, _x: &DVector<f64>, _m: &Measure) -> Vec<DVector<f64>> {
        vec![scalar(0.0); self.actions.len()]
    }

    fn drift_d2m(&self, _t: f64, _x: &DVector<f64>, _m: &Measure, _direction: &[f64]) -> DVector<f64> {
        scalar(0.0)
    }

    fn diffusion_d2m(&self, _t: f64, _x: &DVector<f64>, _m: &Measure, _direction: &[f64]) -> DMatrix<f64> {
        scalar_matrix(0.0)
    }

    fn running_cost_d2m(&self, _t: f64, _x: &DVector<f64>, _m: &Measure, _direction: &[f64]) -> f64 {
        0.0
    }
}

const NAMES: &[&str] = &["sine_drift"];

pub fn registry_names() -> &'static [&'static str] {
    NAMES
}

/// Builds a registered model from named scalar parameters. Unknown
/// parameter names are rejected.
pub fn registry_model(
    name: &str,
    actions: ActionSpace,
    params: &BTreeMap<String, f64>,
) -> Result<Arc<dyn ModelCoefficients>> {
    match name {
        "sine_drift" => {
            if let Some(key) = params.keys().find(|k| !["alpha", "sigma0", "x0"].contains(&k.as_str())) {
                return Err(Error::InvalidModel(format!("sine_drift has no parameter {key}")));
            }
            let get = |k: &str, default: f64| params.get(k).copied().unwrap_or(default);
            Ok(Arc::new(SineDrift::new(
                get("alpha", 1.0),
                get("sigma0", 0.3),
                get("x0", 0.5),
                actions,
            )?))
        }
        other => Err(Error::InvalidModel(format!(
            "unknown model {other}; registered models: {}",
            NAMES.join(", ")
        ))),
    }
}
