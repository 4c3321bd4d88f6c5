use nalgebra::{DMatrix, DVector};

use super::ModelCoefficients;
use crate::error::{Error, Result};
use crate::measure::{ActionSpace, Measure};

/// Parameters of the linear-quadratic benchmark
///
/// ```text
/// b = βx + B ā(m),   σ = σ₀ + Σ_l S_l ā_l(m),
/// f = ½ xᵀQx + ½ ∫ aᵀRa m(da),   g = ½ xᵀGx,
/// ```
///
/// where `ā(m) = ∫ a m(da)`. With no `S_l` the diffusion is uncontrolled.
#[derive(Debug, Clone, PartialEq)]
pub struct LqParams {
    pub beta: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub sigma0: DMatrix<f64>,
    /// One `d × d'` gain per action coordinate, or empty.
    pub sigma_gain: Vec<DMatrix<f64>>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub x0: DVector<f64>,
}

impl LqParams {
    /// Scalar instance (`d = d' = k = 1`).
    pub fn scalar(beta: f64, b: f64, sigma0: f64, q: f64, r: f64, g: f64, x0: f64) -> Self {
        let one = |v| DMatrix::from_element(1, 1, v);
        Self {
            beta: one(beta),
            b: one(b),
            sigma0: one(sigma0),
            sigma_gain: Vec::new(),
            q: one(q),
            r: one(r),
            g: one(g),
            x0: DVector::from_element(1, x0),
        }
    }

    /// The benchmark used throughout the test suite: `β = 0.1, B = 1,
    /// σ₀ = 0.3, Q = R = G = 1, x₀ = 0.5`.
    pub fn benchmark() -> Self {
        Self::scalar(0.1, 1.0, 0.3, 1.0, 1.0, 1.0, 0.5)
    }
}

#[derive(Debug, Clone)]
pub struct LqModel {
    params: LqParams,
    actions: ActionSpace,
    name: String,
    /// `½ aᵀRa` per action.
    action_cost: Vec<f64>,
}

impl LqModel {
    /// Validates shapes and symmetry. Definiteness of `Q, R, G` is not
    /// enforced here so that nonconvex instances can be built on purpose;
    /// `assumption_audit` reports it.
    pub fn new(params: LqParams, actions: ActionSpace) -> Result<Self> {
        let d = params.x0.len();
        let k = actions.dim();
        let dp = params.sigma0.ncols();
        let shape = |m: &DMatrix<f64>, rows, cols, what: &str| -> Result<()> {
            if m.nrows() != rows || m.ncols() != cols {
                return Err(Error::InvalidModel(format!(
                    "{what} is {}x{}, expected {rows}x{cols}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("{what} is not finite")));
            }
            Ok(())
        };
        if d == 0 || dp == 0 {
            return Err(Error::InvalidModel("state and noise dimensions must be positive".into()));
        }
        shape(&params.beta, d, d, "beta")?;
        shape(&params.b, d, k, "b")?;
        shape(&params.sigma0, d, dp, "sigma0")?;
        shape(&params.q, d, d, "q")?;
        shape(&params.r, k, k, "r")?;
        shape(&params.g, d, d, "g")?;
        if params.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("x0 is not finite".into()));
        }
        if !params.sigma_gain.is_empty() && params.sigma_gain.len() != k {
            return Err(Error::InvalidModel(format!(
                "sigma_gain needs one matrix per action coordinate ({k}), got {}",
                params.sigma_gain.len()
            )));
        }
        for (l, s) in params.sigma_gain.iter().enumerate() {
            shape(s, d, dp, &format!("sigma_gain[{l}]"))?;
        }
        for (m, what) in [(&params.q, "q"), (&params.r, "r"), (&params.g, "g")] {
            if (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
                return Err(Error::InvalidModel(format!("{what} must be symmetric")));
            }
        }
        let action_cost = actions
            .points()
            .iter()
            .map(|a| {
                let a = DVector::from_column_slice(a);
                0.5 * (a.transpose() * &params.r * &a)[(0, 0)]
            })
            .collect();
        let name = if params.sigma_gain.is_empty() { "lq" } else { "lq_controlled_sigma" };
        Ok(Self {
            params,
            actions,
            name: name.to_string(),
            action_cost,
        })
    }

    pub fn params(&self) -> &LqParams {
        &self.params
    }

    fn mean_action(&self, m: &Measure) -> DVector<f64> {
        let mut mean = DVector::zeros(self.actions.dim());
        for (w, a) in m.weights().iter().zip(self.actions.points()) {
            mean += DVector::from_column_slice(a) * *w;
        }
        mean
    }

    /// `a_i - ā(m)` for each action.
    fn centered_actions(&self, m: &Measure) -> Vec<DVector<f64>> {
        let mean = self.mean_action(m);
        self.actions
            .points()
            .iter()
            .map(|a| DVector::from_column_slice(a) - &mean)
            .collect()
    }

    fn sigma_of(&self, mean: &DVector<f64>) -> DMatrix<f64> {
        let mut sigma = self.params.sigma0.clone();
        for (s, a) in self.params.sigma_gain.iter().zip(mean.iter()) {
            sigma += s * *a;
        }
        sigma
    }

    fn zeros_dd(&self) -> DMatrix<f64> {
        let d = self.state_dim();
        DMatrix::zeros(d, d)
    }

    fn zeros_sigma(&self) -> DMatrix<f64> {
        DMatrix::zeros(self.state_dim(), self.noise_dim())
    }
}

impl ModelCoefficients for LqModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn state_dim(&self) -> usize {
        self.params.x0.len()
    }

    fn noise_dim(&self) -> usize {
        self.params.sigma0.ncols()
    }

    fn initial_state(&self) -> DVector<f64> {
        self.params.x0.clone()
    }

    fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    fn drift(&self, _t: f64, x: &DVector<f64>, m: &Measure) -> DVector<f64> {
        &self.params.beta * x + &self.params.b * self.mean_action(m)
    }

    fn diffusion(&self, _t: f64, _x: &DVector<f64>, m: &Measure) -> DMatrix<f64> {
        self.sigma_of(&self.mean_action(m))
    }

    fn running_cost(&self, _t: f64, x: &DVector<f64>, m: &Measure) -> f64 {
        0.5 * x.dot(&(&self.params.q * x)) + m.integrate(&self.action_cost)
    }

    fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.params.g * x))
    }

    fn drift_dx(&self, _t: f64, _x: &DVector<f64>, _m: &Measure) -> DMatrix<f64> {
        self.params.beta.clone()
    }

    fn diffusion_dx(&self, _t: f64, _x: &DVector<f64>, _m: &Measure) -> Vec<DMatrix<f64>> {
        vec![self.zeros_sigma(); self.state_dim()]
    }

    fn running_cost_dx(&self, _t: f64, x: &DVector<f64>, _m: &Measure) -> DVector<f64> {
        &self.params.q * x
    }

    fn terminal_cost_dx(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.params.g * x
    }

    fn drift_dm(&self, _t: f64, _x: &DVector<f64>, m: &Measure) -> Vec<DVector<f64>> {
        self.centered_actions(m).iter().map(|c| &self.params.b * c).collect()
    }

    fn diffusion_dm(&self, _t: f64, _x: &DVector<f64>, m: &Measure) -> Vec<DMatrix<f64>> {
        self.centered_actions(m)
            .iter()
            .map(|c| {
                let mut out = self.zeros_sigma();
                for (s, v) in self.params.sigma_gain.iter().zip(c.iter()) {
                    out += s * *v;
                }
                out
            })
            .collect()
    }

    fn running_cost_dm(&self, _t: f64, _x: &DVector<f64>, m: &Measure) -> Vec<f64> {
        let mean = m.integrate(&self.action_cost);
        self.action_cost.iter().map(|c| c - mean).collect()
    }

    fn drift_dx_dm(&self, _t: f64, _x: &DVector<f64>, _m: &Measure) -> Vec<DMatrix<f64>> {
        vec![self.zeros_dd(); self.actions.len()]
    }

    fn diffusion_dx_dm(&self, _t: f64, _x: &DVector<f64>, _m: &Measure) -> Vec<Vec<DMatrix<f64>>> {
        vec![vec![self.zeros_sigma(); self.state_dim()]; self.actions.len()]
    }

    fn running_cost_dx_dm(&self, _t: f64, _x: &DVector<f64>, _m: &Measure) -> Vec<DVector<f64>> {
        vec![DVector::zeros(self.state_dim()); self.actions.len()]
    }

    // Every coefficient is affine in m, so all second variations vanish.
    fn drift_d2m(&self, _t: f64, _x: &DVector<f64>, _m: &Measure, _direction: &[f64]) -> DVector<f64> {
        DVector::zeros(self.state_dim())
    }

    fn diffusion_d2m(&self, _t: f64, _x: &DVector<f64>, _m: &Measure, _direction: &[f64]) -> DMatrix<f64> {
        self.zeros_sigma()
    }

    fn running_cost_d2m(&self, _t: f64, _x: &DVector<f64>, _m: &Measure, _direction: &[f64]) -> f64 {
        0.0
    }
}
