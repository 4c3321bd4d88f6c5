use super::sinkhorn::sinkhorn_potentials;
use super::Measure;
use crate::error::{Error, Result};

/// Entropic optimal transport cost against the reference measure.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropicOt {
    cost: Vec<Vec<f64>>,
    kappa: f64,
    anchor: usize,
    tolerance: f64,
    max_iterations: usize,
    inner_tolerance: f64,
    inner_max_iterations: usize,
}

impl EntropicOt {
    pub const DEFAULT_TOLERANCE: f64 = 1e-11;
    pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;
    pub const DEFAULT_INNER_TOLERANCE: f64 = 1e-10;
    pub const DEFAULT_INNER_MAX_ITERATIONS: usize = 10_000;

    pub fn new(cost: Vec<Vec<f64>>, kappa: f64) -> Result<Self> {
        let n = cost.len();
        if n == 0 {
            return Err(Error::InvalidRegularizer("empty cost matrix".into()));
        }
        if let Some(i) = cost.iter().position(|row| row.len() != n) {
            return Err(Error::InvalidRegularizer(format!(
                "cost row {i} has length {}, expected {n}",
                cost[i].len()
            )));
        }
        if cost.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidRegularizer("cost matrix must be finite".into()));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidRegularizer(format!("kappa must be positive, got {kappa}")));
        }
        Ok(Self {
            cost,
            kappa,
            anchor: 0,
            tolerance: Self::DEFAULT_TOLERANCE,
            max_iterations: Self::DEFAULT_MAX_ITERATIONS,
            inner_tolerance: Self::DEFAULT_INNER_TOLERANCE,
            inner_max_iterations: Self::DEFAULT_INNER_MAX_ITERATIONS,
        })
    }

    pub fn with_anchor(mut self, anchor: usize) -> Result<Self> {
        if anchor >= self.cost.len() {
            return Err(Error::InvalidRegularizer(format!(
                "anchor {anchor} out of range for {} actions",
                self.cost.len()
            )));
        }
        self.anchor = anchor;
        Ok(self)
    }

    pub fn with_sinkhorn(mut self, tolerance: f64, max_iterations: usize) -> Result<Self> {
        check_budget(tolerance, max_iterations, "sinkhorn")?;
        self.tolerance = tolerance;
        self.max_iterations = max_iterations;
        Ok(self)
    }

    /// Tolerance and cap of the iterative mirror-step solver.
    pub fn with_inner(mut self, tolerance: f64, max_iterations: usize) -> Result<Self> {
        check_budget(tolerance, max_iterations, "inner solver")?;
        self.inner_tolerance = tolerance;
        self.inner_max_iterations = max_iterations;
        Ok(self)
    }

    pub fn cost(&self) -> &[Vec<f64>] {
        &self.cost
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn max_iterations(&self) -> usize {
        self.max_iterations
    }

    pub fn inner_tolerance(&self) -> f64 {
        self.inner_tolerance
    }

    pub fn inner_max_iterations(&self) -> usize {
        self.inner_max_iterations
    }

    /// `h(m)` and the centered `δh/δm(m, ·)` from a single Sinkhorn solve.
    ///
    /// The value is the dual objective `∫φ dm + ∫ψ dϱ`. Since the returned
    /// `φ` solves its half of the fixed point exactly, this is a lower bound on
    /// the transport cost whose error is quadratic in the Sinkhorn residual.
    pub fn evaluate(&self, m: &Measure) -> Result<(f64, Vec<f64>)> {
        let pot = sinkhorn_potentials(self, m)?;
        let value = pot.dual_value(m);
        let mean = m.integrate(&pot.phi);
        let derivative = pot.phi.iter().map(|p| p - mean).collect();
        Ok((value, derivative))
    }
}

fn check_budget(tolerance: f64, max_iterations: usize, what: &str) -> Result<()> {
    if !(tolerance > 0.0 && tolerance.is_finite()) {
        return Err(Error::InvalidRegularizer(format!("{what} tolerance must be positive")));
    }
    if max_iterations == 0 {
        return Err(Error::InvalidRegularizer(format!("{what} needs at least one iteration")));
    }
    Ok(())
}

/// The convex functional `h` on measures that defines the mirror geometry.
#[derive(Debug, Clone, PartialEq)]
pub enum Regularizer {
    /// `h(m) = KL(m | ϱ)`.
    RelativeEntropy,
    /// `h(m) = ½ ∫ (dm/dϱ - 1)² dϱ`.
    ChiSquared,
    EntropicOt(EntropicOt),
    /// Nonnegative combination `Σ α_k h_k`. Only values, derivatives and
    /// divergences are available; there is no mirror step for it.
    Sum(Vec<(f64, Regularizer)>),
}

impl Regularizer {
    pub fn name(&self) -> &'static str {
        match self {
            Regularizer::RelativeEntropy => "relative_entropy",
            Regularizer::ChiSquared => "chi_squared",
            Regularizer::EntropicOt(_) => "entropic_ot",
            Regularizer::Sum(_) => "sum",
        }
    }

    /// Checks that the regularizer can act on measures with `n` atoms.
    pub fn check_size(&self, n: usize) -> Result<()> {
        match self {
            Regularizer::EntropicOt(eot) if eot.cost().len() != n => Err(Error::DimensionMismatch {
                expected: eot.cost().len(),
                found: n,
            }),
            Regularizer::Sum(parts) => parts.iter().try_for_each(|(_, r)| r.check_size(n)),
            _ => Ok(()),
        }
    }

    pub fn value(&self, m: &Measure) -> Result<f64> {
        match self {
            Regularizer::RelativeEntropy => Ok(m
                .weights()
                .iter()
                .zip(m.reference())
                .filter(|(w, _)| **w > 0.0)
                .map(|(w, r)| w * (w / r).ln())
                .sum()),
            Regularizer::ChiSquared => Ok(0.5
                * m.density()
                    .iter()
                    .zip(m.reference())
                    .map(|(u, r)| r * (u - 1.0) * (u - 1.0))
                    .sum::<f64>()),
            Regularizer::EntropicOt(eot) => Ok(eot.evaluate(m)?.0),
            Regularizer::Sum(parts) => {
                let mut total = 0.0;
                for (alpha, reg) in parts {
                    total += alpha * reg.value(m)?;
                }
                Ok(total)
            }
        }
    }

    /// Centered flat derivative `δh/δm(m, a_i)`, one entry per action.
    pub fn flat_derivative(&self, m: &Measure) -> Result<Vec<f64>> {
        Ok(self.evaluate(m)?.1)
    }

    /// Value and centered flat derivative together.
    pub fn evaluate(&self, m: &Measure) -> Result<(f64, Vec<f64>)> {
        match self {
            Regularizer::RelativeEntropy => {
                if let Some(index) = m.first_zero_atom() {
                    return Err(Error::ZeroAtomInKL { index });
                }
                let logs: Vec<f64> = m.density().iter().map(|u| u.ln()).collect();
                let value = m.integrate(&logs);
                Ok((value, logs.iter().map(|l| l - value).collect()))
            }
            Regularizer::ChiSquared => {
                let u = m.density();
                let mean = m.integrate(&u);
                Ok((self.value(m)?, u.iter().map(|x| x - mean).collect()))
            }
            Regularizer::EntropicOt(eot) => eot.evaluate(m),
            Regularizer::Sum(parts) => {
                let mut value = 0.0;
                let mut derivative = vec![0.0; m.len()];
                for (alpha, reg) in parts {
                    let (v, d) = reg.evaluate(m)?;
                    value += alpha * v;
                    derivative.iter_mut().zip(&d).for_each(|(acc, x)| *acc += alpha * x);
                }
                Ok((value, derivative))
            }
        }
    }

    /// `D_h(m' | m)`, via the closed forms where they exist.
    pub fn bregman(&self, m_prime: &Measure, m: &Measure) -> Result<f64> {
        m.same_support_shape(m_prime)?;
        match self {
            Regularizer::RelativeEntropy => {
                if let Some(index) = m.first_zero_atom() {
                    return Err(Error::ZeroAtomInKL { index });
                }
                Ok(m_prime
                    .weights()
                    .iter()
                    .zip(m.weights())
                    .filter(|(p, _)| **p > 0.0)
                    .map(|(p, q)| p * (p / q).ln())
                    .sum())
            }
            Regularizer::ChiSquared => Ok(0.5
                * m_prime
                    .density()
                    .iter()
                    .zip(m.density())
                    .zip(m.reference())
                    .map(|((up, u), r)| r * (up - u) * (up - u))
                    .sum::<f64>()),
            Regularizer::EntropicOt(_) => self.bregman_from_definition(m_prime, m),
            Regularizer::Sum(parts) => {
                let mut total = 0.0;
                for (alpha, reg) in parts {
                    total += alpha * reg.bregman(m_prime, m)?;
                }
                Ok(total)
            }
        }
    }

    /// `h(m') - h(m) - ∫ δh/δm(m, a) (m' - m)(da)`, evaluated literally.
    pub fn bregman_from_definition(&self, m_prime: &Measure, m: &Measure) -> Result<f64> {
        m.same_support_shape(m_prime)?;
        let (h, dh) = self.evaluate(m)?;
        let h_prime = self.value(m_prime)?;
        let linear: f64 = dh.iter().zip(m.difference(m_prime)).map(|(d, x)| d * x).sum();
        Ok(h_prime - h - linear)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half() -> Vec<f64> {
        vec![0.5, 0.5]
    }

    #[test]
    fn chi_squared_examples() {
        let reg = Regularizer::ChiSquared;
        let point = Measure::new(vec![1.0, 0.0], half()).unwrap();
        assert!((reg.value(&point).unwrap() - 0.5).abs() < 1e-15);

        let m = Measure::new(vec![0.75, 0.25], half()).unwrap();
        let d = reg.flat_derivative(&m).unwrap();
        // densities (1.5, 0.5), mean under m is 1.25
        assert!((d[0] - 0.25).abs() < 1e-15 && (d[1] + 0.75).abs() < 1e-15);

        let other = Measure::new(vec![0.0, 1.0], half()).unwrap();
        assert!((reg.bregman(&point, &other).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn kl_example_and_zero_atoms() {
        let reg = Regularizer::RelativeEntropy;
        let a = Measure::new(vec![0.5, 0.5], half()).unwrap();
        let b = Measure::new(vec![0.25, 0.75], half()).unwrap();
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((reg.bregman(&a, &b).unwrap() - expected).abs() < 1e-15);

        let edge = Measure::new(vec![1.0, 0.0], half()).unwrap();
        assert!((reg.value(&edge).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(reg.flat_derivative(&edge), Err(Error::ZeroAtomInKL { index: 1 }));
        assert!(reg.bregman(&edge, &a).is_ok());
        assert!(reg.bregman(&a, &edge).is_err());
    }

    #[test]
    fn closed_forms_match_definition() {
        let r = vec![0.2, 0.3, 0.5];
        let m = Measure::new(vec![0.1, 0.6, 0.3], r.clone()).unwrap();
        let mp = Measure::new(vec![0.5, 0.2, 0.3], r).unwrap();
        for reg in [Regularizer::RelativeEntropy, Regularizer::ChiSquared] {
            let closed = reg.bregman(&mp, &m).unwrap();
            let literal = reg.bregman_from_definition(&mp, &m).unwrap();
            assert!((closed - literal).abs() < 1e-14, "{}", reg.name());
        }
    }

    #[test]
    fn entropic_ot_zero_cost_is_flat() {
        let reg = Regularizer::EntropicOt(EntropicOt::new(vec![vec![0.0; 3]; 3], 1.0).unwrap());
        let m = Measure::new(vec![0.2, 0.5, 0.3], vec![1.0 / 3.0; 3]).unwrap();
        let (v, d) = reg.evaluate(&m).unwrap();
        assert!(v.abs() < 1e-14);
        assert!(d.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn rejects_bad_eot_parameters() {
        assert!(EntropicOt::new(vec![], 1.0).is_err());
        assert!(EntropicOt::new(vec![vec![0.0, 1.0]], 1.0).is_err());
        assert!(EntropicOt::new(vec![vec![0.0]], 0.0).is_err());
        assert!(EntropicOt::new(vec![vec![f64::NAN]], 1.0).is_err());
        let ok = EntropicOt::new(vec![vec![0.0]], 1.0).unwrap();
        assert!(ok.clone().with_anchor(1).is_err());
        assert!(ok.clone().with_sinkhorn(0.0, 10).is_err());
        assert!(ok.with_inner(1e-8, 0).is_err());
    }
}
