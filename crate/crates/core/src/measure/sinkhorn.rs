//! Log-domain Sinkhorn iteration for the Schrödinger potentials of the
//! entropic transport cost between a measure `m` and the reference `ϱ`.
//!
//! The pair `(φ, ψ)` solves
//!
//! ```text
//! φ(a)  = -κ ln Σ_a' exp((ψ(a') - c(a, a')) / κ) ϱ(a')
//! ψ(a') = -κ ln Σ_a  exp((φ(a)  - c(a, a')) / κ) m(a)
//! ```
//!
//! and is normalised by `φ(a_0) = 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{EntropicOt, Measure};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkhornResult {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm residual of both fixed-point equations at return.
    pub residual: f64,
}

/// Streaming log-sum-exp; `-inf` terms contribute nothing.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut max = f64::NEG_INFINITY;
    let mut acc = 0.0;
    for x in terms {
        if x == f64::NEG_INFINITY {
            continue;
        }
        if x > max {
            acc = acc * (max - x).exp() + 1.0;
            max = x;
        } else {
            acc += (x - max).exp();
        }
    }
    if max == f64::NEG_INFINITY {
        max
    } else {
        max + acc.ln()
    }
}

/// `φ = T_ϱ(ψ)`.
fn phi_update(eot: &EntropicOt, log_ref: &[f64], psi: &[f64], out: &mut [f64]) {
    let kappa = eot.kappa();
    let cost = eot.cost();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &cost[i];
        *o = -kappa
            * log_sum_exp(
                psi.iter()
                    .zip(row)
                    .zip(log_ref)
                    .map(|((p, c), lr)| (p - c) / kappa + lr),
            );
    }
}

/// `ψ = T_m(φ)`; atoms with zero mass drop out of the sum.
fn psi_update(eot: &EntropicOt, log_m: &[f64], phi: &[f64], out: &mut [f64]) {
    let kappa = eot.kappa();
    let cost = eot.cost();
    for (j, o) in out.iter_mut().enumerate() {
        *o = -kappa
            * log_sum_exp(
                phi.iter()
                    .zip(log_m)
                    .enumerate()
                    .map(|(i, (p, lm))| (p - cost[i][j]) / kappa + lm),
            );
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sup-norm residual of both Schrödinger equations for a candidate pair.
pub(crate) fn fixed_point_residual(eot: &EntropicOt, m: &Measure, phi: &[f64], psi: &[f64]) -> f64 {
    let n = phi.len();
    let log_ref: Vec<f64> = m.reference().iter().map(|r| r.ln()).collect();
    let log_m: Vec<f64> = m.weights().iter().map(|w| w.ln()).collect();
    let mut phi_img = vec![0.0; n];
    let mut psi_img = vec![0.0; n];
    phi_update(eot, &log_ref, psi, &mut phi_img);
    psi_update(eot, &log_m, phi, &mut psi_img);
    sup_diff(&phi_img, phi).max(sup_diff(&psi_img, psi))
}

/// Sweeps before the Newton phase takes over.
const NEWTON_AFTER: usize = 50;

/// Damped Newton step on the semi-dual `S(ψ) = ∫ T_ϱ(ψ) dm + ∫ ψ dϱ`, which is
/// concave and maximized at the fixed point. Expects `phi = T_ϱ(psi)`. A step
/// is taken only if it lowers the ψ-residual; returns the new residual.
fn newton_step(
    eot: &EntropicOt,
    log_ref: &[f64],
    log_m: &[f64],
    psi: &mut [f64],
    phi: &[f64],
    residual: f64,
) -> Option<f64> {
    let n = psi.len();
    let kappa = eot.kappa();
    let cost = eot.cost();
    // Row-stochastic conditional P(a' | a), rows with zero mass skipped.
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::from_iterator(n, log_ref.iter().map(|l| l.exp()));
    for i in 0..n {
        if log_m[i] == f64::NEG_INFINITY {
            continue;
        }
        let mi = log_m[i].exp();
        let row: Vec<f64> = (0..n)
            .map(|j| ((phi[i] + psi[j] - cost[i][j]) / kappa + log_ref[j]).exp())
            .collect();
        for j in 0..n {
            rhs[j] -= mi * row[j];
            a[(j, j)] += mi * row[j];
            for l in 0..n {
                a[(j, l)] -= mi * row[j] * row[l];
            }
        }
    }
    // Constants span the kernel; the gauge term pins the shift.
    let gauge = (0..n).map(|j| a[(j, j)]).fold(0.0, f64::max) / n as f64;
    a.add_scalar_mut(gauge);
    let d = a.lu().solve(&(rhs * kappa))?;
    if d.iter().any(|x| !x.is_finite()) {
        return None;
    }

    let mut t = 1.0;
    let mut trial_phi = vec![0.0; n];
    let mut trial_next = vec![0.0; n];
    for _ in 0..30 {
        let trial: Vec<f64> = psi.iter().zip(d.iter()).map(|(p, x)| p + t * x).collect();
        phi_update(eot, log_ref, &trial, &mut trial_phi);
        psi_update(eot, log_m, &trial_phi, &mut trial_next);
        let r = sup_diff(&trial_next, &trial);
        if r < residual {
            psi.copy_from_slice(&trial);
            return Some(r);
        }
        t *= 0.5;
    }
    None
}

/// Alternating log-domain updates until both fixed-point equations hold to
/// `eot.tolerance()` in sup norm.
///
/// Undamped by default. If the residual grows for three consecutive sweeps
/// the ψ-update switches to a 0.5 relaxation. Sweeps slow down badly for
/// small `κ` on measures with empty atoms, so after [`NEWTON_AFTER`] sweeps
/// each iteration tries a Newton step first and sweeps only if it fails.
pub fn sinkhorn_potentials(eot: &EntropicOt, m: &Measure) -> Result<SinkhornResult> {
    sinkhorn_warm(eot, m, None)
}

/// As [`sinkhorn_potentials`], optionally starting from a previous `ψ`.
pub(crate) fn sinkhorn_warm(eot: &EntropicOt, m: &Measure, psi_start: Option<&[f64]>) -> Result<SinkhornResult> {
    let n = m.len();
    if eot.cost().len() != n {
        return Err(Error::DimensionMismatch {
            expected: eot.cost().len(),
            found: n,
        });
    }
    let log_ref: Vec<f64> = m.reference().iter().map(|r| r.ln()).collect();
    let log_m: Vec<f64> = m.weights().iter().map(|w| w.ln()).collect();

    let mut phi = vec![0.0; n];
    let mut psi = vec![0.0; n];
    let mut psi_next = vec![0.0; n];
    match psi_start {
        Some(start) if start.len() == n => psi.copy_from_slice(start),
        _ => psi_update(eot, &log_m, &phi, &mut psi),
    }

    let mut damping = 1.0;
    let mut previous = f64::INFINITY;
    let mut growth_streak = 0;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < eot.max_iterations() {
        iterations += 1;
        phi_update(eot, &log_ref, &psi, &mut phi);
        psi_update(eot, &log_m, &phi, &mut psi_next);
        // φ = T(ψ) holds exactly here, so the ψ-equation carries the residual.
        residual = sup_diff(&psi_next, &psi);
        if residual <= eot.tolerance() {
            // The potentials are only within about residual / (1 - rate) of
            // the fixed point, so a slowly contracting run gets polished.
            if residual > 0.5 * previous.min(f64::MAX) || iterations > NEWTON_AFTER {
                for _ in 0..3 {
                    match newton_step(eot, &log_ref, &log_m, &mut psi, &phi, residual) {
                        Some(r) => {
                            residual = r;
                            phi_update(eot, &log_ref, &psi, &mut phi);
                        }
                        None => break,
                    }
                }
            }
            break;
        }
        if iterations > NEWTON_AFTER && newton_step(eot, &log_ref, &log_m, &mut psi, &phi, residual).is_some() {
            continue;
        }
        if residual > previous {
            growth_streak += 1;
            if growth_streak >= 3 {
                damping = 0.5;
            }
        } else {
            growth_streak = 0;
        }
        previous = residual;
        for (p, q) in psi.iter_mut().zip(&psi_next) {
            *p += damping * (q - *p);
        }
    }
    // Also catches a NaN residual.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(residual <= eot.tolerance()) {
        return Err(Error::SinkhornDiverged {
            iterations,
            residual,
        });
    }

    let shift = phi[eot.anchor()];
    phi.iter_mut().for_each(|p| *p -= shift);
    psi.iter_mut().for_each(|p| *p += shift);
    phi[eot.anchor()] = 0.0;
    let residual = fixed_point_residual(eot, m, &phi, &psi);
    Ok(SinkhornResult {
        phi,
        psi,
        iterations,
        residual,
    })
}

impl SinkhornResult {
    /// Entropic coupling `γ(a, a') = exp((φ(a) + ψ(a') - c(a, a')) / κ) m(a) ϱ(a')`.
    pub fn coupling(&self, eot: &EntropicOt, m: &Measure) -> Vec<Vec<f64>> {
        let kappa = eot.kappa();
        let cost = eot.cost();
        m.weights()
            .iter()
            .enumerate()
            .map(|(i, &mi)| {
                m.reference()
                    .iter()
                    .enumerate()
                    .map(|(j, &rj)| {
                        if mi == 0.0 {
                            0.0
                        } else {
                            ((self.phi[i] + self.psi[j] - cost[i][j]) / kappa).exp() * mi * rj
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Dual value `∫φ dm + ∫ψ dϱ`, equal to the transport cost at the fixed point.
    pub fn dual_value(&self, m: &Measure) -> f64 {
        m.integrate(&self.phi)
            + m.reference()
                .iter()
                .zip(&self.psi)
                .map(|(r, p)| r * p)
                .sum::<f64>()
    }

    /// Primal objective `∫c dγ + κ KL(γ | m ⊗ ϱ)` of the induced coupling.
    pub fn primal_value(&self, eot: &EntropicOt, m: &Measure) -> f64 {
        let gamma = self.coupling(eot, m);
        let mut total = 0.0;
        for (i, row) in gamma.iter().enumerate() {
            for (j, &g) in row.iter().enumerate() {
                if g > 0.0 {
                    let log_ratio = (self.phi[i] + self.psi[j] - eot.cost()[i][j]) / eot.kappa();
                    total += g * (eot.cost()[i][j] + eot.kappa() * log_ratio);
                }
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_naive() {
        let xs = [0.1, -2.0, 3.5, 1.0];
        let naive = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(xs) - naive).abs() < 1e-14);
        assert_eq!(log_sum_exp([f64::NEG_INFINITY, 0.0]), 0.0);
        assert_eq!(log_sum_exp(std::iter::empty()), f64::NEG_INFINITY);
        // no overflow
        assert!((log_sum_exp([1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn zero_cost_gives_zero_potentials() {
        let eot = EntropicOt::new(vec![vec![0.0; 3]; 3], 0.7).unwrap();
        let m = Measure::new(vec![0.2, 0.0, 0.8], vec![0.5, 0.25, 0.25]).unwrap();
        let res = sinkhorn_potentials(&eot, &m).unwrap();
        for v in res.phi.iter().chain(&res.psi) {
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn anchor_is_exactly_zero() {
        let cost = vec![vec![0.0, 1.0, 4.0], vec![1.0, 0.0, 1.0], vec![4.0, 1.0, 0.0]];
        let eot = EntropicOt::new(cost, 0.3).unwrap().with_anchor(2).unwrap();
        let m = Measure::new(vec![0.1, 0.3, 0.6], vec![1.0 / 3.0; 3]).unwrap();
        let res = sinkhorn_potentials(&eot, &m).unwrap();
        assert_eq!(res.phi[2], 0.0);
        assert!(res.residual <= eot.tolerance() * 10.0);
        assert!((res.dual_value(&m) - res.primal_value(&eot, &m)).abs() < 1e-9);
    }

    #[test]
    fn iteration_cap_reports_divergence() {
        let cost = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let eot = EntropicOt::new(cost, 0.01)
            .unwrap()
            .with_sinkhorn(1e-15, 1)
            .unwrap();
        let m = Measure::new(vec![0.9, 0.1], vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            sinkhorn_potentials(&eot, &m),
            Err(Error::SinkhornDiverged { .. })
        ));
    }
}
