//! Mirror steps `argmin_m ⟨grad, m - prior⟩ + λ D_h(m | prior)` over the
//! simplex, and the optimality checks that go with them.

use super::regularizer::{EntropicOt, Regularizer};
use nalgebra::{DMatrix, DVector};

use super::sinkhorn::log_sum_exp;
use super::Measure;
use crate::error::{Error, Result};

/// Mirror step from `prior` along `grad` with step parameter `lambda`.
pub fn mirror_step(reg: &Regularizer, prior: &Measure, grad: &[f64], lambda: f64) -> Result<Measure> {
    check_inputs(prior, grad, lambda)?;
    match reg {
        Regularizer::RelativeEntropy => {
            if let Some(index) = prior.first_zero_atom() {
                return Err(Error::ZeroAtomInKL { index });
            }
            let logits: Vec<f64> = prior
                .weights()
                .iter()
                .zip(grad)
                .map(|(w, g)| w.ln() - g / lambda)
                .collect();
            Ok(prior.renormalized(softmax(&logits)))
        }
        Regularizer::ChiSquared => {
            let v: Vec<f64> = prior
                .density()
                .iter()
                .zip(grad)
                .map(|(u, g)| u - g / lambda)
                .collect();
            let u = project_density(prior.reference(), &v);
            let w = u.iter().zip(prior.reference()).map(|(u, r)| u * r).collect();
            Ok(prior.renormalized(w))
        }
        Regularizer::EntropicOt(eot) => {
            let (_, dh) = eot.evaluate(prior)?;
            let g: Vec<f64> = grad.iter().zip(&dh).map(|(g, d)| g - lambda * d).collect();
            let start = if prior.first_zero_atom().is_some() {
                prior.mix(&prior.as_reference(), 0.5)
            } else {
                prior.clone()
            };
            entropic_minimize(eot, &start, &g, lambda)
        }
        Regularizer::Sum(_) => Err(Error::UnsupportedProx("a sum of regularizers")),
    }
}

/// `argmin_m ⟨ell, m⟩ + weight · h(m)` for `m` against the given reference.
pub fn minimize_linear_plus_h(
    reg: &Regularizer,
    reference: &[f64],
    ell: &[f64],
    weight: f64,
) -> Result<Measure> {
    let base = Measure::reference_measure(reference.to_vec())?;
    match reg {
        // For both of these D_h(m | ϱ) = h(m).
        Regularizer::RelativeEntropy | Regularizer::ChiSquared => mirror_step(reg, &base, ell, weight),
        Regularizer::EntropicOt(eot) => {
            check_inputs(&base, ell, weight)?;
            entropic_minimize(eot, &base, ell, weight)
        }
        Regularizer::Sum(_) => Err(Error::UnsupportedProx("a sum of regularizers")),
    }
}

fn check_inputs(prior: &Measure, grad: &[f64], lambda: f64) -> Result<()> {
    if grad.len() != prior.len() {
        return Err(Error::DimensionMismatch {
            expected: prior.len(),
            found: grad.len(),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidConfig("mirror step gradient is not finite".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("step parameter must be positive, got {lambda}")));
    }
    Ok(())
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let norm = log_sum_exp(logits.iter().copied());
    logits.iter().map(|l| (l - norm).exp()).collect()
}

/// Weighted projection of a density onto `{u ≥ 0, Σ ϱ_i u_i = 1}`:
/// `u_i = max(v_i - θ, 0)` with `θ` found by sorting.
pub fn project_density(reference: &[f64], v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    // descending in v, ties broken by index
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    let mut weighted = 0.0;
    let mut theta = f64::NEG_INFINITY;
    for &i in &order {
        let next_mass = mass + reference[i];
        let next_weighted = weighted + reference[i] * v[i];
        let candidate = (next_weighted - 1.0) / next_mass;
        if v[i] > candidate || theta == f64::NEG_INFINITY {
            mass = next_mass;
            weighted = next_weighted;
            theta = candidate;
        } else {
            break;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

const POLISH_STEPS: usize = 3;
const STALL_STEPS: usize = 50;

/// Minimizes `⟨g, q⟩ + s · h(q)` for the entropic transport cost.
///
/// Minimizing jointly over `q` and the coupling reduces the problem to
///
/// ```text
/// min_q  G(q) = -Σ_j ϱ_j ln (Kᵀq)_j,   K_ij = exp(-(g_i / s + c_ij) / κ)
/// ```
///
/// over the simplex (up to the factor `sκ`), whose optimality condition is
/// `r_i = Σ_j ϱ_j K_ij / (Kᵀq)_j ≤ 1` with equality on the support. `G` is
/// smooth and convex with an explicit Hessian, so we run an active-set Newton
/// method on it. The result is certified against the variational inequality
/// with freshly computed Schrödinger potentials.
fn entropic_minimize(eot: &EntropicOt, start: &Measure, g: &[f64], s: f64) -> Result<Measure> {
    let n = start.len();
    if eot.cost().len() != n {
        return Err(Error::DimensionMismatch {
            expected: eot.cost().len(),
            found: n,
        });
    }
    let scale = s * eot.kappa();
    let tolerance = eot.inner_tolerance() * s.max(1.0);
    let log_ref: Vec<f64> = start.reference().iter().map(|r| r.ln()).collect();
    let mut log_k: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| -(g[i] / s + eot.cost()[i][j]) / eot.kappa()).collect())
        .collect();
    // Column shifts change G by a constant and leave r untouched.
    let tops: Vec<f64> = (0..n)
        .map(|j| log_k.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    for row in &mut log_k {
        row.iter_mut().zip(&tops).for_each(|(v, top)| *v -= top);
    }
    let problem = MixtureProblem { log_ref, log_k };

    let mut q = start.weights().to_vec();
    // Near rounding the line search accepts flat steps that can drift away
    // from the optimum, so the best iterate is kept.
    let mut best_q = q.clone();
    let mut best_residual = f64::INFINITY;
    let mut stalled = 0;
    let mut polish = 0;
    for _ in 0..eot.inner_max_iterations() {
        let state = problem.state(&q);
        let log_r = &state.log_r;
        let mean: f64 = q.iter().zip(log_r).filter(|(w, _)| **w > 0.0).map(|(w, l)| w * l).sum();
        let (best, best_log_r) = log_r
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
        let residual = scale * (best_log_r - mean);
        if residual < best_residual {
            best_residual = residual;
            best_q.clone_from(&q);
            stalled = 0;
        } else {
            stalled += 1;
            if stalled > STALL_STEPS {
                break;
            }
        }
        // The mixture residual can understate the VI residual by orders of
        // magnitude when G is flat, so take a few Newton steps past it.
        if best_residual <= tolerance * 1e-2 {
            polish += 1;
            if polish > POLISH_STEPS {
                break;
            }
        }

        let mut support: Vec<usize> = (0..n).filter(|&i| q[i] > 0.0).collect();
        if q[best] == 0.0 {
            support.push(best);
            support.sort_unstable();
        }
        let mut step = vec![0.0; n];
        if let Some(direction) = problem.newton_direction(&state, &support) {
            for (k, &i) in support.iter().enumerate() {
                step[i] = direction[k];
            }
        }
        let (mut t_max, mut blocking) = max_feasible_step(&q, &step);
        let newton_slope: f64 = step.iter().zip(&state.grad).map(|(d, x)| d * x).sum();
        if !(t_max > 0.0 && newton_slope < 0.0) {
            // Newton is blocked by a fresh atom or not a descent direction:
            // fall back to moving mass toward the most attractive vertex.
            step = q.iter().enumerate().map(|(i, w)| if i == best { 1.0 - w } else { -w }).collect();
            (t_max, blocking) = max_feasible_step(&q, &step);
        }
        let slope: f64 = step.iter().zip(&state.grad).map(|(d, x)| d * x).sum();
        let mut t = t_max.min(1.0);
        let mut moved = false;
        for _ in 0..60 {
            let trial: Vec<f64> = q.iter().zip(&step).map(|(w, d)| (w + t * d).max(0.0)).collect();
            let value = problem.value(&trial);
            if value <= state.value + 1e-4 * t * slope || (value - state.value).abs() <= 1e-15 * state.value.abs() {
                q = trial;
                if t == t_max {
                    if let Some(i) = blocking {
                        q[i] = 0.0;
                    }
                }
                moved = true;
                break;
            }
            t *= 0.5;
        }
        let total: f64 = q.iter().sum();
        q.iter_mut().for_each(|w| *w /= total);
        if !moved {
            break;
        }
    }

    let candidate = start.renormalized(best_q);
    let (_, dh) = eot.evaluate(&candidate)?;
    let grad: Vec<f64> = g.iter().zip(&dh).map(|(g, d)| g + s * d).collect();
    let certified = -vertex_gap(&candidate, &grad);
    if certified <= tolerance {
        return Ok(candidate);
    }
    Err(Error::InnerSolveFailed {
        iterations: eot.inner_max_iterations(),
        residual: certified.max(best_residual),
    })
}

/// Largest `t` with `q + t d ≥ 0`, and the atom that blocks it.
fn max_feasible_step(q: &[f64], d: &[f64]) -> (f64, Option<usize>) {
    let mut t_max = f64::INFINITY;
    let mut blocking = None;
    for (i, (w, x)) in q.iter().zip(d).enumerate() {
        if *x < 0.0 && -w / x < t_max {
            t_max = -w / x;
            blocking = Some(i);
        }
    }
    (t_max, blocking)
}

/// `G(q) = -Σ_j ϱ_j ln Σ_i q_i K_ij` with `K` stored in log form.
struct MixtureProblem {
    log_ref: Vec<f64>,
    log_k: Vec<Vec<f64>>,
}

struct MixtureState {
    value: f64,
    log_z: Vec<f64>,
    log_r: Vec<f64>,
    grad: Vec<f64>,
}

impl MixtureProblem {
    fn log_z(&self, q: &[f64]) -> Vec<f64> {
        let n = q.len();
        (0..n)
            .map(|j| log_sum_exp((0..n).map(|i| q[i].ln() + self.log_k[i][j])))
            .collect()
    }

    fn value(&self, q: &[f64]) -> f64 {
        -self
            .log_ref
            .iter()
            .zip(self.log_z(q))
            .map(|(lr, lz)| lr.exp() * lz)
            .sum::<f64>()
    }

    fn state(&self, q: &[f64]) -> MixtureState {
        let n = q.len();
        let log_z = self.log_z(q);
        let value = -self.log_ref.iter().zip(&log_z).map(|(lr, lz)| lr.exp() * lz).sum::<f64>();
        let log_r: Vec<f64> = (0..n)
            .map(|i| log_sum_exp((0..n).map(|j| self.log_ref[j] + self.log_k[i][j] - log_z[j])))
            .collect();
        let grad = log_r.iter().map(|l| -l.exp()).collect();
        MixtureState {
            value,
            log_z,
            log_r,
            grad,
        }
    }

    /// Newton step on the face spanned by `support`, from the KKT system
    /// `[H 1; 1ᵀ 0] [d; μ] = [-∇G; 0]`.
    fn newton_direction(&self, state: &MixtureState, support: &[usize]) -> Option<Vec<f64>> {
        let k = support.len();
        let n = self.log_ref.len();
        let mut kkt = DMatrix::<f64>::zeros(k + 1, k + 1);
        let mut rhs = DVector::<f64>::zeros(k + 1);
        for (a, &i) in support.iter().enumerate() {
            for (b, &l) in support.iter().enumerate().skip(a) {
                let h: f64 = (0..n)
                    .map(|j| (self.log_ref[j] + self.log_k[i][j] + self.log_k[l][j] - 2.0 * state.log_z[j]).exp())
                    .sum();
                kkt[(a, b)] = h;
                kkt[(b, a)] = h;
            }
            kkt[(a, k)] = 1.0;
            kkt[(k, a)] = 1.0;
            rhs[a] = -state.grad[i];
        }
        // A small ridge keeps nearly flat directions (large κ) solvable.
        let ridge = 1e-12 * (0..k).map(|a| kkt[(a, a)]).fold(0.0, f64::max);
        (0..k).for_each(|a| kkt[(a, a)] += ridge);
        let solution = kkt.lu().solve(&rhs)?;
        let direction: Vec<f64> = solution.iter().take(k).copied().collect();
        direction.iter().all(|d| d.is_finite()).then_some(direction)
    }
}

/// `min_i (∇_i - ⟨∇, m⟩)`; nonnegative exactly when `m` satisfies the
/// first-order optimality condition against every vertex.
fn vertex_gap(m: &Measure, grad: &[f64]) -> f64 {
    let mean = m.integrate(grad);
    grad.iter().map(|g| g - mean).fold(f64::INFINITY, f64::min)
}

/// Variational-inequality residual of a candidate mirror step `m_star`:
/// `min_i ⟨grad + λ(δh(m*) - δh(prior)), e_i - m*⟩`. Optimal points give a
/// value ≥ 0 up to rounding.
pub fn variational_residual(
    reg: &Regularizer,
    prior: &Measure,
    grad: &[f64],
    lambda: f64,
    m_star: &Measure,
) -> Result<f64> {
    let d_star = reg.flat_derivative(m_star)?;
    let d_prior = reg.flat_derivative(prior)?;
    let total: Vec<f64> = grad
        .iter()
        .zip(d_star.iter().zip(&d_prior))
        .map(|(g, (a, b))| g + lambda * (a - b))
        .collect();
    Ok(vertex_gap(m_star, &total))
}

/// Three-point inequality at the mirror step `m_star`, evaluated at the
/// probe `m_prime`:
///
/// ```text
/// ⟨grad, m' - m*⟩ + λ (D(m'|prior) - D(m'|m*) - D(m*|prior)) ≥ 0
/// ```
pub fn three_point_check(
    reg: &Regularizer,
    prior: &Measure,
    grad: &[f64],
    lambda: f64,
    m_star: &Measure,
    m_prime: &Measure,
) -> Result<f64> {
    let linear: f64 = m_star
        .difference(m_prime)
        .iter()
        .zip(grad)
        .map(|(d, g)| d * g)
        .sum();
    let d_prime_prior = reg.bregman(m_prime, prior)?;
    let d_prime_star = reg.bregman(m_prime, m_star)?;
    let d_star_prior = reg.bregman(m_star, prior)?;
    Ok(linear + lambda * (d_prime_prior - d_prime_star - d_star_prior))
}

/// `|D_g(m' | m) - D_h(m' | m)|` where `g = D_h(· | ν)`, with `g`'s flat
/// derivative taken as `δh(·) - δh(ν)`.
pub fn bregman_of_bregman_check(
    reg: &Regularizer,
    nu: &Measure,
    m_prime: &Measure,
    m: &Measure,
) -> Result<f64> {
    let g_prime = reg.bregman(m_prime, nu)?;
    let g_m = reg.bregman(m, nu)?;
    let d_m = reg.flat_derivative(m)?;
    let d_nu = reg.flat_derivative(nu)?;
    let linear: f64 = m
        .difference(m_prime)
        .iter()
        .zip(d_m.iter().zip(&d_nu))
        .map(|(x, (a, b))| x * (a - b))
        .sum();
    let outer = g_prime - g_m - linear;
    Ok((outer - reg.bregman(m_prime, m)?).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_step_example() {
        let prior = Measure::uniform(2);
        let m = mirror_step(&Regularizer::RelativeEntropy, &prior, &[0.0, 2f64.ln()], 1.0).unwrap();
        assert!((m.weights()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.weights()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn chi_squared_step_example() {
        // v = u0 - grad/λ = (3, -1)
        let prior = Measure::uniform(2);
        let m = mirror_step(&Regularizer::ChiSquared, &prior, &[-2.0, 2.0], 1.0).unwrap();
        assert_eq!(m.weights(), &[1.0, 0.0]);
    }

    #[test]
    fn projection_hits_the_constraint() {
        let r = [0.1, 0.2, 0.3, 0.4];
        let u = project_density(&r, &[5.0, -3.0, 0.7, 0.7]);
        let mass: f64 = u.iter().zip(&r).map(|(a, b)| a * b).sum();
        assert!((mass - 1.0).abs() < 1e-14);
        assert_eq!(u[1], 0.0);
        assert_eq!(u[2], u[3]);
    }

    #[test]
    fn constant_gradient_keeps_prior() {
        let prior = Measure::new(vec![0.2, 0.5, 0.3], vec![0.3, 0.3, 0.4]).unwrap();
        let cost = vec![vec![0.0, 1.0, 4.0], vec![1.0, 0.0, 1.0], vec![4.0, 1.0, 0.0]];
        let regs = [
            Regularizer::RelativeEntropy,
            Regularizer::ChiSquared,
            Regularizer::EntropicOt(EntropicOt::new(cost, 0.5).unwrap()),
        ];
        for reg in &regs {
            let m = mirror_step(reg, &prior, &[1.7; 3], 0.8).unwrap();
            assert!(m.sup_distance(&prior) < 1e-10, "{}", reg.name());
        }
    }

    #[test]
    fn sum_has_no_prox() {
        let reg = Regularizer::Sum(vec![(1.0, Regularizer::ChiSquared)]);
        assert_eq!(
            mirror_step(&reg, &Measure::uniform(2), &[0.0, 0.0], 1.0),
            Err(Error::UnsupportedProx("a sum of regularizers"))
        );
    }
}
