//! Finite-difference audit of a model's analytic derivatives and of the
//! structural assumptions the convergence theory relies on.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{contract, ModelCoefficients};
use crate::adjoint::{h0_dm, h0_dx, h0_value};
use crate::error::Result;
use crate::measure::{Measure, Regularizer};

pub const DERIVATIVE_TOLERANCE: f64 = 1e-5;
pub const CENTERING_TOLERANCE: f64 = 1e-10;
pub const SECOND_VARIATION_TOLERANCE: f64 = 1e-9;
pub const CONVEXITY_TOLERANCE: f64 = 1e-9;

const X_STEP: f64 = 1e-4;

/// Sample points `(t, x, m)` with adjoint values `(y, z)` for the
/// Hamiltonian convexity check. Consecutive samples are paired cyclically.
#[derive(Debug, Clone)]
pub struct AuditSamples {
    pub points: Vec<AuditPoint>,
}

#[derive(Debug, Clone)]
pub struct AuditPoint {
    pub t: f64,
    pub x: DVector<f64>,
    pub m: Measure,
    pub y: DVector<f64>,
    pub z: DMatrix<f64>,
}

impl AuditSamples {
    /// `count` random points: `t` uniform on `[0, horizon]`, `x` a standard
    /// normal perturbation of the initial state, `m` drawn from a flat
    /// Dirichlet law mixed with the reference so every atom is positive.
    pub fn random(
        model: &dyn ModelCoefficients,
        reference: &[f64],
        horizon: f64,
        count: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = model.state_dim();
        let dp = model.noise_dim();
        let base = Measure::reference_measure(reference.to_vec())?;
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let t = rng.random::<f64>() * horizon;
            let x = model.initial_state() + DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let draws: Vec<f64> = (0..reference.len()).map(|_| Exp1.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            let m = base.renormalized(draws.iter().map(|v| v / total).collect()).mix(&base, 0.1);
            let y = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let z = DMatrix::from_fn(d, dp, |_, _| rng.sample::<f64, _>(StandardNormal));
            points.push(AuditPoint { t, x, m, y, z });
        }
        Ok(Self { points })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub samples: usize,
    /// Largest relative mismatch between an analytic derivative and its
    /// finite-difference estimate.
    pub max_derivative_error: f64,
    pub worst_derivative: String,
    /// Largest `|∫ δφ/δm(m, a) m(da)|` over `φ ∈ {b, σ, f}`.
    pub max_centering_error: f64,
    /// Largest `|∫∫ δ²σ/δm² d d|` over sampled directions.
    pub max_sigma_second_variation: f64,
    /// Largest `(|b - b'|² + |σ - σ'|²) / (|x - x'|² + D_h(m | m'))` seen.
    pub lipschitz_estimate: f64,
    /// Smallest first-order convexity gap of `(x, m) ↦ H⁰(x, y, z, m)`.
    pub min_hamiltonian_convexity_gap: f64,
    /// Smallest first-order convexity gap of `g`.
    pub min_terminal_convexity_gap: f64,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// True when both convexity checks passed.
    pub fn convex(&self) -> bool {
        self.min_hamiltonian_convexity_gap >= -CONVEXITY_TOLERANCE
            && self.min_terminal_convexity_gap >= -CONVEXITY_TOLERANCE
    }
}

struct Tracker {
    error: f64,
    worst: String,
}

impl Tracker {
    fn compare(&mut self, what: &str, analytic: &[f64], numeric: &[f64]) {
        let scale = 1.0 + analytic.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let err = analytic
            .iter()
            .zip(numeric)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / scale;
        if err > self.error {
            self.error = err;
            self.worst = what.to_string();
        }
    }
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    m.iter().copied().collect()
}

/// Largest step `ε ≤ cap` with `m ± ε d` nonnegative.
fn feasible_step(m: &Measure, d: &[f64], cap: f64) -> f64 {
    let mut eps = cap;
    for (w, v) in m.weights().iter().zip(d) {
        if v.abs() > 0.0 {
            eps = eps.min(0.5 * w / v.abs());
        }
    }
    eps
}

fn shifted(m: &Measure, d: &[f64], eps: f64) -> Measure {
    let weights = m.weights().iter().zip(d).map(|(w, v)| w + eps * v).collect();
    m.renormalized(weights)
}

/// Runs every check on each sample (and each cyclic pair of samples).
pub fn assumption_audit(model: &dyn ModelCoefficients, reg: &Regularizer, samples: &AuditSamples) -> Result<AuditReport> {
    let d = model.state_dim();
    let pts = &samples.points;
    let mut tracker = Tracker {
        error: 0.0,
        worst: String::new(),
    };
    let mut centering = 0.0f64;
    let mut sigma2 = 0.0f64;
    let mut lipschitz = 0.0f64;
    let mut h_gap = f64::INFINITY;
    let mut g_gap = f64::INFINITY;

    for (idx, p) in pts.iter().enumerate() {
        let q = &pts[(idx + 1) % pts.len()];
        let (t, x, m) = (p.t, &p.x, &p.m);

        // spatial derivatives, central differences
        let jac_b = model.drift_dx(t, x, m);
        let jac_s = model.diffusion_dx(t, x, m);
        let grad_f = model.running_cost_dx(t, x, m);
        let grad_g = model.terminal_cost_dx(x);
        let dx_db = model.drift_dx_dm(t, x, m);
        let dx_ds = model.diffusion_dx_dm(t, x, m);
        let dx_df = model.running_cost_dx_dm(t, x, m);
        for k in 0..d {
            let h = X_STEP * (1.0 + x[k].abs());
            let mut up = x.clone();
            up[k] += h;
            let mut down = x.clone();
            down[k] -= h;
            let fd = |a: f64, b: f64| (a - b) / (2.0 * h);
            let b_fd: Vec<f64> = model
                .drift(t, &up, m)
                .iter()
                .zip(model.drift(t, &down, m).iter())
                .map(|(a, b)| fd(*a, *b))
                .collect();
            tracker.compare("drift_dx", jac_b.column(k).as_slice(), &b_fd);
            let s_fd: Vec<f64> = model
                .diffusion(t, &up, m)
                .iter()
                .zip(model.diffusion(t, &down, m).iter())
                .map(|(a, b)| fd(*a, *b))
                .collect();
            tracker.compare("diffusion_dx", &flat(&jac_s[k]), &s_fd);
            let f_fd = fd(model.running_cost(t, &up, m), model.running_cost(t, &down, m));
            tracker.compare("running_cost_dx", &[grad_f[k]], &[f_fd]);
            let g_fd = fd(model.terminal_cost(&up), model.terminal_cost(&down));
            tracker.compare("terminal_cost_dx", &[grad_g[k]], &[g_fd]);

            // mixed derivatives: x-differences of the measure-derivative tables
            let (bu, bd) = (model.drift_dm(t, &up, m), model.drift_dm(t, &down, m));
            let (su, sd) = (model.diffusion_dm(t, &up, m), model.diffusion_dm(t, &down, m));
            let (fu, fdn) = (model.running_cost_dm(t, &up, m), model.running_cost_dm(t, &down, m));
            for i in 0..m.len() {
                let num: Vec<f64> = bu[i].iter().zip(bd[i].iter()).map(|(a, b)| fd(*a, *b)).collect();
                tracker.compare("drift_dx_dm", dx_db[i].column(k).as_slice(), &num);
                let num: Vec<f64> = su[i].iter().zip(sd[i].iter()).map(|(a, b)| fd(*a, *b)).collect();
                tracker.compare("diffusion_dx_dm", &flat(&dx_ds[i][k]), &num);
                tracker.compare("running_cost_dx_dm", &[dx_df[i][k]], &[fd(fu[i], fdn[i])]);
            }
        }

        // measure derivatives along the direction towards the next sample
        let dir = m.difference(&q.m);
        let db = model.drift_dm(t, x, m);
        let ds = model.diffusion_dm(t, x, m);
        let df = model.running_cost_dm(t, x, m);
        let eps = feasible_step(m, &dir, 1e-3);
        let (mu, md) = (shifted(m, &dir, eps), shifted(m, &dir, -eps));
        let diff = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| (u - v) / (2.0 * eps)).collect() };
        tracker.compare(
            "drift_dm",
            contract(&db, &dir).as_slice(),
            &diff(model.drift(t, x, &mu).as_slice(), model.drift(t, x, &md).as_slice()),
        );
        tracker.compare(
            "diffusion_dm",
            &flat(&contract(&ds, &dir)),
            &diff(&flat(&model.diffusion(t, x, &mu)), &flat(&model.diffusion(t, x, &md))),
        );
        tracker.compare(
            "running_cost_dm",
            &[contract(&df, &dir)],
            &diff(&[model.running_cost(t, x, &mu)], &[model.running_cost(t, x, &md)]),
        );

        // second variations, wider symmetric step
        let eps2 = feasible_step(m, &dir, 0.05);
        let (mu, md) = (shifted(m, &dir, eps2), shifted(m, &dir, -eps2));
        let second = |a: &[f64], c: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter()
                .zip(c)
                .zip(b)
                .map(|((u, c), v)| (u - 2.0 * c + v) / (eps2 * eps2))
                .collect()
        };
        let b_pair = (model.drift(t, x, &mu), model.drift(t, x, m), model.drift(t, x, &md));
        tracker.compare(
            "drift_d2m",
            model.drift_d2m(t, x, m, &dir).as_slice(),
            &second(b_pair.0.as_slice(), b_pair.1.as_slice(), b_pair.2.as_slice()),
        );
        let s_an = model.diffusion_d2m(t, x, m, &dir);
        let s_num = second(
            &flat(&model.diffusion(t, x, &mu)),
            &flat(&model.diffusion(t, x, m)),
            &flat(&model.diffusion(t, x, &md)),
        );
        tracker.compare("diffusion_d2m", &flat(&s_an), &s_num);
        tracker.compare(
            "running_cost_d2m",
            &[model.running_cost_d2m(t, x, m, &dir)],
            &second(
                &[model.running_cost(t, x, &mu)],
                &[model.running_cost(t, x, m)],
                &[model.running_cost(t, x, &md)],
            ),
        );
        sigma2 = sigma2.max(s_an.amax()).max(s_num.iter().fold(0.0, |a, v| a.max(v.abs())));

        // centering
        for c in 0..d {
            centering = centering.max(m.integrate(&db.iter().map(|v| v[c]).collect::<Vec<_>>()).abs());
        }
        for e in 0..ds[0].len() {
            centering = centering.max(m.integrate(&ds.iter().map(|v| v[e]).collect::<Vec<_>>()).abs());
        }
        centering = centering.max(m.integrate(&df).abs());

        // Lipschitz ratio against the next sample
        let db_diff = (model.drift(t, x, m) - model.drift(t, &q.x, &q.m)).norm_squared();
        let ds_diff = (model.diffusion(t, x, m) - model.diffusion(t, &q.x, &q.m)).norm_squared();
        let denom = (x - &q.x).norm_squared() + reg.bregman(m, &q.m)?;
        if denom > 0.0 {
            lipschitz = lipschitz.max((db_diff + ds_diff) / denom);
        }

        // convexity gaps
        let g_lin = grad_g.dot(&(&q.x - x));
        let g_scale = 1.0 + model.terminal_cost(x).abs() + model.terminal_cost(&q.x).abs();
        g_gap = g_gap.min((model.terminal_cost(&q.x) - model.terminal_cost(x) - g_lin) / g_scale);
        let h_here = h0_value(model, t, x, &p.y, &p.z, m);
        let h_there = h0_value(model, t, &q.x, &p.y, &p.z, &q.m);
        let lin = h0_dx(model, t, x, &p.y, &p.z, m).dot(&(&q.x - x))
            + h0_dm(model, t, x, &p.y, &p.z, m)
                .iter()
                .zip(&dir)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        h_gap = h_gap.min((h_there - h_here - lin) / (1.0 + h_here.abs() + h_there.abs()));
    }

    let mut violations = Vec::new();
    if tracker.error > DERIVATIVE_TOLERANCE {
        violations.push(format!(
            "{} disagrees with finite differences (relative error {:e})",
            tracker.worst, tracker.error
        ));
    }
    if centering > CENTERING_TOLERANCE {
        violations.push(format!("measure derivatives are not centered (error {centering:e})"));
    }
    if sigma2 > SECOND_VARIATION_TOLERANCE {
        violations.push(format!("diffusion has a nonzero second measure variation ({sigma2:e})"));
    }
    if h_gap < -CONVEXITY_TOLERANCE {
        violations.push(format!("Hamiltonian is not convex in (x, m) (gap {h_gap:e})"));
    }
    if g_gap < -CONVEXITY_TOLERANCE {
        violations.push(format!("terminal cost is not convex (gap {g_gap:e})"));
    }
    Ok(AuditReport {
        samples: pts.len(),
        max_derivative_error: tracker.error,
        worst_derivative: tracker.worst,
        max_centering_error: centering,
        max_sigma_second_variation: sigma2,
        lipschitz_estimate: lipschitz,
        min_hamiltonian_convexity_gap: h_gap,
        min_terminal_convexity_gap: g_gap,
        violations,
    })
}
