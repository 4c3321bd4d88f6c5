use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values at or below this are treated as converged to rounding and cut the
/// fitting window.
pub const GAP_FLOOR: f64 = 1e-12;
/// `R²` needed to call a sequence geometric.
pub const GEOMETRIC_R_SQUARED: f64 = 0.99;
const MIN_POINTS: usize = 10;

/// Least-squares line `ln v_n ≈ intercept + n ln(rate)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub series: String,
    pub fitted_rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
    pub geometric: bool,
}

/// Fits the leading window of `values` (indexed from `n = 0`) that stays
/// above [`GAP_FLOOR`].
pub fn fit_rate(series: &str, values: &[f64]) -> Result<RateFit> {
    let window: Vec<f64> = values.iter().copied().take_while(|v| *v > GAP_FLOOR).collect();
    if window.len() < MIN_POINTS {
        return Err(Error::InsufficientData {
            needed: MIN_POINTS,
            found: window.len(),
        });
    }
    let k = window.len() as f64;
    let xs: Vec<f64> = (0..window.len()).map(|n| n as f64).collect();
    let ys: Vec<f64> = window.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(RateFit {
        series: series.to_string(),
        fitted_rate: slope.exp(),
        intercept,
        r_squared,
        points: window.len(),
        geometric: r_squared >= GEOMETRIC_R_SQUARED,
    })
}
