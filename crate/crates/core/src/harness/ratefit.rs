//! Least-squares power-law fits on log-log axes.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Result};

/// Fitted `value ~ C eps^slope`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub eps: Vec<f64>,
    pub values: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence half-width of the slope (infinite with only two points).
    pub half_width: f64,
}

impl RateFit {
    pub fn contains(&self, target: f64, tol: f64) -> bool {
        (self.slope - target).abs() <= tol
    }
}

/// Fits `ln value = intercept + slope ln eps`; needs three samples over at least one decade.
pub fn fit_rate(eps: &[f64], values: &[f64]) -> Result<RateFit> {
    if eps.len() != values.len() {
        return Err(invalid("rate fit needs as many values as epsilons"));
    }
    if eps.len() < 3 {
        return Err(invalid(format!("rate fit needs at least 3 samples, got {}", eps.len())));
    }
    if eps.iter().chain(values).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(invalid("rate fit needs positive finite samples"));
    }
    let lo = eps.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eps.iter().copied().fold(0.0, f64::max);
    if hi / lo < 10.0 * (1.0 - 1e-12) {
        return Err(invalid("rate fit samples must span at least one decade"));
    }
    let n = eps.len() as f64;
    let x: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let dof = n - 2.0;
    let se = (ssr / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof).map_err(|e| invalid(e.to_string()))?.inverse_cdf(0.975);
    Ok(RateFit { eps: eps.to_vec(), values: values.to_vec(), slope, intercept, half_width: t * se })
}
