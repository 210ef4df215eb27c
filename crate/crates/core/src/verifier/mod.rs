//! Numerical experiments for the smoothing, blow-up, non-smoothing,
//! subelliptic and appendix estimates. Each experiment produces a
//! [`VerificationReport`] whose pass flag is a fixed function of its series
//! and the thresholds in [`VerifierConfig`].

mod appendix;
mod report;
mod smoothing;
mod subelliptic;
mod witness;

pub use appendix::appendix_suite;
pub use report::{Point, Series, VerificationReport};
pub use smoothing::{fit_blowup_exponent, gevrey_growth, kolmogorov_suite, ExponentFit, KolmogorovOptions};
pub use subelliptic::{subelliptic_check, subelliptic_ratio, SubellipticTerm};
pub use witness::non_smoothing_witness;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pass thresholds and default grids. The estimates being checked are
/// asymptotic, so these are documented conventions rather than derived values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub slope_tol: f64,
    pub min_r_squared: f64,
    /// Allowed growth of the Gevrey ratio between the first and last thirds.
    pub gevrey_trend: f64,
    pub witness_min_r_squared: f64,
    /// Allowed factor between high-frequency and base-family subelliptic ratios.
    pub subelliptic_factor: f64,
    /// Largest tolerated log-log slope magnitude for appendix plateaus.
    pub appendix_trend: f64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            slope_tol: 0.05,
            min_r_squared: 0.999,
            gevrey_trend: 1.1,
            witness_min_r_squared: 0.99,
            subelliptic_factor: 2.0,
            appendix_trend: 0.1,
        }
    }
}

/// `points` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!("need 0 < t_min < t_max, got [{lo}, {hi}]")));
    }
    if points < 2 {
        return Err(Error::InvalidArgument("a grid needs at least two points".into()));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..points)
        .map(|i| if i + 1 == points { hi } else { (a + (b - a) * i as f64 / (points - 1) as f64).exp() })
        .collect())
}

/// `points` equally spaced values from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl LinearFit {
    pub fn at(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Ordinary least squares `y ~ intercept + slope x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len(), "fit needs paired samples");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    LinearFit { slope, intercept, r_squared }
}

fn check_grid(grid: &[f64], name: &str) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidArgument(format!("{name} grid needs at least two points")));
    }
    if grid.iter().any(|v| !(v.is_finite() && *v > 0.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!("{name} grid must be positive and strictly increasing")));
    }
    Ok(())
}

/// Mean of the first and last thirds (at least one element each).
fn thirds(values: &[f64]) -> (f64, f64) {
    let k = (values.len() / 3).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&values[..k]), mean(&values[values.len() - k..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_a_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let f = linear_fit(&x, &y);
        assert!((f.slope + 0.5).abs() < 1e-15 && (f.intercept - 2.0).abs() < 1e-15);
        assert_eq!(f.r_squared, 1.0);
        let noisy = linear_fit(&x, &[0.0, 1.0, 0.0, 1.0]);
        assert!(noisy.r_squared < 0.5);
    }

    #[test]
    fn grids() {
        let g = log_grid(1e-3, 1e-1, 20).unwrap();
        assert_eq!(g.len(), 20);
        assert!((g[0] - 1e-3).abs() < 1e-18 && g[19] == 1e-1);
        assert!(log_grid(0.0, 1.0, 5).is_err());
        assert_eq!(linear_grid(1.0, 50.0, 25)[24], 50.0);
        assert_eq!(thirds(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), (1.5, 5.5));
    }
}
