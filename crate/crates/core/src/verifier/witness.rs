//! Frequency-shifted Gaussians showing that a derivative with a component in
//! `S` is not regularized by the multiplier.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use super::report::{Point, Series, VerificationReport};
use super::{check_grid, linear_fit, VerifierConfig};
use crate::error::{Error, Result};
use crate::semigroup::{multiplier_norm, GaussianState};
use crate::symbol::SymbolContext;

/// Below this the `S`-component of a direction is treated as zero.
pub const WITNESS_TOL: f64 = 1e-6;

/// Fits `N(lambda) = |<xi0, grad> exp(-t a_t^w) u_lambda|` against `lambda`,
/// where `u_lambda = exp(i lambda <xi0_S, x>) exp(-|x|^2)`.
pub fn non_smoothing_witness(
    ctx: &SymbolContext,
    xi0: &DVector<f64>,
    t: f64,
    lambda_grid: &[f64],
    cfg: &VerifierConfig,
) -> Result<VerificationReport> {
    let n = ctx.n();
    if xi0.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: xi0.len() });
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("time {t} must be positive")));
    }
    check_grid(lambda_grid, "lambda")?;
    let xi_s = ctx.report.s_component(xi0);
    let s_norm = xi_s.norm();
    if s_norm <= WITNESS_TOL {
        return Err(Error::NotAWitness(s_norm));
    }

    let base = GaussianState::standard(n);
    let dirs = [xi0.clone()];
    let values = lambda_grid
        .par_iter()
        .map(|&lambda| {
            let u = GaussianState::new(
                Complex64::new(1.0, 0.0),
                DVector::zeros(n),
                &xi_s * lambda,
                DMatrix::identity(n, n),
            )?;
            multiplier_norm(ctx, &u, t, &dirs)
        })
        .collect::<Result<Vec<f64>>>()?;
    let fit = linear_fit(lambda_grid, &values);
    let asymptotic = s_norm * s_norm * multiplier_norm(ctx, &base, t, &[])?;

    let mut report = VerificationReport::new("witness");
    report.input("xi0", xi0.iter().copied().collect::<Vec<_>>());
    report.input("t", t);
    report.input("s_component_norm", s_norm);
    let mut series = Series::new("norm", "lambda");
    for (l, v) in lambda_grid.iter().zip(&values) {
        series.points.push(Point::new(*l, *v).with_fit(fit.at(*l), fit.intercept + asymptotic * l));
    }
    report.series.push(series);
    report.fit("slope", fit.slope);
    report.fit("intercept", fit.intercept);
    report.fit("r_squared", fit.r_squared);
    report.fit("asymptotic_slope", asymptotic);
    report.tolerance("witness_min_r_squared", cfg.witness_min_r_squared);
    report.pass = fit.slope > 0.0 && fit.r_squared >= cfg.witness_min_r_squared;
    Ok(report)
}
