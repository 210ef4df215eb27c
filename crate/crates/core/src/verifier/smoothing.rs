//! Short-time blow-up exponents, factorial growth in the derivative order, and
//! the Kolmogorov fixtures.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::report::{finite, Point, Series, VerificationReport};
use super::{check_grid, linear_fit, log_grid, thirds, VerifierConfig};
use crate::error::{Error, Result};
use crate::semigroup::{operator_norm, OperatorNorm};
use crate::structure::{compute_structure_with_tol, OUOperator};
use crate::symbol::{SymbolContext, DEFAULT_OPT_SAMPLES, DEFAULT_QUAD_ORDER};

/// Log-log fit of a multiplier norm against time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentFit {
    pub directions: Vec<Vec<f64>>,
    pub indices: Vec<usize>,
    pub t_grid: Vec<f64>,
    /// `log(norm(t) exp(Tr(B) t / 2))` at each grid point.
    pub log_values: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `-(sum of indices + m/(2s))`.
    pub predicted_slope: f64,
    /// Largest value of `norm t^{-predicted} / prod |xi_j|` over the grid.
    pub constant: f64,
    pub pass: bool,
    pub note: Option<String>,
}

impl ExponentFit {
    /// Series with the fitted line and the predicted power law anchored at the
    /// same centroid.
    pub fn series(&self, name: &str) -> Series {
        let mut s = Series::new(name, "t");
        let xs: Vec<f64> = self.t_grid.iter().map(|t| t.ln()).collect();
        let anchor = xs.iter().zip(&self.log_values).map(|(x, y)| y - self.predicted_slope * x).sum::<f64>()
            / xs.len().max(1) as f64;
        for ((t, x), y) in self.t_grid.iter().zip(&xs).zip(&self.log_values) {
            s.points.push(
                Point::new(*t, y.exp())
                    .with_fit((self.intercept + self.slope * x).exp(), (anchor + self.predicted_slope * x).exp()),
            );
        }
        s
    }

    pub fn into_report(self, experiment: &str, cfg: &VerifierConfig) -> VerificationReport {
        let mut r = VerificationReport::new(experiment);
        r.input("directions", &self.directions);
        r.input("indices", &self.indices);
        r.series.push(self.series("norm"));
        r.fit("slope", self.slope);
        r.fit("intercept", self.intercept);
        r.fit("r_squared", self.r_squared);
        r.fit("predicted_slope", self.predicted_slope);
        r.fit("constant", self.constant);
        r.tolerance("slope_tol", cfg.slope_tol);
        r.tolerance("min_r_squared", cfg.min_r_squared);
        r.notes.extend(self.note);
        r.pass = self.pass;
        r
    }
}

fn ln_factorial(m: usize) -> f64 {
    (2..=m).map(|k| (k as f64).ln()).sum()
}

/// Fits the slope of `log(norm(t) exp(Tr(B) t/2))` against `log t`.
pub fn fit_blowup_exponent(
    ctx: &SymbolContext,
    directions: &[DVector<f64>],
    t_grid: &[f64],
    cfg: &VerifierConfig,
) -> Result<ExponentFit> {
    check_grid(t_grid, "time")?;
    if directions.is_empty() || directions.iter().any(|d| d.norm() == 0.0) {
        return Err(Error::InvalidArgument("directions must be nonempty and nonzero".into()));
    }
    let dirs: Vec<Vec<f64>> = directions.iter().map(|d| d.iter().copied().collect()).collect();
    let blank = |note: String| ExponentFit {
        directions: dirs.clone(),
        indices: Vec::new(),
        t_grid: t_grid.to_vec(),
        log_values: Vec::new(),
        slope: f64::NAN,
        intercept: f64::NAN,
        r_squared: 0.0,
        predicted_slope: f64::NAN,
        constant: f64::INFINITY,
        pass: false,
        note: Some(note),
    };
    if let OperatorNorm::Unbounded { direction, s_component } = operator_norm(ctx, t_grid[0], directions)? {
        return Ok(blank(format!(
            "direction {direction} has an S-component of norm {s_component:.3e}; the operator is unbounded"
        )));
    }
    let indices = directions.iter().map(|d| ctx.report.index(d)).collect::<Result<Vec<_>>>()?;
    let m = directions.len() as f64;
    let predicted_slope = -(indices.iter().sum::<usize>() as f64 + m / (2.0 * ctx.s()));
    let tr = ctx.op.trace_b();
    let log_values = t_grid
        .par_iter()
        .map(|&t| Ok(operator_norm(ctx, t, directions)?.log_value() + 0.5 * tr * t))
        .collect::<Result<Vec<f64>>>()?;
    let xs: Vec<f64> = t_grid.iter().map(|t| t.ln()).collect();
    let fit = linear_fit(&xs, &log_values);
    let log_prod: f64 = directions.iter().map(|d| d.norm().ln()).sum();
    let constant =
        xs.iter().zip(&log_values).map(|(x, y)| (y - predicted_slope * x - log_prod).exp()).fold(0.0, f64::max);
    let pass = (fit.slope - predicted_slope).abs() <= cfg.slope_tol && fit.r_squared >= cfg.min_r_squared;
    Ok(ExponentFit {
        directions: dirs,
        indices,
        t_grid: t_grid.to_vec(),
        log_values,
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        predicted_slope,
        constant,
        pass,
        note: None,
    })
}

/// Growth of `g_m = norm(t, m directions) t^{sum k + m/(2s)} / prod |xi_j|`
/// against `(m!)^{1/(2s)}`. The `m` directions cycle through `family`.
pub fn gevrey_growth(
    ctx: &SymbolContext,
    family: &[DVector<f64>],
    m_max: usize,
    t: f64,
    cfg: &VerifierConfig,
) -> Result<VerificationReport> {
    if m_max < 4 {
        return Err(Error::InvalidArgument(format!("m_max must be at least 4, got {m_max}")));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("time {t} must be positive")));
    }
    if family.is_empty() || family.iter().any(|d| d.norm() == 0.0) {
        return Err(Error::InvalidArgument("direction family must be nonempty and nonzero".into()));
    }
    let s = ctx.s();
    let mut report = VerificationReport::new("gevrey");
    report.input("t", t);
    report.input("m_max", m_max);
    report.input("family", family.iter().map(|d| d.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>());
    report.tolerance("gevrey_trend", cfg.gevrey_trend);

    let mut indices = Vec::with_capacity(family.len());
    for (j, d) in family.iter().enumerate() {
        match ctx.report.index(d) {
            Ok(k) => indices.push(k),
            Err(Error::NotInSPerp { s_component, .. }) => {
                report.notes.push(format!(
                    "direction {j} has an S-component of norm {s_component:.3e}; the operator is unbounded"
                ));
                return Ok(report);
            }
            Err(e) => return Err(e),
        }
    }
    let logs = (1..=m_max)
        .into_par_iter()
        .map(|m| {
            let dirs: Vec<DVector<f64>> = (0..m).map(|j| family[j % family.len()].clone()).collect();
            let k_sum: usize = (0..m).map(|j| indices[j % family.len()]).sum();
            let log_prod: f64 = dirs.iter().map(|d| d.norm().ln()).sum();
            let norm = operator_norm(ctx, t, &dirs)?;
            Ok(norm.log_value() + (k_sum as f64 + m as f64 / (2.0 * s)) * t.ln() - log_prod)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut g = Series::new("g", "m");
    let mut ratio = Series::new("ratio", "m");
    let mut ratios = Vec::new();
    for (i, log_g) in logs.iter().enumerate() {
        let m = (i + 1) as f64;
        let r = ((log_g - ln_factorial(i + 1) / (2.0 * s)) / m).exp();
        g.points.push(Point::new(m, log_g.exp()));
        ratio.points.push(Point::new(m, r));
        if i >= 1 {
            ratios.push(r);
        }
    }
    let (first, last) = thirds(&ratios);
    report.fit("log_g1", logs[0]);
    report.fit("ratio_max", ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    report.fit("first_third_mean", first);
    report.fit("last_third_mean", last);
    report.fit("trend", last / first);
    report.series.push(g);
    report.series.push(ratio);
    report.pass = finite(last / first).is_some_and(|tr| tr <= cfg.gevrey_trend);
    Ok(report)
}

/// Settings for [`kolmogorov_suite`].
#[derive(Debug, Clone)]
pub struct KolmogorovOptions {
    pub s: f64,
    /// Number of `(x, v)` blocks; the operator acts on `R^{2 blocks}`.
    pub blocks: usize,
    pub short_grid: Vec<f64>,
    pub long_grid: Vec<f64>,
    pub quad_order: usize,
    pub opt_samples: usize,
    pub seed: u64,
    pub rank_tol: f64,
}

impl Default for KolmogorovOptions {
    fn default() -> Self {
        Self {
            s: 1.0,
            blocks: 1,
            short_grid: log_grid(1e-3, 1e-1, 20).expect("valid grid"),
            long_grid: log_grid(1.0, 10.0, 20).expect("valid grid"),
            quad_order: DEFAULT_QUAD_ORDER,
            opt_samples: DEFAULT_OPT_SAMPLES,
            seed: 0,
            rank_tol: crate::linalg::DEFAULT_RANK_TOL,
        }
    }
}

/// Exponent fits in a position and a velocity direction of the fractional
/// Kolmogorov operator, at short times and on `[1, 10]`.
pub fn kolmogorov_suite(opts: &KolmogorovOptions, cfg: &VerifierConfig) -> Result<VerificationReport> {
    let op = OUOperator::kolmogorov(opts.blocks, opts.s)?;
    let report = compute_structure_with_tol(&op, opts.rank_tol);
    let ctx = SymbolContext::with_settings(op, report, opts.quad_order, opts.opt_samples, opts.seed)?;
    let n = 2 * opts.blocks;
    let mut x = DVector::zeros(n);
    x[0] = 1.0;
    let mut v = DVector::zeros(n);
    v[opts.blocks] = 1.0;

    let mut out = VerificationReport::new("kolmogorov");
    out.input("s", opts.s);
    out.input("blocks", opts.blocks);
    out.pass = true;
    let mut slopes = Vec::new();
    for (label, dir) in [("x", &x), ("v", &v)] {
        for (window, grid) in [("short", &opts.short_grid), ("long", &opts.long_grid)] {
            let fit = fit_blowup_exponent(&ctx, std::slice::from_ref(dir), grid, cfg)?;
            slopes.push((label, window, fit.slope));
            let name = format!("{label}-{window}");
            out.absorb(&name, fit.into_report(&name, cfg));
        }
    }
    for label in ["x", "v"] {
        let short = slopes.iter().find(|s| s.0 == label && s.1 == "short").map(|s| s.2).unwrap_or(f64::NAN);
        let long = slopes.iter().find(|s| s.0 == label && s.1 == "long").map(|s| s.2).unwrap_or(f64::NAN);
        let gap = (short - long).abs();
        out.fit(&format!("{label}/slope_gap"), gap);
        if !(gap <= cfg.slope_tol) {
            out.pass = false;
            out.notes.push(format!("{label}: short- and long-time slopes differ by {gap:.3e}"));
        }
    }
    Ok(out)
}
