//! Lower bound for `q_t` and the constant `M_t` tabulated over a time grid.

use rayon::prelude::*;

use super::report::{Point, Series, VerificationReport};
use super::{check_grid, linear_fit, VerifierConfig};
use crate::error::Result;
use crate::symbol::SymbolContext;

/// Log-log slope over the first third of the grid (at least two points).
fn leading_slope(t: &[f64], v: &[f64]) -> f64 {
    let k = (t.len() / 3).max(2).min(t.len());
    let x: Vec<f64> = t[..k].iter().map(|t| t.ln()).collect();
    let y: Vec<f64> = v[..k].iter().map(|v| v.ln()).collect();
    linear_fit(&x, &y).slope
}

/// Tabulates `lower_bound_ratio(t)` and `m_t(t)`. Passes when the ratio stays
/// positive with no power-law decay toward small `t`, and `M_t` is finite and
/// flat there.
pub fn appendix_suite(ctx: &SymbolContext, t_grid: &[f64], cfg: &VerifierConfig) -> Result<VerificationReport> {
    check_grid(t_grid, "time")?;
    let rows = t_grid
        .par_iter()
        .map(|&t| Ok((ctx.lower_bound_ratio(t)?, ctx.m_t(t)?)))
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (ratio, m): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();

    let c0 = ratio.iter().cloned().fold(f64::INFINITY, f64::min);
    let c = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ratio_slope = if c0 > 0.0 { leading_slope(t_grid, &ratio) } else { f64::NAN };
    let m_slope = leading_slope(t_grid, &m);

    let mut report = VerificationReport::new("appendix");
    report.input("t_min", t_grid[0]);
    report.input("t_max", t_grid[t_grid.len() - 1]);
    let mut rs = Series::new("lower_bound_ratio", "t");
    let mut ms = Series::new("m_t", "t");
    for ((t, r), mv) in t_grid.iter().zip(&ratio).zip(&m) {
        rs.points.push(Point::new(*t, *r));
        ms.points.push(Point::new(*t, *mv));
    }
    report.series.push(rs);
    report.series.push(ms);
    report.fit("c0", c0);
    report.fit("c", c);
    report.fit("ratio_slope", ratio_slope);
    report.fit("m_t_slope", m_slope);
    report.tolerance("appendix_trend", cfg.appendix_trend);

    let ratio_ok = c0 > 0.0 && ratio_slope <= cfg.appendix_trend;
    let m_ok = c.is_finite() && m_slope.abs() <= cfg.appendix_trend;
    if !ratio_ok {
        report.notes.push(format!("lower-bound ratio: min {c0:.3e}, small-t slope {ratio_slope:.3e}"));
    }
    if !m_ok {
        report.notes.push(format!("M_t: max {c:.3e}, small-t slope {m_slope:.3e}"));
    }
    report.pass = ratio_ok && m_ok;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::OUOperator;
    use crate::verifier::log_grid;
    use nalgebra::DMatrix;

    #[test]
    fn pure_diffusion_is_flat() {
        let op = OUOperator::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), 0.7).unwrap();
        let ctx = SymbolContext::new(op);
        let r = appendix_suite(&ctx, &log_grid(1e-3, 1.0, 6).unwrap(), &Default::default()).unwrap();
        assert!(r.pass);
        assert!((r.fitted["c0"] - 1.0).abs() < 1e-12);
        for p in &r.series("m_t").unwrap().points {
            assert!((p.value.unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn kolmogorov_constants() {
        let ctx = SymbolContext::new(OUOperator::kolmogorov(1, 1.0).unwrap());
        let r = appendix_suite(&ctx, &log_grid(1e-3, 10.0, 8).unwrap(), &Default::default()).unwrap();
        assert!(r.pass, "{:?}", r.notes);
        let exact = (4.0 - 13f64.sqrt()) / 6.0;
        assert!((r.fitted["c0"] - exact).abs() < 1e-10);
        assert!((r.fitted["c"] - 1.0).abs() < 1e-9);
    }
}
