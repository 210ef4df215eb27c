//! Directional-derivative seminorms of evolved Gaussians, operator norms of
//! the corresponding Fourier multipliers, and the Fourier-side action of `P`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::quadrature::{graded_axis, tensor_product};
use crate::semigroup::gaussian::{evolve, GaussianState};
use crate::sphere;
use crate::structure::{OUOperator, MEMBERSHIP_TOL};
use crate::symbol::SymbolContext;

/// Largest dimension handled by the tensor quadrature.
pub const MAX_QUADRATURE_DIM: usize = 4;
/// Relative agreement required between successive panel refinements.
pub const FOURIER_QUAD_TOL: f64 = 1e-6;

/// Norm of `<xi_1, nabla> ... <xi_m, nabla> exp(-t a_t^w)` on `L^2`.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorNorm {
    Finite {
        value: f64,
        /// Natural log of `value`, accurate even when `value` under- or overflows.
        log_value: f64,
        /// A unit frequency direction attaining the supremum, when one exists.
        maximizer: Option<DVector<f64>>,
    },
    /// Some direction has a component in `S`: the operator is unbounded.
    Unbounded { direction: usize, s_component: f64 },
}

impl OperatorNorm {
    pub fn is_finite(&self) -> bool {
        matches!(self, OperatorNorm::Finite { .. })
    }

    pub fn value(&self) -> f64 {
        match self {
            OperatorNorm::Finite { value, .. } => *value,
            OperatorNorm::Unbounded { .. } => f64::INFINITY,
        }
    }

    pub fn log_value(&self) -> f64 {
        match self {
            OperatorNorm::Finite { log_value, .. } => *log_value,
            OperatorNorm::Unbounded { .. } => f64::INFINITY,
        }
    }
}

/// `sup_xi prod_j |<xi_j, xi>| exp(-t a_t(xi))`.
///
/// For a unit frequency `sigma` the radial maximum is
/// `prod_j |<xi_j, sigma>| (m / (2 s t a_t(sigma)))^{m/(2s)} exp(-m/(2s))`;
/// the remaining supremum over directions is taken on the sphere of `S^perp`
/// in stratified coordinates.
pub fn operator_norm(ctx: &SymbolContext, t: f64, directions: &[DVector<f64>]) -> Result<OperatorNorm> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("time {t} must be positive")));
    }
    if directions.is_empty() {
        return Err(Error::InvalidArgument("at least one direction is required".into()));
    }
    let report = &ctx.report;
    for d in directions {
        if d.len() != ctx.n() {
            return Err(Error::DimensionMismatch { expected: ctx.n(), got: d.len() });
        }
    }
    if directions.iter().any(|d| d.norm() == 0.0) {
        return Ok(OperatorNorm::Finite { value: 0.0, log_value: f64::NEG_INFINITY, maximizer: None });
    }
    for (j, d) in directions.iter().enumerate() {
        let s_comp = report.s_component(d).norm();
        if s_comp > MEMBERSHIP_TOL * d.norm() {
            return Ok(OperatorNorm::Unbounded { direction: j, s_component: s_comp });
        }
    }
    let m = directions.len() as f64;
    let s = ctx.s();
    let basis = report.frame.scaled_basis(t);
    let scaled = ctx.scaled_slice(t)?;
    let weights: Vec<DVector<f64>> = directions.iter().map(|d| basis.transpose() * d).collect();
    let objective = |z: &[f64]| {
        let z = DVector::from_column_slice(z);
        let poly: f64 = weights.iter().map(|w| w.dot(&z).abs().ln()).sum();
        poly - m / (2.0 * s) * scaled.profile(&z).a(s).ln()
    };
    let opt = sphere::maximize(scaled.input_dim(), &objective, ctx.sphere_options());
    let log_value = opt.value + m / (2.0 * s) * ((m / (2.0 * s * t)).ln() - 1.0);
    let xi = &basis * DVector::from_column_slice(&opt.point);
    let maximizer = Some(&xi / xi.norm());
    Ok(OperatorNorm::Finite { value: log_value.exp(), log_value, maximizer })
}

/// Gaussian envelope of an integrand in frequency space: the integrand is
/// concentrated around `center` and integrated in coordinates
/// `xi = center + factor y`.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub center: DVector<f64>,
    pub factor: DMatrix<f64>,
    /// Per `y` axis, a coordinate towards which panels are graded.
    pub focus: Vec<Option<f64>>,
}

impl Envelope {
    /// `|u^|^2` is proportional to `exp(-1/2 (xi - omega)^T Gamma^{-1} (xi - omega))`.
    pub fn of_state(u: &GaussianState) -> Self {
        Self::from_cov(u.omega().clone(), u.gamma().clone())
    }

    /// Envelope of `|u^(exp(t B^T) xi)|^2`.
    pub fn of_evolved(u: &GaussianState, flow: &DMatrix<f64>) -> Self {
        let inv = flow.clone().try_inverse().expect("matrix exponential is invertible");
        let cov = &inv * u.gamma() * inv.transpose();
        Self::from_cov(&inv * u.omega(), (&cov + cov.transpose()) * 0.5)
    }

    fn from_cov(center: DVector<f64>, cov: DMatrix<f64>) -> Self {
        let factor = nalgebra::Cholesky::new(cov)
            .map(|c| c.l())
            .unwrap_or_else(|| panic!("envelope covariance must be positive definite"));
        let focus = vec![None; center.len()];
        Self { center, factor, focus }
    }

    /// Grades towards a nontrivial `S`, across which `a_t` has a cusp unless
    /// `s` is an integer.
    pub fn for_symbol(self, ctx: &SymbolContext) -> Self {
        if ctx.s().fract() == 0.0 || ctx.report.dim_s() == 0 {
            self
        } else {
            self.singular_on(&ctx.report.s_basis)
        }
    }

    /// Re-orients the coordinates for an integrand with a cusp on the
    /// subspace spanned by the orthonormal columns of `kernel`: the first
    /// `y` axes then parametrize its orthogonal complement alone, and are
    /// graded towards the point where the cusp sits.
    pub fn singular_on(self, kernel: &DMatrix<f64>) -> Self {
        let n = self.center.len();
        let perp = if kernel.ncols() == 0 {
            DMatrix::identity(n, n)
        } else {
            linalg::kernel_and_row_space(&kernel.transpose(), 1e-12).0
        };
        let p = perp.ncols();
        if p == 0 {
            return self;
        }
        let mut rot = DMatrix::zeros(n, n);
        rot.columns_mut(0, p).copy_from(&perp);
        rot.columns_mut(p, n - p).copy_from(kernel);
        let cov = rot.transpose() * &self.factor * self.factor.transpose() * &rot;
        let l = nalgebra::Cholesky::new((&cov + cov.transpose()) * 0.5)
            .map(|c| c.l())
            .unwrap_or_else(|| panic!("envelope covariance must be positive definite"));
        let c = rot.transpose() * &self.center;
        let y0 = l
            .view((0, 0), (p, p))
            .solve_lower_triangular(&(-c.rows(0, p)))
            .expect("Cholesky factor has a positive diagonal");
        let mut focus = vec![None; n];
        for i in 0..p {
            focus[i] = Some(y0[i]);
        }
        Self { center: self.center, factor: rot * l, focus }
    }
}

/// `int f(xi) d xi` for an integrand carrying the given Gaussian envelope,
/// with tensor Gauss-Legendre panels in whitened coordinates. Panels are
/// doubled until successive values, or the geometric tail of their
/// differences, agree to [`FOURIER_QUAD_TOL`].
pub fn integrate_frequency<F>(env: &Envelope, degree: usize, f: &F) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    let n = env.center.len();
    if n > MAX_QUADRATURE_DIM {
        return Err(Error::Unsupported(format!("frequency quadrature supports n <= {MAX_QUADRATURE_DIM}, got {n}")));
    }
    let radius = 6.5 + ((degree + 1) as f64).sqrt() * 1.5;
    let jac = env.factor.determinant().abs();
    // Low-order panels: cusps of fractional symbols make h-refinement pay
    // off sooner than raising the order.
    let max_panels = match n {
        1 => 1024,
        2 => 128,
        3 => 32,
        _ => 8,
    };
    let order = 6;
    let eval = |panels: usize| -> f64 {
        let axes: Vec<_> = env.focus.iter().map(|c| graded_axis(radius, panels, order, *c)).collect();
        let (pts, w) = tensor_product(&axes);
        let chunk = 4096;
        let partial: Vec<f64> = w
            .par_chunks(chunk)
            .zip(pts.par_chunks(chunk * n))
            .map(|(wc, pc)| {
                let mut y = DVector::zeros(n);
                let mut acc = 0.0;
                for (wi, p) in wc.iter().zip(pc.chunks(n)) {
                    y.copy_from_slice(p);
                    let xi = &env.center + &env.factor * &y;
                    acc += wi * f(&xi);
                }
                acc
            })
            .collect();
        partial.iter().sum::<f64>() * jac
    };
    let mut panels = 4;
    let mut prev = eval(panels);
    let mut prev_diff = f64::INFINITY;
    while panels < max_panels {
        panels *= 2;
        let next = eval(panels);
        let diff = (next - prev).abs();
        let tol = FOURIER_QUAD_TOL * next.abs();
        // Once refinements contract geometrically, the remaining error is
        // bounded by the tail of that series.
        let rho = diff / prev_diff;
        let tail = if prev_diff.is_finite() && rho < 0.5 && diff <= 20.0 * tol {
            diff * rho / (1.0 - rho)
        } else {
            f64::INFINITY
        };
        if diff <= tol || tail <= tol || (next == 0.0 && prev == 0.0) {
            return Ok(next);
        }
        prev = next;
        prev_diff = diff;
    }
    Err(Error::QuadratureNotConverged(format!(
        "frequency integral still changing at {panels} panels per axis (last value {prev:.6e})"
    )))
}

fn plancherel(n: usize, integral: f64) -> f64 {
    (integral.max(0.0) / (2.0 * std::f64::consts::PI).powi(n as i32)).sqrt()
}

/// `|<xi_1, nabla> ... <xi_m, nabla> exp(-tP) u|_{L^2}` by Plancherel.
pub fn seminorm(ctx: &SymbolContext, u: &GaussianState, t: f64, directions: &[DVector<f64>]) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("time {t} must be positive")));
    }
    if directions.is_empty() {
        return Err(Error::InvalidArgument("at least one direction is required".into()));
    }
    if u.n() != ctx.n() {
        return Err(Error::DimensionMismatch { expected: ctx.n(), got: u.n() });
    }
    if directions.iter().any(|d| d.norm() == 0.0) {
        return Ok(0.0);
    }
    let ev = evolve(ctx, u, t);
    let env = Envelope::of_evolved(u, &ctx.flow_t(t)).for_symbol(ctx);
    let integral = integrate_frequency(&env, directions.len(), &|xi: &DVector<f64>| {
        let poly: f64 = directions.iter().map(|d| d.dot(xi).powi(2)).product();
        poly * ev.value(xi).norm_sqr()
    })?;
    Ok(plancherel(u.n(), integral))
}

/// `|exp(-t a_t^w) u|_{L^2}`: the diffusion multiplier alone, without drift.
pub fn multiplier_norm(ctx: &SymbolContext, u: &GaussianState, t: f64, directions: &[DVector<f64>]) -> Result<f64> {
    let slice = ctx.slice(t);
    let env = Envelope::of_state(u).for_symbol(ctx);
    let integral = integrate_frequency(&env, directions.len(), &|xi: &DVector<f64>| {
        let poly: f64 = directions.iter().map(|d| d.dot(xi).powi(2)).product();
        poly * (-2.0 * t * slice.a(xi)).exp() * u.fourier(xi).norm_sqr()
    })?;
    Ok(plancherel(u.n(), integral))
}

/// `|u|_{L^2}` from the Fourier side.
pub fn fourier_l2_norm(u: &GaussianState) -> Result<f64> {
    let env = Envelope::of_state(u);
    let integral = integrate_frequency(&env, 0, &|xi: &DVector<f64>| u.fourier(xi).norm_sqr())?;
    Ok(plancherel(u.n(), integral))
}

/// `F[P u](xi) = 1/2 |sqrt(Q) xi|^{2s} u^ - Tr(B) u^ - <B^T xi, grad u^>`.
pub fn apply_p_fourier(op: &OUOperator, sqrt_q: &DMatrix<f64>, u: &GaussianState, xi: &DVector<f64>) -> Complex64 {
    let (value, grad) = u.fourier_with_gradient(xi);
    let diffusion = 0.5 * (sqrt_q * xi).norm_squared().powf(op.s());
    let drift = op.b().transpose() * xi;
    let transport: Complex64 = grad.iter().zip(drift.iter()).map(|(g, d)| g * *d).sum();
    value * (diffusion - op.trace_b()) - transport
}

/// Convenience form of [`apply_p_fourier`] computing the square root itself.
pub fn apply_p(op: &OUOperator, u: &GaussianState, xi: &DVector<f64>) -> Complex64 {
    let sqrt_q = linalg::psd_sqrt(op.q()).expect("validated operator");
    apply_p_fourier(op, &sqrt_q, u, xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, PI};

    fn vec(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn fractional_heat_norm_matches_calculus() {
        for s in [0.5, 1.0, 1.5] {
            let ctx = SymbolContext::new(OUOperator::fractional_heat(2, s).unwrap());
            for t in [0.01, 0.1, 1.0] {
                let got = operator_norm(&ctx, t, &[vec(&[0.6, 0.8])]).unwrap().value();
                let exact = (2.0 * s * t).powf(-1.0 / (2.0 * s)) * E.powf(-1.0 / (2.0 * s));
                assert!((got / exact - 1.0).abs() < 1e-9, "s={s} t={t}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn zero_and_non_smoothing_directions() {
        let q = DMatrix::from_diagonal(&vec(&[1.0, 0.0]));
        let ctx = SymbolContext::new(OUOperator::new(DMatrix::zeros(2, 2), q, 1.0).unwrap());
        assert_eq!(operator_norm(&ctx, 0.1, &[vec(&[0.0, 0.0])]).unwrap().value(), 0.0);
        let unb = operator_norm(&ctx, 0.1, &[vec(&[1.0, 0.0]), vec(&[0.0, 1.0])]).unwrap();
        assert!(matches!(unb, OperatorNorm::Unbounded { direction: 1, .. }));
        assert!(operator_norm(&ctx, 0.1, &[vec(&[1.0, 0.0])]).unwrap().is_finite());
    }

    #[test]
    fn heat_seminorm_matches_gaussian_moment() {
        // u = exp(-|x|^2), Q = I, s = 1: |d_1 e^{-tP} u|^2 is a Gaussian moment.
        let ctx = SymbolContext::new(OUOperator::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), 1.0).unwrap());
        let u = GaussianState::standard(2);
        for t in [0.05, 0.5, 2.0] {
            let got = seminorm(&ctx, &u, t, &[vec(&[1.0, 0.0])]).unwrap();
            // |u^_t|^2 = pi^2 exp(-c |xi|^2) with c = 1/2 + t.
            let c = 0.5 + t;
            let integral = PI * PI * (PI / c) * (0.5 / c);
            let exact = (integral / (4.0 * PI * PI)).sqrt();
            assert!((got / exact - 1.0).abs() < 1e-7, "t={t}: {got} vs {exact}");
        }
    }

    #[test]
    fn plancherel_is_consistent() {
        let u = GaussianState::new(
            Complex64::new(0.3, 1.2),
            vec(&[1.0, -0.5, 0.2]),
            vec(&[3.0, 0.0, -2.0]),
            DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.5, 0.1, 0.0, 0.1, 2.0]),
        )
        .unwrap();
        let q = fourier_l2_norm(&u).unwrap();
        assert!((q / u.norm_l2() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn seminorm_is_symmetric_in_directions() {
        let ctx = SymbolContext::new(OUOperator::kolmogorov(1, 1.0).unwrap());
        let u = GaussianState::standard(2);
        let d = [vec(&[1.0, 0.5]), vec(&[0.0, 1.0])];
        let a = seminorm(&ctx, &u, 0.3, &d).unwrap();
        let b = seminorm(&ctx, &u, 0.3, &[d[1].clone(), d[0].clone()]).unwrap();
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn drift_free_p_is_a_multiplier() {
        let op = OUOperator::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), 0.7).unwrap();
        let u = GaussianState::standard(2);
        let xi = vec(&[1.0, -2.0]);
        let expected = u.fourier(&xi) * 0.5 * xi.norm_squared().powf(0.7);
        assert!((apply_p(&op, &u, &xi) - expected).norm() < 1e-14);
    }

    #[test]
    fn too_many_dimensions_is_unsupported() {
        let ctx = SymbolContext::new(OUOperator::fractional_heat(5, 1.0).unwrap());
        let u = GaussianState::standard(5);
        assert!(matches!(seminorm(&ctx, &u, 0.1, &[DVector::from_element(5, 1.0)]), Err(Error::Unsupported(_))));
    }
}
