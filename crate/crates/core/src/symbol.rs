//! The time-dependent symbol
//! `a_t(xi) = 1/2 int_0^1 |sqrt(Q) exp(alpha t B^T) xi|^{2s} d alpha`
//! and the quantities built from it.
//!
//! For a fixed `t` the matrix path `alpha -> R exp(alpha t B^T)`, where `R` is
//! a thin factor with `R^T R = Q` (so `|R w| = |sqrt(Q) w|`), is stored as a
//! Chebyshev expansion ([`TimeSlice`]), so evaluating the symbol at
//! many frequencies costs one matrix exponential per Chebyshev node instead of
//! one per quadrature node. [`SymbolContext::cumulative_exponent`] deliberately
//! avoids that representation and integrates over `[0, t]` with a fresh matrix
//! exponential at every node, so comparing the two forms is a real check.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::quadrature::{gauss_legendre, integrate_norm_power, AdaptiveOptions};
use crate::sphere::{self, SphereOptions};
use crate::structure::{compute_structure, OUOperator, StructureReport};

pub const DEFAULT_QUAD_ORDER: usize = 64;
pub const MIN_QUAD_ORDER: usize = 16;
pub const DEFAULT_OPT_SAMPLES: usize = 64;

/// Operator, structure and numerical knobs shared by all symbol evaluations.
#[derive(Debug, Clone)]
pub struct SymbolContext {
    pub op: OUOperator,
    pub report: StructureReport,
    /// Gauss-Legendre order of the fine rule in each adaptive panel.
    pub quad_order: usize,
    /// Scan size (dimensions 2 and 3) or start count (higher) for sphere searches.
    pub opt_samples: usize,
    pub seed: u64,
    bt: DMatrix<f64>,
    thin: DMatrix<f64>,
}

impl SymbolContext {
    pub fn new(op: OUOperator) -> Self {
        let report = compute_structure(&op);
        Self::with_settings(op, report, DEFAULT_QUAD_ORDER, DEFAULT_OPT_SAMPLES, 0).expect("default settings are valid")
    }

    pub fn with_settings(
        op: OUOperator,
        report: StructureReport,
        quad_order: usize,
        opt_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if quad_order < MIN_QUAD_ORDER {
            return Err(Error::InvalidArgument(format!(
                "quad_order must be at least {MIN_QUAD_ORDER}, got {quad_order}"
            )));
        }
        if opt_samples == 0 {
            return Err(Error::InvalidArgument("opt_samples must be positive".into()));
        }
        if report.n() != op.n() {
            return Err(Error::DimensionMismatch { expected: op.n(), got: report.n() });
        }
        let bt = op.b().transpose();
        let thin = thin_factor(&report.sqrt_q, report.rank_tol);
        Ok(Self { op, report, quad_order, opt_samples, seed, bt, thin })
    }

    pub fn n(&self) -> usize {
        self.op.n()
    }

    pub fn s(&self) -> f64 {
        self.op.s()
    }

    pub fn adaptive(&self) -> AdaptiveOptions {
        AdaptiveOptions { order: self.quad_order, ..AdaptiveOptions::default() }
    }

    pub fn sphere_options(&self) -> SphereOptions {
        SphereOptions { samples: self.opt_samples, seed: self.seed }
    }

    /// `exp(t B^T)`.
    pub fn flow_t(&self, t: f64) -> DMatrix<f64> {
        linalg::matrix_exp(&self.bt, t)
    }

    /// `R` with `R^T R = Q` and one row per nonzero eigenvalue of `Q`.
    pub fn thin_factor(&self) -> &DMatrix<f64> {
        &self.thin
    }

    pub fn slice(&self, t: f64) -> TimeSlice {
        TimeSlice::new(self, t)
    }

    fn check_dim(&self, xi: &DVector<f64>) {
        assert_eq!(xi.len(), self.n(), "frequency has wrong dimension");
    }

    /// The symbol `a_t(xi)`.
    pub fn a_t(&self, t: f64, xi: &DVector<f64>) -> f64 {
        self.check_dim(xi);
        self.slice(t).a(xi)
    }

    /// `q_t(xi) = int_0^1 |sqrt(Q) exp(alpha t B^T) xi|^2 d alpha`.
    pub fn q_t(&self, t: f64, xi: &DVector<f64>) -> f64 {
        self.check_dim(xi);
        self.slice(t).q(xi)
    }

    /// `A(t, xi) = 1/2 int_0^t |sqrt(Q) exp(tau B^T) xi|^{2s} d tau`, integrated
    /// directly in `tau` with a matrix exponential per node.
    pub fn cumulative_exponent(&self, t: f64, xi: &DVector<f64>) -> f64 {
        self.check_dim(xi);
        if t == 0.0 {
            return 0.0;
        }
        let sqrt_q = &self.report.sqrt_q;
        let norm_sq = |tau: f64| (sqrt_q * (linalg::matrix_exp(&self.bt, tau) * xi)).norm_squared();
        0.5 * integrate_norm_power(&norm_sq, 2.0 * self.s(), 0.0, t, self.adaptive()).value
    }

    /// `Gamma_{q,t,tau}(xi) = q_t(xi)^{q/2} exp(-tau a_t(xi))`.
    pub fn gamma(&self, q: f64, t: f64, tau: f64, xi: &DVector<f64>) -> f64 {
        self.check_dim(xi);
        let slice = self.slice(t);
        slice.q(xi).powf(0.5 * q) * (-tau * slice.a(xi)).exp()
    }

    /// `M_t`: the supremum over unit `eta` in `S^perp` of
    /// `q_t(eta)^{1/2} (2 a_t(eta))^{-1/(2s)}`.
    pub fn m_t(&self, t: f64) -> Result<f64> {
        let scaled = self.scaled_slice(t)?;
        let s = self.s();
        let objective = |z: &[f64]| {
            let z = DVector::from_column_slice(z);
            let p = scaled.profile(&z);
            0.5 * p.q().ln() - (2.0 * p.a(s)).ln() / (2.0 * s)
        };
        let opt = sphere::maximize(scaled.input_dim(), &objective, self.sphere_options());
        Ok(opt.value.exp())
    }

    /// Smallest value over unit `xi` in `S^perp` of
    /// `q_t(xi) / sum_{k<=r} t^{2k} |sqrt(Q) (B^T)^k xi|^2`.
    ///
    /// Both sides are quadratic forms, so the minimum is the smallest
    /// generalized eigenvalue of the pair of Gram matrices, taken in the
    /// stratified coordinates where both stay well conditioned as `t -> 0`.
    pub fn lower_bound_ratio(&self, t: f64) -> Result<f64> {
        let (num, den) = self.lower_bound_forms(t)?;
        let chol = nalgebra::Cholesky::new(den)
            .ok_or_else(|| Error::InvalidOperator("reference form is not positive definite".into()))?;
        let l_inv = chol.l().try_inverse().expect("Cholesky factor is invertible");
        let m = &l_inv * num * l_inv.transpose();
        let m = (&m + m.transpose()) * 0.5;
        Ok(m.symmetric_eigen().eigenvalues.min())
    }

    /// The two quadratic forms of [`Self::lower_bound_ratio`] in stratified
    /// coordinates `xi = U diag(t^{-level}) z`.
    pub fn lower_bound_forms(&self, t: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let scaled = self.scaled_slice(t)?;
        let num = scaled.gram(self.quad_order);
        let frame = &self.report.frame;
        let d = frame.dim();
        let mut den = DMatrix::zeros(d, d);
        let mut block = self.report.sqrt_q.clone() * &frame.basis;
        for j in 0..=self.report.r {
            for a in 0..d {
                for b in 0..d {
                    let (ka, kb) = (frame.levels[a], frame.levels[b]);
                    if j < ka.max(kb) {
                        continue;
                    }
                    let w = t.powi(2 * j as i32 - ka as i32 - kb as i32);
                    den[(a, b)] += w * block.column(a).dot(&block.column(b));
                }
            }
            block = &self.report.sqrt_q * self.bt.pow(j as u32 + 1) * &frame.basis;
        }
        Ok((num, den))
    }

    /// The time slice composed with the stratified frame, so that its inputs
    /// are coordinates `z` with `xi = U diag(t^{-level}) z`.
    pub fn scaled_slice(&self, t: f64) -> Result<TimeSlice> {
        if self.report.dim_s_perp() == 0 {
            return Err(Error::DegenerateOperator);
        }
        Ok(self.slice(t).restrict(&self.report.frame.scaled_basis(t)))
    }
}

/// Chebyshev expansion of `alpha -> R exp(alpha t B^T) W` on `[0, 1]`
/// for a fixed `t` and input basis `W` (initially the identity).
#[derive(Debug, Clone)]
pub struct TimeSlice {
    pub t: f64,
    pub s: f64,
    coeffs: Vec<DMatrix<f64>>,
    opts: AdaptiveOptions,
}

const CHEB_START: usize = 16;
const CHEB_MAX: usize = 512;
const CHEB_TAIL: f64 = 1e-15;

impl TimeSlice {
    fn new(ctx: &SymbolContext, t: f64) -> Self {
        assert!(t.is_finite() && t >= 0.0, "time must be nonnegative");
        let mut k = CHEB_START;
        loop {
            let coeffs = chebyshev_fit(k, |alpha| &ctx.thin * ctx.flow_t(alpha * t));
            let norms: Vec<f64> = coeffs.iter().map(linalg::frobenius).collect();
            let scale = norms.iter().cloned().fold(0.0, f64::max);
            let tail = norms[k - 2].max(norms[k - 1]);
            if scale == 0.0 || tail <= CHEB_TAIL * scale || k >= CHEB_MAX {
                let keep = norms.iter().rposition(|&v| v > CHEB_TAIL * scale).map_or(1, |i| i + 1);
                let mut coeffs = coeffs;
                coeffs.truncate(keep);
                return Self { t, s: ctx.s(), coeffs, opts: ctx.adaptive() };
            }
            k *= 2;
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.coeffs[0].ncols()
    }

    /// Composes the slice with a fixed input basis.
    pub fn restrict(&self, basis: &DMatrix<f64>) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| c * basis).collect(), ..self.clone() }
    }

    pub fn profile(&self, xi: &DVector<f64>) -> Profile {
        let rows = self.coeffs[0].nrows();
        let mut data = Vec::with_capacity(rows * self.coeffs.len());
        for c in &self.coeffs {
            data.extend((c * xi).iter());
        }
        Profile { rows, data, opts: self.opts }
    }

    pub fn a(&self, xi: &DVector<f64>) -> f64 {
        self.profile(xi).a(self.s)
    }

    pub fn q(&self, xi: &DVector<f64>) -> f64 {
        self.profile(xi).q()
    }

    /// The matrix path at `alpha` by Clenshaw summation.
    pub fn matrix_at(&self, alpha: f64) -> DMatrix<f64> {
        let x = 2.0 * alpha - 1.0;
        let (r, c) = self.coeffs[0].shape();
        let mut b1 = DMatrix::zeros(r, c);
        let mut b2 = DMatrix::zeros(r, c);
        for k in (1..self.coeffs.len()).rev() {
            let b0 = &self.coeffs[k] + &b1 * (2.0 * x) - &b2;
            b2 = b1;
            b1 = b0;
        }
        &self.coeffs[0] + b1 * x - b2
    }

    /// `int_0^1 M(alpha)^T M(alpha) d alpha`, exact for the Chebyshev
    /// polynomial once the rule has more than `degree` nodes.
    pub fn gram(&self, min_order: usize) -> DMatrix<f64> {
        let gl = gauss_legendre(min_order.max(self.degree() + 2));
        let c = self.input_dim();
        let mut g = DMatrix::zeros(c, c);
        for (alpha, w) in gl.mapped(0.0, 1.0) {
            let m = self.matrix_at(alpha);
            g += m.transpose() * m * w;
        }
        (&g + g.transpose()) * 0.5
    }
}

/// `diag(mu) U^T` from the eigendecomposition `sqrt(Q) = U diag(mu) U^T`,
/// keeping eigenvalues above `rel_tol` times the largest (at least one row).
fn thin_factor(sqrt_q: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = sqrt_q.nrows();
    let eig = sqrt_q.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..n).filter(|&i| top > 0.0 && eig.eigenvalues[i] > rel_tol * top).collect();
    if keep.is_empty() {
        return DMatrix::zeros(1, n);
    }
    DMatrix::from_fn(keep.len(), n, |r, c| eig.eigenvalues[keep[r]] * eig.eigenvectors[(c, keep[r])])
}

/// Chebyshev coefficients (first kind, on `[0, 1]`) of a matrix-valued
/// function from `k` samples at Chebyshev points.
fn chebyshev_fit<F: Fn(f64) -> DMatrix<f64>>(k: usize, f: F) -> Vec<DMatrix<f64>> {
    let pi = std::f64::consts::PI;
    let samples: Vec<DMatrix<f64>> = (0..k)
        .map(|j| {
            let x = (pi * (j as f64 + 0.5) / k as f64).cos();
            f(0.5 * (x + 1.0))
        })
        .collect();
    let shape = samples[0].shape();
    (0..k)
        .map(|m| {
            let mut c = DMatrix::zeros(shape.0, shape.1);
            for (j, s) in samples.iter().enumerate() {
                c += s * (pi * m as f64 * (j as f64 + 0.5) / k as f64).cos();
            }
            c *= 2.0 / k as f64;
            if m == 0 {
                c *= 0.5;
            }
            c
        })
        .collect()
}

/// The vector path `alpha -> sqrt(Q) exp(alpha t B^T) xi` for one frequency.
#[derive(Debug, Clone)]
pub struct Profile {
    rows: usize,
    data: Vec<f64>,
    opts: AdaptiveOptions,
}

impl Profile {
    /// `|v(alpha)|^2` by Clenshaw summation.
    pub fn norm_sq(&self, alpha: f64) -> f64 {
        let x = 2.0 * alpha - 1.0;
        let r = self.rows;
        let k = self.data.len() / r;
        let mut total = 0.0;
        for i in 0..r {
            let (mut b1, mut b2) = (0.0, 0.0);
            for m in (1..k).rev() {
                let b0 = self.data[m * r + i] + 2.0 * x * b1 - b2;
                b2 = b1;
                b1 = b0;
            }
            let v = self.data[i] + x * b1 - b2;
            total += v * v;
        }
        total
    }

    /// `1/2 int_0^1 |v|^{2s}`.
    pub fn a(&self, s: f64) -> f64 {
        let f = |alpha: f64| self.norm_sq(alpha);
        0.5 * integrate_norm_power(&f, 2.0 * s, 0.0, 1.0, self.opts).value
    }

    /// `int_0^1 |v|^2`.
    pub fn q(&self) -> f64 {
        let f = |alpha: f64| self.norm_sq(alpha);
        integrate_norm_power(&f, 2.0, 0.0, 1.0, self.opts).value
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    /// `int_0^1 |eta + alpha w|^{2s} d alpha` in closed form.
    fn kolmogorov_symbol(s: f64, t: f64, xi: f64, eta: f64) -> f64 {
        let p = 2.0 * s + 1.0;
        let f = |y: f64| y.signum() * y.abs().powf(p) / p;
        let w = t * xi;
        if w == 0.0 {
            eta.abs().powf(2.0 * s)
        } else {
            (f(eta + w) - f(eta)) / w
        }
    }

    #[test]
    fn heat_symbol_is_constant_in_time() {
        let ctx = SymbolContext::new(OUOperator::new(DMatrix::zeros(3, 3), DMatrix::identity(3, 3), 1.0).unwrap());
        let xi = vec(&[0.3, -1.2, 2.0]);
        for t in [1e-3, 0.5, 7.0] {
            assert!((ctx.a_t(t, &xi) - 0.5 * xi.norm_squared()).abs() < 1e-14);
        }
    }

    #[test]
    fn kolmogorov_symbol_matches_closed_form() {
        for s in [0.5, 0.75, 1.0, 1.5] {
            let ctx = SymbolContext::new(OUOperator::kolmogorov(1, s).unwrap());
            for (t, xi, eta) in [(0.3, 1.0, 0.2), (2.0, -0.7, 1.1), (0.01, 40.0, -0.2), (5.0, 0.0, 1.0)] {
                let got = ctx.a_t(t, &vec(&[xi, eta]));
                let exact = kolmogorov_symbol(s, t, xi, eta);
                assert!((got - exact).abs() <= 1e-12 * exact, "s={s} t={t}: {got} vs {exact}");
            }
        }
        let ctx = SymbolContext::new(OUOperator::kolmogorov(1, 1.0).unwrap());
        let (t, xi, eta) = (0.7, 1.3, -0.4);
        let poly = t * t * xi * xi / 3.0 + t * xi * eta + eta * eta;
        assert!((ctx.a_t(t, &vec(&[xi, eta])) - poly).abs() < 1e-12);
    }

    #[test]
    fn degenerate_diffusion_ignores_the_kernel_direction() {
        let q = DMatrix::from_diagonal(&vec(&[1.0, 0.0]));
        for s in [0.5, 1.3] {
            let ctx = SymbolContext::new(OUOperator::new(DMatrix::zeros(2, 2), q.clone(), s).unwrap());
            let got = ctx.a_t(0.4, &vec(&[-1.7, 5.0]));
            assert!((got - 0.5 * 1.7f64.powf(2.0 * s)).abs() < 1e-13);
            assert_eq!(ctx.a_t(0.4, &vec(&[0.0, 5.0])), 0.0);
            assert_eq!(ctx.gamma(2.0, 0.4, 0.4, &vec(&[0.0, 3.0])), 0.0);
        }
    }

    #[test]
    fn heat_gamma_peak_matches_calculus() {
        let ctx = SymbolContext::new(OUOperator::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), 1.0).unwrap());
        let tau = 0.3;
        let peak = (0..4000)
            .map(|i| {
                let rho = 1e-3 * i as f64;
                ctx.gamma(2.0, 1.0, tau, &vec(&[rho * 0.6, rho * 0.8]))
            })
            .fold(0.0, f64::max);
        assert!((peak - 2.0 / (std::f64::consts::E * tau)).abs() < 1e-6);
    }

    #[test]
    fn quadratic_case_has_unit_m_t() {
        // With s = 1 both integrals in M_t coincide.
        for op in [OUOperator::kolmogorov(1, 1.0).unwrap(), OUOperator::fractional_heat(3, 1.0).unwrap()] {
            let ctx = SymbolContext::new(op);
            for t in [1e-3, 0.1, 4.0] {
                assert!((ctx.m_t(t).unwrap() - 1.0).abs() < 1e-12);
            }
        }
        let ctx = SymbolContext::new(OUOperator::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), 0.6).unwrap());
        assert!((ctx.m_t(0.2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_lower_bound_ratio_is_time_independent() {
        let hilbert = nalgebra::Matrix2::new(1.0, 0.5, 0.5, 1.0 / 3.0);
        let expected: f64 = hilbert.symmetric_eigen().eigenvalues.min();
        let ctx = SymbolContext::new(OUOperator::kolmogorov(1, 0.5).unwrap());
        for t in [1e-3, 0.05, 1.0, 10.0] {
            let got = ctx.lower_bound_ratio(t).unwrap();
            assert!((got - expected).abs() < 1e-12, "t={t}: {got}");
        }
    }

    #[test]
    fn drift_free_lower_bound_ratio_is_one() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let ctx = SymbolContext::new(OUOperator::new(DMatrix::zeros(2, 2), q, 0.8).unwrap());
        assert!((ctx.lower_bound_ratio(0.3).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trivial_s_perp_is_degenerate() {
        let ctx = SymbolContext::new(OUOperator::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 2), 1.0).unwrap());
        assert!(matches!(ctx.m_t(0.1), Err(Error::DegenerateOperator)));
        assert!(matches!(ctx.lower_bound_ratio(0.1), Err(Error::DegenerateOperator)));
    }

    #[test]
    fn quad_order_is_validated() {
        let op = OUOperator::kolmogorov(1, 1.0).unwrap();
        let rep = compute_structure(&op);
        assert!(SymbolContext::with_settings(op, rep, 8, 64, 0).is_err());
    }

    #[test]
    fn doubling_the_rule_changes_little() {
        let op = OUOperator::new(
            DMatrix::from_row_slice(2, 2, &[0.2, 1.0, -0.5, 0.1]),
            DMatrix::from_diagonal(&vec(&[0.0, 1.0])),
            0.7,
        )
        .unwrap();
        let rep = compute_structure(&op);
        let a = SymbolContext::with_settings(op.clone(), rep.clone(), 32, 64, 0).unwrap();
        let b = SymbolContext::with_settings(op, rep, 64, 64, 0).unwrap();
        for xi in [vec(&[1.0, 0.3]), vec(&[-2.0, 5.0]), vec(&[0.1, -0.1])] {
            let (x, y) = (a.a_t(0.9, &xi), b.a_t(0.9, &xi));
            assert!((x - y).abs() <= 1e-10 * y);
        }
    }
}
