//! Periodic grid states and the two-step spectral solver: semi-Lagrangian
//! transport along the drift flow, then the diffusion multiplier in Fourier
//! space.
//!
//! Grid points are `x_m = -L + m h` with `h = 2L/N`, stored row-major with the
//! first axis slowest. Transport uses an LDU factorization of `exp(-tB)`:
//! shears become exact Fourier phase shifts and the diagonal part becomes a
//! trigonometric-interpolation resampling along each axis.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg;
use crate::semigroup::gaussian::GaussianState;
use crate::symbol::SymbolContext;

/// Largest dimension supported by the grid solver.
pub const MAX_GRID_DIM: usize = 2;
/// Relative amplitude above which a boundary layer counts as occupied.
pub const BOUNDARY_TOL: f64 = 1e-8;
/// Multiplier value at the Nyquist frequency above which aliasing is flagged.
pub const ALIAS_TOL: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    n: usize,
    size: usize,
    half_length: f64,
    values: Vec<Complex64>,
}

/// Non-fatal diagnostics from [`grid_evolve`].
#[derive(Debug, Clone, PartialEq)]
pub enum GridWarning {
    /// The flow maps part of the box outside it while the data is not
    /// negligible near the boundary; periodic wrap-around contaminates the result.
    BoxEscape { boundary_amplitude: f64 },
    /// The multiplier has not decayed at the Nyquist frequency.
    Alias { nyquist_multiplier: f64 },
}

impl std::fmt::Display for GridWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GridWarning::BoxEscape { boundary_amplitude } => write!(
                f,
                "characteristics leave the box while the boundary layer carries relative amplitude {boundary_amplitude:.3e}"
            ),
            GridWarning::Alias { nyquist_multiplier } => {
                write!(f, "multiplier at the Nyquist frequency is {nyquist_multiplier:.3e}")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridEvolution {
    pub state: GridState,
    pub warnings: Vec<GridWarning>,
    /// `|norm after transport - exp(Tr(B) t / 2) norm before|`, the discrete
    /// defect of the similitude identity.
    pub resampling_error: f64,
}

impl GridState {
    pub fn new(n: usize, size: usize, half_length: f64, values: Vec<Complex64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidState("grid dimension must be positive".into()));
        }
        if size < 2 || !size.is_power_of_two() {
            return Err(Error::InvalidState(format!("points per axis {size} must be a power of two")));
        }
        if !(half_length > 0.0 && half_length.is_finite()) {
            return Err(Error::InvalidState(format!("half box length {half_length} must be positive")));
        }
        let expected = size.checked_pow(n as u32).ok_or_else(|| Error::InvalidState("grid too large".into()))?;
        if values.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: values.len() });
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidState("non-finite grid value".into()));
        }
        Ok(Self { n, size, half_length, values })
    }

    pub fn from_fn<F: Fn(&DVector<f64>) -> Complex64>(n: usize, size: usize, half_length: f64, f: F) -> Result<Self> {
        let total = size.pow(n as u32);
        let h = 2.0 * half_length / size as f64;
        let mut x = DVector::zeros(n);
        let values = (0..total)
            .map(|flat| {
                let mut rest = flat;
                for axis in (0..n).rev() {
                    x[axis] = -half_length + h * (rest % size) as f64;
                    rest /= size;
                }
                f(&x)
            })
            .collect();
        Self::new(n, size, half_length, values)
    }

    pub fn sample_gaussian(u: &GaussianState, size: usize, half_length: f64) -> Result<Self> {
        Self::from_fn(u.n(), size, half_length, |x| u.value(x))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_length / self.size as f64
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// Discrete `L^2` norm `(h^n sum |u_m|^2)^{1/2}`.
    pub fn norm_l2(&self) -> f64 {
        let hn = self.spacing().powi(self.n as i32);
        (hn * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// Angular frequency of FFT index `j` along one axis.
    pub fn frequency(&self, j: usize) -> f64 {
        let signed = if j < self.size / 2 { j as i64 } else { j as i64 - self.size as i64 };
        PI * signed as f64 / self.half_length
    }

    /// Approximate continuous transform at the grid frequencies,
    /// `u^(k_j) ~ h^n (-1)^{|j|} FFT[u]_j`, in FFT index order.
    pub fn fourier_samples(&self) -> Vec<Complex64> {
        let mut data = self.values.clone();
        let plan = Plans::new(self.size);
        for axis in 0..self.n {
            transform_axis(&mut data, self.n, self.size, axis, |line| plan.forward.process(line));
        }
        let hn = self.spacing().powi(self.n as i32);
        data.iter_mut().enumerate().for_each(|(flat, v)| {
            let parity: usize = self.indices(flat).iter().sum();
            let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
            *v *= hn * sign;
        });
        data
    }

    /// Relative `l^2` distance between [`Self::fourier_samples`] and a
    /// reference transform evaluated at the same frequencies.
    pub fn fourier_error<F>(&self, reference: F) -> f64
    where
        F: Fn(&DVector<f64>) -> Complex64 + Sync,
    {
        let samples = self.fourier_samples();
        let (num, den) = samples
            .par_iter()
            .enumerate()
            .map(|(flat, v)| {
                let k = self.frequency_vector(flat);
                let r = reference(&k);
                ((v - r).norm_sqr(), r.norm_sqr())
            })
            .collect::<Vec<_>>()
            .iter()
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        (num / den).sqrt()
    }

    fn indices(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.n];
        for axis in (0..self.n).rev() {
            idx[axis] = flat % self.size;
            flat /= self.size;
        }
        idx
    }

    pub fn frequency_vector(&self, flat: usize) -> DVector<f64> {
        let idx = self.indices(flat);
        DVector::from_iterator(self.n, idx.iter().map(|&j| self.frequency(j)))
    }

    /// Largest modulus within the outer eighth of the box, relative to the
    /// overall maximum.
    pub fn boundary_amplitude(&self) -> f64 {
        let max = self.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if max == 0.0 {
            return 0.0;
        }
        let band = (self.size / 16).max(1);
        let edge = |j: usize| j < band || j >= self.size - band;
        let mut worst = 0.0f64;
        for (flat, v) in self.values.iter().enumerate() {
            if self.indices(flat).into_iter().any(edge) {
                worst = worst.max(v.norm());
            }
        }
        worst / max
    }

    fn swap_axes(&self) -> Self {
        debug_assert_eq!(self.n, 2);
        let n = self.size;
        let mut values = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                values[j * n + i] = self.values[i * n + j];
            }
        }
        Self { values, ..self.clone() }
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Plans {
    fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { forward: planner.plan_fft_forward(size), inverse: planner.plan_fft_inverse(size) }
    }
}

/// Applies `op` to every line of the array along `axis`.
fn transform_axis<F>(data: &mut [Complex64], n: usize, size: usize, axis: usize, op: F)
where
    F: Fn(&mut [Complex64]) + Sync,
{
    let stride = size.pow((n - 1 - axis) as u32);
    let block = stride * size;
    data.par_chunks_mut(block).for_each(|chunk| {
        let mut line = vec![Complex64::new(0.0, 0.0); size];
        for offset in 0..stride {
            for (i, l) in line.iter_mut().enumerate() {
                *l = chunk[offset + i * stride];
            }
            op(&mut line);
            for (i, l) in line.iter().enumerate() {
                chunk[offset + i * stride] = *l;
            }
        }
    });
}

/// Same as [`transform_axis`], but `op` also receives the coordinate of the
/// line along `other` (used for shears).
fn transform_axis_with<F>(data: &mut [Complex64], size: usize, axis: usize, op: F)
where
    F: Fn(usize, &mut [Complex64]) + Sync,
{
    // Two-dimensional arrays only: the other axis index labels the line.
    let mut line = vec![Complex64::new(0.0, 0.0); size];
    for other in 0..size {
        for (i, l) in line.iter_mut().enumerate() {
            *l = if axis == 0 { data[i * size + other] } else { data[other * size + i] };
        }
        op(other, &mut line);
        for (i, l) in line.iter().enumerate() {
            if axis == 0 {
                data[i * size + other] = *l;
            } else {
                data[other * size + i] = *l;
            }
        }
    }
}

/// `f(y) -> f(y + delta)` for a periodic line, as a Fourier phase shift.
fn shift_line(line: &mut [Complex64], delta: f64, half_length: f64, plans: &Plans) {
    let size = line.len();
    plans.forward.process(line);
    for (j, v) in line.iter_mut().enumerate() {
        let k = if j < size / 2 { j as f64 } else { j as f64 - size as f64 } * PI / half_length;
        if j == size / 2 {
            *v *= (k * delta).cos();
        } else {
            *v *= Complex64::from_polar(1.0, k * delta);
        }
    }
    plans.inverse.process(line);
    let scale = 1.0 / size as f64;
    line.iter_mut().for_each(|v| *v *= scale);
}

/// Matrix evaluating the trigonometric interpolant of periodic samples at the
/// points `factor * x_m`.
fn dilation_matrix(size: usize, half_length: f64, factor: f64) -> DMatrix<f64> {
    let h = 2.0 * half_length / size as f64;
    let k0 = PI / half_length;
    let nyq = k0 * (size / 2) as f64;
    DMatrix::from_fn(size, size, |m, j| {
        let y = factor * (-half_length + h * m as f64);
        let d = y - (-half_length + h * j as f64);
        // sum_{|k| < N/2} exp(i k d) = sin((N-1) k0 d / 2) / sin(k0 d / 2)
        let s = (0.5 * k0 * d).sin();
        let dirichlet = if s.abs() < 1e-12 {
            let c = (0.5 * k0 * d).cos();
            (size as f64 - 1.0) * ((0.5 * (size as f64 - 1.0) * k0 * d).cos() / c)
        } else {
            (0.5 * (size as f64 - 1.0) * k0 * d).sin() / s
        };
        (dirichlet + (nyq * d).cos()) / size as f64
    })
}

fn dilate_axis(data: &mut [Complex64], n: usize, size: usize, half_length: f64, axis: usize, factor: f64) {
    if factor == 1.0 {
        return;
    }
    let m = dilation_matrix(size, half_length, factor);
    transform_axis(data, n, size, axis, |line| {
        let input = line.to_vec();
        for (row, out) in line.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (col, v) in input.iter().enumerate() {
                acc += v * m[(row, col)];
            }
            *out = acc;
        }
    });
}

/// `v(x) = u(E x)` on the grid for an invertible `E` (`n <= 2`).
pub fn transport_grid(u: &GridState, e: &DMatrix<f64>) -> Result<GridState> {
    match u.n {
        1 => {
            let mut values = u.values.clone();
            dilate_axis(&mut values, 1, u.size, u.half_length, 0, e[(0, 0)]);
            Ok(GridState { values, ..u.clone() })
        }
        2 => {
            let (a, b) = (e[(0, 0)], e[(0, 1)]);
            if b.abs() > a.abs() {
                // u(E x) = w(P x) with w(y) = u(E P y), P swapping the axes.
                let mut ep = e.clone();
                ep.swap_columns(0, 1);
                return Ok(transport_grid(u, &ep)?.swap_axes());
            }
            let (c, d) = (e[(1, 0)], e[(1, 1)]);
            let lower = c / a;
            let upper = b / a;
            let d2 = d - c * b / a;
            let plans = Plans::new(u.size);
            let l = u.half_length;
            let h = u.spacing();
            let mut values = u.values.clone();
            // w1(y) = u(y1, lower y1 + y2)
            if lower != 0.0 {
                transform_axis_with(&mut values, u.size, 1, |i, line| {
                    shift_line(line, lower * (-l + h * i as f64), l, &plans)
                });
            }
            // w2(y) = w1(a y1, d2 y2)
            dilate_axis(&mut values, 2, u.size, l, 0, a);
            dilate_axis(&mut values, 2, u.size, l, 1, d2);
            // w3(x) = w2(x1 + upper x2, x2)
            if upper != 0.0 {
                transform_axis_with(&mut values, u.size, 0, |j, line| {
                    shift_line(line, upper * (-l + h * j as f64), l, &plans)
                });
            }
            Ok(GridState { values, ..u.clone() })
        }
        n => Err(Error::Unsupported(format!("grid transport supports n <= {MAX_GRID_DIM}, got {n}"))),
    }
}

/// Whether `E` maps some corner of the box outside the box.
fn flow_escapes(e: &DMatrix<f64>, half_length: f64) -> bool {
    let n = e.nrows();
    (0..(1usize << n)).any(|mask| {
        let corner =
            DVector::from_iterator(n, (0..n).map(|i| if mask >> i & 1 == 1 { half_length } else { -half_length }));
        (e * corner).iter().any(|v| v.abs() > half_length * (1.0 + 1e-12))
    })
}

/// `exp(-tP) u` on the grid: transport, then the diffusion multiplier.
pub fn grid_evolve(ctx: &SymbolContext, u: &GridState, t: f64) -> Result<GridEvolution> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("time {t} must be nonnegative")));
    }
    if u.n != ctx.n() {
        return Err(Error::DimensionMismatch { expected: ctx.n(), got: u.n });
    }
    if u.n > MAX_GRID_DIM {
        return Err(Error::Unsupported(format!("grid evolution supports n <= {MAX_GRID_DIM}, got {}", u.n)));
    }
    if t == 0.0 {
        return Ok(GridEvolution { state: u.clone(), warnings: Vec::new(), resampling_error: 0.0 });
    }
    let mut warnings = Vec::new();
    let e = linalg::matrix_exp(ctx.op.b(), -t);
    let transported = transport_grid(u, &e)?;
    if flow_escapes(&e, u.half_length) {
        let amp = u.boundary_amplitude().max(transported.boundary_amplitude());
        if amp > BOUNDARY_TOL {
            warnings.push(GridWarning::BoxEscape { boundary_amplitude: amp });
        }
    }
    let expected = (ctx.op.trace_b() * t / 2.0).exp() * u.norm_l2();
    let resampling_error = (transported.norm_l2() - expected).abs();

    let slice = ctx.slice(t);
    let multipliers: Vec<f64> = (0..transported.values.len())
        .into_par_iter()
        .map(|flat| (-t * slice.a(&transported.frequency_vector(flat))).exp())
        .collect();
    let nyquist = u.size / 2;
    let alias = multipliers
        .iter()
        .enumerate()
        .filter(|(flat, _)| transported.indices(*flat).contains(&nyquist))
        .map(|(_, m)| *m)
        .fold(0.0, f64::max);
    if alias >= ALIAS_TOL {
        warnings.push(GridWarning::Alias { nyquist_multiplier: alias });
    }

    let plans = Plans::new(u.size);
    let mut data = transported.values;
    for axis in 0..u.n {
        transform_axis(&mut data, u.n, u.size, axis, |line| plans.forward.process(line));
    }
    data.iter_mut().zip(&multipliers).for_each(|(v, m)| *v *= m);
    for axis in 0..u.n {
        transform_axis(&mut data, u.n, u.size, axis, |line| plans.inverse.process(line));
    }
    let scale = 1.0 / (u.size.pow(u.n as u32)) as f64;
    data.iter_mut().for_each(|v| *v *= scale);
    Ok(GridEvolution { state: GridState { values: data, ..u.clone() }, warnings, resampling_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semigroup::gaussian::{evolve, transport_apply};
    use crate::structure::OUOperator;

    fn vec(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridState::new(1, 6, 1.0, vec![Complex64::new(0.0, 0.0); 6]).is_err());
        assert!(GridState::new(1, 8, 1.0, vec![Complex64::new(0.0, 0.0); 7]).is_err());
        assert!(GridState::new(1, 8, 0.0, vec![Complex64::new(0.0, 0.0); 8]).is_err());
    }

    #[test]
    fn discrete_norm_matches_closed_form() {
        let u = GaussianState::standard(2);
        let g = GridState::sample_gaussian(&u, 64, 8.0).unwrap();
        assert!((g.norm_l2() / u.norm_l2() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_transform_matches_closed_form() {
        let u = GaussianState::new(
            Complex64::new(1.0, 0.0),
            vec(&[0.5, -0.3]),
            vec(&[1.0, 0.5]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.6]),
        )
        .unwrap();
        let g = GridState::sample_gaussian(&u, 128, 10.0).unwrap();
        assert!(g.fourier_error(|k| u.fourier(k)) < 1e-10);
    }

    #[test]
    fn one_dimensional_dilation_matches_exact_transport() {
        let b = DMatrix::from_element(1, 1, 0.4);
        let u =
            GaussianState::new(Complex64::new(1.0, 0.0), vec(&[0.3]), vec(&[0.0]), DMatrix::identity(1, 1)).unwrap();
        let g = GridState::sample_gaussian(&u, 256, 10.0).unwrap();
        let moved = transport_grid(&g, &linalg::matrix_exp(&b, -0.5)).unwrap();
        let exact = transport_apply(&u, &b, 0.5);
        let err = moved.fourier_error(|k| exact.fourier(k));
        assert!(err < 1e-6, "err={err}");
    }

    #[test]
    fn general_two_dimensional_transport() {
        let b = DMatrix::from_row_slice(2, 2, &[0.2, 0.7, -0.4, -0.1]);
        let u =
            GaussianState::new(Complex64::new(1.0, 0.0), vec(&[0.2, -0.4]), vec(&[0.0, 1.0]), DMatrix::identity(2, 2))
                .unwrap();
        let g = GridState::sample_gaussian(&u, 128, 9.0).unwrap();
        for t in [0.3, 2.5] {
            let moved = transport_grid(&g, &linalg::matrix_exp(&b, -t)).unwrap();
            let exact = transport_apply(&u, &b, t);
            let err = moved.fourier_error(|k| exact.fourier(k));
            assert!(err < 1e-6, "t={t} err={err}");
        }
    }

    #[test]
    fn time_zero_leaves_the_grid_unchanged() {
        let ctx = SymbolContext::new(OUOperator::kolmogorov(1, 1.0).unwrap());
        let g = GridState::sample_gaussian(&GaussianState::standard(2), 32, 6.0).unwrap();
        let out = grid_evolve(&ctx, &g, 0.0).unwrap();
        assert_eq!(out.state, g);
    }

    #[test]
    fn heat_grid_evolution_matches_closed_form() {
        let ctx = SymbolContext::new(OUOperator::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1), 1.0).unwrap());
        let u = GaussianState::standard(1);
        let g = GridState::sample_gaussian(&u, 256, 10.0).unwrap();
        let out = grid_evolve(&ctx, &g, 0.5).unwrap();
        let err = out.state.fourier_error(|k| u.fourier(k) * (-0.25 * k.norm_squared()).exp());
        assert!(err < 1e-6, "err={err}");
        assert!(out.state.norm_l2() <= g.norm_l2());
    }

    #[test]
    fn kolmogorov_grid_matches_semi_analytic() {
        let ctx = SymbolContext::new(OUOperator::kolmogorov(1, 1.0).unwrap());
        let u = GaussianState::standard(2);
        let g = GridState::sample_gaussian(&u, 128, 8.0).unwrap();
        let out = grid_evolve(&ctx, &g, 0.4).unwrap();
        let ev = evolve(&ctx, &u, 0.4);
        let err = out.state.fourier_error(|k| ev.value(k));
        assert!(err < 1e-6, "err={err}");
    }

    #[test]
    fn escape_and_alias_warnings() {
        let b = DMatrix::from_element(1, 1, -1.0);
        let ctx = SymbolContext::new(OUOperator::new(b, DMatrix::identity(1, 1), 1.0).unwrap());
        let wide =
            GaussianState::new(Complex64::new(1.0, 0.0), vec(&[0.0]), vec(&[0.0]), DMatrix::from_element(1, 1, 0.05))
                .unwrap();
        let g = GridState::sample_gaussian(&wide, 64, 4.0).unwrap();
        let out = grid_evolve(&ctx, &g, 1e-3).unwrap();
        assert!(out.warnings.iter().any(|w| matches!(w, GridWarning::BoxEscape { .. })));
        assert!(out.warnings.iter().any(|w| matches!(w, GridWarning::Alias { .. })));
    }

    #[test]
    fn higher_dimensions_are_unsupported() {
        let ctx = SymbolContext::new(OUOperator::fractional_heat(3, 1.0).unwrap());
        let g = GridState::new(3, 4, 1.0, vec![Complex64::new(0.0, 0.0); 64]).unwrap();
        assert!(matches!(grid_evolve(&ctx, &g, 0.1), Err(Error::Unsupported(_))));
    }
}
