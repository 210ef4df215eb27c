//! Modulated Gaussians `u(x) = A exp(i<omega, x>) exp(-(x - mu)^T Gamma (x - mu))`
//! and their exact evolution on the Fourier side.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::symbol::{SymbolContext, TimeSlice};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    amplitude: Complex64,
    mu: DVector<f64>,
    omega: DVector<f64>,
    gamma: DMatrix<f64>,
    gamma_inv: DMatrix<f64>,
    det: f64,
}

impl GaussianState {
    pub fn new(amplitude: Complex64, mu: DVector<f64>, omega: DVector<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        let n = gamma.nrows();
        if n == 0 || !gamma.is_square() {
            return Err(Error::InvalidState("decay matrix must be square and nonempty".into()));
        }
        if mu.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: mu.len() });
        }
        if omega.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: omega.len() });
        }
        let finite = amplitude.re.is_finite()
            && amplitude.im.is_finite()
            && mu.iter().chain(omega.iter()).chain(gamma.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidState("non-finite parameter".into()));
        }
        let asym = linalg::asymmetry(&gamma);
        if asym > linalg::SYMMETRY_TOL {
            return Err(Error::NonSymmetric(asym));
        }
        let gamma = (&gamma + gamma.transpose()) * 0.5;
        let low = gamma.clone().symmetric_eigen().eigenvalues.min();
        if low <= 0.0 {
            return Err(Error::InvalidState(format!("decay matrix is not positive definite (eigenvalue {low:.3e})")));
        }
        let chol = nalgebra::Cholesky::new(gamma.clone())
            .ok_or_else(|| Error::InvalidState("decay matrix is not positive definite".into()))?;
        let gamma_inv = chol.inverse();
        let det = chol.determinant();
        Ok(Self { amplitude, mu, omega, gamma, gamma_inv, det })
    }

    /// `exp(-|x|^2)` in dimension `n`.
    pub fn standard(n: usize) -> Self {
        Self::new(Complex64::new(1.0, 0.0), DVector::zeros(n), DVector::zeros(n), DMatrix::identity(n, n))
            .expect("identity decay is valid")
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn amplitude(&self) -> Complex64 {
        self.amplitude
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn omega(&self) -> &DVector<f64> {
        &self.omega
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn gamma_inv(&self) -> &DMatrix<f64> {
        &self.gamma_inv
    }

    /// Same envelope with the frequency shift replaced.
    pub fn with_omega(&self, omega: DVector<f64>) -> Result<Self> {
        Self::new(self.amplitude, self.mu.clone(), omega, self.gamma.clone())
    }

    pub fn scaled_amplitude(&self, factor: Complex64) -> Self {
        Self { amplitude: self.amplitude * factor, ..self.clone() }
    }

    /// `x -> u(kappa x)` for `kappa > 0`.
    pub fn dilated(&self, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::InvalidArgument(format!("dilation factor {kappa} must be positive")));
        }
        Self::new(self.amplitude, &self.mu / kappa, &self.omega * kappa, &self.gamma * (kappa * kappa))
    }

    /// Physical-space value.
    pub fn value(&self, x: &DVector<f64>) -> Complex64 {
        let d = x - &self.mu;
        let quad = d.dot(&(&self.gamma * &d));
        self.amplitude * Complex64::from_polar((-quad).exp(), self.omega.dot(x))
    }

    /// `|u|_{L^2} = |A| (pi/2)^{n/4} det(Gamma)^{-1/4}`.
    pub fn norm_l2(&self) -> f64 {
        let n = self.n() as f64;
        self.amplitude.norm() * (std::f64::consts::FRAC_PI_2.powf(0.25 * n)) * self.det.powf(-0.25)
    }

    /// Fourier transform with the convention `u^(xi) = int exp(-i<x, xi>) u(x) dx`.
    pub fn fourier(&self, xi: &DVector<f64>) -> Complex64 {
        let d = xi - &self.omega;
        let quad = d.dot(&(&self.gamma_inv * &d));
        let n = self.n() as f64;
        let modulus = std::f64::consts::PI.powf(0.5 * n) / self.det.sqrt() * (-0.25 * quad).exp();
        self.amplitude * Complex64::from_polar(modulus, -self.mu.dot(&d))
    }

    /// `u^(xi)` together with its gradient in `xi`.
    pub fn fourier_with_gradient(&self, xi: &DVector<f64>) -> (Complex64, Vec<Complex64>) {
        let value = self.fourier(xi);
        let d = xi - &self.omega;
        let half = &self.gamma_inv * d * 0.5;
        let grad = (0..self.n()).map(|j| value * Complex64::new(-half[j], -self.mu[j])).collect();
        (value, grad)
    }
}

/// Closed-form Fourier transform of a Gaussian state.
pub fn fourier_gaussian(u: &GaussianState, xi: &DVector<f64>) -> Complex64 {
    u.fourier(xi)
}

/// `x -> u(exp(-tB) x)`, again a Gaussian state.
pub fn transport_apply(u: &GaussianState, b: &DMatrix<f64>, t: f64) -> GaussianState {
    let e = linalg::matrix_exp(b, -t);
    let e_inv = linalg::matrix_exp(b, t);
    let gamma = e.transpose() * &u.gamma * &e;
    let gamma = (&gamma + gamma.transpose()) * 0.5;
    GaussianState::new(u.amplitude, e_inv * &u.mu, e.transpose() * &u.omega, gamma)
        .expect("congruence preserves positive definiteness")
}

/// One step of the splitting formula at time `t`: the drift flow is applied
/// through `exp(t B^T)` on frequencies, the diffusion through the multiplier.
#[derive(Debug, Clone)]
struct Stage {
    t: f64,
    slice: TimeSlice,
    flow: DMatrix<f64>,
    growth: f64,
}

/// Pointwise evaluator of `(exp(-tP) u)^` for a Gaussian `u`.
#[derive(Debug, Clone)]
pub struct EvolvedFourierState {
    pub base: GaussianState,
    stages: Vec<Stage>,
}

impl EvolvedFourierState {
    /// Total elapsed time.
    pub fn t(&self) -> f64 {
        self.stages.iter().map(|s| s.t).sum()
    }

    /// Applies `exp(-t2 P)` on top of the current state, composing the
    /// splitting formula instead of re-evaluating at the summed time.
    pub fn evolve_further(&self, ctx: &SymbolContext, t2: f64) -> Self {
        let mut next = self.clone();
        next.stages.push(stage(ctx, t2));
        next
    }

    pub fn value(&self, xi: &DVector<f64>) -> Complex64 {
        let mut factor = 1.0;
        let mut eta = xi.clone();
        for st in self.stages.iter().rev() {
            if st.t == 0.0 {
                continue;
            }
            factor *= (-st.t * st.slice.a(&eta)).exp() * st.growth;
            eta = &st.flow * eta;
        }
        self.base.fourier(&eta) * factor
    }
}

fn stage(ctx: &SymbolContext, t: f64) -> Stage {
    assert!(t >= 0.0 && t.is_finite(), "evolution time must be nonnegative");
    Stage { t, slice: ctx.slice(t), flow: ctx.flow_t(t), growth: (ctx.op.trace_b() * t).exp() }
}

/// `u^_t(xi) = exp(-t a_t(xi)) exp(Tr(B) t) u^_0(exp(t B^T) xi)`.
pub fn evolve(ctx: &SymbolContext, u: &GaussianState, t: f64) -> EvolvedFourierState {
    EvolvedFourierState { base: u.clone(), stages: vec![stage(ctx, t)] }
}
