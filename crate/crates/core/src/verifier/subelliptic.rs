//! Fractional derivative norms along `sqrt(Q) (B^T)^k` controlled by the graph
//! norm of the generator, sampled over families of Gaussians.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::f64::consts::PI;

use super::report::{Point, Series, VerificationReport};
use super::VerifierConfig;
use crate::error::{Error, Result};
use crate::semigroup::{apply_p_fourier, integrate_frequency, Envelope, GaussianState};
use crate::symbol::SymbolContext;

/// Smallest accepted sample count for [`subelliptic_check`].
pub const MIN_SAMPLES: usize = 50;
const HIGH_FREQUENCIES: [f64; 4] = [32.0, 64.0, 128.0, 256.0];
const DILATIONS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

/// The multiplier `<sqrt(Q) (B^T)^k xi>^theta` with `theta = 2s/(1 + 2ks)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubellipticTerm {
    pub k: usize,
    pub theta: f64,
    pub matrix: DMatrix<f64>,
}

impl SubellipticTerm {
    pub fn new(ctx: &SymbolContext, k: usize) -> Self {
        let s = ctx.s();
        let bt = ctx.op.b().transpose();
        let mut matrix = ctx.report.sqrt_q.clone();
        for _ in 0..k {
            matrix = &matrix * &bt;
        }
        Self { k, theta: 2.0 * s / (1.0 + 2.0 * k as f64 * s), matrix }
    }

    /// Terms `k = 0..=r`.
    pub fn family(ctx: &SymbolContext) -> Vec<Self> {
        (0..=ctx.report.r).map(|k| Self::new(ctx, k)).collect()
    }

    /// Square of the multiplier.
    pub fn weight_sq(&self, xi: &DVector<f64>) -> f64 {
        (1.0 + (&self.matrix * xi).norm_squared()).powf(self.theta)
    }
}

fn plancherel(n: usize, integral: f64) -> f64 {
    (integral.max(0.0) / (2.0 * PI).powi(n as i32)).sqrt()
}

/// `sum_k |<Lambda_k D>^{theta_k} u| / (|P u| + |u|)`.
pub fn subelliptic_ratio(ctx: &SymbolContext, u: &GaussianState) -> Result<f64> {
    let n = ctx.n();
    if u.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: u.n() });
    }
    let env = Envelope::of_state(u);
    let degree = 2 * ctx.s().ceil() as usize + 2;
    let mut lhs = 0.0;
    for term in SubellipticTerm::family(ctx) {
        let integral =
            integrate_frequency(&env, degree, &|xi: &DVector<f64>| term.weight_sq(xi) * u.fourier(xi).norm_sqr())?;
        lhs += plancherel(n, integral);
    }
    let sqrt_q = &ctx.report.sqrt_q;
    // |sqrt(Q) xi|^{2s} has a cusp across ker sqrt(Q) = V_0.
    let graph_env = if ctx.s().fract() == 0.0 { env.clone() } else { env.clone().singular_on(&ctx.report.v_bases[0]) };
    let graph = integrate_frequency(&graph_env, degree, &|xi: &DVector<f64>| {
        apply_p_fourier(&ctx.op, sqrt_q, u, xi).norm_sqr()
    })?;
    let plain = integrate_frequency(&env, 0, &|xi: &DVector<f64>| u.fourier(xi).norm_sqr())?;
    Ok(lhs / (plancherel(n, graph) + plancherel(n, plain)))
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Seeded Gaussians: decay eigenvalues log-uniform in `[0.25, 4]` in a random
/// orthonormal frame, centers in `[-2, 2]^n`, frequency shifts of norm at most 16.
fn base_family(n: usize, count: usize, seed: u64) -> Result<Vec<GaussianState>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let rot = random_orthogonal(&mut rng, n);
            let eig = DVector::from_fn(n, |_, _| (rng.random_range(-1.0..=1.0) * 4f64.ln()).exp());
            let gamma = &rot * DMatrix::from_diagonal(&eig) * rot.transpose();
            let gamma = (&gamma + gamma.transpose()) * 0.5;
            let mu = DVector::from_fn(n, |_, _| rng.random_range(-2.0..=2.0));
            let dir = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let omega = dir.normalize() * rng.random_range(0.0..=16.0);
            GaussianState::new(Complex64::new(1.0, 0.0), mu, omega, gamma)
        })
        .collect()
}

/// Frequencies 32 to 256 along coordinate axes and the two main diagonals,
/// with isotropic, wide and anisotropic decay.
fn high_frequency_family(n: usize) -> Result<Vec<GaussianState>> {
    let mut dirs: Vec<DVector<f64>> =
        (0..n).map(|i| DVector::from_fn(n, |j, _| if i == j { 1.0 } else { 0.0 })).collect();
    if n > 1 {
        dirs.push(DVector::from_element(n, 1.0).normalize());
        dirs.push(DVector::from_fn(n, |j, _| if j % 2 == 0 { 1.0 } else { -1.0 }).normalize());
    }
    let aniso = DMatrix::from_diagonal(&DVector::from_fn(n, |j, _| if j % 2 == 0 { 4.0 } else { 0.25 }));
    let gammas = [DMatrix::identity(n, n), DMatrix::identity(n, n) * 0.25, aniso];
    let mut out = Vec::new();
    for w in HIGH_FREQUENCIES {
        for d in &dirs {
            for g in &gammas {
                out.push(GaussianState::new(Complex64::new(1.0, 0.0), DVector::zeros(n), d * w, g.clone())?);
            }
        }
    }
    Ok(out)
}

/// Compares the largest ratio over a high-frequency family with the largest
/// over `sample_count` seeded Gaussians; also records `u(kappa x)` for the
/// standard Gaussian.
pub fn subelliptic_check(
    ctx: &SymbolContext,
    sample_count: usize,
    seed: u64,
    cfg: &VerifierConfig,
) -> Result<VerificationReport> {
    if sample_count < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!("need at least {MIN_SAMPLES} samples, got {sample_count}")));
    }
    let n = ctx.n();
    let base = base_family(n, sample_count, seed)?;
    let high = high_frequency_family(n)?;
    let ratios =
        |family: &[GaussianState]| family.par_iter().map(|u| subelliptic_ratio(ctx, u)).collect::<Result<Vec<f64>>>();
    let base_r = ratios(&base)?;
    let high_r = ratios(&high)?;
    let standard = GaussianState::standard(n);
    let scaled = DILATIONS.iter().map(|&k| standard.dilated(k)).collect::<Result<Vec<_>>>()?;
    let scale_r = ratios(&scaled)?;

    let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (base_max, high_max) = (max(&base_r), max(&high_r));

    let mut report = VerificationReport::new("subelliptic");
    report.input("samples", sample_count);
    report.input("seed", seed);
    report.input("terms", SubellipticTerm::family(ctx).iter().map(|t| (t.k, t.theta)).collect::<Vec<_>>());
    for (name, param, vals, xs) in [
        ("base", "sample", &base_r, None),
        ("high", "sample", &high_r, None),
        ("scaling", "kappa", &scale_r, Some(&DILATIONS[..])),
    ] {
        let mut s = Series::new(name, param);
        for (i, v) in vals.iter().enumerate() {
            s.points.push(Point::new(xs.map_or(i as f64, |x| x[i]), *v));
        }
        report.series.push(s);
    }
    report.fit("base_max", base_max);
    report.fit("high_max", high_max);
    report.fit("constant", base_max.max(high_max));
    report.fit("scaling_max", max(&scale_r));
    report.tolerance("subelliptic_factor", cfg.subelliptic_factor);
    report.pass = high_max.is_finite() && base_max.is_finite() && high_max <= cfg.subelliptic_factor * base_max;
    Ok(report)
}
