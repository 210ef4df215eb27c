//! The linear-algebra structure attached to a pair `(B, Q)`: the square root
//! of the diffusion matrix, the kernel intersections `V_k`, the space `S` of
//! non-smoothing directions, the stabilization depth `r`, and the index of a
//! direction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, DEFAULT_RANK_TOL};

/// A fractional Ornstein-Uhlenbeck operator
/// `P = 1/2 (-Q nabla . nabla)^s + <Bx, nabla>` on `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct OUOperator {
    n: usize,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
    s: f64,
}

impl OUOperator {
    /// Validates shapes, `s > 0`, and that `Q` is symmetric PSD.
    pub fn new(b: DMatrix<f64>, q: DMatrix<f64>, s: f64) -> Result<Self> {
        let n = b.nrows();
        if n == 0 {
            return Err(Error::InvalidOperator("dimension must be positive".into()));
        }
        if !b.is_square() {
            return Err(Error::InvalidOperator(format!("B is {}x{}", b.nrows(), b.ncols())));
        }
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::InvalidOperator(format!("Q is {}x{}, expected {n}x{n}", q.nrows(), q.ncols())));
        }
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidOperator(format!("fractional order s={s} must be positive")));
        }
        if b.iter().chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidOperator("non-finite matrix entry".into()));
        }
        // Runs the symmetry and PSD checks.
        linalg::psd_sqrt(&q)?;
        Ok(Self { n, b, q, s })
    }

    /// The fractional Kolmogorov operator `(-Delta_v)^s + v . nabla_x` on
    /// `R^{2d}`, i.e. `B = [[0, I], [0, 0]]` and `Q = 2^{1/s} diag(0, I)`.
    pub fn kolmogorov(d: usize, s: f64) -> Result<Self> {
        let n = 2 * d;
        let mut b = DMatrix::zeros(n, n);
        let mut q = DMatrix::zeros(n, n);
        for i in 0..d {
            b[(i, d + i)] = 1.0;
            q[(d + i, d + i)] = 2f64.powf(1.0 / s);
        }
        Self::new(b, q, s)
    }

    /// The fractional Laplacian `(-Delta)^s` on `R^n`: `B = 0`, `Q = 2^{1/s} I`,
    /// so that the diffusion multiplier is exactly `exp(-t |xi|^{2s})`.
    pub fn fractional_heat(n: usize, s: f64) -> Result<Self> {
        let q = DMatrix::identity(n, n) * 2f64.powf(1.0 / s);
        Self::new(DMatrix::zeros(n, n), q, s)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn trace_b(&self) -> f64 {
        self.b.trace()
    }

    /// True when some power of `B` vanishes (checked up to `B^n`).
    pub fn is_nilpotent(&self) -> bool {
        let mut p = self.b.clone();
        let scale = linalg::frobenius(&self.b).max(1.0);
        for _ in 1..self.n {
            p = &p * &self.b;
        }
        linalg::frobenius(&p) <= 1e-12 * scale.powi(self.n as i32)
    }
}

/// Orthonormal basis of `S^perp` adapted to the flag
/// `V_0^perp ⊂ V_1^perp ⊂ ... ⊂ V_r^perp = S^perp`.
///
/// Column `a` carries `level[a] = k` when it lies in `V_{k-1} ∩ V_k^perp`.
/// Scaling level-`k` columns by `t^{-k}` gives coordinates in which the
/// short-time symbols stay well conditioned.
#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedFrame {
    pub basis: DMatrix<f64>,
    pub levels: Vec<usize>,
}

impl StratifiedFrame {
    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    /// `U diag(t^{-level})`.
    pub fn scaled_basis(&self, t: f64) -> DMatrix<f64> {
        let mut u = self.basis.clone();
        for (a, &k) in self.levels.iter().enumerate() {
            let f = t.powi(-(k as i32));
            u.column_mut(a).scale_mut(f);
        }
        u
    }
}

/// Everything derived from `(B, Q)` that governs partial smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub sqrt_q: DMatrix<f64>,
    /// Orthonormal basis of `S` as columns (possibly zero columns).
    pub s_basis: DMatrix<f64>,
    pub r: usize,
    /// Orthonormal bases of `V_0, ..., V_r` as columns.
    pub v_bases: Vec<DMatrix<f64>>,
    /// Orthogonal projectors onto `V_0^perp, ..., V_r^perp`.
    pub projectors: Vec<DMatrix<f64>>,
    pub kalman: bool,
    pub frame: StratifiedFrame,
    pub rank_tol: f64,
}

impl StructureReport {
    pub fn n(&self) -> usize {
        self.sqrt_q.nrows()
    }

    pub fn dim_s(&self) -> usize {
        self.s_basis.ncols()
    }

    pub fn dim_s_perp(&self) -> usize {
        self.n() - self.dim_s()
    }

    /// Orthogonal projection of `xi` onto `S`.
    pub fn s_component(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.s_basis * (self.s_basis.transpose() * xi)
    }

    /// Orthogonal projection of `xi` onto `S^perp`.
    pub fn s_perp_component(&self, xi: &DVector<f64>) -> DVector<f64> {
        xi - self.s_component(xi)
    }

    /// Index of a direction in `S^perp`: the smallest `k` with `xi ∈ V_k^perp`.
    pub fn index(&self, xi: &DVector<f64>) -> Result<usize> {
        index(self, xi)
    }
}

/// Relative tolerance for membership tests (`xi ∈ S^perp`, `xi ∈ V_k^perp`).
pub const MEMBERSHIP_TOL: f64 = 1e-8;

/// Computes `S`, `r`, the `V_k` and the stratified frame, using the default
/// rank threshold.
pub fn compute_structure(op: &OUOperator) -> StructureReport {
    compute_structure_with_tol(op, DEFAULT_RANK_TOL)
}

pub fn compute_structure_with_tol(op: &OUOperator, rank_tol: f64) -> StructureReport {
    let n = op.n();
    let sqrt_q = linalg::psd_sqrt(op.q()).expect("validated at construction");
    let bt = op.b().transpose();

    let full = linalg::kernel_stack(&sqrt_q, &bt, n - 1);
    let (s_basis, _) = linalg::kernel_and_row_space(&full, rank_tol);
    let dim_s = s_basis.ncols();

    let mut v_bases = Vec::new();
    let mut perp_bases = Vec::new();
    for k in 0..n {
        let stack = linalg::kernel_stack(&sqrt_q, &bt, k);
        let (ker, row) = linalg::kernel_and_row_space(&stack, rank_tol);
        let done = ker.ncols() <= dim_s;
        v_bases.push(ker);
        perp_bases.push(row);
        if done {
            break;
        }
    }
    let r = v_bases.len() - 1;
    // V_r and S agree as subspaces; use the full-stack basis for S so both
    // carry the same orthonormal representation.
    v_bases[r] = s_basis.clone();
    let projectors = v_bases.iter().map(linalg::complement_projector).collect();
    let frame = stratify(n, &perp_bases);
    let ctrl = controllability_matrix(&sqrt_q, op.b());
    let kalman = linalg::rank(&ctrl, rank_tol) == n;

    StructureReport { sqrt_q, s_basis, r, v_bases, projectors, kalman, frame, rank_tol }
}

fn stratify(n: usize, perp_bases: &[DMatrix<f64>]) -> StratifiedFrame {
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut levels = Vec::new();
    for (k, perp) in perp_bases.iter().enumerate() {
        let target = perp.ncols().saturating_sub(cols.len());
        if target == 0 {
            continue;
        }
        // New directions: the leading eigenvectors of the projector onto
        // V_k^perp compressed to the complement of the columns taken so far.
        let current = linalg::columns(n, &cols);
        let rest = DMatrix::identity(n, n) - &current * current.transpose();
        let m = &rest * perp * perp.transpose() * &rest;
        let eig = ((&m + m.transpose()) * 0.5).symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for &i in order.iter().take(target) {
            let v = eig.eigenvectors.column(i).into_owned();
            // Re-orthogonalize against the earlier columns for round-off.
            let v = &rest * v;
            cols.push(v.normalize());
            levels.push(k);
        }
    }
    StratifiedFrame { basis: linalg::columns(n, &cols), levels }
}

/// `[sqrt(Q), B sqrt(Q), ..., B^{n-1} sqrt(Q)]`, an `n x n^2` matrix.
pub fn controllability_matrix(sqrt_q: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = sqrt_q.nrows();
    let mut m = DMatrix::zeros(n, n * n);
    let mut block = sqrt_q.clone();
    for j in 0..n {
        m.view_mut((0, j * n), (n, n)).copy_from(&block);
        block = b * &block;
    }
    m
}

/// Kalman rank condition `rank [B | sqrt(Q)] = n`.
pub fn kalman_rank(op: &OUOperator) -> bool {
    kalman_rank_with_tol(op, DEFAULT_RANK_TOL)
}

pub fn kalman_rank_with_tol(op: &OUOperator, rank_tol: f64) -> bool {
    let sqrt_q = linalg::psd_sqrt(op.q()).expect("validated at construction");
    linalg::rank(&controllability_matrix(&sqrt_q, op.b()), rank_tol) == op.n()
}

/// `min { k : xi ∈ V_k^perp }`, with `index(0) = 0`.
pub fn index(report: &StructureReport, xi: &DVector<f64>) -> Result<usize> {
    if xi.len() != report.n() {
        return Err(Error::DimensionMismatch { expected: report.n(), got: xi.len() });
    }
    let norm = xi.norm();
    if norm == 0.0 {
        return Ok(0);
    }
    let tol = MEMBERSHIP_TOL * norm;
    let s_comp = report.s_component(xi).norm();
    if s_comp > tol {
        return Err(Error::NotInSPerp { s_component: s_comp, tolerance: MEMBERSHIP_TOL });
    }
    for (k, v) in report.v_bases.iter().enumerate() {
        let in_v = (v.transpose() * xi).norm();
        if in_v <= tol {
            return Ok(k);
        }
    }
    Ok(report.r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn kolmogorov_structure() {
        for s in [0.5, 1.0, 1.5] {
            let op = OUOperator::kolmogorov(1, s).unwrap();
            let rep = compute_structure(&op);
            assert_eq!(rep.dim_s(), 0);
            assert_eq!(rep.r, 1);
            assert!(rep.kalman);
            assert_eq!(rep.index(&vec(&[0.0, 1.0])).unwrap(), 0);
            assert_eq!(rep.index(&vec(&[1.0, 0.0])).unwrap(), 1);
            assert_eq!(rep.index(&vec(&[1.0, 1.0])).unwrap(), 1);
            assert_eq!(rep.frame.levels, vec![0, 1]);
        }
    }

    #[test]
    fn zero_diffusion_has_everything_in_s() {
        let b = DMatrix::from_row_slice(2, 2, &[0.3, 1.0, -2.0, 0.1]);
        let op = OUOperator::new(b, DMatrix::zeros(2, 2), 0.7).unwrap();
        let rep = compute_structure(&op);
        assert_eq!(rep.dim_s(), 2);
        assert_eq!(rep.r, 0);
        assert!(!rep.kalman);
        assert!(!kalman_rank(&op));
        assert_eq!(rep.index(&vec(&[0.0, 0.0])).unwrap(), 0);
        assert!(matches!(rep.index(&vec(&[1.0, 0.0])), Err(Error::NotInSPerp { .. })));
    }

    #[test]
    fn heat_has_index_zero_everywhere() {
        let op = OUOperator::new(DMatrix::zeros(3, 3), DMatrix::identity(3, 3), 1.0).unwrap();
        let rep = compute_structure(&op);
        assert_eq!(rep.r, 0);
        assert_eq!(rep.index(&vec(&[0.2, -1.0, 3.0])).unwrap(), 0);
    }

    #[test]
    fn rejects_invalid_operators() {
        let z = DMatrix::<f64>::zeros(2, 2);
        assert!(OUOperator::new(z.clone(), z.clone(), 0.0).is_err());
        assert!(OUOperator::new(z.clone(), DMatrix::zeros(3, 3), 1.0).is_err());
        let ns = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(OUOperator::new(z, ns, 1.0), Err(Error::NonSymmetric(_))));
    }

    #[test]
    fn nilpotency_detection() {
        assert!(OUOperator::kolmogorov(2, 1.0).unwrap().is_nilpotent());
        let heat = OUOperator::fractional_heat(2, 1.0).unwrap();
        assert!(heat.is_nilpotent());
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(!OUOperator::new(b, DMatrix::identity(2, 2), 1.0).unwrap().is_nilpotent());
    }
}
