//! Small dense linear algebra used throughout: PSD square roots, the matrix
//! exponential, and SVD-based kernels and ranks.
//!
//! Everything here targets desk-scale dimensions (n <= 16).

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// Relative tolerance used for symmetry and PSD checks.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Default relative threshold below which singular values count as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Relative asymmetry `|M - M^T|_F / |M|_F` (zero for the zero matrix).
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let norm = frobenius(m);
    if norm == 0.0 {
        return 0.0;
    }
    frobenius(&(m - m.transpose())) / norm
}

/// Symmetric PSD square root by eigendecomposition.
///
/// Eigenvalues in `[-1e-10 * lambda_max, 1e-10 * lambda_max]` are set to zero,
/// so roundoff in a rank-deficient `Q` does not survive as `O(1e-8)` singular
/// values of the root; anything more negative is rejected.
pub fn psd_sqrt(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !q.is_square() {
        return Err(Error::DimensionMismatch { expected: q.nrows(), got: q.ncols() });
    }
    let asym = asymmetry(q);
    if asym > SYMMETRY_TOL {
        return Err(Error::NonSymmetric(asym));
    }
    let n = q.nrows();
    if n == 0 {
        return Ok(q.clone());
    }
    let sym = (q + q.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let largest = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut roots = DVector::zeros(n);
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -SYMMETRY_TOL * largest {
            return Err(Error::NotPsd { eigenvalue: lambda, largest });
        }
        roots[i] = if lambda <= SYMMETRY_TOL * largest { 0.0 } else { lambda.sqrt() };
    }
    let v = &eig.eigenvectors;
    let r = v * DMatrix::from_diagonal(&roots) * v.transpose();
    // Symmetrize away the roundoff from the triple product.
    Ok((&r + r.transpose()) * 0.5)
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `exp(t M)` by scaling and squaring around a truncated Taylor series.
///
/// The scaled argument has 1-norm at most 1/2, where 30 Taylor terms leave a
/// truncation error far below machine precision. `exp(0) = I` exactly, and a
/// nilpotent `M` with `M^2 = 0` gives `I + tM` exactly since powers of two are
/// exact scalings.
pub fn matrix_exp(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let a = m * t;
    let norm = one_norm(&a);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a * 2.0_f64.powi(-squarings);

    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for j in 1..=30 {
        term = &term * &scaled / j as f64;
        let tn = one_norm(&term);
        result += &term;
        if tn == 0.0 || tn <= f64::EPSILON * 1e-3 * one_norm(&result) {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Truncated Taylor polynomial `sum_{j<=order} (tM)^j / j!`, used as a
/// cross-check for [`matrix_exp`].
pub fn taylor_exp(m: &DMatrix<f64>, t: f64, order: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let a = m * t;
    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for j in 1..=order {
        term = &term * &a / j as f64;
        result += &term;
    }
    result
}

/// Orthonormal bases of the kernel and of its orthogonal complement (the row
/// space) of `m`, as column matrices. Singular values at or below
/// `rel_tol * sigma_max` count as zero.
pub fn kernel_and_row_space(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = m.ncols();
    // Pad with zero rows so the SVD always returns a full n x n right factor.
    let padded = if m.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = SVD::new(padded, false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let threshold = rel_tol * sigma_max;

    let mut kernel = Vec::new();
    let mut range = Vec::new();
    for (i, &sigma) in svd.singular_values.iter().enumerate() {
        let row = v_t.row(i).transpose();
        if sigma_max == 0.0 || sigma <= threshold {
            kernel.push(row);
        } else {
            range.push(row);
        }
    }
    (columns(n, &kernel), columns(n, &range))
}

/// Numerical rank with the same relative threshold convention.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let svd = SVD::new(m.clone(), false, false);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return 0;
    }
    svd.singular_values.iter().filter(|&&s| s > rel_tol * sigma_max).count()
}

/// Stack column vectors into an `n x k` matrix (`n x 0` when empty).
pub fn columns(n: usize, cols: &[DVector<f64>]) -> DMatrix<f64> {
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(cols)
    }
}

/// Orthogonal projector `I - V V^T` onto the complement of span(V), where V has
/// orthonormal columns.
pub fn complement_projector(v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.nrows();
    DMatrix::identity(n, n) - v * v.transpose()
}

/// Vertical stack of `sqrt_q * (B^T)^j` for `j = 0..=depth`.
pub fn kernel_stack(sqrt_q: &DMatrix<f64>, bt: &DMatrix<f64>, depth: usize) -> DMatrix<f64> {
    let n = sqrt_q.nrows();
    let mut stack = DMatrix::zeros(n * (depth + 1), n);
    let mut block = sqrt_q.clone();
    for j in 0..=depth {
        stack.view_mut((j * n, 0), (n, n)).copy_from(&block);
        block = &block * bt;
    }
    stack
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn sqrt_of_identity_is_identity() {
        let i = DMatrix::<f64>::identity(3, 3);
        let r = psd_sqrt(&i).unwrap();
        assert!(frobenius(&(r - i)) < 1e-14);
    }

    #[test]
    fn sqrt_of_kolmogorov_diffusion() {
        for s in [0.5, 1.0, 1.5] {
            let c = 2f64.powf(1.0 / s);
            let q = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, c]);
            let r = psd_sqrt(&q).unwrap();
            let expected = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 2f64.powf(0.5 / s)]);
            assert!(frobenius(&(r - expected)) < 1e-12);
        }
    }

    #[test]
    fn sqrt_of_random_gram_matrix_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=6 {
            let a = random_matrix(&mut rng, n);
            let m = a.transpose() * &a;
            let r = psd_sqrt(&m).unwrap();
            let err = frobenius(&(&r * &r - &m)) / frobenius(&m);
            assert!(err < 1e-10, "n={n} err={err}");
            assert!(asymmetry(&r) < 1e-14);
        }
    }

    #[test]
    fn sqrt_rejects_bad_input() {
        let ns = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(psd_sqrt(&ns), Err(Error::NonSymmetric(_))));
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(psd_sqrt(&neg), Err(Error::NotPsd { .. })));
        // Tiny negative eigenvalue from roundoff is clamped.
        let tiny = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-13]);
        let r = psd_sqrt(&tiny).unwrap();
        assert_eq!(r[(1, 1)], 0.0);
    }

    #[test]
    fn exp_of_zero_is_exact_identity() {
        let z = DMatrix::<f64>::zeros(4, 4);
        assert_eq!(matrix_exp(&z, 3.0), DMatrix::identity(4, 4));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matrix_exp(&m, 0.0), DMatrix::identity(2, 2));
    }

    #[test]
    fn exp_of_nilpotent_is_exact() {
        let bt = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        for t in [0.001, 0.37, 1.0, 10.0, 123.0] {
            let e = matrix_exp(&bt, t);
            let expected = DMatrix::identity(2, 2) + &bt * t;
            assert_eq!(e, expected, "t={t}");
        }
    }

    #[test]
    fn exp_group_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=8 {
            let m = random_matrix(&mut rng, n);
            for t in [0.1, 1.0, 3.0] {
                let (e, e_inv) = (matrix_exp(&m, t), matrix_exp(&m, -t));
                // Roundoff in the product scales with the conditioning of exp(tM).
                let cond = (frobenius(&e) * frobenius(&e_inv) / n as f64).max(1.0);
                let err = frobenius(&(e * e_inv - DMatrix::identity(n, n)));
                assert!(err < 1e-12 * cond, "n={n} t={t} err={err} cond={cond}");
            }
        }
    }

    #[test]
    fn exp_matches_long_taylor_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 4);
        let e = matrix_exp(&m, 0.7);
        let series = taylor_exp(&m, 0.7, 60);
        assert!(frobenius(&(e - &series)) / frobenius(&series) < 1e-14);
    }

    #[test]
    fn root_of_a_rank_one_product_has_rank_one() {
        let w = DVector::from_column_slice(&[0.3, -1.7, 0.9]);
        let root = psd_sqrt(&(&w * w.transpose())).unwrap();
        assert_eq!(rank(&root, DEFAULT_RANK_TOL), 1);
        assert!((&root * &root - &w * w.transpose()).norm() < 1e-14);
    }

    #[test]
    fn kernel_of_stack() {
        let sqrt_q = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let (ker, row) = kernel_and_row_space(&sqrt_q, DEFAULT_RANK_TOL);
        assert_eq!(ker.ncols(), 1);
        assert_eq!(row.ncols(), 1);
        assert!((ker[(0, 0)].abs() - 1.0).abs() < 1e-14);
        let zero = DMatrix::<f64>::zeros(3, 3);
        let (ker, row) = kernel_and_row_space(&zero, DEFAULT_RANK_TOL);
        assert_eq!((ker.ncols(), row.ncols()), (3, 0));
    }

    #[test]
    fn rank_of_wide_matrix() {
        let m = DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(rank(&m, DEFAULT_RANK_TOL), 2);
        assert_eq!(rank(&DMatrix::zeros(2, 4), DEFAULT_RANK_TOL), 0);
    }
}
