//! Dense Kronecker calculus and matrix functions of symmetric matrices.
//!
//! `vec` is column stacking throughout, so that
//! `vec(M1 M2 M3) = (M3ᵀ ⊗ M1) vec(M2)`. nalgebra stores matrices column-major,
//! which makes `vec` a copy of the backing slice.
//!
//! Jacobians follow the identification rule `d vec F(X) = DF(X) d vec X`.

use alloc::vec::Vec;

use nalgebra::{Cholesky, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tol;
use crate::{Matrix, Vector};

/// Column-stacking vectorization.
pub fn vec(m: &Matrix) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`] for a `rows x cols` matrix.
pub fn unvec(v: &Vector, rows: usize, cols: usize) -> Result<Matrix> {
    if v.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            what: "unvec",
            expected: (rows * cols, 1),
            found: (v.len(), 1),
        });
    }
    Ok(Matrix::from_column_slice(rows, cols, v.as_slice()))
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// `A ⊕ B = A ⊗ I_m + I_n ⊗ B` for `A: n x n`, `B: m x m`.
pub fn kron_sum(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    ensure_square(a, "kron_sum lhs")?;
    ensure_square(b, "kron_sum rhs")?;
    let (n, m) = (a.nrows(), b.nrows());
    Ok(kron(a, &Matrix::identity(m, m)) + kron(&Matrix::identity(n, n), b))
}

/// Index form of the commutation matrix `K_{m,n}`: `(K v)[r] = v[perm[r]]`.
///
/// `K_{m,n} vec(M) = vec(Mᵀ)` for every `m x n` matrix `M`.
pub fn commutation_permutation(m: usize, n: usize) -> Vec<usize> {
    let mut perm = alloc::vec![0; m * n];
    for i in 0..m {
        for j in 0..n {
            perm[i * n + j] = j * m + i;
        }
    }
    perm
}

/// Dense commutation matrix `K_{m,n}` of size `mn x mn`.
pub fn commutation_matrix(m: usize, n: usize) -> Matrix {
    let mut k = Matrix::zeros(m * n, m * n);
    for (r, &c) in commutation_permutation(m, n).iter().enumerate() {
        k[(r, c)] = 1.0;
    }
    k
}

/// `K_{m,n} X` computed by permuting rows instead of multiplying.
pub fn commute_rows(m: usize, n: usize, x: &Matrix) -> Result<Matrix> {
    if x.nrows() != m * n {
        return Err(Error::DimensionMismatch {
            what: "commute_rows",
            expected: (m * n, x.ncols()),
            found: x.shape(),
        });
    }
    let perm = commutation_permutation(m, n);
    Ok(Matrix::from_fn(x.nrows(), x.ncols(), |r, c| x[(perm[r], c)]))
}

/// `(I + K₀) X` for the square commutation matrix of order `p`, without forming `K₀`.
pub fn sym_commute_rows(p: usize, x: &Matrix) -> Result<Matrix> {
    Ok(x + commute_rows(p, p, x)?)
}

// Jacobians ------------------------------------------------------------------

/// Jacobian of `X ↦ A X B`: `Bᵀ ⊗ A`.
pub fn jac_axb(a: &Matrix, b: &Matrix) -> Matrix {
    kron(&b.transpose(), a)
}

/// Jacobian of `X ↦ X Xᵀ`: `(I + K₀)(X ⊗ I)`.
pub fn jac_xxt(x: &Matrix) -> Matrix {
    let p = x.nrows();
    let inner = kron(x, &Matrix::identity(p, p));
    x_plus_commuted(p, inner)
}

/// Jacobian of `X ↦ X S Xᵀ` for symmetric `S`: `(I + K₀)(X S ⊗ I)`.
pub fn jac_xsxt(x: &Matrix, s: &SymmetricPd) -> Result<Matrix> {
    if s.dim() != x.ncols() {
        return Err(Error::DimensionMismatch {
            what: "jac_xsxt",
            expected: (x.ncols(), x.ncols()),
            found: s.as_matrix().shape(),
        });
    }
    let p = x.nrows();
    let inner = kron(&(x * s.as_matrix()), &Matrix::identity(p, p));
    Ok(x_plus_commuted(p, inner))
}

/// Jacobian of `X ↦ X⁻¹`: `-(X⁻ᵀ ⊗ X⁻¹)`.
pub fn jac_inv(x: &Matrix) -> Result<Matrix> {
    let xi = inverse(x, "jac_inv argument")?;
    Ok(-kron(&xi.transpose(), &xi))
}

/// Jacobian of the principal square root at `S ≻ 0`: `(S^½ ⊕ S^½)⁻¹`.
///
/// Exact for symmetric perturbations, which is the only class the square
/// root is defined on.
pub fn jac_sqrt_psd(s: &SymmetricPd) -> Result<Matrix> {
    let r = s.sqrt();
    inverse(&kron_sum(&r, &r)?, "Kronecker sum of the square root")
}

fn x_plus_commuted(p: usize, x: Matrix) -> Matrix {
    let perm = commutation_permutation(p, p);
    let mut out = x.clone();
    for c in 0..x.ncols() {
        for r in 0..x.nrows() {
            out[(r, c)] += x[(perm[r], c)];
        }
    }
    out
}

// Symmetric matrices ---------------------------------------------------------

/// A symmetric positive definite matrix, stored symmetrized.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricPd {
    matrix: Matrix,
}

impl SymmetricPd {
    pub fn new(m: Matrix, what: &'static str) -> Result<Self> {
        let m = checked_symmetric(&m, what)?;
        let min = min_eigenvalue(&m);
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite {
                what,
                min_eigenvalue: min,
            });
        }
        Ok(SymmetricPd { matrix: m })
    }

    pub fn identity(n: usize) -> Self {
        SymmetricPd {
            matrix: Matrix::identity(n, n),
        }
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_inner(self) -> Matrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn sqrt(&self) -> Matrix {
        spectral_map(&self.matrix, libm::sqrt)
    }

    pub fn inv_sqrt(&self) -> Matrix {
        spectral_map(&self.matrix, |l| 1.0 / libm::sqrt(l))
    }

    pub fn inverse(&self) -> Matrix {
        spectral_map(&self.matrix, |l| 1.0 / l)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.matrix)
    }
}

/// `(S + Sᵀ)/2` after checking finiteness and `‖S − Sᵀ‖_max ≤ sym_tol`.
pub fn checked_symmetric(s: &Matrix, what: &'static str) -> Result<Matrix> {
    ensure_square(s, what)?;
    ensure_finite(s, what)?;
    let scale = max_abs(s);
    let asym = max_abs(&(s - s.transpose()));
    if asym > tol::SYMMETRY_REL * scale {
        return Err(Error::NotSymmetric {
            what,
            asymmetry: asym,
        });
    }
    Ok(symmetrize(s))
}

pub fn symmetrize(s: &Matrix) -> Matrix {
    (s + s.transpose()) * 0.5
}

/// Principal square root of a symmetric PSD matrix.
///
/// Eigenvalues in `[-1e-12·λ_max, 0)` are clamped to zero; anything more
/// negative is rejected.
pub fn sqrtm_psd(s: &Matrix) -> Result<Matrix> {
    sqrtm_psd_named(s, "sqrtm argument")
}

pub(crate) fn sqrtm_psd_named(s: &Matrix, what: &'static str) -> Result<Matrix> {
    let s = checked_symmetric(s, what)?;
    let eig = SymmetricEigen::new(s);
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let clamp = tol::EIG_CLAMP_REL * lmax;
    let lmin = eig.eigenvalues.min();
    if lmin < -clamp {
        return Err(Error::IndefiniteBeyondTolerance {
            what,
            min_eigenvalue: lmin,
            tolerance: clamp,
        });
    }
    Ok(recompose(&eig, |l| libm::sqrt(l.max(0.0))))
}

/// Matrix geometric mean `A # B = A^½ (A^-½ B A^-½)^½ A^½`.
pub fn geometric_mean(a: &SymmetricPd, b: &SymmetricPd) -> Result<SymmetricPd> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            what: "geometric_mean",
            expected: a.as_matrix().shape(),
            found: b.as_matrix().shape(),
        });
    }
    let ra = a.sqrt();
    let ria = a.inv_sqrt();
    let inner = symmetrize(&(&ria * b.as_matrix() * &ria));
    let root = sqrtm_psd_named(&inner, "geometric mean inner factor")?;
    SymmetricPd::new(symmetrize(&(&ra * root * &ra)), "geometric mean")
}

pub fn min_eigenvalue(s: &Matrix) -> f64 {
    if s.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(s)).eigenvalues.min()
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn eigenvalues_sorted(s: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(s))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Reciprocal condition number `λ_min / λ_max` of a symmetric matrix (0 if not PD).
pub fn spd_rcond(s: &Matrix) -> f64 {
    let ev = eigenvalues_sorted(s);
    match (ev.first(), ev.last()) {
        (Some(&lo), Some(&hi)) if lo > 0.0 && hi > 0.0 => lo / hi,
        _ => 0.0,
    }
}

fn spectral_map(s: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    recompose(&SymmetricEigen::new(s.clone()), f)
}

fn recompose(eig: &SymmetricEigen<f64, Dyn>, f: impl Fn(f64) -> f64) -> Matrix {
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let fl = f(l);
        scaled.column_mut(j).scale_mut(fl);
    }
    symmetrize(&(scaled * v.transpose()))
}

// Guarded factorizations -----------------------------------------------------

/// General inverse with a 1-norm condition guard.
pub fn inverse(x: &Matrix, what: &'static str) -> Result<Matrix> {
    ensure_square(x, what)?;
    ensure_finite(x, what)?;
    let inv = x
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::SingularMatrix { what, rcond: 0.0 })?;
    let rcond = 1.0 / (norm1(x) * norm1(&inv));
    if !(rcond >= tol::RCOND_MIN) {
        return Err(Error::SingularMatrix { what, rcond });
    }
    Ok(inv)
}

/// Solve `X Y = B` with the same guard as [`inverse`].
pub fn solve(x: &Matrix, b: &Matrix, what: &'static str) -> Result<Matrix> {
    Ok(inverse(x, what)? * b)
}

/// Cholesky factorization of a symmetric PD matrix, rejecting near-singular input.
pub fn cholesky(s: &Matrix, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    ensure_square(s, what)?;
    ensure_finite(s, what)?;
    let chol = Cholesky::new(symmetrize(s)).ok_or(Error::NotPositiveDefinite {
        what,
        min_eigenvalue: f64::NAN,
    })?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let rcond = if hi > 0.0 { (lo / hi) * (lo / hi) } else { 0.0 };
    if !(rcond >= tol::RCOND_MIN) {
        return Err(Error::SingularMatrix { what, rcond });
    }
    Ok(chol)
}

// Small helpers --------------------------------------------------------------

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn norm1(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub(crate) fn ensure_square(m: &Matrix, what: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            what,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

pub(crate) fn ensure_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what })
    }
}

pub(crate) fn ensure_shape(m: &Matrix, shape: (usize, usize), what: &'static str) -> Result<()> {
    if m.shape() != shape {
        return Err(Error::DimensionMismatch {
            what,
            expected: shape,
            found: m.shape(),
        });
    }
    Ok(())
}
