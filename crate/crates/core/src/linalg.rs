//! Dense complex linear algebra shared by every other module.
//!
//! Matrices and vectors are plain `nalgebra` dynamic types over `Complex64`.
//! The Hermitian eigensolver is the workhorse: propagators, Gibbs states and
//! the eigenbases of generated unitaries all go through it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Hermiticity tolerance, max-norm of `A - A^dagger`.
pub const TOL_HERM: f64 = 1e-10;
/// Unitarity tolerance, max-norm of `U U^dagger - 1`.
pub const TOL_UNITARY: f64 = 1e-10;
/// Two unit-circle eigenvalues closer than this belong to the same group.
pub const TOL_EIG_GROUP: f64 = 1e-8;

const EIG_MAX_ITER: usize = 10_000;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Pauli axis label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

pub fn pauli(axis: Axis) -> CMatrix {
    match axis {
        Axis::X => CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]),
        Axis::Y => CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]),
        Axis::Z => CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]),
    }
}

pub fn basis_vector(dim: usize, index: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    v[index] = ONE;
    v
}

/// `<a|b>`, antilinear in the first argument.
#[inline]
pub fn inner(a: &CVector, b: &CVector) -> C64 {
    a.dotc(b)
}

/// `<a|M|b>`.
pub fn sandwich(a: &CVector, m: &CMatrix, b: &CVector) -> C64 {
    a.dotc(&(m * b))
}

/// `|a><b|`.
pub fn outer(a: &CVector, b: &CVector) -> CMatrix {
    a * b.adjoint()
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .fold(0.0, |acc, (x, y)| acc.max((x - y).norm()))
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

pub fn hermiticity_defect(a: &CMatrix) -> f64 {
    max_abs_diff(a, &a.adjoint())
}

pub fn unitarity_defect(u: &CMatrix) -> f64 {
    if !u.is_square() {
        return f64::INFINITY;
    }
    max_abs_diff(&(u * u.adjoint()), &identity(u.nrows()))
}

/// Kronecker product. The left factor is the most significant tensor slot.
pub fn tensor(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Spectral decomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<CVector>,
}

impl HermitianEigen {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `sum_k f(lambda_k) |k><k|`.
    pub fn apply_fn<F>(&self, f: F) -> CMatrix
    where
        F: Fn(f64) -> C64,
    {
        let d = self.dim();
        let mut out = CMatrix::zeros(d, d);
        for (lam, v) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            out += outer(v, v) * f(*lam);
        }
        out
    }

    pub fn reconstruct(&self) -> CMatrix {
        self.apply_fn(|lam| c(lam, 0.0))
    }

    /// `exp(-i H t)` from the cached decomposition.
    pub fn propagator(&self, t: f64) -> CMatrix {
        self.apply_fn(|lam| C64::from_polar(1.0, -lam * t))
    }

    /// Matrix whose columns are the eigenvectors.
    pub fn eigenvector_matrix(&self) -> CMatrix {
        CMatrix::from_columns(&self.eigenvectors)
    }
}

/// Diagonalize a Hermitian matrix.
pub fn eig_hermitian(a: &CMatrix) -> Result<HermitianEigen> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    let defect = hermiticity_defect(a);
    if defect >= TOL_HERM {
        return Err(Error::NotHermitian { defect });
    }
    // Symmetrize so the solver sees an exactly Hermitian input.
    let sym = (a + a.adjoint()) * c(0.5, 0.0);
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, EIG_MAX_ITER).ok_or(
        Error::NoConvergence {
            iterations: EIG_MAX_ITER,
        },
    )?;

    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    Ok(HermitianEigen {
        eigenvalues,
        eigenvectors,
    })
}

/// `exp(-i H t)` computed through the eigendecomposition of `H`.
pub fn mat_exp_unitary(h: &CMatrix, t: f64) -> Result<CMatrix> {
    Ok(eig_hermitian(h)?.propagator(t))
}

/// Modified Gram-Schmidt, in place. Returns the smallest pre-normalization
/// norm encountered, which signals near-dependence when tiny.
pub fn gram_schmidt(vectors: &mut [CVector]) -> f64 {
    let mut min_norm = f64::INFINITY;
    for k in 0..vectors.len() {
        let (done, rest) = vectors.split_at_mut(k);
        let v = &mut rest[0];
        for u in done.iter() {
            let proj = inner(u, v);
            *v -= u * proj;
        }
        let norm = v.norm();
        min_norm = min_norm.min(norm);
        if norm > 0.0 {
            *v /= c(norm, 0.0);
        }
    }
    min_norm
}
