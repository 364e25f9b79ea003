//! Symmetric positive-definite solves with a scale-free singularity test.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Squared Cholesky pivots of the unit-diagonal matrix below this are
/// treated as singular (one column explained by the others to ~1e-12).
const MIN_SCALED_PIVOT: f64 = 1e-12;

/// Cholesky factorization of `D^{-1/2} A D^{-1/2}` with `D = diag(A)`.
///
/// Jacobi scaling makes the singularity test independent of covariate units.
pub(crate) struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    inv_sqrt_diag: DVector<f64>,
}

impl SpdFactor {
    pub(crate) fn new(a: &DMatrix<f64>) -> Option<Self> {
        let d = a.nrows();
        let mut inv_sqrt_diag = DVector::zeros(d);
        for j in 0..d {
            let v = a[(j, j)];
            if !(v > 0.0 && v.is_finite()) {
                return None;
            }
            inv_sqrt_diag[j] = 1.0 / v.sqrt();
        }
        let mut scaled = a.clone();
        for i in 0..d {
            for j in 0..d {
                scaled[(i, j)] *= inv_sqrt_diag[i] * inv_sqrt_diag[j];
            }
        }
        let chol = Cholesky::new(scaled)?;
        let l = chol.l_dirty();
        let pivot_ok = |j: usize| l[(j, j)] * l[(j, j)] > MIN_SCALED_PIVOT;
        if !(0..d).all(pivot_ok) {
            return None;
        }
        Some(Self {
            chol,
            inv_sqrt_diag,
        })
    }

    /// `A^{-1} b`.
    pub(crate) fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let scaled = b.component_mul(&self.inv_sqrt_diag);
        self.chol.solve(&scaled).component_mul(&self.inv_sqrt_diag)
    }

    /// `A^{-1}`, symmetrized.
    pub(crate) fn inverse(&self) -> DMatrix<f64> {
        let d = self.inv_sqrt_diag.len();
        let mut inv = self.chol.inverse();
        for i in 0..d {
            for j in 0..d {
                inv[(i, j)] *= self.inv_sqrt_diag[i] * self.inv_sqrt_diag[j];
            }
        }
        symmetrize(&mut inv);
        inv
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Packed upper triangle (row-major, `i <= j`) to a full symmetric matrix.
pub(crate) fn unpack_upper(packed: &[f64], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in i..d {
            m[(i, j)] = packed[k];
            m[(j, i)] = packed[k];
            k += 1;
        }
    }
    m
}

/// `acc += scale * x x^T` on the packed upper triangle.
#[inline]
pub(crate) fn packed_rank1(acc: &mut [f64], x: &[f64], scale: f64) {
    let mut k = 0;
    for (i, &xi) in x.iter().enumerate() {
        let s = scale * xi;
        for &xj in &x[i..] {
            acc[k] += s * xj;
            k += 1;
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
