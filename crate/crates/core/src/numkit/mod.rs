//! Dense real and complex matrix kernels.

mod expm;
mod lyapunov;
mod quadrature;
mod spd;

pub use expm::expm;
pub use lyapunov::solve_lyapunov;
pub use quadrature::{gauss_hermite, gauss_legendre, QuadratureRule};
pub use spd::SpdFactor;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{LabError, Result};

pub type Matrix = DMatrix<f64>;
pub type CMatrix = DMatrix<Complex<f64>>;
pub type C64 = Complex<f64>;

/// Builds a matrix from row-major data, rejecting non-finite entries.
pub fn matrix_from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(LabError::Dimension(format!("empty matrix {rows}x{cols}")));
    }
    if data.len() != rows * cols {
        return Err(LabError::Dimension(format!(
            "expected {} entries for a {rows}x{cols} matrix, got {}",
            rows * cols,
            data.len()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(LabError::NonFinite("matrix data"));
    }
    Ok(Matrix::from_row_slice(rows, cols, data))
}

/// Row-major flattening, the inverse of [`matrix_from_row_major`].
pub fn to_row_major(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

pub fn ensure_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LabError::NonFinite(what))
    }
}

pub fn ensure_square(m: &Matrix, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(LabError::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

pub fn norm_1(m: &Matrix) -> f64 {
    (0..m.ncols())
        .map(|c| m.column(c).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

pub fn spectral_norm_c(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(m: &Matrix) -> Vec<C64> {
    m.complex_eigenvalues().iter().copied().collect()
}

/// Largest real part of the spectrum.
pub fn spectral_abscissa(m: &Matrix) -> f64 {
    eigenvalues(m).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Largest eigenvalue of the symmetric part `(M + Mᵀ)/2`.
pub fn numerical_abscissa(m: &Matrix) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.max()
}

pub fn symmetric_defect(m: &Matrix) -> f64 {
    (m - m.transpose()).norm()
}

/// Numerical rank from singular values above `rel_tol * σ_max`.
pub fn rank(m: &Matrix, rel_tol: f64) -> usize {
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

pub fn to_complex(m: &Matrix) -> CMatrix {
    m.map(|v| C64::new(v, 0.0))
}

pub fn identity(n: usize) -> Matrix {
    Matrix::identity(n, n)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v)).as_slice().to_vec()
}

/// Kronecker sum `A ⊗ I + I ⊗ B`.
pub fn kron_sum(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let ia = CMatrix::identity(a.nrows(), a.nrows());
    let ib = CMatrix::identity(b.nrows(), b.nrows());
    a.kronecker(&ib) + ia.kronecker(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_round_trip() {
        let m = matrix_from_row_major(2, 3, &[1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(m[(0, 2)], 3.0);
        assert_eq!(m[(1, 0)], 4.0);
        assert_eq!(to_row_major(&m), vec![1., 2., 3., 4., 5., 6.]);
    }

    #[test]
    fn rejects_nan_and_bad_lengths() {
        assert!(matches!(
            matrix_from_row_major(1, 2, &[1.0, f64::NAN]),
            Err(LabError::NonFinite(_))
        ));
        assert!(matches!(
            matrix_from_row_major(2, 2, &[1.0]),
            Err(LabError::Dimension(_))
        ));
    }

    #[test]
    fn abscissae_of_jordan_block() {
        let a = matrix_from_row_major(2, 2, &[-1., 1., 0., -1.]).unwrap();
        assert!((spectral_abscissa(&a) + 1.0).abs() < 1e-12);
        // symmetric part [[-1, .5], [.5, -1]] has top eigenvalue -1/2
        assert!((numerical_abscissa(&a) + 0.5).abs() < 1e-12);
    }
}
