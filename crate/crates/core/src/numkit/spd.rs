use super::{ensure_square, Matrix};
use crate::error::{LabError, Result};

/// Relative eigenvalue cutoff for the numerical rank.
pub const RANK_CUTOFF: f64 = 1e-10;

/// Eigendecomposition-based square root and pseudo-inverse square root of a
/// symmetric positive semidefinite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    pub base: Matrix,
    pub root: Matrix,
    pub pseudo_inverse_root: Matrix,
    pub rank: usize,
    pub eigenvalues: Vec<f64>,
}

impl SpdFactor {
    /// Factors `m`, rejecting eigenvalues below `-1e-10 · max|λ|`.
    pub fn new(m: &Matrix) -> Result<Self> {
        Self::with_tolerance(m, None)
    }

    /// Factors `m` with an explicit absolute negativity tolerance; eigenvalues
    /// in `[-tol, 0)` are clamped to zero.
    pub fn with_tolerance(m: &Matrix, negative_tol: Option<f64>) -> Result<Self> {
        let n = ensure_square(m, "PSD factor argument")?;
        let scale = m.amax().max(f64::MIN_POSITIVE);
        if super::symmetric_defect(m) > 1e-8 * scale * n as f64 {
            return Err(LabError::InvalidInput(
                "matrix passed to spd_factor is not symmetric".into(),
            ));
        }
        let sym = (m + m.transpose()) * 0.5;
        let eig = sym.clone().symmetric_eigen();
        let lmax_abs = eig.eigenvalues.amax();
        let tol = negative_tol.unwrap_or(RANK_CUTOFF * lmax_abs);
        let lmin = eig.eigenvalues.min();
        if lmin < -tol {
            return Err(LabError::NotPsd {
                eigenvalue: lmin,
                tolerance: tol,
            });
        }
        let lmax = eig.eigenvalues.max().max(0.0);
        let cutoff = RANK_CUTOFF * lmax;
        let v = &eig.eigenvectors;
        let mut root_diag = Vec::with_capacity(n);
        let mut pinv_diag = Vec::with_capacity(n);
        let mut rank = 0;
        for &l in eig.eigenvalues.iter() {
            if l > cutoff && l > 0.0 {
                rank += 1;
                root_diag.push(l.sqrt());
                pinv_diag.push(1.0 / l.sqrt());
            } else {
                root_diag.push(l.max(0.0).sqrt());
                pinv_diag.push(0.0);
            }
        }
        let root = v * Matrix::from_diagonal(&nalgebra::DVector::from_vec(root_diag)) * v.transpose();
        let pinv = v * Matrix::from_diagonal(&nalgebra::DVector::from_vec(pinv_diag)) * v.transpose();
        Ok(Self {
            base: sym,
            root: (&root + root.transpose()) * 0.5,
            pseudo_inverse_root: (&pinv + pinv.transpose()) * 0.5,
            rank,
            eigenvalues: eig.eigenvalues.iter().copied().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.base.nrows()
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.dim()
    }

    /// Pseudo-inverse of the base matrix.
    pub fn pseudo_inverse(&self) -> Matrix {
        &self.pseudo_inverse_root * &self.pseudo_inverse_root
    }
}
