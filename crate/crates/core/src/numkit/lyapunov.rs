use super::{ensure_square, spectral_abscissa, Matrix};
use crate::error::{LabError, Result};

/// Solves `AX + XAᵀ + Q = 0` for a Hurwitz `A` by a dense solve of the
/// vectorized system `(I ⊗ A + A ⊗ I) vec X = -vec Q`.
///
/// The result is symmetrized; it equals `∫_0^∞ e^{sA} Q e^{sAᵀ} ds`.
pub fn solve_lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix> {
    let n = ensure_square(a, "drift")?;
    if q.nrows() != n || q.ncols() != n {
        return Err(LabError::Dimension(format!(
            "Q is {}x{}, drift is {n}x{n}",
            q.nrows(),
            q.ncols()
        )));
    }
    let abscissa = spectral_abscissa(a);
    if !(abscissa < 0.0) {
        return Err(LabError::AssumptionFailure(format!(
            "drift is not Hurwitz (spectral abscissa {abscissa:.6e}); no invariant Gaussian measure"
        )));
    }
    let id = Matrix::identity(n, n);
    let system = id.kronecker(a) + a.kronecker(&id);
    // nalgebra storage is column-major, so as_slice() is vec(Q)
    let rhs = nalgebra::DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let x = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| LabError::Singular("Kronecker Lyapunov system".into()))?;
    let x = Matrix::from_column_slice(n, n, x.as_slice());
    Ok((&x + x.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{expm, matrix_from_row_major, quadrature::gauss_legendre};

    #[test]
    fn scalar_integrals() {
        let x = solve_lyapunov(&(-Matrix::identity(2, 2)), &Matrix::identity(2, 2)).unwrap();
        assert!((x - Matrix::identity(2, 2) * 0.5).norm() < 1e-15);
        let x = solve_lyapunov(&(-Matrix::identity(2, 2) * 2.0), &Matrix::identity(2, 2)).unwrap();
        assert!((x - Matrix::identity(2, 2) * 0.25).norm() < 1e-15);
    }

    #[test]
    fn jordan_block_by_hand() {
        // Entrywise: -2a + 2b + 1 = 0, c - 2b = 0, -2c + 1 = 0.
        let c = 0.5;
        let b = c / 2.0;
        let a_ = (1.0 + 2.0 * b) / 2.0;
        let a = matrix_from_row_major(2, 2, &[-1., 1., 0., -1.]).unwrap();
        let x = solve_lyapunov(&a, &Matrix::identity(2, 2)).unwrap();
        let expected = matrix_from_row_major(2, 2, &[a_, b, b, c]).unwrap();
        assert!((x - expected).norm() < 1e-14);
    }

    #[test]
    fn refuses_unstable_drift() {
        let a = matrix_from_row_major(2, 2, &[0.1, 0., 0., -1.]).unwrap();
        assert!(matches!(
            solve_lyapunov(&a, &Matrix::identity(2, 2)),
            Err(LabError::AssumptionFailure(_))
        ));
    }

    /// Quadrature of `∫_0^T e^{sA} Q e^{sAᵀ} ds` on panels.
    fn gramian_quadrature(a: &Matrix, q: &Matrix, horizon: f64, panels: usize) -> Matrix {
        let rule = gauss_legendre(12);
        let n = a.nrows();
        let mut acc = Matrix::zeros(n, n);
        let h = horizon / panels as f64;
        for p in 0..panels {
            let (lo, hi) = (p as f64 * h, (p + 1) as f64 * h);
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                let s = 0.5 * (lo + hi) + 0.5 * h * x;
                let e = expm(a, s).unwrap();
                acc += (&e * q * e.transpose()) * (0.5 * h * w);
            }
        }
        acc
    }

    #[test]
    fn agrees_with_gramian_quadrature_on_random_hurwitz() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for d in [2usize, 3, 5, 8] {
            let g = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let skew = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let a = (&skew - skew.transpose()) - (&g * g.transpose()) * 0.5 - Matrix::identity(d, d) * 0.5;
            let h = Matrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let q = &h * h.transpose();
            let x = solve_lyapunov(&a, &q).unwrap();
            let quad = gramian_quadrature(&a, &q, 60.0, 240);
            assert!((&x - &quad).norm() <= 1e-6 * x.norm().max(1.0), "d={d}");
            assert!(super::super::symmetric_defect(&x) <= 1e-12 * x.norm());
            let lmin = x.clone().symmetric_eigen().eigenvalues.min();
            assert!(lmin >= -1e-10);
            let residual = (&a * &x + &x * a.transpose() + &q).norm();
            assert!(residual <= 1e-9 * q.norm());
        }
    }
}
