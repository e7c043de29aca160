use super::Matrix;

/// Nodes and weights of a one-dimensional Gauss rule.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Golub-Welsch: eigen-decomposition of the symmetric Jacobi matrix.
fn golub_welsch(n: usize, off_diag: impl Fn(usize) -> f64, mass: f64) -> QuadratureRule {
    let mut j = Matrix::zeros(n, n);
    for k in 1..n {
        let b = off_diag(k);
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = j.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], mass * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // symmetrize: the rules below are symmetric about zero
    for k in 0..n / 2 {
        let (lo, hi) = (pairs[k], pairs[n - 1 - k]);
        let x = 0.5 * (hi.0 - lo.0);
        let w = 0.5 * (hi.1 + lo.1);
        pairs[k] = (-x, w);
        pairs[n - 1 - k] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    QuadratureRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> QuadratureRule {
    assert!(n >= 1, "Gauss-Legendre needs at least one node");
    golub_welsch(
        n,
        |k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        },
        2.0,
    )
}

/// Gauss-Hermite rule for the standard normal density (probabilists'
/// weight); the weights sum to one and the rule is exact for polynomials of
/// degree `2n - 1`.
pub fn gauss_hermite(n: usize) -> QuadratureRule {
    assert!(n >= 1, "Gauss-Hermite needs at least one node");
    golub_welsch(n, |k| (k as f64).sqrt(), 1.0)
}
