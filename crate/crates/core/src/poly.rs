//! Sparse multivariate polynomials with real coefficients, and exact
//! expectations under centred Gaussian measures.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::numkit::Matrix;

pub type Exponents = Vec<u32>;

/// A polynomial in `dim` real variables, stored as exponent vector → coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: BTreeMap<Exponents, f64>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        let mut p = Self::zero(dim);
        p.add_term(vec![0; dim], c);
        p
    }

    /// The coordinate function `x ↦ x_j`.
    pub fn variable(dim: usize, j: usize) -> Self {
        assert!(j < dim, "variable index {j} out of range for dimension {dim}");
        let mut e = vec![0; dim];
        e[j] = 1;
        Self::monomial(e, 1.0)
    }

    /// The linear functional `x ↦ ⟨x, u⟩`.
    pub fn linear(u: &[f64]) -> Self {
        let dim = u.len();
        let mut p = Self::zero(dim);
        for (j, &c) in u.iter().enumerate() {
            let mut e = vec![0; dim];
            e[j] = 1;
            p.add_term(e, c);
        }
        p
    }

    pub fn monomial(exponents: Exponents, c: f64) -> Self {
        let mut p = Self::zero(exponents.len());
        p.add_term(exponents, c);
        p
    }

    pub fn from_terms(dim: usize, terms: impl IntoIterator<Item = (Exponents, f64)>) -> Self {
        let mut p = Self::zero(dim);
        for (e, c) in terms {
            assert_eq!(e.len(), dim, "exponent vector length must equal dimension");
            p.add_term(e, c);
        }
        p
    }

    /// Random polynomial with every monomial of total degree `≤ degree`
    /// carrying a standard normal coefficient scaled by `1/(1+deg)!`.
    pub fn random<R: Rng + ?Sized>(dim: usize, degree: u32, rng: &mut R) -> Self {
        let mut p = Self::zero(dim);
        for e in all_exponents(dim, degree) {
            let deg: u32 = e.iter().sum();
            let scale = 1.0 / (1..=deg + 1).map(|v| v as f64).product::<f64>().sqrt();
            let c: f64 = rng.sample(StandardNormal);
            p.add_term(e, c * scale);
        }
        p
    }

    fn add_term(&mut self, e: Exponents, c: f64) {
        if c == 0.0 {
            return;
        }
        match self.terms.entry(e) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if *o.get() == 0.0 {
                    o.remove();
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponents, &f64)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, e: &[u32]) -> f64 {
        self.terms.get(e).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// `Some(c)` when the polynomial is the constant `c`.
    pub fn as_constant(&self) -> Option<f64> {
        if self.degree() == 0 {
            Some(self.coefficient(&vec![0; self.dim]))
        } else {
            None
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_terms(self.dim, self.terms.iter().map(|(e, c)| (e.clone(), c * s)))
    }

    pub fn add_constant(&self, c: f64) -> Self {
        self + &Self::constant(self.dim, c)
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut result = Self::constant(self.dim, 1.0);
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                result = &result * &base;
            }
            k >>= 1;
            if k > 0 {
                base = &base * &base;
            }
        }
        result
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim, "evaluation point has wrong dimension");
        self.terms
            .iter()
            .map(|(e, c)| {
                c * e
                    .iter()
                    .zip(x)
                    .map(|(&k, &xi)| xi.powi(k as i32))
                    .product::<f64>()
            })
            .sum()
    }

    pub fn partial(&self, j: usize) -> Self {
        let mut p = Self::zero(self.dim);
        for (e, c) in &self.terms {
            if e[j] > 0 {
                let mut e2 = e.clone();
                e2[j] -= 1;
                p.add_term(e2, c * e[j] as f64);
            }
        }
        p
    }

    pub fn gradient(&self) -> Vec<Self> {
        (0..self.dim).map(|j| self.partial(j)).collect()
    }

    pub fn hessian(&self) -> Vec<Vec<Self>> {
        let grad = self.gradient();
        grad.iter()
            .map(|g| (0..self.dim).map(|k| g.partial(k)).collect())
            .collect()
    }

    /// Substitutes `x_j ↦ forms[j]`; the result lives in the forms' dimension.
    pub fn compose(&self, forms: &[Polynomial]) -> Self {
        assert_eq!(forms.len(), self.dim, "one substitution per variable");
        let out_dim = forms.first().map(|f| f.dim).unwrap_or(0);
        let max_exp: Vec<u32> = (0..self.dim)
            .map(|j| self.terms.keys().map(|e| e[j]).max().unwrap_or(0))
            .collect();
        let powers: Vec<Vec<Polynomial>> = forms
            .iter()
            .zip(&max_exp)
            .map(|(f, &m)| {
                let mut pw = vec![Polynomial::constant(out_dim, 1.0)];
                for k in 1..=m as usize {
                    let next = &pw[k - 1] * f;
                    pw.push(next);
                }
                pw
            })
            .collect();
        let mut out = Polynomial::zero(out_dim);
        for (e, c) in &self.terms {
            let mut term = Polynomial::constant(out_dim, *c);
            for (j, &k) in e.iter().enumerate() {
                if k > 0 {
                    term = &term * &powers[j][k as usize];
                }
            }
            out = &out + &term;
        }
        out
    }

    /// `x ↦ f(Mx + b)` for an affine map `ℝ^k → ℝ^dim`.
    pub fn compose_affine(&self, m: &Matrix, b: Option<&[f64]>) -> Self {
        assert_eq!(m.nrows(), self.dim, "affine map has wrong output dimension");
        let k = m.ncols();
        let forms: Vec<Polynomial> = (0..self.dim)
            .map(|j| {
                let row: Vec<f64> = (0..k).map(|c| m[(j, c)]).collect();
                let lin = Polynomial::linear(&row);
                match b {
                    Some(b) => lin.add_constant(b[j]),
                    None => lin,
                }
            })
            .collect();
        self.compose(&forms)
    }

    /// Embeds into a larger space; the existing variables keep their indices.
    pub fn extend_dim(&self, new_dim: usize) -> Self {
        assert!(new_dim >= self.dim);
        Self::from_terms(
            new_dim,
            self.terms.iter().map(|(e, c)| {
                let mut e2 = e.clone();
                e2.resize(new_dim, 0);
                (e2, *c)
            }),
        )
    }

    /// Integrates out the trailing variables `keep..dim` against a centred
    /// Gaussian with the covariance held by `moments`.
    pub fn integrate_trailing(&self, keep: usize, moments: &mut GaussianMoments) -> Self {
        assert_eq!(moments.dim(), self.dim - keep, "moment table dimension mismatch");
        let mut out = Polynomial::zero(keep);
        for (e, c) in &self.terms {
            let m = moments.moment(&e[keep..]);
            if m != 0.0 {
                out.add_term(e[..keep].to_vec(), c * m);
            }
        }
        out
    }

    /// Largest absolute coefficient.
    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }
}

/// All exponent vectors of total degree `≤ degree` in graded order.
pub fn all_exponents(dim: usize, degree: u32) -> Vec<Exponents> {
    fn rec(dim: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Exponents>) {
        if prefix.len() == dim {
            out.push(prefix.clone());
            return;
        }
        for k in 0..=left {
            prefix.push(k);
            rec(dim, left - k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, degree, &mut Vec::with_capacity(dim), &mut out);
    out.sort_by_key(|e| (e.iter().sum::<u32>(), std::cmp::Reverse(e.clone())));
    out
}

/// Coefficients (ascending powers) of the probabilists' Hermite polynomial
/// `He_n`.
pub fn hermite_coefficients(n: usize) -> Vec<f64> {
    let mut prev = vec![1.0];
    if n == 0 {
        return prev;
    }
    let mut cur = vec![0.0, 1.0];
    for k in 1..n {
        // He_{k+1} = x He_k - k He_{k-1}
        let mut next = vec![0.0; k + 2];
        for (j, c) in cur.iter().enumerate() {
            next[j + 1] += c;
        }
        for (j, c) in prev.iter().enumerate() {
            next[j] -= k as f64 * c;
        }
        prev = cur;
        cur = next;
    }
    cur
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, rhs.dim, "polynomial dimension mismatch");
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), *c);
        }
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self + &(-rhs)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, rhs.dim, "polynomial dimension mismatch");
        let mut acc: BTreeMap<Exponents, f64> = BTreeMap::new();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &rhs.terms {
                let e: Exponents = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                *acc.entry(e).or_insert(0.0) += ca * cb;
            }
        }
        acc.retain(|_, c| *c != 0.0);
        Polynomial {
            dim: self.dim,
            terms: acc,
        }
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c}")?;
            for (j, &k) in e.iter().enumerate() {
                match k {
                    0 => {}
                    1 => write!(f, "·x{j}")?,
                    _ => write!(f, "·x{j}^{k}")?,
                }
            }
        }
        Ok(())
    }
}

/// Memoized moments `E[x^α]` of `N(0, Σ)` via the Gaussian integration by
/// parts recursion `E[x_i g(x)] = Σ_j Σ_ij E[∂_j g(x)]` (Isserlis/Wick).
#[derive(Debug, Clone)]
pub struct GaussianMoments {
    cov: Matrix,
    memo: HashMap<Exponents, f64>,
}

impl GaussianMoments {
    pub fn new(cov: Matrix) -> Self {
        assert_eq!(cov.nrows(), cov.ncols(), "covariance must be square");
        Self {
            cov,
            memo: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn covariance(&self) -> &Matrix {
        &self.cov
    }

    pub fn moment(&mut self, alpha: &[u32]) -> f64 {
        let total: u32 = alpha.iter().sum();
        if total == 0 {
            return 1.0;
        }
        if total % 2 == 1 {
            return 0.0;
        }
        if let Some(&v) = self.memo.get(alpha) {
            return v;
        }
        let i = alpha.iter().position(|&k| k > 0).unwrap();
        let mut rest = alpha.to_vec();
        rest[i] -= 1;
        let mut value = 0.0;
        for j in 0..alpha.len() {
            if rest[j] == 0 {
                continue;
            }
            let s = self.cov[(i, j)];
            if s == 0.0 {
                continue;
            }
            let mut sub = rest.clone();
            sub[j] -= 1;
            value += s * rest[j] as f64 * self.moment(&sub);
        }
        self.memo.insert(alpha.to_vec(), value);
        value
    }

    /// `∫ p dN(0, Σ)`.
    pub fn expectation(&mut self, p: &Polynomial) -> f64 {
        assert_eq!(p.dim(), self.dim(), "polynomial/covariance dimension mismatch");
        p.terms().map(|(e, c)| c * self.moment(e)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{matrix_from_row_major, SpdFactor};
    use rand::SeedableRng;

    fn double_factorial_odd(k: u32) -> f64 {
        // (k-1)!! for even k
        (1..k).step_by(2).map(|v| v as f64).product()
    }

    /// Whitening oracle: E[p(x)] = E[p(Lw)] with independent standard normals.
    fn whitened_expectation(p: &Polynomial, cov: &Matrix) -> f64 {
        let root = SpdFactor::new(cov).unwrap().root;
        let q = p.compose_affine(&root, None);
        q.terms()
            .map(|(e, c)| {
                c * e
                    .iter()
                    .map(|&k| if k % 2 == 1 { 0.0 } else { double_factorial_odd(k) })
                    .product::<f64>()
            })
            .sum()
    }

    #[test]
    fn scalar_moments() {
        let mut m = GaussianMoments::new(matrix_from_row_major(1, 1, &[0.5]).unwrap());
        assert_eq!(m.moment(&[2]), 0.5);
        assert!((m.moment(&[4]) - 3.0 * 0.25).abs() < 1e-15);
        assert_eq!(m.moment(&[3]), 0.0);
    }

    #[test]
    fn isserlis_four_point() {
        let cov = matrix_from_row_major(2, 2, &[2.0, 0.3, 0.3, 1.0]).unwrap();
        let mut m = GaussianMoments::new(cov);
        // E[x0^2 x1^2] = s00 s11 + 2 s01^2
        assert!((m.moment(&[2, 2]) - (2.0 + 2.0 * 0.09)).abs() < 1e-14);
        // E[x0^3 x1] = 3 s00 s01
        assert!((m.moment(&[3, 1]) - 3.0 * 2.0 * 0.3).abs() < 1e-14);
    }

    #[test]
    fn recursion_matches_whitening_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let g = Matrix::from_fn(3, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cov = &g * g.transpose() + Matrix::identity(3, 3) * 0.1;
        let p = Polynomial::random(3, 5, &mut rng);
        let mut m = GaussianMoments::new(cov.clone());
        let a = m.expectation(&p);
        let b = whitened_expectation(&p, &cov);
        assert!((a - b).abs() < 1e-10 * b.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn hermite_low_orders() {
        assert_eq!(hermite_coefficients(0), vec![1.0]);
        assert_eq!(hermite_coefficients(2), vec![-1.0, 0.0, 1.0]);
        assert_eq!(hermite_coefficients(3), vec![0.0, -3.0, 0.0, 1.0]);
        assert_eq!(hermite_coefficients(4), vec![3.0, 0.0, -6.0, 0.0, 1.0]);
    }

    #[test]
    fn arithmetic_and_derivatives() {
        let x = Polynomial::variable(2, 0);
        let y = Polynomial::variable(2, 1);
        let p = &(&x * &x) + &(&x * &y).scale(3.0);
        assert_eq!(p.degree(), 2);
        assert_eq!(p.eval(&[2.0, 1.0]), 4.0 + 6.0);
        let gx = p.partial(0);
        assert_eq!(gx.eval(&[2.0, 1.0]), 4.0 + 3.0);
        assert!((&p - &p).is_zero());
        assert_eq!(Polynomial::constant(2, 3.0).as_constant(), Some(3.0));
        assert_eq!((&x + &y).pow(3).coefficient(&[2, 1]), 3.0);
    }

    #[test]
    fn compose_affine_evaluates_consistently() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p = Polynomial::random(2, 3, &mut rng);
        let m = matrix_from_row_major(2, 3, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]).unwrap();
        let b = [0.25, -0.5];
        let q = p.compose_affine(&m, Some(&b));
        let z = [0.3, -0.7, 1.1];
        let y = [
            z[0] + 2.0 * z[1] - z[2] + b[0],
            0.5 * z[0] + 3.0 * z[2] + b[1],
        ];
        assert!((q.eval(&z) - p.eval(&y)).abs() < 1e-12);
    }

    #[test]
    fn exponent_enumeration_counts() {
        assert_eq!(all_exponents(2, 2).len(), 6);
        assert_eq!(all_exponents(4, 4).len(), 70);
        assert_eq!(all_exponents(3, 0), vec![vec![0, 0, 0]]);
    }
}
