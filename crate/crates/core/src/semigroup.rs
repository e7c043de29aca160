//! The Ornstein-Uhlenbeck transition semigroup `P(t)`, its tensor lift
//! `P(t) ⊗ S_H^*(t)` and the Hermite chaos in the symmetric case.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::calculus::{grad_h_poly, TestFunction, VectorTestFunction};
use crate::error::{LabError, Result};
use crate::model::{check_time, DerivedModel};
use crate::numkit::{expm, gauss_hermite, mat_vec, symmetric_defect, Matrix, QuadratureRule, SpdFactor};
use crate::poly::{hermite_coefficients, GaussianMoments, Polynomial};
use crate::sampling::{hermite_grid, integrate_normal, Estimate, Evaluation, SampleStats, Scheme};

/// A Gaussian measure `N(mean, covariance)` with its square-root factor.
#[derive(Debug, Clone)]
pub struct GaussianMeasure {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    pub factor: SpdFactor,
}

impl GaussianMeasure {
    pub fn new(mean: Vec<f64>, covariance: Matrix) -> Result<Self> {
        if mean.len() != covariance.nrows() {
            return Err(LabError::Dimension(format!(
                "mean has length {}, covariance is {}×{}",
                mean.len(),
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let tol = 1e-12 * covariance.amax().max(1.0);
        let factor = SpdFactor::with_tolerance(&covariance, Some(tol))?;
        Ok(Self {
            mean,
            covariance: factor.base.clone(),
            factor,
        })
    }

    pub fn centered(covariance: Matrix) -> Result<Self> {
        Self::new(vec![0.0; covariance.nrows()], covariance)
    }

    /// The invariant measure `μ_inf = N(0, Q_inf)`.
    pub fn stationary(dm: &DerivedModel) -> Result<Self> {
        Self::centered(dm.qinf.clone())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Maps a standard normal draw `w` to `mean + Σ^{1/2} w`.
    pub fn transform(&self, w: &[f64], out: &mut [f64]) {
        let root = &self.factor.root;
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.mean[j] + (0..w.len()).map(|k| root[(j, k)] * w[k]).sum::<f64>();
        }
    }

    pub fn moments(&self) -> GaussianMoments {
        GaussianMoments::new(self.covariance.clone())
    }

    /// Exact `E p(X)`.
    pub fn expectation_poly(&self, p: &Polynomial) -> f64 {
        let shifted = if self.mean.iter().all(|&m| m == 0.0) {
            p.clone()
        } else {
            p.compose_affine(&Matrix::identity(self.dim(), self.dim()), Some(&self.mean))
        };
        self.moments().expectation(&shifted)
    }

    /// `E f(X)` under the requested scheme.
    pub fn expectation(&self, f: &TestFunction, eval: &Evaluation) -> Result<Estimate> {
        match (eval, f) {
            (Evaluation::Exact, TestFunction::Polynomial(p)) => Ok(Estimate::exact(self.expectation_poly(p))),
            (Evaluation::Exact, _) => Err(LabError::Unsupported(
                "exact evaluation needs a polynomial integrand".into(),
            )),
            _ => {
                let d = self.dim();
                let stats = integrate_normal(eval, d, 1, |w, out| {
                    let mut x = vec![0.0; d];
                    self.transform(w, &mut x);
                    out[0] = f.value(&x);
                })?;
                Ok(stats.estimate(0))
            }
        }
    }
}

/// A Wiener-Itô chaos multi-index in whitened eigencoordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChaosIndex {
    pub multi_index: Vec<u32>,
}

impl ChaosIndex {
    pub fn new(multi_index: Vec<u32>) -> Self {
        Self { multi_index }
    }

    pub fn total_degree(&self) -> u32 {
        self.multi_index.iter().sum()
    }
}

/// The transition kernel at time `t`: `x ↦ N(e^{tA} x, Q_t)`.
#[derive(Debug, Clone)]
pub struct Transition {
    pub t: f64,
    pub s: Matrix,
    pub noise: GaussianMeasure,
}

impl Transition {
    pub fn new(dm: &DerivedModel, t: f64) -> Result<Self> {
        check_time(t)?;
        Ok(Self {
            t,
            s: expm(dm.a(), t)?,
            noise: GaussianMeasure::centered(dm.covariance_at(t)?)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn mean(&self, x: &[f64]) -> Vec<f64> {
        mat_vec(&self.s, x)
    }

    /// `P(t)p` as a polynomial in `x`.
    pub fn polynomial(&self, p: &Polynomial) -> Polynomial {
        let d = self.dim();
        let forms: Vec<Polynomial> = (0..d)
            .map(|j| {
                let mut row = vec![0.0; 2 * d];
                for k in 0..d {
                    row[k] = self.s[(j, k)];
                }
                row[d + j] = 1.0;
                Polynomial::linear(&row)
            })
            .collect();
        let mut moments = self.noise.moments();
        p.compose(&forms).integrate_trailing(d, &mut moments)
    }

    /// Exact `P(t)p(x)`.
    pub fn exact_at(&self, p: &Polynomial, x: &[f64]) -> f64 {
        let mean = self.mean(x);
        let shifted = p.compose_affine(&Matrix::identity(self.dim(), self.dim()), Some(&mean));
        self.noise.moments().expectation(&shifted)
    }

    /// Samples `y = e^{tA}x + Q_t^{1/2} w`.
    pub fn point(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        self.noise.transform(w, out);
        for (o, m) in out.iter_mut().zip(self.mean(x)) {
            *o += m;
        }
    }
}

/// A fixed tensor Gauss-Hermite rule used for inner expectations.
#[derive(Debug, Clone)]
pub struct InnerGrid {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    /// One-dimensional rule for ridge functions.
    line: QuadratureRule,
}

const RIDGE_NODES: usize = 128;

/// Mean and standard deviation of `⟨y, u⟩` for `y ~ N(e^{tA}x, Q_t)`.
fn ridge_moments(tr: &Transition, u: &[f64], x: &[f64]) -> (f64, f64) {
    let m = crate::numkit::dot(&tr.mean(x), u);
    let q = &tr.noise.covariance;
    let var: f64 = (0..u.len())
        .map(|a| (0..u.len()).map(|b| u[a] * q[(a, b)] * u[b]).sum::<f64>())
        .sum();
    (m, var.max(0.0).sqrt())
}

impl InnerGrid {
    pub fn new(nodes: usize, dim: usize) -> Result<Self> {
        let (points, weights) = hermite_grid(nodes, dim)?;
        Ok(Self {
            points,
            weights,
            line: gauss_hermite(RIDGE_NODES),
        })
    }

    /// A default size that keeps the grid near a few thousand points.
    pub fn default_for(dim: usize) -> Result<Self> {
        let nodes = match dim {
            0 | 1 => 40,
            2 => 24,
            3 => 12,
            _ => 7,
        };
        Self::new(nodes, dim)
    }

    /// `P(t)f(x)` on this grid.
    pub fn value(&self, tr: &Transition, f: &TestFunction, x: &[f64]) -> f64 {
        if let TestFunction::Smooth(sf) = f {
            if let Some(r) = sf.ridge_profile() {
                let (m, s) = ridge_moments(tr, &r.u, x);
                return self.line.nodes.iter().zip(&self.line.weights).map(|(z, w)| w * (r.phi)(m + s * z)).sum();
            }
        }
        let mut y = vec![0.0; tr.dim()];
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(w, wt)| {
                tr.point(x, w, &mut y);
                wt * f.value(&y)
            })
            .sum()
    }

    /// `E ∇f(e^{tA}x + Z)` on this grid.
    pub fn gradient(&self, tr: &Transition, f: &TestFunction, x: &[f64]) -> Vec<f64> {
        if let TestFunction::Smooth(sf) = f {
            if let Some(r) = sf.ridge_profile() {
                let (m, s) = ridge_moments(tr, &r.u, x);
                let e: f64 = self.line.nodes.iter().zip(&self.line.weights).map(|(z, w)| w * (r.dphi)(m + s * z)).sum();
                return r.u.iter().map(|v| e * v).collect();
            }
        }
        let d = tr.dim();
        let mut y = vec![0.0; d];
        let mut acc = vec![0.0; d];
        for (w, wt) in self.points.iter().zip(&self.weights) {
            tr.point(x, w, &mut y);
            for (a, g) in acc.iter_mut().zip(f.gradient(&y)) {
                *a += wt * g;
            }
        }
        acc
    }
}

fn exact_stats(means: Vec<f64>, scheme: Scheme) -> SampleStats {
    let k = means.len();
    SampleStats {
        means,
        cov_of_mean: vec![0.0; k * k],
        n: 0,
        seed: 0,
        scheme,
    }
}

fn check_point(dm: &DerivedModel, x: &[f64]) -> Result<()> {
    if x.len() != dm.d() {
        return Err(LabError::Dimension(format!(
            "point has length {}, state dimension is {}",
            x.len(),
            dm.d()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LabError::NonFinite("evaluation point"));
    }
    Ok(())
}

/// `P(t)f_k(x)` for several functions from one shared sample set.
pub fn apply_p_many(
    dm: &DerivedModel,
    t: f64,
    fs: &[TestFunction],
    x: &[f64],
    eval: &Evaluation,
) -> Result<SampleStats> {
    check_point(dm, x)?;
    let tr = Transition::new(dm, t)?;
    let polys: Option<Vec<&Polynomial>> = fs.iter().map(|f| f.as_polynomial()).collect();
    match (eval, polys) {
        (Evaluation::Exact, Some(ps)) => Ok(exact_stats(
            ps.iter().map(|p| tr.exact_at(p, x)).collect(),
            Scheme::Exact,
        )),
        (Evaluation::Exact, None) => Err(LabError::Unsupported(
            "exact evaluation needs polynomial test functions".into(),
        )),
        (Evaluation::Quadrature { nodes }, Some(ps)) => {
            let degree = ps.iter().map(|p| p.degree()).max().unwrap_or(0) as usize;
            if 2 * nodes < degree + 1 {
                return Err(LabError::Refused(format!(
                    "{nodes}-node Gauss-Hermite is exact to degree {}, polynomial has degree {degree}",
                    2 * nodes - 1
                )));
            }
            Ok(exact_stats(
                ps.iter().map(|p| tr.exact_at(p, x)).collect(),
                Scheme::Quadrature,
            ))
        }
        _ => {
            let d = dm.d();
            integrate_normal(eval, d, fs.len(), |w, out| {
                let mut y = vec![0.0; d];
                tr.point(x, w, &mut y);
                for (o, f) in out.iter_mut().zip(fs) {
                    *o = f.value(&y);
                }
            })
        }
    }
}

/// `P(t)f(x) = E f(e^{tA}x + Z)`, `Z ~ N(0, Q_t)`.
pub fn apply_p(dm: &DerivedModel, t: f64, f: &TestFunction, x: &[f64], eval: &Evaluation) -> Result<Estimate> {
    Ok(apply_p_many(dm, t, std::slice::from_ref(f), x, eval)?.estimate(0))
}

/// Exact `P(t)p` as a polynomial.
pub fn transition_polynomial(dm: &DerivedModel, t: f64, p: &Polynomial) -> Result<Polynomial> {
    Ok(Transition::new(dm, t)?.polynomial(p))
}

/// `∫P(t)f dμ_inf - ∫f dμ_inf`.
pub fn invariance_defect(dm: &DerivedModel, t: f64, f: &TestFunction, eval: &Evaluation) -> Result<Estimate> {
    check_time(t)?;
    if t == 0.0 {
        return Ok(Estimate::exact(0.0));
    }
    let mu = GaussianMeasure::stationary(dm)?;
    let tr = Transition::new(dm, t)?;
    match (eval, f) {
        (Evaluation::Exact, TestFunction::Polynomial(p)) => {
            let pt = tr.polynomial(p);
            Ok(Estimate::exact(mu.expectation_poly(&pt) - mu.expectation_poly(p)))
        }
        (Evaluation::Exact, _) => Err(LabError::Unsupported(
            "exact evaluation needs a polynomial integrand".into(),
        )),
        _ => {
            let d = dm.d();
            let stats = integrate_normal(eval, 2 * d, 1, |w, out| {
                let mut x = vec![0.0; d];
                let mut y = vec![0.0; d];
                mu.transform(&w[..d], &mut x);
                tr.point(&x, &w[d..], &mut y);
                out[0] = f.value(&y) - f.value(&x);
            })?;
            Ok(stats.estimate(0))
        }
    }
}

/// `(P(t) ⊗ S_H^*(t))F(x) = e^{t Ã_Hᵀ} P(t)F(x)`.
pub fn apply_tensor_p(
    dm: &DerivedModel,
    t: f64,
    field: &VectorTestFunction,
    x: &[f64],
    eval: &Evaluation,
) -> Result<Vec<Estimate>> {
    let ah = dm.generator_h()?;
    if field.len() != dm.m() {
        return Err(LabError::Dimension(format!(
            "field has {} components, noise dimension is {}",
            field.len(),
            dm.m()
        )));
    }
    let stats = apply_p_many(dm, t, &field.components, x, eval)?;
    let e = expm(&ah.transpose(), t)?;
    let m = dm.m();
    Ok((0..m)
        .map(|k| {
            let value = (0..m).map(|j| e[(k, j)] * stats.means[j]).sum();
            let var: f64 = (0..m)
                .flat_map(|a| (0..m).map(move |b| (a, b)))
                .map(|(a, b)| e[(k, a)] * e[(k, b)] * stats.cov(a, b))
                .sum();
            Estimate {
                value,
                stderr: var.max(0.0).sqrt(),
                n_samples: stats.n,
                seed: stats.seed,
                scheme: stats.scheme,
            }
        })
        .collect())
}

/// Max-norm gap between `D_H P(t)g(x)` and `(P(t) ⊗ S_H^*(t)) D_H g(x)`, both
/// computed independently by exact moments.
pub fn intertwining_defect(dm: &DerivedModel, t: f64, g: &Polynomial, x: &[f64]) -> Result<f64> {
    let lhs: Vec<f64> = grad_h_poly(&transition_polynomial(dm, t, g)?, dm.i())
        .iter()
        .map(|p| p.eval(x))
        .collect();
    let field = VectorTestFunction::from_polynomials(grad_h_poly(g, dm.i()))?;
    let rhs = apply_tensor_p(dm, t, &field, x, &Evaluation::Exact)?;
    Ok(lhs
        .iter()
        .zip(&rhs)
        .map(|(a, b)| (a - b.value).abs())
        .fold(0.0, f64::max))
}

/// Eigen-decomposition of the symmetric whitened generator, refused when
/// `Ã_inf` is not symmetric.
fn symmetric_eigenbasis(dm: &DerivedModel) -> Result<(Vec<f64>, Matrix)> {
    dm.require_nondegenerate_qinf()?;
    let scale = dm.atilde_inf.amax().max(1.0);
    let defect = symmetric_defect(&dm.atilde_inf);
    if defect > 1e-10 * scale {
        return Err(LabError::Unsupported(format!(
            "whitened generator is not symmetric (defect {defect:.3e}); chaos basis is not an eigenbasis"
        )));
    }
    let sym = (&dm.atilde_inf + dm.atilde_inf.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    Ok((eig.eigenvalues.iter().copied().collect(), eig.eigenvectors))
}

/// The product Hermite function `Π He_{n_k}(η_k)/√(n_k!)` with
/// `η = Vᵀ Q_inf^{-1/2} x`, and its eigenvalue exponent `Σ n_k λ_k`.
pub fn chaos_eigenfunction(dm: &DerivedModel, idx: &ChaosIndex) -> Result<(Polynomial, f64)> {
    let d = dm.d();
    if idx.multi_index.len() != d {
        return Err(LabError::Dimension(format!(
            "chaos index has length {}, state dimension is {d}",
            idx.multi_index.len()
        )));
    }
    let (lambda, v) = symmetric_eigenbasis(dm)?;
    let w = v.transpose() * &dm.qinf_factor.pseudo_inverse_root;
    let mut h = Polynomial::constant(d, 1.0);
    for (k, &n) in idx.multi_index.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let row: Vec<f64> = (0..d).map(|j| w[(k, j)]).collect();
        let eta = Polynomial::linear(&row);
        let coeffs = hermite_coefficients(n as usize);
        let norm = (1..=n).map(f64::from).product::<f64>().sqrt();
        let mut he = Polynomial::zero(d);
        for (power, c) in coeffs.iter().enumerate() {
            if *c != 0.0 {
                he = &he + &eta.pow(power as u32).scale(c / norm);
            }
        }
        h = &h * &he;
    }
    let exponent = idx
        .multi_index
        .iter()
        .zip(&lambda)
        .map(|(&n, l)| f64::from(n) * l)
        .sum();
    Ok((h, exponent))
}

/// `max |P(t)h_idx(x) - e^{t Σ n_k λ_k} h_idx(x)|` over `points` draws
/// `x ~ μ_inf`.
pub fn chaos_eigencheck(dm: &DerivedModel, idx: &ChaosIndex, t: f64, points: usize, seed: u64) -> Result<f64> {
    let (h, exponent) = chaos_eigenfunction(dm, idx)?;
    let pth = transition_polynomial(dm, t, &h)?;
    let mu = GaussianMeasure::stationary(dm)?;
    let factor = (t * exponent).exp();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dm.d();
    let mut x = vec![0.0; d];
    let mut defect: f64 = 0.0;
    for _ in 0..points.max(1) {
        let w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        mu.transform(&w, &mut x);
        defect = defect.max((pth.eval(&x) - factor * h.eval(&x)).abs());
    }
    Ok(defect)
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayPoint {
    pub t: f64,
    pub norm: Estimate,
}

/// `‖P(t)(f - f̄)‖_p` along a time grid and the fitted exponential rate.
#[derive(Debug, Clone, Serialize)]
pub struct DecayScan {
    pub p: f64,
    pub mean_removed: f64,
    pub points: Vec<DecayPoint>,
    pub rate: f64,
    pub omega: f64,
    /// `min(1, rate/ω)`, absent when `ω = 0`.
    pub theta_fit: Option<f64>,
    /// Whether some `θ ∈ (0, 1]` satisfies `rate ≥ ω θ`.
    pub theta_exists: bool,
}

fn check_exponent(p: f64) -> Result<()> {
    if p.is_finite() && p > 1.0 {
        Ok(())
    } else {
        Err(LabError::InvalidInput(format!("p must lie in (1, ∞), got {p}")))
    }
}

/// Least-squares slope of `-ln‖·‖` against `t` after a running minimum.
fn fit_rate(points: &[DecayPoint]) -> f64 {
    let mut floor = f64::INFINITY;
    let pairs: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|pt| {
            floor = floor.min(pt.norm.value);
            (floor > 1e-300).then(|| (pt.t, floor.ln()))
        })
        .collect();
    if pairs.len() < 2 {
        return 0.0;
    }
    let n = pairs.len() as f64;
    let mt = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pairs.iter().map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = pairs.iter().map(|(t, _)| (t - mt).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        -sxy / sxx
    }
}

/// Scans the decay of `P(t)` on a mean-zero function. Polynomial `f` with
/// an even integer `p` and the exact scheme is computed by moments;
/// otherwise `μ_inf` is sampled and smooth functions use an inner
/// Gauss-Hermite grid for `P(t)`.
pub fn decay_scan(dm: &DerivedModel, f: &TestFunction, p: f64, times: &[f64], eval: &Evaluation) -> Result<DecayScan> {
    check_exponent(p)?;
    for &t in times {
        check_time(t)?;
    }
    let mu = GaussianMeasure::stationary(dm)?;
    let d = dm.d();
    let mean_removed = match f {
        TestFunction::Polynomial(poly) => mu.expectation_poly(poly),
        _ => mu.expectation(f, &mc_fallback(eval))?.value,
    };
    let points = match f {
        TestFunction::Polynomial(poly) => {
            let centered = poly.add_constant(-mean_removed);
            let evolved: Vec<Polynomial> = times
                .iter()
                .map(|&t| transition_polynomial(dm, t, &centered))
                .collect::<Result<_>>()?;
            let even = p.fract() == 0.0 && (p as u32).is_multiple_of(2);
            if matches!(eval, Evaluation::Exact) && even {
                let mut moments = mu.moments();
                times
                    .iter()
                    .zip(&evolved)
                    .map(|(&t, g)| DecayPoint {
                        t,
                        norm: Estimate::exact(moments.expectation(&g.pow(p as u32)).max(0.0).powf(1.0 / p)),
                    })
                    .collect()
            } else {
                let stats = integrate_normal(&mc_fallback(eval), d, times.len(), |w, out| {
                    let mut x = vec![0.0; d];
                    mu.transform(w, &mut x);
                    for (o, g) in out.iter_mut().zip(&evolved) {
                        *o = g.eval(&x).abs().powf(p);
                    }
                })?;
                norm_points(times, &stats, p)
            }
        }
        TestFunction::Smooth(_) => {
            let grid = InnerGrid::default_for(d)?;
            let transitions: Vec<Transition> = times
                .iter()
                .map(|&t| Transition::new(dm, t))
                .collect::<Result<_>>()?;
            let stats = integrate_normal(&mc_fallback(eval), d, times.len(), |w, out| {
                let mut x = vec![0.0; d];
                mu.transform(w, &mut x);
                for (o, tr) in out.iter_mut().zip(&transitions) {
                    let v = if tr.t == 0.0 { f.value(&x) } else { grid.value(tr, f, &x) };
                    *o = (v - mean_removed).abs().powf(p);
                }
            })?;
            norm_points(times, &stats, p)
        }
    };
    let rate = fit_rate(&points);
    let omega = dm.omega;
    let (theta_fit, theta_exists) = if omega > 0.0 {
        ((Some((rate / omega).min(1.0))), rate > 0.0)
    } else {
        (None, rate >= -1e-12)
    };
    Ok(DecayScan {
        p,
        mean_removed,
        points,
        rate,
        omega,
        theta_fit,
        theta_exists,
    })
}

/// The exact scheme cannot sample; fall back to a fixed Monte Carlo budget.
fn mc_fallback(eval: &Evaluation) -> Evaluation {
    match eval {
        Evaluation::Exact => Evaluation::mc(1 << 16, 0),
        other => *other,
    }
}

fn norm_points(times: &[f64], stats: &SampleStats, p: f64) -> Vec<DecayPoint> {
    times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let m = stats.means[k].max(0.0);
            let norm = m.powf(1.0 / p);
            let stderr = if m > 0.0 { norm / (p * m) * stats.stderr(k) } else { 0.0 };
            DecayPoint {
                t,
                norm: Estimate {
                    value: norm,
                    stderr,
                    n_samples: stats.n,
                    seed: stats.seed,
                    scheme: stats.scheme,
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::SmoothFunction;
    use crate::model::ModelSpec;
    use crate::numkit::matrix_from_row_major;
    use proptest::prelude::*;
    use rand::Rng;

    fn model(d: usize, a: &[f64], m: usize, i: &[f64]) -> DerivedModel {
        DerivedModel::derive(
            &ModelSpec::new(
                "t",
                matrix_from_row_major(d, d, a).unwrap(),
                matrix_from_row_major(d, m, i).unwrap(),
            )
            .unwrap(),
        )
        .unwrap()
    }

    fn scalar() -> DerivedModel {
        model(1, &[-1.0], 1, &[1.0])
    }

    fn jordan() -> DerivedModel {
        model(2, &[-1., 1., 0., -1.], 2, &[1., 0., 0., 1.])
    }

    #[test]
    fn constants_and_linear_functions() {
        let dm = jordan();
        let one: TestFunction = Polynomial::constant(2, 1.0).into();
        let x = [0.4, -1.2];
        assert_eq!(apply_p(&dm, 0.7, &one, &x, &Evaluation::Exact).unwrap().value, 1.0);
        let u = [0.3, 2.0];
        let lin: TestFunction = Polynomial::linear(&u).into();
        let got = apply_p(&dm, 0.7, &lin, &x, &Evaluation::Exact).unwrap().value;
        let s = expm(dm.a(), 0.7).unwrap();
        let sx = mat_vec(&s, &x);
        assert!((got - (u[0] * sx[0] + u[1] * sx[1])).abs() < 1e-14);
    }

    #[test]
    fn scalar_second_moment_exact_and_mc() {
        let dm = scalar();
        let x2: TestFunction = Polynomial::variable(1, 0).pow(2).into();
        let expected = 0.5 * (1.0 - (-2.0f64).exp());
        let exact = apply_p(&dm, 1.0, &x2, &[0.0], &Evaluation::Exact).unwrap();
        assert!((exact.value - expected).abs() < 1e-15);
        assert!(exact.is_exact());
        let mc = apply_p(&dm, 1.0, &x2, &[0.0], &Evaluation::mc(200_000, 3)).unwrap();
        assert!(mc.within(expected, 3.0, 0.0), "{mc:?}");
        let q = apply_p(&dm, 1.0, &x2, &[0.0], &Evaluation::Quadrature { nodes: 2 }).unwrap();
        assert_eq!(q.scheme, Scheme::Quadrature);
        assert!((q.value - expected).abs() < 1e-15);
    }

    #[test]
    fn quadrature_refuses_low_order() {
        let dm = scalar();
        let x4: TestFunction = Polynomial::variable(1, 0).pow(4).into();
        let r = apply_p(&dm, 1.0, &x4, &[0.0], &Evaluation::Quadrature { nodes: 2 });
        assert!(matches!(r, Err(LabError::Refused(_))));
        assert!(apply_p(&dm, 1.0, &x4, &[0.0], &Evaluation::Quadrature { nodes: 3 }).is_ok());
    }

    #[test]
    fn smooth_function_by_quadrature_matches_closed_form() {
        // E cos(m + σZ) = cos(m) e^{-σ²/2}
        let dm = scalar();
        let f: TestFunction = SmoothFunction::cosine(vec![1.0]).into();
        let t: f64 = 0.5;
        let x: f64 = 0.8;
        let m = (-t).exp() * x;
        let var = 0.5 * (1.0 - (-2.0 * t).exp());
        let expected = m.cos() * (-var / 2.0).exp();
        let q = apply_p(&dm, t, &f, &[x], &Evaluation::Quadrature { nodes: 20 }).unwrap();
        assert!((q.value - expected).abs() < 1e-13);
        let mc = apply_p(&dm, t, &f, &[x], &Evaluation::mc(100_000, 1)).unwrap();
        assert!(mc.within(expected, 4.0, 0.0));
    }

    #[test]
    fn invariance_defects() {
        let dm = jordan();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f: TestFunction = Polynomial::random(2, 4, &mut rng).into();
        assert_eq!(invariance_defect(&dm, 0.0, &f, &Evaluation::Exact).unwrap().value, 0.0);
        for t in [0.1, 1.0, 3.0] {
            assert!(invariance_defect(&dm, t, &f, &Evaluation::Exact).unwrap().value.abs() < 1e-9);
        }
        let c: TestFunction = SmoothFunction::cosine(vec![0.7, -0.4]).into();
        let est = invariance_defect(&dm, 0.5, &c, &Evaluation::mc(1_000_000, 11)).unwrap();
        assert!(est.value.abs() <= 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn tensor_semigroup_examples() {
        let dm = model(2, &[-1.2, 0.5, -0.1, -0.9], 2, &[1., 0.3, 0., 0.8]);
        let x = [0.5, -0.5];
        let h = [1.0, -2.0];
        let field = VectorTestFunction::constant(2, &h);
        let at0 = apply_tensor_p(&dm, 0.0, &field, &x, &Evaluation::Exact).unwrap();
        assert!((at0[0].value - 1.0).abs() < 1e-15 && (at0[1].value + 2.0).abs() < 1e-15);
        let t = 0.8;
        let got = apply_tensor_p(&dm, t, &field, &x, &Evaluation::Exact).unwrap();
        let e = expm(&dm.generator_h().unwrap().transpose(), t).unwrap();
        let want = e * nalgebra::DVector::from_column_slice(&h);
        for k in 0..2 {
            assert!((got[k].value - want[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn tensor_semigroup_refuses_degenerate_noise() {
        let dm = model(2, &[-1., 0., 1., -1.], 1, &[1., 0.]);
        let field = VectorTestFunction::constant(2, &[1.0]);
        assert!(apply_tensor_p(&dm, 0.5, &field, &[0.0, 0.0], &Evaluation::Exact).is_err());
    }

    #[test]
    fn intertwining_on_random_polynomials() {
        let dm = model(3, &[-1.0, 0.4, 0.0, -0.2, -0.7, 0.3, 0.1, 0.0, -1.4], 3, &[1., 0., 0.2, 0., 0.9, 0., 0.1, 0., 1.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..5 {
            let g = Polynomial::random(3, 4, &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            for t in [0.1, 0.5, 1.0, 2.0] {
                assert!(intertwining_defect(&dm, t, &g, &x).unwrap() < 1e-8);
            }
        }
    }

    #[test]
    fn chaos_examples() {
        let dm = scalar();
        assert_eq!(chaos_eigencheck(&dm, &ChaosIndex::new(vec![0]), 1.0, 8, 0).unwrap(), 0.0);
        assert!(chaos_eigencheck(&dm, &ChaosIndex::new(vec![1]), 1.0, 8, 0).unwrap() < 1e-14);
        let (h2, exponent) = chaos_eigenfunction(&dm, &ChaosIndex::new(vec![2])).unwrap();
        assert_eq!(exponent, -2.0);
        // x = η/√2 under Q_inf = ½, so h₂ = (2x² - 1)/√2
        assert!((h2.coefficient(&[2]) - 2f64.sqrt()).abs() < 1e-14);
        assert!((h2.coefficient(&[0]) + 1.0 / 2f64.sqrt()).abs() < 1e-14);
        let p1 = transition_polynomial(&dm, 1.0, &h2).unwrap();
        assert!((&p1 - &h2.scale((-2.0f64).exp())).max_abs_coefficient() < 1e-14);

        let mu = GaussianMeasure::stationary(&dm).unwrap();
        assert!((mu.expectation_poly(&(&h2 * &h2)) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn chaos_up_to_degree_four_in_three_dimensions() {
        let dm = model(3, &[-1.0, 0.0, 0.0, 0.0, -2.0, 0.5, 0.0, 0.5, -3.0], 3, &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        for e in crate::poly::all_exponents(3, 4) {
            let idx = ChaosIndex::new(e);
            assert!(chaos_eigencheck(&dm, &idx, 0.7, 16, 4).unwrap() < 1e-7);
        }
    }

    #[test]
    fn chaos_refuses_nonsymmetric() {
        assert!(matches!(
            chaos_eigencheck(&jordan(), &ChaosIndex::new(vec![1, 0]), 1.0, 4, 0),
            Err(LabError::Unsupported(_))
        ));
    }

    #[test]
    fn decay_scan_rates() {
        let dm = scalar();
        let times: Vec<f64> = (0..=10).map(|k| 0.2 * k as f64).collect();
        let lin: TestFunction = Polynomial::variable(1, 0).into();
        let scan = decay_scan(&dm, &lin, 2.0, &times, &Evaluation::Exact).unwrap();
        assert!((scan.rate - 1.0).abs() < 1e-10);
        assert!((scan.points[0].norm.value - 0.5f64.sqrt()).abs() < 1e-14);
        assert!(scan.theta_exists);

        let (h2, _) = chaos_eigenfunction(&dm, &ChaosIndex::new(vec![2])).unwrap();
        let h2: TestFunction = h2.into();
        let scan = decay_scan(&dm, &h2, 2.0, &times, &Evaluation::Exact).unwrap();
        assert!((scan.rate - 2.0).abs() < 1e-10);
        let scan4 = decay_scan(&dm, &h2, 4.0, &times, &Evaluation::Exact).unwrap();
        assert!((scan4.rate - 2.0).abs() < 1e-10);
        let scan3 = decay_scan(&dm, &h2, 3.0, &times, &Evaluation::mc(1 << 15, 5)).unwrap();
        assert!((scan3.rate - 2.0).abs() < 0.02);

        assert!(decay_scan(&dm, &lin, 1.0, &times, &Evaluation::Exact).is_err());
        assert!(decay_scan(&dm, &lin, f64::INFINITY, &times, &Evaluation::Exact).is_err());
    }

    #[test]
    fn decay_scan_smooth_function() {
        let dm = scalar();
        let f: TestFunction = SmoothFunction::tanh_ridge(vec![1.0], 3.0).into();
        let times = [0.0, 0.5, 1.0, 1.5, 2.0];
        let scan = decay_scan(&dm, &f, 2.0, &times, &Evaluation::mc(1 << 14, 2)).unwrap();
        assert!(scan.theta_exists);
        assert!(scan.rate > 0.5 && scan.rate < 1.5, "{}", scan.rate);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn semigroup_law_on_polynomials(seed in 0u64..1000, s in 0.0f64..2.0, t in 0.0f64..2.0) {
            let dm = jordan();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = Polynomial::random(2, 3, &mut rng);
            let ps = transition_polynomial(&dm, s, &p).unwrap();
            let pts = transition_polynomial(&dm, t, &ps).unwrap();
            let direct = transition_polynomial(&dm, s + t, &p).unwrap();
            prop_assert!((&pts - &direct).max_abs_coefficient() < 1e-9);
        }

        #[test]
        fn contraction_in_lp(seed in 0u64..1000, t in 0.05f64..2.0) {
            let dm = jordan();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = Polynomial::random(2, 3, &mut rng);
            let pt = transition_polynomial(&dm, t, &p).unwrap();
            let mu = GaussianMeasure::stationary(&dm).unwrap();
            for q in [2u32, 4] {
                let stats = integrate_normal(&Evaluation::mc(20_000, seed), 2, 2, |w, out| {
                    let mut x = [0.0; 2];
                    mu.transform(w, &mut x);
                    out[0] = pt.eval(&x).abs().powi(q as i32);
                    out[1] = p.eval(&x).abs().powi(q as i32);
                }).unwrap();
                let lhs = stats.means[0].powf(1.0 / q as f64);
                let rhs = stats.means[1].powf(1.0 / q as f64);
                let rel = stats.stderr(1) / stats.means[1] / q as f64;
                prop_assert!(lhs <= rhs * (1.0 + 3.0 * rel), "p={q}: {lhs} > {rhs}");
            }
        }
    }

    #[test]
    fn ridge_path_matches_tensor_grid() {
        let dm = model(2, &[-1.0, 0.5, 0.0, -2.0], 2, &[1.0, 0.0, 0.3, 1.0]);
        let u = vec![0.6, -0.8];
        let ridge = TestFunction::from(SmoothFunction::tanh_ridge(u.clone(), 2.0));
        let plain = {
            let (u1, u2) = (u.clone(), u.clone());
            TestFunction::from(SmoothFunction::new(
                "tanh",
                2,
                true,
                move |x| (2.0 * crate::numkit::dot(x, &u1)).tanh(),
                move |x| {
                    let s = 2.0 / (2.0 * crate::numkit::dot(x, &u2)).cosh().powi(2);
                    u2.iter().map(|v| s * v).collect()
                },
                |_| Matrix::zeros(2, 2),
            ))
        };
        let grid = InnerGrid::new(80, 2).unwrap();
        let x = [0.4, -1.1];
        for t in [0.05, 0.5, 2.0] {
            let tr = Transition::new(&dm, t).unwrap();
            assert!((grid.value(&tr, &ridge, &x) - grid.value(&tr, &plain, &x)).abs() < 1e-8);
            let (a, b) = (grid.gradient(&tr, &ridge, &x), grid.gradient(&tr, &plain, &x));
            assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-8), "{a:?} {b:?}");
        }
    }
}
