//! Poincaré-type inequalities under the invariant measure: `L^p` norms,
//! ratios for `D_H` and `D_H^*`, the sharp `p = 2` constant, the duality
//! integral, the small-time gradient estimate and the weighted-norm
//! counterexample.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculus::{divergence_h_poly, grad_h_poly, TestFunction};
use crate::error::{LabError, Result};
use crate::model::DerivedModel;
use crate::numkit::{expm, gauss_legendre, spectral_abscissa, spectral_norm, Matrix};
use crate::poly::{GaussianMoments, Polynomial};
use crate::sampling::{integrate_normal, Estimate, Evaluation, SampleStats, Scheme};
use crate::semigroup::{chaos_eigenfunction, ChaosIndex, GaussianMeasure, InnerGrid, Transition};

/// One Poincaré-type ratio with its reference constant.
#[derive(Debug, Clone, Serialize)]
pub struct PoincareReport {
    pub p: f64,
    pub ratio: Estimate,
    /// `1/√(2ω)` when `p = 2`.
    pub bound: Option<f64>,
    pub function_label: String,
    /// Set when the ratio is degenerate (non-constant `f` with `D_H f = 0`).
    pub flag: Option<String>,
}

fn check_exponent(p: f64) -> Result<()> {
    if p.is_finite() && p > 1.0 {
        Ok(())
    } else {
        Err(LabError::InvalidInput(format!("p must lie in (1, ∞), got {p}")))
    }
}

/// `Some(p)` when `p` is an even integer.
fn even_integer(p: f64) -> Option<u32> {
    (p.fract() == 0.0 && p >= 2.0 && (p as u32).is_multiple_of(2)).then_some(p as u32)
}

fn refuse_exact(p: f64) -> LabError {
    LabError::Refused(format!(
        "exact scheme needs an even integer p and polynomial integrands, got p = {p}"
    ))
}

/// `(Σ_k F_k²)^{p/2}` as a polynomial, `p` even.
fn norm_power(components: &[Polynomial], p: u32) -> Polynomial {
    let d = components[0].dim();
    let sq = components
        .iter()
        .fold(Polynomial::zero(d), |acc, c| &acc + &(c * c));
    sq.pow(p / 2)
}

/// Samples `x ~ μ_inf` and averages the outputs of `f(x, out)`.
fn sample_stationary<F>(dm: &DerivedModel, eval: &Evaluation, outputs: usize, f: F) -> Result<SampleStats>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let mu = GaussianMeasure::stationary(dm)?;
    let d = dm.d();
    integrate_normal(eval, d, outputs, |w, out| {
        let mut x = vec![0.0; d];
        mu.transform(w, &mut x);
        f(&x, out);
    })
}

/// `m^{1/p}` with a delta-method standard error.
fn root_estimate(stats: &SampleStats, k: usize, p: f64) -> Estimate {
    let m = stats.means[k].max(0.0);
    let value = m.powf(1.0 / p);
    let stderr = if m > 0.0 {
        value / (p * m) * stats.stderr(k)
    } else {
        0.0
    };
    Estimate {
        value,
        stderr,
        n_samples: stats.n,
        seed: stats.seed,
        scheme: stats.scheme,
    }
}

/// `(m_a / m_b)^{1/p}` from shared samples, with a delta-method error that
/// uses the covariance of the two means.
fn ratio_estimate(stats: &SampleStats, a: usize, b: usize, p: f64) -> Estimate {
    let (ma, mb) = (stats.means[a].max(0.0), stats.means[b].max(0.0));
    let value = if mb > 0.0 {
        (ma / mb).powf(1.0 / p)
    } else if ma == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let stderr = if ma > 0.0 && mb > 0.0 {
        let var_log = stats.cov(a, a) / (ma * ma) + stats.cov(b, b) / (mb * mb)
            - 2.0 * stats.cov(a, b) / (ma * mb);
        value * var_log.max(0.0).sqrt() / p
    } else {
        0.0
    };
    Estimate {
        value,
        stderr,
        n_samples: stats.n,
        seed: stats.seed,
        scheme: stats.scheme,
    }
}

/// `(∫|f|^p dμ_inf)^{1/p}`.
pub fn lp_norm(dm: &DerivedModel, f: &TestFunction, p: f64, eval: &Evaluation) -> Result<Estimate> {
    check_exponent(p)?;
    if let Evaluation::Exact = eval {
        let (k, poly) = even_integer(p)
            .zip(f.as_polynomial())
            .ok_or_else(|| refuse_exact(p))?;
        let mu = GaussianMeasure::stationary(dm)?;
        return Ok(Estimate::exact(mu.expectation_poly(&poly.pow(k)).max(0.0).powf(1.0 / p)));
    }
    let stats = sample_stationary(dm, eval, 1, |x, out| out[0] = f.value(x).abs().powf(p))?;
    Ok(root_estimate(&stats, 0, p))
}

fn mean_of(dm: &DerivedModel, f: &TestFunction, eval: &Evaluation) -> Result<f64> {
    let mu = GaussianMeasure::stationary(dm)?;
    match f {
        TestFunction::Polynomial(p) => Ok(mu.expectation_poly(p)),
        _ => Ok(mu.expectation(f, eval)?.value),
    }
}

fn p2_bound(dm: &DerivedModel, p: f64) -> Option<f64> {
    (p == 2.0).then(|| dm.poincare_constant_p2())
}

/// `‖f - f̄‖_p / ‖D_H f‖_p`, numerator and denominator from shared samples.
pub fn poincare_ratio(dm: &DerivedModel, f: &TestFunction, p: f64, eval: &Evaluation) -> Result<PoincareReport> {
    check_exponent(p)?;
    let bound = p2_bound(dm, p);
    let label = f.label();
    if let Some(poly) = f.as_polynomial() {
        if poly.degree() == 0 {
            return Ok(PoincareReport {
                p,
                ratio: Estimate::exact(0.0),
                bound,
                function_label: label,
                flag: None,
            });
        }
    }
    let ratio = if let Evaluation::Exact = eval {
        let (k, poly) = even_integer(p)
            .zip(f.as_polynomial())
            .ok_or_else(|| refuse_exact(p))?;
        let mut moments = GaussianMoments::new(dm.qinf.clone());
        Estimate::exact(exact_ratio(dm, &mut moments, poly, k))
    } else {
        let mean = mean_of(dm, f, eval)?;
        let i = dm.i();
        let stats = sample_stationary(dm, eval, 2, |x, out| {
            let g = f.gradient(x);
            let dh: f64 = (0..i.ncols())
                .map(|c| (0..i.nrows()).map(|r| i[(r, c)] * g[r]).sum::<f64>().powi(2))
                .sum();
            out[0] = (f.value(x) - mean).abs().powf(p);
            out[1] = dh.powf(p / 2.0);
        })?;
        ratio_estimate(&stats, 0, 1, p)
    };
    let flag = ratio
        .value
        .is_infinite()
        .then(|| "non-constant function with vanishing D_H gradient".to_string());
    Ok(PoincareReport {
        p,
        ratio,
        bound,
        function_label: label,
        flag,
    })
}

/// Exact `‖f - f̄‖_p / ‖D_H f‖_p` for even `p`, reusing a moment table.
fn exact_ratio(dm: &DerivedModel, moments: &mut GaussianMoments, f: &Polynomial, p: u32) -> f64 {
    let mean = moments.expectation(f);
    let centered = f.add_constant(-mean);
    let num = moments.expectation(&centered.pow(p)).max(0.0);
    let den = moments
        .expectation(&norm_power(&grad_h_poly(f, dm.i()), p))
        .max(0.0);
    if den > 0.0 {
        (num / den).powf(1.0 / p as f64)
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Where the best ratio of a sharpness search came from.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Maximizer {
    /// `f(x) = ⟨x, u⟩`.
    Linear { u: Vec<f64> },
    RandomPolynomial { degree: u32, index: usize },
    Chaos { multi_index: Vec<u32> },
}

#[derive(Debug, Clone, Serialize)]
pub struct SharpnessReport {
    pub best: PoincareReport,
    pub maximizer: Maximizer,
    /// Supremum over linear functionals, from a generalized eigenproblem.
    pub linear_max: f64,
    pub linear_u: Vec<f64>,
    /// Largest ratio among the non-linear probes.
    pub higher_degree_max: f64,
    pub bound: f64,
    pub within_bound: bool,
    /// `|linear_max - bound| ≤ tol · bound`.
    pub attained_by_linear: bool,
    pub probes: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SharpnessOptions {
    pub degree_cap: u32,
    pub random_count: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for SharpnessOptions {
    fn default() -> Self {
        Self {
            degree_cap: 4,
            random_count: 64,
            seed: 0,
            tolerance: 1e-8,
        }
    }
}

/// Maximizes the `p = 2` ratio over linear functionals in closed form, over
/// seeded random polynomials, and over the Hermite chaos when the whitened
/// generator is symmetric.
pub fn sharpness_search(dm: &DerivedModel, opts: &SharpnessOptions) -> Result<SharpnessReport> {
    dm.require_nondegenerate_qinf()?;
    let d = dm.d();
    let (linear_max, linear_u) = linear_sharpness(dm)?;
    let mut best = (linear_max, Maximizer::Linear { u: linear_u.clone() });
    let mut higher: f64 = 0.0;
    let mut probes = 1;
    let mut moments = GaussianMoments::new(dm.qinf.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    if opts.degree_cap >= 2 {
        for index in 0..opts.random_count {
            let degree = 2 + (index as u32) % (opts.degree_cap - 1);
            let f = Polynomial::random(d, degree, &mut rng);
            let r = exact_ratio(dm, &mut moments, &f, 2);
            probes += 1;
            higher = higher.max(r);
            if r > best.0 {
                best = (r, Maximizer::RandomPolynomial { degree, index });
            }
        }
        if chaos_available(dm) {
            for e in crate::poly::all_exponents(d, opts.degree_cap) {
                let idx = ChaosIndex::new(e);
                if idx.total_degree() < 2 {
                    continue;
                }
                let (h, _) = chaos_eigenfunction(dm, &idx)?;
                let r = exact_ratio(dm, &mut moments, &h, 2);
                probes += 1;
                higher = higher.max(r);
                if r > best.0 {
                    best = (r, Maximizer::Chaos { multi_index: idx.multi_index });
                }
            }
        }
    }
    let bound = dm.poincare_constant_p2();
    let label = match &best.1 {
        Maximizer::Linear { .. } => "linear".to_string(),
        Maximizer::RandomPolynomial { degree, index } => format!("random(deg={degree}, #{index})"),
        Maximizer::Chaos { multi_index } => format!("chaos{multi_index:?}"),
    };
    Ok(SharpnessReport {
        best: PoincareReport {
            p: 2.0,
            ratio: Estimate::exact(best.0),
            bound: Some(bound),
            function_label: label,
            flag: None,
        },
        maximizer: best.1,
        linear_max,
        linear_u,
        higher_degree_max: higher,
        bound,
        within_bound: best.0 <= bound * (1.0 + opts.tolerance),
        attained_by_linear: (linear_max - bound).abs() <= opts.tolerance * bound,
        probes,
    })
}

fn chaos_available(dm: &DerivedModel) -> bool {
    crate::numkit::symmetric_defect(&dm.atilde_inf) <= 1e-10 * dm.atilde_inf.amax().max(1.0)
}

/// `max_u √(⟨Q_inf u, u⟩ / ⟨Q u, u⟩)` and a maximizer; infinite when `Q`
/// is singular.
pub fn linear_sharpness(dm: &DerivedModel) -> Result<(f64, Vec<f64>)> {
    let d = dm.d();
    let Some(chol) = dm.q.clone().cholesky() else {
        let eig = dm.q.clone().symmetric_eigen();
        let k = eig.eigenvalues.imin();
        return Ok((f64::INFINITY, eig.eigenvectors.column(k).iter().copied().collect()));
    };
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| LabError::Singular("Cholesky factor of Q".into()))?;
    let c = &l_inv * &dm.qinf * l_inv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    let k = eig.eigenvalues.imax();
    let v = eig.eigenvectors.column(k).into_owned();
    let u = l_inv.transpose() * v;
    let norm = u.norm();
    Ok((
        eig.eigenvalues[k].max(0.0).sqrt(),
        (0..d).map(|j| u[j] / norm).collect(),
    ))
}

/// Time-quadrature rule for the duality integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeRule {
    Midpoint,
    /// Two-point Gauss-Legendre per panel.
    GaussLegendre2,
}

#[derive(Debug, Clone, Serialize)]
pub struct DualityReport {
    pub t: f64,
    pub steps: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub defect: f64,
}

/// `s ↦ ⟨D_H f, B D_H P(s) g⟩` in `L²(μ_inf)`.
fn duality_integrand(dm: &DerivedModel, moments: &mut GaussianMoments, df: &[Polynomial], g: &Polynomial, s: f64) -> Result<f64> {
    let b = dm.form_operator()?;
    let psg = Transition::new(dm, s)?.polynomial(g);
    let dg = grad_h_poly(&psg, dm.i());
    let m = dm.m();
    let mut total = 0.0;
    for a in 0..m {
        for c in 0..m {
            if b[(a, c)] != 0.0 {
                total += b[(a, c)] * moments.expectation(&(&df[a] * &dg[c]));
            }
        }
    }
    Ok(total)
}

/// Checks `⟨f, g - P(t)g⟩ = -∫₀^t ⟨D_H f, B D_H P(s)g⟩ ds`; the left side is
/// exact, the right side uses `steps` panels of the chosen rule.
pub fn duality_identity_defect(
    dm: &DerivedModel,
    f: &Polynomial,
    g: &Polynomial,
    t: f64,
    steps: usize,
    rule: TimeRule,
) -> Result<DualityReport> {
    crate::model::check_time(t)?;
    dm.require_nondegenerate_noise()?;
    if steps == 0 {
        return Err(LabError::InvalidInput("duality quadrature needs ≥ 1 step".into()));
    }
    let mut moments = GaussianMoments::new(dm.qinf.clone());
    let ptg = Transition::new(dm, t)?.polynomial(g);
    let lhs = moments.expectation(&(f * &(g - &ptg)));
    let df = grad_h_poly(f, dm.i());
    let h = t / steps as f64;
    let (nodes, weights) = match rule {
        TimeRule::Midpoint => (vec![0.0], vec![2.0]),
        TimeRule::GaussLegendre2 => {
            let gl = gauss_legendre(2);
            (gl.nodes, gl.weights)
        }
    };
    let mut integral = 0.0;
    if t > 0.0 {
        for k in 0..steps {
            let centre = (k as f64 + 0.5) * h;
            for (x, w) in nodes.iter().zip(&weights) {
                let s = centre + 0.5 * h * x;
                integral += 0.5 * h * w * duality_integrand(dm, &mut moments, &df, g, s)?;
            }
        }
    }
    let rhs = -integral;
    Ok(DualityReport {
        t,
        steps,
        lhs,
        rhs,
        defect: (lhs - rhs).abs(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub rule: TimeRule,
    pub reports: Vec<DualityReport>,
    /// `log₂(e_n / e_{2n})` for consecutive halvings.
    pub orders: Vec<f64>,
    /// Smallest order among halvings whose errors stay above the roundoff
    /// floor.
    pub observed_order: Option<f64>,
}

/// Runs the duality check at `steps, 2·steps, …` and reports observed orders.
pub fn duality_convergence(
    dm: &DerivedModel,
    f: &Polynomial,
    g: &Polynomial,
    t: f64,
    steps: &[usize],
    rule: TimeRule,
) -> Result<ConvergenceReport> {
    let reports: Vec<DualityReport> = steps
        .iter()
        .map(|&n| duality_identity_defect(dm, f, g, t, n, rule))
        .collect::<Result<_>>()?;
    let scale = reports.first().map(|r| r.lhs.abs()).unwrap_or(0.0).max(1.0);
    let floor = 1e-11 * scale;
    let mut orders = Vec::new();
    let mut observed: Option<f64> = None;
    for w in reports.windows(2) {
        let ratio = w[1].steps as f64 / w[0].steps as f64;
        let order = (w[0].defect / w[1].defect).ln() / ratio.ln();
        orders.push(order);
        if w[1].defect > floor && order.is_finite() {
            observed = Some(observed.map_or(order, |o: f64| o.min(order)));
        }
    }
    Ok(ConvergenceReport {
        rule,
        reports,
        orders,
        observed_order: observed,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientPoint {
    pub t: f64,
    /// `√t ‖D_H P(t)f‖_q / ‖f‖_q`.
    pub value: Estimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientScan {
    pub label: String,
    pub q: f64,
    pub points: Vec<GradientPoint>,
    /// Largest scanned value: the empirical gradient-estimate constant.
    pub max: f64,
    /// Scanned value at the grid time closest to `t = 0.25`.
    pub reference: f64,
    /// `max / reference` over the part of the grid below `t = 0.25`.
    pub small_time_growth: f64,
}

/// Scans `√t ‖D_H P(t)f‖_q / ‖f‖_q` on a grid inside `(0, 1]`.
pub fn gradient_estimate_scan(
    dm: &DerivedModel,
    f: &TestFunction,
    q: f64,
    times: &[f64],
    eval: &Evaluation,
) -> Result<GradientScan> {
    check_exponent(q)?;
    if times.is_empty() {
        return Err(LabError::InvalidInput("empty time grid".into()));
    }
    for &t in times {
        if !(t > 0.0 && t <= 1.0) {
            return Err(LabError::InvalidInput(format!("gradient scan times must lie in (0, 1], got {t}")));
        }
    }
    let transitions: Vec<Transition> = times
        .iter()
        .map(|&t| Transition::new(dm, t))
        .collect::<Result<_>>()?;
    let i = dm.i();
    let m = dm.m();
    // iᵀ e^{tAᵀ}
    let lifts: Vec<Matrix> = transitions
        .iter()
        .map(|tr| i.transpose() * tr.s.transpose())
        .collect();
    let exact_q = even_integer(q);
    let values: Vec<Estimate> = match (eval, f.as_polynomial(), exact_q) {
        (Evaluation::Exact, Some(poly), Some(k)) => {
            let mut moments = GaussianMoments::new(dm.qinf.clone());
            let fnorm = moments.expectation(&poly.pow(k)).max(0.0).powf(1.0 / q);
            transitions
                .iter()
                .map(|tr| {
                    let dh = grad_h_poly(&tr.polynomial(poly), i);
                    let num = moments.expectation(&norm_power(&dh, k)).max(0.0).powf(1.0 / q);
                    Estimate::exact(if fnorm > 0.0 { tr.t.sqrt() * num / fnorm } else { 0.0 })
                })
                .collect()
        }
        (Evaluation::Exact, _, _) => return Err(refuse_exact(q)),
        _ => {
            let inner = match f {
                TestFunction::Smooth(_) => Some(InnerGrid::default_for(dm.d())?),
                TestFunction::Polynomial(_) => None,
            };
            let grads: Option<Vec<Vec<Polynomial>>> = f.as_polynomial().map(|poly| {
                transitions
                    .iter()
                    .map(|tr| tr.polynomial(poly).gradient())
                    .collect()
            });
            let n = times.len();
            let stats = sample_stationary(dm, eval, n + 1, |x, out| {
                out[n] = f.value(x).abs().powf(q);
                for k in 0..n {
                    // D_H P(t)f = iᵀ e^{tAᵀ} E ∇f(e^{tA}x + Z)
                    let dh: Vec<f64> = match (&grads, &inner) {
                        (Some(g), _) => {
                            let gx: Vec<f64> = g[k].iter().map(|c| c.eval(x)).collect();
                            (0..m)
                                .map(|c| (0..dm.d()).map(|r| i[(r, c)] * gx[r]).sum())
                                .collect()
                        }
                        (None, Some(grid)) => {
                            let eg = grid.gradient(&transitions[k], f, x);
                            (0..m)
                                .map(|c| (0..dm.d()).map(|r| lifts[k][(c, r)] * eg[r]).sum())
                                .collect()
                        }
                        (None, None) => unreachable!("smooth functions always carry a grid"),
                    };
                    out[k] = dh.iter().map(|v| v * v).sum::<f64>().powf(q / 2.0);
                }
            })?;
            (0..n)
                .map(|k| {
                    let mut r = ratio_estimate(&stats, k, n, q);
                    let st = times[k].sqrt();
                    r.value *= st;
                    r.stderr *= st;
                    r
                })
                .collect()
        }
    };
    let points: Vec<GradientPoint> = times
        .iter()
        .zip(values)
        .map(|(&t, value)| GradientPoint { t, value })
        .collect();
    let max = points.iter().map(|p| p.value.value).fold(0.0, f64::max);
    let reference_idx = points
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1.t - 0.25).abs().total_cmp(&(b.1.t - 0.25).abs()))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let reference = points[reference_idx].value.value;
    let small = points
        .iter()
        .filter(|p| p.t <= points[reference_idx].t)
        .map(|p| p.value.value)
        .fold(0.0, f64::max);
    let small_time_growth = if reference > 0.0 {
        small / reference
    } else if small == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(GradientScan {
        label: f.label(),
        q,
        points,
        max,
        reference,
        small_time_growth,
    })
}

/// `‖F‖_p / ‖D_H^* F‖_p` on the gradient field `F = D_H g`.
pub fn dhstar_poincare(dm: &DerivedModel, g: &Polynomial, p: f64, eval: &Evaluation) -> Result<PoincareReport> {
    check_exponent(p)?;
    dm.require_nondegenerate_noise()?;
    if g.degree() == 0 {
        return Err(LabError::InvalidInput("constant g has a vanishing gradient field".into()));
    }
    let field = grad_h_poly(g, dm.i());
    let div = divergence_h_poly(dm, &field)?;
    let label = format!("D_H poly(deg={})", g.degree());
    let ratio = if let Evaluation::Exact = eval {
        let k = even_integer(p).ok_or_else(|| refuse_exact(p))?;
        let mut moments = GaussianMoments::new(dm.qinf.clone());
        let num = moments.expectation(&norm_power(&field, k)).max(0.0);
        let den = moments.expectation(&div.pow(k)).max(0.0);
        Estimate::exact(if den > 0.0 { (num / den).powf(1.0 / p) } else { f64::INFINITY })
    } else {
        let stats = sample_stationary(dm, eval, 2, |x, out| {
            let sq: f64 = field.iter().map(|c| c.eval(x).powi(2)).sum();
            out[0] = sq.powf(p / 2.0);
            out[1] = div.eval(x).abs().powf(p);
        })?;
        ratio_estimate(&stats, 0, 1, p)
    };
    let flag = ratio
        .value
        .is_infinite()
        .then(|| "divergence vanishes on a non-zero field".to_string());
    Ok(PoincareReport {
        p,
        ratio,
        bound: None,
        function_label: label,
        flag,
    })
}

/// Stability of an empirical supremum under doubling of a nested sample.
#[derive(Debug, Clone, Serialize)]
pub struct DoublingReport {
    pub p: f64,
    pub sup_n: Estimate,
    pub sup_2n: Estimate,
    pub argmax_n: usize,
    pub argmax_2n: usize,
    pub relative_change: f64,
    /// `|r_{2N} - r_N| ≤ 2 stderr_N`.
    pub stable: bool,
    pub finite: bool,
}

fn supremum(reports: &[PoincareReport]) -> Result<(usize, Estimate)> {
    reports
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.ratio.value.total_cmp(&b.1.ratio.value))
        .map(|(k, r)| (k, r.ratio))
        .ok_or_else(|| LabError::InvalidInput("empty function family".into()))
}

/// Evaluates the supremum of `ratio` over a family at `N` and `2N` samples.
/// Monte Carlo samples are nested, so the `2N` run extends the `N` run.
pub fn doubling_stability<F>(family_len: usize, p: f64, eval: &Evaluation, ratio: F) -> Result<DoublingReport>
where
    F: Fn(usize, &Evaluation) -> Result<PoincareReport>,
{
    let at = |e: &Evaluation| -> Result<Vec<PoincareReport>> { (0..family_len).map(|k| ratio(k, e)).collect() };
    let (argmax_n, sup_n) = supremum(&at(eval)?)?;
    let (argmax_2n, sup_2n) = supremum(&at(&eval.doubled())?)?;
    let change = (sup_2n.value - sup_n.value).abs();
    let relative_change = if sup_n.value > 0.0 { change / sup_n.value } else { 0.0 };
    Ok(DoublingReport {
        p,
        finite: sup_n.value.is_finite() && sup_2n.value.is_finite(),
        stable: change <= 2.0 * sup_n.stderr,
        sup_n,
        sup_2n,
        argmax_n,
        argmax_2n,
        relative_change,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub r: f64,
    pub growth: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleReport {
    pub dim: usize,
    pub omega: f64,
    pub t0: f64,
    /// Spectral abscissa of `Δ_h - ω`; negative certifies exponential
    /// stability.
    pub spectral_abscissa: f64,
    pub exponentially_stable: bool,
    /// Growth with the unweighted norm (`r = 1`).
    pub growth_at_unit_weight: f64,
    pub r_star: Option<f64>,
    pub growth: Option<f64>,
    /// Left-half witness on the grid points (zero on the right half).
    pub witness: Vec<f64>,
    /// Growth is nondecreasing in `r` once it first exceeds one.
    pub monotone_after_onset: bool,
    pub sweep: Vec<SweepPoint>,
}

/// Dirichlet Laplacian on `(-1, 1)` by central differences on `dim`
/// interior points.
pub fn dirichlet_laplacian(dim: usize) -> Matrix {
    let h = 2.0 / (dim as f64 + 1.0);
    let c = 1.0 / (h * h);
    Matrix::from_fn(dim, dim, |a, b| {
        if a == b {
            -2.0 * c
        } else if a.abs_diff(b) == 1 {
            c
        } else {
            0.0
        }
    })
}

/// Sweeps the weight `r` of `‖f‖²_(r) = ‖f|_(-1,0)‖² + r²‖f|_(0,1)‖²` and
/// finds where `e^{t0(Δ_h - ω)}` stops being a contraction on functions
/// supported in the left half.
pub fn weighted_norm_counterexample(dim: usize, omega: f64, t0: f64, r_max: f64, points: usize) -> Result<CounterexampleReport> {
    if dim < 8 {
        return Err(LabError::InvalidInput(format!("dim must be ≥ 8, got {dim}")));
    }
    if !(omega > 0.0 && t0 > 0.0 && r_max > 1.0 && points >= 2) {
        return Err(LabError::InvalidInput(
            "need ω > 0, t0 > 0, r_max > 1 and at least two sweep points".into(),
        ));
    }
    let h = 2.0 / (dim as f64 + 1.0);
    let generator = dirichlet_laplacian(dim) - Matrix::identity(dim, dim) * omega;
    let abscissa = spectral_abscissa(&generator);
    let e = expm(&generator, t0)?;
    let left: Vec<usize> = (0..dim).filter(|&j| -1.0 + (j as f64 + 1.0) * h < 0.0).collect();
    let block = Matrix::from_fn(dim, left.len(), |a, b| e[(a, left[b])]);
    let is_left = |j: usize| -1.0 + (j as f64 + 1.0) * h < 0.0;
    let weighted = |r: f64| -> Matrix {
        let mut w = block.clone();
        for a in 0..dim {
            if !is_left(a) {
                w.row_mut(a).scale_mut(r);
            }
        }
        w
    };
    let growth_at_unit_weight = spectral_norm(&weighted(1.0));
    let ratio = r_max.powf(1.0 / (points - 1) as f64);
    let sweep: Vec<SweepPoint> = (0..points)
        .map(|k| {
            let r = ratio.powi(k as i32);
            SweepPoint { r, growth: spectral_norm(&weighted(r)) }
        })
        .collect();
    let onset = sweep.iter().position(|s| s.growth > 1.0);
    let monotone_after_onset = onset.is_some_and(|k| sweep[k..].windows(2).all(|w| w[1].growth >= w[0].growth));
    let (r_star, growth, witness) = match onset {
        Some(k) => {
            let r = sweep[k].r;
            let svd = weighted(r).svd(false, true);
            let j = svd.singular_values.imax();
            let v_t = svd.v_t.expect("requested right singular vectors");
            let mut witness = vec![0.0; dim];
            for (b, &col) in left.iter().enumerate() {
                witness[col] = v_t[(j, b)];
            }
            if witness.iter().sum::<f64>() < 0.0 {
                witness.iter_mut().for_each(|v| *v = -*v);
            }
            (Some(r), Some(sweep[k].growth), witness)
        }
        None => (None, None, Vec::new()),
    };
    Ok(CounterexampleReport {
        dim,
        omega,
        t0,
        spectral_abscissa: abscissa,
        exponentially_stable: abscissa < 0.0,
        growth_at_unit_weight,
        r_star,
        growth,
        witness,
        monotone_after_onset,
        sweep,
    })
}

/// `Scheme` of an evaluation, for report labels.
pub fn scheme_of(eval: &Evaluation) -> Scheme {
    eval.scheme()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::SmoothFunction;
    use crate::model::ModelSpec;
    use crate::numkit::matrix_from_row_major;
    use proptest::prelude::*;

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

    fn classical(d: usize) -> DerivedModel {
        let a = Matrix::identity(d, d) * -1.0;
        DerivedModel::derive(&ModelSpec::new("classical", a, Matrix::identity(d, d)).unwrap()).unwrap()
    }

    fn x() -> TestFunction {
        Polynomial::variable(1, 0).into()
    }

    #[test]
    fn lp_norm_examples() {
        let dm = classical(1);
        assert!((lp_norm(&dm, &x(), 2.0, &Evaluation::Exact).unwrap().value - 0.5f64.sqrt()).abs() < 1e-15);
        let c: TestFunction = Polynomial::constant(1, -3.0).into();
        assert!((lp_norm(&dm, &c, 4.0, &Evaluation::Exact).unwrap().value - 3.0).abs() < 1e-14);
        assert!((lp_norm(&dm, &c, 1.5, &Evaluation::mc(1000, 1)).unwrap().value - 3.0).abs() < 1e-13);
        let want = (3.0 * 0.25f64).powf(0.25);
        assert!((lp_norm(&dm, &x(), 4.0, &Evaluation::Exact).unwrap().value - want).abs() < 1e-15);
        assert!(matches!(
            lp_norm(&dm, &x(), 3.0, &Evaluation::Exact),
            Err(LabError::Refused(_))
        ));
        assert!(lp_norm(&dm, &x(), 1.0, &Evaluation::mc(100, 1)).is_err());
    }

    #[test]
    fn lp_norm_mc_agrees_with_exact() {
        let dm = model(2, &[-1., 1., 0., -1.], 2, &[1., 0., 0., 1.]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..4 {
            let f: TestFunction = Polynomial::random(2, 3, &mut rng).into();
            for p in [2.0, 4.0] {
                let exact = lp_norm(&dm, &f, p, &Evaluation::Exact).unwrap().value;
                let mc = lp_norm(&dm, &f, p, &Evaluation::mc(100_000, 6)).unwrap();
                assert!(mc.within(exact, 4.0, 0.0), "p={p}: {exact} vs {mc:?}");
            }
        }
    }

    #[test]
    fn poincare_ratio_examples() {
        let dm = classical(1);
        let r = poincare_ratio(&dm, &x(), 2.0, &Evaluation::Exact).unwrap();
        assert!((r.ratio.value - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((r.bound.unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        let c: TestFunction = Polynomial::constant(1, 2.0).into();
        assert_eq!(poincare_ratio(&dm, &c, 2.0, &Evaluation::Exact).unwrap().ratio.value, 0.0);
        let x2: TestFunction = Polynomial::variable(1, 0).pow(2).into();
        let r = poincare_ratio(&dm, &x2, 2.0, &Evaluation::Exact).unwrap();
        assert!((r.ratio.value - 0.5).abs() < 1e-15);
        let mc = poincare_ratio(&dm, &x2, 2.0, &Evaluation::mc(200_000, 3)).unwrap();
        assert!(mc.ratio.within(0.5, 4.0, 0.0), "{:?}", mc.ratio);
        assert!(poincare_ratio(&dm, &x2, 4.0 / 3.0, &Evaluation::mc(50_000, 3)).unwrap().ratio.value.is_finite());
    }

    #[test]
    fn sharpness_classical_and_diagonal() {
        for d in 1..=3 {
            let rep = sharpness_search(&classical(d), &SharpnessOptions::default()).unwrap();
            assert!((rep.best.ratio.value - 0.5f64.sqrt()).abs() < 1e-8);
            assert!(matches!(rep.maximizer, Maximizer::Linear { .. }));
            assert!(rep.attained_by_linear && rep.within_bound);
        }
        let dm = model(2, &[-1., 0., 0., -3.], 2, &[1., 0., 0., 1.]);
        let (lin, u) = linear_sharpness(&dm).unwrap();
        assert!((lin - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(u[1].abs() < 1e-12);
        let rep = sharpness_search(&dm, &SharpnessOptions::default()).unwrap();
        assert!(rep.higher_degree_max <= rep.linear_max * (1.0 + 1e-8));
    }

    #[test]
    fn linear_maximizer_matches_direct_ratio() {
        let dm = model(2, &[-1., 2., 0., -1.], 2, &[1., 0.3, 0., 0.8]);
        let (lin, u) = linear_sharpness(&dm).unwrap();
        let f: TestFunction = Polynomial::linear(&u).into();
        let r = poincare_ratio(&dm, &f, 2.0, &Evaluation::Exact).unwrap();
        assert!((r.ratio.value - lin).abs() < 1e-12);
        assert!((lin - dm.poincare_constant_p2()).abs() < 1e-10);
    }

    #[test]
    fn duality_examples() {
        let dm = classical(1);
        let xp = Polynomial::variable(1, 0);
        let r0 = duality_identity_defect(&dm, &xp, &xp, 0.0, 4, TimeRule::GaussLegendre2).unwrap();
        assert_eq!((r0.lhs, r0.rhs), (0.0, 0.0));
        // ⟨x, x - e^{-1}x⟩ = ½(1 - e^{-1}); integrand -½e^{-s}
        let r = duality_identity_defect(&dm, &xp, &xp, 1.0, 64, TimeRule::GaussLegendre2).unwrap();
        assert!((r.lhs - 0.5 * (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!(r.defect < 1e-8);

        let dm = model(2, &[-1., 1., 0., -1.], 2, &[1., 0., 0., 1.]);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let f = Polynomial::random(2, 3, &mut rng);
        let g = Polynomial::random(2, 3, &mut rng);
        let r = duality_identity_defect(&dm, &f, &g, 2.0, 256, TimeRule::GaussLegendre2).unwrap();
        assert!(r.defect < 1e-6, "{r:?}");
        let conv = duality_convergence(&dm, &f, &g, 2.0, &[2, 4, 8, 16], TimeRule::Midpoint).unwrap();
        assert!(conv.observed_order.unwrap() > 1.9, "{conv:?}");
        let conv = duality_convergence(&dm, &f, &g, 2.0, &[8, 16, 32, 64], TimeRule::GaussLegendre2).unwrap();
        assert!(conv.observed_order.unwrap() > 3.5, "{conv:?}");
    }

    #[test]
    fn gradient_scan_examples() {
        let dm = classical(1);
        let times = [0.01, 0.05, 0.1, 0.25, 0.5, 1.0];
        let s = gradient_estimate_scan(&dm, &x(), 2.0, &times, &Evaluation::Exact).unwrap();
        for p in &s.points {
            // √t e^{-t} ‖1‖ / ‖x‖
            let want = p.t.sqrt() * (-p.t).exp() / 0.5f64.sqrt();
            assert!((p.value.value - want).abs() < 1e-13);
        }
        let one: TestFunction = Polynomial::constant(1, 1.0).into();
        let s = gradient_estimate_scan(&dm, &one, 2.0, &times, &Evaluation::Exact).unwrap();
        assert!(s.points.iter().all(|p| p.value.value == 0.0));
        assert!(gradient_estimate_scan(&dm, &x(), 2.0, &[0.0, 0.5], &Evaluation::Exact).is_err());

        let sign: TestFunction = SmoothFunction::tanh_ridge(vec![1.0], 10.0).into();
        let s = gradient_estimate_scan(&dm, &sign, 2.0, &times, &Evaluation::mc(1 << 13, 7)).unwrap();
        assert!(s.small_time_growth <= 3.0, "{s:?}");
        assert!(s.max.is_finite());
    }

    #[test]
    fn gradient_scan_mc_agrees_with_exact_for_polynomials() {
        let dm = model(2, &[-1., 1., 0., -1.], 2, &[1., 0., 0., 1.]);
        let f: TestFunction = (&Polynomial::variable(2, 0).pow(2) + &Polynomial::variable(2, 1)).into();
        let times = [0.1, 0.5];
        let ex = gradient_estimate_scan(&dm, &f, 2.0, &times, &Evaluation::Exact).unwrap();
        let mc = gradient_estimate_scan(&dm, &f, 2.0, &times, &Evaluation::mc(100_000, 2)).unwrap();
        for (a, b) in ex.points.iter().zip(&mc.points) {
            assert!(b.value.within(a.value.value, 4.0, 0.0), "{a:?} {b:?}");
        }
    }

    #[test]
    fn dhstar_examples() {
        let dm = classical(1);
        let r = dhstar_poincare(&dm, &Polynomial::variable(1, 0), 2.0, &Evaluation::Exact).unwrap();
        assert!((r.ratio.value - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(dhstar_poincare(&dm, &Polynomial::constant(1, 1.0), 2.0, &Evaluation::Exact).is_err());
        let dm = model(2, &[-1., 1., 0., -1.], 2, &[1., 0., 0., 1.]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Polynomial::random(2, 3, &mut rng);
        let ex = dhstar_poincare(&dm, &g, 2.0, &Evaluation::Exact).unwrap();
        let mc = dhstar_poincare(&dm, &g, 2.0, &Evaluation::mc(200_000, 3)).unwrap();
        assert!(ex.ratio.value.is_finite());
        assert!(mc.ratio.within(ex.ratio.value, 4.0, 0.0));
    }

    #[test]
    fn doubling_on_classical_ratios() {
        let dm = classical(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let family: Vec<TestFunction> = (0..4).map(|_| Polynomial::random(2, 3, &mut rng).into()).collect();
        let rep = doubling_stability(family.len(), 4.0 / 3.0, &Evaluation::mc(1 << 15, 9), |k, e| {
            poincare_ratio(&dm, &family[k], 4.0 / 3.0, e)
        })
        .unwrap();
        assert!(rep.finite);
        assert_eq!(rep.sup_2n.n_samples, 2 * rep.sup_n.n_samples);
    }

    #[test]
    fn counterexample_finds_growth() {
        let rep = weighted_norm_counterexample(20, 1.0, 0.1, 1e6, 121).unwrap();
        assert!(rep.exponentially_stable);
        assert!(rep.growth_at_unit_weight < 1.0);
        assert!(rep.r_star.is_some());
        assert!(rep.growth.unwrap() > 1.0);
        assert!(rep.monotone_after_onset);
        // the witness is supported on the left half
        assert!(rep.witness[10..].iter().all(|&v| v == 0.0));
        assert!(weighted_norm_counterexample(4, 1.0, 0.1, 1e6, 10).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn p2_ratio_never_exceeds_sharp_constant(seed in 0u64..10_000, deg in 1u32..=4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Matrix::from_fn(2, 2, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0)) - Matrix::identity(2, 2) * 2.0;
            let spec = ModelSpec::new("r", a, Matrix::identity(2, 2)).unwrap();
            let dm = DerivedModel::derive(&spec).unwrap();
            let f: TestFunction = Polynomial::random(2, deg, &mut rng).into();
            let r = poincare_ratio(&dm, &f, 2.0, &Evaluation::Exact).unwrap();
            prop_assert!(r.ratio.value <= dm.poincare_constant_p2() * (1.0 + 1e-8));
        }
    }
}
