//! Resolvents of Kronecker sums `A⊗I + I⊗B` of sectorial matrices by the
//! double contour integral
//! `R(λ, A⊕B) = (2πi)^{-2} ∬ (λ - w - z)^{-1} R(w, A) ⊗ R(z, B) dw dz`.

use std::f64::consts::PI;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::numkit::{
    ensure_finite, ensure_square, gauss_legendre, kron_sum, spectral_norm, spectral_norm_c, to_complex, CMatrix,
    Matrix, C64,
};

/// Gap between a certified sector angle and the contour angle.
pub const ANGLE_MARGIN: f64 = 0.05;

/// Boundary of `{|z| < r} ∪ {|arg z| < θ}` truncated at `|z| = R`: the
/// upper ray traversed inwards, the left arc, then the lower ray outwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SectorContour {
    pub theta: f64,
    pub r: f64,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub nodes_per_segment: usize,
}

/// One quadrature node: point and oriented weight `dz`.
#[derive(Debug, Clone, Copy)]
pub struct ContourNode {
    pub z: C64,
    pub weight: C64,
}

impl SectorContour {
    pub fn new(theta: f64, r: f64, big_r: f64, nodes_per_segment: usize) -> Result<Self> {
        if !(theta > 0.0 && theta < PI / 2.0) {
            return Err(LabError::InvalidInput(format!("contour angle {theta} outside (0, π/2)")));
        }
        if !(r > 0.0 && big_r > r && big_r.is_finite()) {
            return Err(LabError::InvalidInput(format!("need 0 < r < R, got r = {r}, R = {big_r}")));
        }
        if nodes_per_segment < 2 {
            return Err(LabError::InvalidInput("need at least 2 nodes per segment".into()));
        }
        Ok(Self {
            theta,
            r,
            big_r,
            nodes_per_segment,
        })
    }

    /// Gauss-Legendre nodes; the rays use `ρ = e^u` with `u` uniform in
    /// `[ln r, ln R]`.
    pub fn nodes(&self) -> Vec<ContourNode> {
        let gl = gauss_legendre(self.nodes_per_segment);
        let (lo, hi) = (self.r.ln(), self.big_r.ln());
        let (uc, uh) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        let up = C64::from_polar(1.0, self.theta);
        let down = C64::from_polar(1.0, -self.theta);
        let mut out = Vec::with_capacity(3 * gl.len());
        // upper ray, inwards
        for (x, w) in gl.nodes.iter().zip(&gl.weights).rev() {
            let rho = (uc + uh * x).exp();
            out.push(ContourNode {
                z: up * rho,
                weight: -up * rho * (uh * w),
            });
        }
        // arc from θ to 2π - θ
        let (pc, ph) = (PI, PI - self.theta);
        for (x, w) in gl.nodes.iter().zip(&gl.weights) {
            let phi = pc + ph * x;
            let z = C64::from_polar(self.r, phi);
            out.push(ContourNode {
                z,
                weight: C64::i() * z * (ph * w),
            });
        }
        // lower ray, outwards
        for (x, w) in gl.nodes.iter().zip(&gl.weights) {
            let rho = (uc + uh * x).exp();
            out.push(ContourNode {
                z: down * rho,
                weight: down * rho * (uh * w),
            });
        }
        out
    }
}

/// Sampled evidence that a matrix is sectorial of a claimed angle.
#[derive(Debug, Clone, Serialize)]
pub struct SectorialCertificate {
    pub theta: f64,
    /// Largest `|arg μ|` over the eigenvalues.
    pub max_eigen_arg: f64,
    /// Sampled `sup ‖z R(z, M)‖` over `|arg z| ≥ θ + margin`.
    pub sampled_bound: f64,
    /// The same supremum restricted to the far field.
    pub far_field_bound: f64,
    pub samples: usize,
}

/// A real matrix together with a certified sector angle.
#[derive(Debug, Clone, Serialize)]
pub struct SectorialMatrix {
    #[serde(skip)]
    pub m: Matrix,
    pub theta_claimed: f64,
    pub certificate: SectorialCertificate,
}

impl SectorialMatrix {
    pub fn new(m: Matrix, theta: f64) -> Result<Self> {
        let certificate = certify_sectorial(&m, theta, 64)?;
        Ok(Self {
            m,
            theta_claimed: theta,
            certificate,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    /// Angle used for the integration contour.
    pub fn contour_angle(&self) -> f64 {
        (self.theta_claimed + ANGLE_MARGIN).min(0.5 * (self.theta_claimed + PI / 2.0))
    }
}

/// `(z - M)^{-1}`.
pub fn resolvent(m: &CMatrix, z: C64) -> Result<CMatrix> {
    let n = m.nrows();
    let shifted = CMatrix::identity(n, n) * z - m;
    shifted
        .try_inverse()
        .ok_or_else(|| LabError::Singular(format!("z = {z} is an eigenvalue")))
}

/// Checks the eigenvalue arguments exactly and samples `‖z R(z, M)‖` on
/// `samples` log-spaced radii along a fan of rays with `|arg z| ≥ θ + margin`.
pub fn certify_sectorial(m: &Matrix, theta: f64, samples: usize) -> Result<SectorialCertificate> {
    ensure_square(m, "sectorial matrix")?;
    ensure_finite(m, "sectorial matrix")?;
    if !(theta > 0.0 && theta < PI / 2.0) {
        return Err(LabError::InvalidInput(format!("sector angle {theta} outside (0, π/2)")));
    }
    let eig = crate::numkit::eigenvalues(m);
    let mut max_arg: f64 = 0.0;
    for mu in &eig {
        let arg = if mu.norm() == 0.0 { 0.0 } else { mu.arg().abs() };
        if arg > theta {
            return Err(LabError::AssumptionFailure(format!(
                "eigenvalue {mu} has |arg| = {arg:.6} > θ = {theta}"
            )));
        }
        max_arg = max_arg.max(arg);
    }
    let mc = to_complex(m);
    let scale = spectral_norm(m).max(1.0);
    let samples = samples.max(2);
    let start = theta + ANGLE_MARGIN;
    let angles: Vec<f64> = (0..8).map(|k| start + (PI - start) * k as f64 / 7.0).collect();
    let mut sampled: f64 = 0.0;
    let mut far: f64 = 0.0;
    for &phi in &angles {
        for sign in [1.0, -1.0] {
            for k in 0..samples {
                let rho = scale * 10f64.powf(-4.0 + 10.0 * k as f64 / (samples - 1) as f64);
                let z = C64::from_polar(rho, sign * phi);
                let v = spectral_norm_c(&(resolvent(&mc, z)? * z));
                sampled = sampled.max(v);
                if rho >= 1e3 * scale {
                    far = far.max(v);
                }
            }
        }
    }
    Ok(SectorialCertificate {
        theta,
        max_eigen_arg: max_arg,
        sampled_bound: sampled,
        far_field_bound: far,
        samples: samples * angles.len() * 2,
    })
}

/// `(λ - A⊗I - I⊗B)^{-1}` by a dense solve.
pub fn kron_sum_resolvent_oracle(a: &Matrix, b: &Matrix, lam: C64) -> Result<CMatrix> {
    ensure_square(a, "A")?;
    ensure_square(b, "B")?;
    let k = kron_sum(&to_complex(a), &to_complex(b));
    let n = k.nrows();
    (CMatrix::identity(n, n) * lam - k)
        .try_inverse()
        .ok_or_else(|| LabError::Singular(format!("λ = {lam} is in the spectrum of A⊕B")))
}

/// `‖(λ - A⊕B) X - I‖`.
pub fn resolvent_residual(a: &Matrix, b: &Matrix, lam: C64, x: &CMatrix) -> f64 {
    let k = kron_sum(&to_complex(a), &to_complex(b));
    let n = k.nrows();
    spectral_norm_c(&((CMatrix::identity(n, n) * lam - k) * x - CMatrix::identity(n, n)))
}

/// Relative defect of `R(λ₁) - R(λ₂) = (λ₂ - λ₁) R(λ₁) R(λ₂)`.
pub fn resolvent_identity_defect(r1: &CMatrix, r2: &CMatrix, l1: C64, l2: C64) -> f64 {
    let lhs = r1 - r2;
    let rhs = (r1 * r2) * (l2 - l1);
    spectral_norm_c(&(&lhs - &rhs)) / spectral_norm_c(&lhs).max(f64::MIN_POSITIVE)
}

/// Distance from `λ` to the closed sector `|arg z| ≤ θ`.
pub fn distance_to_sector(lam: C64, theta: f64) -> f64 {
    let arg = lam.arg().abs();
    if arg <= theta {
        0.0
    } else if arg >= theta + PI / 2.0 {
        lam.norm()
    } else {
        lam.norm() * (arg - theta).sin()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ContourOptions {
    pub nodes_per_segment: Option<usize>,
    pub r: Option<f64>,
    pub big_r: Option<f64>,
    /// Tail bounds above this raise a warning.
    pub tolerance: Option<f64>,
}

pub const DEFAULT_NODES: usize = 400;
pub const DEFAULT_RADIUS_FACTOR: f64 = 1e12;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct ContourResult {
    #[serde(skip)]
    pub x: CMatrix,
    pub contour_a: SectorContour,
    pub contour_b: SectorContour,
    /// `dist(λ, Σ_A + Σ_B)` for the contour regions actually used.
    pub distance: f64,
    pub tail_bound: f64,
    pub warning: Option<String>,
}

/// Evaluates the double contour integral for `R(λ, A⊕B)`.
pub fn contour_resolvent(a: &SectorialMatrix, b: &SectorialMatrix, lam: C64, opts: &ContourOptions) -> Result<ContourResult> {
    if !(lam.re.is_finite() && lam.im.is_finite()) {
        return Err(LabError::NonFinite("λ"));
    }
    let (ta, tb) = (a.contour_angle(), b.contour_angle());
    let theta_max = ta.max(tb);
    let sector_dist = distance_to_sector(lam, theta_max);
    let scale = spectral_norm(&a.m).max(spectral_norm(&b.m)).max(lam.norm()).max(1.0);
    if sector_dist <= 1e-12 * scale {
        return Err(LabError::Refused(format!(
            "λ = {lam} lies in or on the sum sector |arg z| ≤ {theta_max:.4} (distance {sector_dist:.3e})"
        )));
    }
    let min_eig = crate::numkit::eigenvalues(&a.m)
        .iter()
        .chain(crate::numkit::eigenvalues(&b.m).iter())
        .map(|m| m.norm())
        .fold(f64::INFINITY, f64::min);
    let r = match opts.r {
        Some(r) => r,
        None => {
            let mut r = (lam.norm() / 4.0).min(sector_dist / 4.0);
            if min_eig > 0.0 {
                r = r.min(min_eig / 2.0);
            }
            r
        }
    };
    if !(r > 0.0 && r < lam.norm()) {
        return Err(LabError::InvalidInput(format!("inner radius must satisfy 0 < r < |λ|, got {r}")));
    }
    let distance = (lam.norm() - 2.0 * r).min(sector_dist - r);
    if distance <= 0.0 {
        return Err(LabError::Refused(format!(
            "λ = {lam} is within {distance:.3e} of Σ_A + Σ_B for r = {r}; choose a smaller r"
        )));
    }
    let big_r = opts.big_r.unwrap_or(DEFAULT_RADIUS_FACTOR * scale);
    let nodes = opts.nodes_per_segment.unwrap_or(DEFAULT_NODES);
    let contour_a = SectorContour::new(ta, r, big_r, nodes)?;
    let contour_b = SectorContour::new(tb, r, big_r, nodes)?;
    let (ac, bc) = (to_complex(&a.m), to_complex(&b.m));
    let na = contour_a.nodes();
    let nb = contour_b.nodes();
    let ra: Vec<CMatrix> = na.par_iter().map(|n| resolvent(&ac, n.z)).collect::<Result<_>>()?;
    let rb: Vec<CMatrix> = nb.par_iter().map(|n| resolvent(&bc, n.z)).collect::<Result<_>>()?;
    let (da, db) = (a.dim(), b.dim());
    let parts: Vec<CMatrix> = nb
        .par_iter()
        .zip(&rb)
        .map(|(zn, rz)| {
            let mut m = CMatrix::zeros(da, da);
            for (wn, rw) in na.iter().zip(&ra) {
                m += rw * (wn.weight / (lam - wn.z - zn.z));
            }
            (m * zn.weight).kronecker(rz)
        })
        .collect();
    let mut x = CMatrix::zeros(da * db, da * db);
    for p in &parts {
        x += p;
    }
    let two_pi_i = C64::new(0.0, 2.0 * PI);
    x /= two_pi_i * two_pi_i;

    let c_a = sampled_constant(&na, &ra).max(a.certificate.sampled_bound);
    let c_b = sampled_constant(&nb, &rb).max(b.certificate.sampled_bound);
    let tail_bound = tail_bound(c_a, c_b, theta_max, r, big_r, lam.norm());
    let tolerance = opts.tolerance.unwrap_or(DEFAULT_TOLERANCE);
    let x_norm = spectral_norm_c(&x);
    let warning = (tail_bound > tolerance * x_norm.max(f64::MIN_POSITIVE)).then(|| {
        format!("truncation tail bound {tail_bound:.3e} exceeds tolerance {tolerance:.1e} relative to ‖X‖ = {x_norm:.3e}")
    });
    Ok(ContourResult {
        x,
        contour_a,
        contour_b,
        distance,
        tail_bound,
        warning,
    })
}

fn sampled_constant(nodes: &[ContourNode], res: &[CMatrix]) -> f64 {
    nodes
        .iter()
        .zip(res)
        .map(|(n, r)| n.z.norm() * spectral_norm_c(r))
        .fold(0.0, f64::max)
}

/// Bound on the discarded `|w| > R` or `|z| > R` part, from
/// `‖R(w)‖ ≤ C/|w|` and `dist(λ, w + z) ≥ c|w|/2` with `c = cos θ`,
/// valid once `c R ≥ 4(|λ| + r)`.
pub fn tail_bound(c_a: f64, c_b: f64, theta: f64, r: f64, big_r: f64, lam_abs: f64) -> f64 {
    let c = theta.cos();
    if c * big_r < 4.0 * (lam_abs + r) {
        return f64::INFINITY;
    }
    // two discarded rays × ∫_R^∞ 2/(c ρ²) dρ, against ∫_γ |dz|/|z| ≤ 2 ln(R/r) + 2π
    let one_side = c_a * c_b * (2.0 * 2.0 / (c * big_r)) * (2.0 * (big_r / r).ln() + 2.0 * PI) / (4.0 * PI * PI);
    2.0 * one_side
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub nodes: usize,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub error: f64,
    pub tail_bound: f64,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    /// Relative error of the last row.
    pub final_error: f64,
    /// Error is nonincreasing along the node schedule at the largest `R`.
    pub monotone_in_nodes: bool,
    pub below_target: bool,
}

/// Relative error against the dense oracle over a grid of node counts and
/// truncation radii.
pub fn convergence_study(
    a: &SectorialMatrix,
    b: &SectorialMatrix,
    lam: C64,
    node_schedule: &[usize],
    radius_schedule: &[f64],
    target: f64,
) -> Result<ConvergenceStudy> {
    let oracle = kron_sum_resolvent_oracle(&a.m, &b.m, lam)?;
    let norm = spectral_norm_c(&oracle);
    let mut rows = Vec::new();
    for &big_r in radius_schedule {
        for &nodes in node_schedule {
            let start = Instant::now();
            let res = contour_resolvent(
                a,
                b,
                lam,
                &ContourOptions {
                    nodes_per_segment: Some(nodes),
                    big_r: Some(big_r),
                    ..Default::default()
                },
            )?;
            rows.push(ConvergenceRow {
                nodes,
                big_r,
                error: spectral_norm_c(&(&res.x - &oracle)) / norm,
                tail_bound: res.tail_bound,
                runtime_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    let last_r = radius_schedule.last().copied().unwrap_or(0.0);
    let along: Vec<f64> = rows.iter().filter(|r| r.big_r == last_r).map(|r| r.error).collect();
    let floor: f64 = 1e-13;
    let monotone_in_nodes = along.windows(2).all(|w| w[1] <= w[0] * 1.05 || w[1] < floor.max(target * 1e-3));
    let final_error = rows.last().map(|r| r.error).unwrap_or(f64::NAN);
    Ok(ConvergenceStudy {
        rows,
        final_error,
        monotone_in_nodes,
        below_target: final_error <= target,
    })
}

/// Relative error of the contour result against the dense oracle.
pub fn relative_error(result: &CMatrix, oracle: &CMatrix) -> f64 {
    spectral_norm_c(&(result - oracle)) / spectral_norm_c(oracle)
}


/// One case of the standard resolvent battery.
#[derive(Debug, Clone)]
pub struct BatteryCase {
    pub label: &'static str,
    pub a: Matrix,
    pub b: Matrix,
    pub theta_a: f64,
    pub theta_b: f64,
    pub lambdas: Vec<C64>,
}

fn seeded_spd(n: usize, seed: u64) -> Matrix {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let g = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &g * g.transpose() + Matrix::identity(n, n) * 0.5
}

fn rows(n: usize, data: &[f64]) -> Matrix {
    Matrix::from_row_slice(n, n, data)
}

/// Dimensions at most four; SPD, non-normal and complex-spectrum cases.
pub fn standard_battery() -> Vec<BatteryCase> {
    vec![
        BatteryCase {
            label: "scalar",
            a: rows(1, &[1.0]),
            b: rows(1, &[1.0]),
            theta_a: 0.6,
            theta_b: 0.6,
            lambdas: vec![C64::new(-1.0, 0.0), C64::new(-0.5, 1.5)],
        },
        BatteryCase {
            label: "diagonal",
            a: rows(2, &[1.0, 0.0, 0.0, 2.0]),
            b: rows(1, &[3.0]),
            theta_a: 0.6,
            theta_b: 0.6,
            lambdas: vec![C64::new(-2.0, 0.0), C64::new(-1.0, -2.0)],
        },
        BatteryCase {
            label: "spd-3x2",
            a: seeded_spd(3, 11),
            b: seeded_spd(2, 12),
            theta_a: 0.6,
            theta_b: 0.6,
            lambdas: vec![C64::new(-1.0, 2.0), C64::new(-3.0, -0.5)],
        },
        BatteryCase {
            label: "spd-4x4",
            a: seeded_spd(4, 13),
            b: seeded_spd(4, 14),
            theta_a: 0.6,
            theta_b: 0.6,
            lambdas: vec![C64::new(-0.5, 1.0), C64::new(1.0, 6.0)],
        },
        BatteryCase {
            label: "nonnormal-triangular",
            a: rows(2, &[1.0, 3.0, 0.0, 2.0]),
            b: rows(3, &[2.0, 1.0, 0.0, 0.0, 1.0, 4.0, 0.0, 0.0, 3.0]),
            theta_a: 0.6,
            theta_b: 0.6,
            lambdas: vec![C64::new(-1.0, 0.5), C64::new(-2.0, -2.0)],
        },
        BatteryCase {
            label: "complex-spectrum",
            a: rows(2, &[2.0, -0.5, 0.5, 2.0]),
            b: seeded_spd(2, 15),
            theta_a: 0.6,
            theta_b: 0.6,
            lambdas: vec![C64::new(-1.0, -1.0), C64::new(-0.25, 3.0)],
        },
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct BatteryRow {
    pub label: String,
    pub lambda: [f64; 2],
    pub relative_error: f64,
    pub residual: f64,
    pub tail_bound: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatteryReport {
    pub rows: Vec<BatteryRow>,
    pub max_relative_error: f64,
    /// Largest relative resolvent-identity defect between the two `λ` of
    /// each case.
    pub max_identity_defect: f64,
    /// `|X - 1/(λ - a - b)|` for the scalar case.
    pub scalar_error: f64,
}

/// Runs the contour resolvent on every battery case.
pub fn run_battery(cases: &[BatteryCase], opts: &ContourOptions) -> Result<BatteryReport> {
    let mut rows = Vec::new();
    let mut max_identity: f64 = 0.0;
    let mut scalar_error: f64 = 0.0;
    for case in cases {
        let a = SectorialMatrix::new(case.a.clone(), case.theta_a)?;
        let b = SectorialMatrix::new(case.b.clone(), case.theta_b)?;
        let mut results = Vec::new();
        for &lam in &case.lambdas {
            let res = contour_resolvent(&a, &b, lam, opts)?;
            let oracle = kron_sum_resolvent_oracle(&case.a, &case.b, lam)?;
            if case.a.nrows() == 1 && case.b.nrows() == 1 {
                let exact = (lam - case.a[(0, 0)] - case.b[(0, 0)]).inv();
                scalar_error = scalar_error.max((res.x[(0, 0)] - exact).norm());
            }
            rows.push(BatteryRow {
                label: case.label.to_string(),
                lambda: [lam.re, lam.im],
                relative_error: relative_error(&res.x, &oracle),
                residual: resolvent_residual(&case.a, &case.b, lam, &res.x),
                tail_bound: res.tail_bound,
                warning: res.warning.clone(),
            });
            results.push((lam, res.x));
        }
        for pair in results.windows(2) {
            let d = resolvent_identity_defect(&pair[0].1, &pair[1].1, pair[0].0, pair[1].0);
            max_identity = max_identity.max(d);
        }
    }
    let max_relative_error = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    Ok(BatteryReport {
        rows,
        max_relative_error,
        max_identity_defect: max_identity,
        scalar_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::matrix_from_row_major;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let g = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &g * g.transpose() + Matrix::identity(n, n) * 0.5
    }

    fn scalar(v: f64) -> SectorialMatrix {
        SectorialMatrix::new(Matrix::from_element(1, 1, v), 0.6).unwrap()
    }

    #[test]
    fn contour_nodes_integrate_known_functions() {
        // ∮ dz / z over the truncated contour → 2πi minus the ray tails
        let c = SectorContour::new(0.7, 0.5, 1e12, 200).unwrap();
        let sum: C64 = c.nodes().iter().map(|n| n.weight / (n.z * n.z + 1.0)).sum();
        // closed around ±i with the exterior at the left; residues sum to 0,
        // the truncated tail is O(1/R)
        assert!(sum.norm() < 1e-9, "{sum}");
        let sum: C64 = c.nodes().iter().map(|n| n.weight / (n.z - 2.0) / (n.z + 3.0)).sum();
        // only z = 2 is enclosed
        let want = C64::new(0.0, 2.0 * PI) / 5.0;
        assert!((sum - want).norm() < 1e-9, "{sum} vs {want}");
        assert!(SectorContour::new(1.6, 0.5, 2.0, 10).is_err());
        assert!(SectorContour::new(0.5, 2.0, 1.0, 10).is_err());
        assert!(SectorContour::new(0.5, 0.5, 1.0, 1).is_err());
    }

    #[test]
    fn certify_examples() {
        let c = certify_sectorial(&Matrix::identity(2, 2), 0.01, 32).unwrap();
        assert!((c.far_field_bound - 1.0).abs() < 1e-3);
        assert!(certify_sectorial(&matrix_from_row_major(2, 2, &[1., 0., 0., 2.]).unwrap(), 0.1, 32).is_ok());
        let rot = matrix_from_row_major(2, 2, &[1., -2., 2., 1.]).unwrap();
        assert!(matches!(
            certify_sectorial(&rot, 0.5, 16),
            Err(LabError::AssumptionFailure(_))
        ));
        let neg = Matrix::from_element(1, 1, -1.0);
        assert!(certify_sectorial(&neg, 1.0, 16).is_err());
    }

    #[test]
    fn certify_spd_matches_eigenvalue_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = spd(3, &mut rng);
        let theta = 0.3;
        let cert = certify_sectorial(&m, theta, 40).unwrap();
        let eig: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        let scale = spectral_norm(&m).max(1.0);
        let start = theta + ANGLE_MARGIN;
        let mut want: f64 = 0.0;
        for k in 0..8 {
            let phi = start + (PI - start) * k as f64 / 7.0;
            for j in 0..40 {
                let rho = scale * 10f64.powf(-4.0 + 10.0 * j as f64 / 39.0);
                let z = C64::from_polar(rho, phi);
                for mu in &eig {
                    want = want.max(z.norm() / (z - mu).norm());
                }
            }
        }
        assert!((cert.sampled_bound - want).abs() < 1e-9 * want);
        assert!(cert.sampled_bound <= 1.0 / start.sin() + 1e-12);
    }

    #[test]
    fn oracle_examples() {
        let a = Matrix::from_element(1, 1, 1.0);
        let x = kron_sum_resolvent_oracle(&a, &a, C64::new(-1.0, 0.0)).unwrap();
        assert!((x[(0, 0)] - C64::new(-1.0 / 3.0, 0.0)).norm() < 1e-15);
        let a = matrix_from_row_major(2, 2, &[1., 0., 0., 2.]).unwrap();
        let b = Matrix::from_element(1, 1, 3.0);
        let x = kron_sum_resolvent_oracle(&a, &b, C64::new(-2.0, 0.0)).unwrap();
        assert!((x[(0, 0)].re + 1.0 / 6.0).abs() < 1e-15 && (x[(1, 1)].re + 1.0 / 7.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (a, b) = (spd(3, &mut rng), spd(2, &mut rng));
        let lam = C64::new(-1.0, 2.0);
        let x = kron_sum_resolvent_oracle(&a, &b, lam).unwrap();
        assert!(resolvent_residual(&a, &b, lam, &x) < 1e-10);
    }

    #[test]
    fn scalar_contour_cases() {
        let one = scalar(1.0);
        let res = contour_resolvent(&one, &one, C64::new(-1.0, 0.0), &ContourOptions::default()).unwrap();
        assert!((res.x[(0, 0)] - C64::new(-1.0 / 3.0, 0.0)).norm() < 1e-10, "{}", res.x[(0, 0)]);
        assert!(res.warning.is_none());
        let a = SectorialMatrix::new(matrix_from_row_major(2, 2, &[1., 0., 0., 2.]).unwrap(), 0.6).unwrap();
        let b = scalar(3.0);
        let res = contour_resolvent(&a, &b, C64::new(-2.0, 0.0), &ContourOptions::default()).unwrap();
        assert!((res.x[(0, 0)].re + 1.0 / 6.0).abs() < 1e-9);
        assert!((res.x[(1, 1)].re + 1.0 / 7.0).abs() < 1e-9);
        assert!(res.x[(0, 1)].norm() < 1e-10);
    }

    #[test]
    fn refuses_lambda_in_sector() {
        let one = scalar(1.0);
        let r = contour_resolvent(&one, &one, C64::new(2.0, 0.1), &ContourOptions::default());
        assert!(matches!(r, Err(LabError::Refused(_))));
        let r = contour_resolvent(
            &one,
            &one,
            C64::new(-1.0, 0.0),
            &ContourOptions {
                r: Some(0.6),
                ..Default::default()
            },
        );
        assert!(matches!(r, Err(LabError::Refused(_))));
    }

    #[test]
    fn random_spd_case_and_symmetries() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (am, bm) = (spd(3, &mut rng), spd(2, &mut rng));
        let a = SectorialMatrix::new(am.clone(), 0.6).unwrap();
        let b = SectorialMatrix::new(bm.clone(), 0.6).unwrap();
        let lam = C64::new(-1.0, 2.0);
        let res = contour_resolvent(&a, &b, lam, &ContourOptions::default()).unwrap();
        let oracle = kron_sum_resolvent_oracle(&am, &bm, lam).unwrap();
        assert!(relative_error(&res.x, &oracle) < 1e-6);
        assert!(resolvent_residual(&am, &bm, lam, &res.x) < 1e-6 + res.tail_bound * 10.0);
        let conj = contour_resolvent(&a, &b, lam.conj(), &ContourOptions::default()).unwrap();
        assert!(spectral_norm_c(&(conj.x - res.x.map(|v| v.conj()))) < 1e-9);
        let lam2 = C64::new(-2.0, -0.5);
        let res2 = contour_resolvent(&a, &b, lam2, &ContourOptions::default()).unwrap();
        assert!(resolvent_identity_defect(&res.x, &res2.x, lam, lam2) < 1e-8);
    }

    #[test]
    fn short_truncation_is_tail_dominated() {
        // With R = 50·max‖·‖ the O(1/R) ray tails dominate the error.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (am, bm) = (spd(3, &mut rng), spd(2, &mut rng));
        let a = SectorialMatrix::new(am.clone(), 0.6).unwrap();
        let b = SectorialMatrix::new(bm.clone(), 0.6).unwrap();
        let lam = C64::new(-1.0, 2.0);
        let big_r = 50.0 * spectral_norm(&am).max(spectral_norm(&bm));
        let res = contour_resolvent(
            &a,
            &b,
            lam,
            &ContourOptions {
                big_r: Some(big_r),
                ..Default::default()
            },
        )
        .unwrap();
        let oracle = kron_sum_resolvent_oracle(&am, &bm, lam).unwrap();
        let err = spectral_norm_c(&(&res.x - &oracle));
        assert!(err > 1e-6 * spectral_norm_c(&oracle));
        assert!(err <= res.tail_bound);
        assert!(res.warning.is_some());
    }

    #[test]
    fn convergence_study_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (am, bm) = (spd(2, &mut rng), spd(2, &mut rng));
        let a = SectorialMatrix::new(am, 0.6).unwrap();
        let b = SectorialMatrix::new(bm, 0.6).unwrap();
        let study = convergence_study(&a, &b, C64::new(-1.0, 1.0), &[50, 100, 200, 400], &[1e2, 1e6, 1e10], 1e-6).unwrap();
        assert_eq!(study.rows.len(), 12);
        assert!(study.below_target, "{study:?}");
        assert!(study.monotone_in_nodes, "{study:?}");
        // larger R at the finest node count reduces the error
        let at400: Vec<f64> = study.rows.iter().filter(|r| r.nodes == 400).map(|r| r.error).collect();
        assert!(at400[0] > at400[2]);
    }

    #[test]
    fn standard_battery_meets_tolerances() {
        let rep = run_battery(&standard_battery(), &ContourOptions::default()).unwrap();
        for row in &rep.rows {
            eprintln!("{} {:?} err={:.2e} res={:.2e} tail={:.2e}", row.label, row.lambda, row.relative_error, row.residual, row.tail_bound);
        }
        assert!(rep.max_relative_error <= 1e-6);
        assert!(rep.max_identity_defect <= 1e-8);
        assert!(rep.scalar_error <= 1e-10);
    }
}
