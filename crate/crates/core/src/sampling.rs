//! Estimates and the integration back ends for Gaussian expectations.
//!
//! Every stochastic estimator draws standard normal vectors in fixed-size
//! chunks. Chunk `c` uses a ChaCha8 stream keyed by `(seed, c)`, and chunk
//! statistics are merged in chunk order, so results depend only on
//! `(seed, samples)` and never on the thread count. Growing the sample count
//! keeps the earlier samples unchanged.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{LabError, Result};
use crate::numkit::gauss_hermite;

pub const CHUNK: usize = 4096;
pub const MAX_QUADRATURE_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Exact,
    #[serde(rename = "mc")]
    MonteCarlo,
    #[serde(rename = "qmc")]
    QuasiMonteCarlo,
    Quadrature,
}

/// A value with its standard error and provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub seed: u64,
    pub scheme: Scheme,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            stderr: 0.0,
            n_samples: 0,
            seed: 0,
            scheme: Scheme::Exact,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.stderr == 0.0 && matches!(self.scheme, Scheme::Exact | Scheme::Quadrature)
    }

    /// `|value - target| ≤ k·stderr` (with a floor for exact schemes).
    pub fn within(&self, target: f64, k: f64, floor: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr + floor
    }
}

/// How a Gaussian expectation should be evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Evaluation {
    /// Moment algebra; polynomial integrands only.
    Exact,
    #[serde(rename = "mc")]
    MonteCarlo { samples: usize, seed: u64 },
    /// Randomly shifted rank-1 lattice (R_d sequence), `replicates` shifts.
    #[serde(rename = "qmc")]
    QuasiMonteCarlo {
        samples: usize,
        replicates: usize,
        seed: u64,
    },
    /// Tensor Gauss-Hermite with `nodes` points per dimension.
    Quadrature { nodes: usize },
}

impl Evaluation {
    pub fn mc(samples: usize, seed: u64) -> Self {
        Self::MonteCarlo { samples, seed }
    }

    pub fn scheme(&self) -> Scheme {
        match self {
            Self::Exact => Scheme::Exact,
            Self::MonteCarlo { .. } => Scheme::MonteCarlo,
            Self::QuasiMonteCarlo { .. } => Scheme::QuasiMonteCarlo,
            Self::Quadrature { .. } => Scheme::Quadrature,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::MonteCarlo { seed, .. } | Self::QuasiMonteCarlo { seed, .. } => *seed,
            _ => 0,
        }
    }

    /// Same scheme with twice the sample budget.
    pub fn doubled(&self) -> Self {
        match *self {
            Self::MonteCarlo { samples, seed } => Self::MonteCarlo {
                samples: samples * 2,
                seed,
            },
            Self::QuasiMonteCarlo {
                samples,
                replicates,
                seed,
            } => Self::QuasiMonteCarlo {
                samples: samples * 2,
                replicates,
                seed,
            },
            other => other,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::MonteCarlo { samples, .. } if samples < 2 => Err(LabError::InvalidInput(
                "Monte Carlo needs at least 2 samples".into(),
            )),
            Self::QuasiMonteCarlo {
                samples,
                replicates,
                ..
            } if samples < 1 || replicates < 2 => Err(LabError::InvalidInput(
                "QMC needs ≥ 1 point and ≥ 2 replicates".into(),
            )),
            Self::Quadrature { nodes } if nodes < 1 => Err(LabError::InvalidInput(
                "quadrature needs at least one node".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Means of several integrands and the covariance of those means.
#[derive(Debug, Clone)]
pub struct SampleStats {
    pub means: Vec<f64>,
    /// Row-major `k×k` covariance of the mean estimator.
    pub cov_of_mean: Vec<f64>,
    pub n: u64,
    pub seed: u64,
    pub scheme: Scheme,
}

impl SampleStats {
    pub fn stderr(&self, k: usize) -> f64 {
        let n = self.means.len();
        self.cov_of_mean[k * n + k].max(0.0).sqrt()
    }

    pub fn cov(&self, a: usize, b: usize) -> f64 {
        self.cov_of_mean[a * self.means.len() + b]
    }

    pub fn estimate(&self, k: usize) -> Estimate {
        Estimate {
            value: self.means[k],
            stderr: self.stderr(k),
            n_samples: self.n,
            seed: self.seed,
            scheme: self.scheme,
        }
    }
}

#[derive(Clone)]
struct Accumulator {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Accumulator {
    fn new(k: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; k],
            m2: vec![0.0; k * k],
        }
    }

    fn push(&mut self, x: &[f64], delta: &mut [f64]) {
        let k = self.mean.len();
        self.n += 1;
        let n = self.n as f64;
        for j in 0..k {
            delta[j] = x[j] - self.mean[j];
            self.mean[j] += delta[j] / n;
        }
        for a in 0..k {
            let after = x[a] - self.mean[a];
            for b in 0..k {
                self.m2[a * k + b] += delta[b] * after;
            }
        }
    }

    fn merge(mut self, other: &Accumulator) -> Self {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other.clone();
        }
        let k = self.mean.len();
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta: Vec<f64> = (0..k).map(|j| other.mean[j] - self.mean[j]).collect();
        for a in 0..k {
            for b in 0..k {
                self.m2[a * k + b] += other.m2[a * k + b] + delta[a] * delta[b] * na * nb / n;
            }
        }
        for j in 0..k {
            self.mean[j] += delta[j] * nb / n;
        }
        self.n += other.n;
        self
    }
}

fn chunk_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Integrates `outputs` functions of a standard normal vector in `ℝ^dim`.
/// The closure writes its values into the output slice.
pub fn integrate_normal<F>(eval: &Evaluation, dim: usize, outputs: usize, f: F) -> Result<SampleStats>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    eval.validate()?;
    match *eval {
        Evaluation::Exact => Err(LabError::Unsupported(
            "exact evaluation needs a polynomial integrand".into(),
        )),
        Evaluation::MonteCarlo { samples, seed } => Ok(monte_carlo(samples, seed, dim, outputs, &f)),
        Evaluation::QuasiMonteCarlo {
            samples,
            replicates,
            seed,
        } => Ok(quasi_monte_carlo(samples, replicates, seed, dim, outputs, &f)),
        Evaluation::Quadrature { nodes } => tensor_hermite(nodes, dim, outputs, &f),
    }
}

fn monte_carlo<F>(samples: usize, seed: u64, dim: usize, outputs: usize, f: &F) -> SampleStats
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<Accumulator> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(samples - c * CHUNK);
            let mut rng = chunk_rng(seed, c as u64);
            let mut acc = Accumulator::new(outputs);
            let mut w = vec![0.0; dim];
            let mut out = vec![0.0; outputs];
            let mut delta = vec![0.0; outputs];
            for _ in 0..len {
                for v in w.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                f(&w, &mut out);
                acc.push(&out, &mut delta);
            }
            acc
        })
        .collect();
    let total = parts
        .iter()
        .fold(Accumulator::new(outputs), |a, b| a.merge(b));
    let n = total.n as f64;
    let cov_of_mean = total.m2.iter().map(|v| v / (n - 1.0) / n).collect();
    SampleStats {
        means: total.mean,
        cov_of_mean,
        n: total.n,
        seed,
        scheme: Scheme::MonteCarlo,
    }
}

/// Additive recurrence `frac(shift + k·α)` with `α_j = φ_d^{-(j+1)}`.
fn rd_alpha(dim: usize) -> Vec<f64> {
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
    }
    (0..dim).map(|j| phi.powi(-(j as i32 + 1)).fract()).collect()
}

fn quasi_monte_carlo<F>(
    samples: usize,
    replicates: usize,
    seed: u64,
    dim: usize,
    outputs: usize,
    f: &F,
) -> SampleStats
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let alpha = rd_alpha(dim);
    let normal = Normal::standard();
    let replicate_means: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = chunk_rng(seed, r as u64);
            let shift: Vec<f64> = (0..dim)
                .map(|_| rand::Rng::random::<f64>(&mut rng))
                .collect();
            let mut sum = vec![0.0; outputs];
            let mut w = vec![0.0; dim];
            let mut out = vec![0.0; outputs];
            for k in 1..=samples {
                for j in 0..dim {
                    let u = (shift[j] + k as f64 * alpha[j]).fract().clamp(1e-16, 1.0 - 1e-16);
                    w[j] = normal.inverse_cdf(u);
                }
                f(&w, &mut out);
                for (s, o) in sum.iter_mut().zip(&out) {
                    *s += o;
                }
            }
            sum.iter().map(|s| s / samples as f64).collect()
        })
        .collect();
    let mut acc = Accumulator::new(outputs);
    let mut delta = vec![0.0; outputs];
    for m in &replicate_means {
        acc.push(m, &mut delta);
    }
    let r = replicates as f64;
    SampleStats {
        means: acc.mean,
        cov_of_mean: acc.m2.iter().map(|v| v / (r - 1.0) / r).collect(),
        n: (samples * replicates) as u64,
        seed,
        scheme: Scheme::QuasiMonteCarlo,
    }
}

/// Tensor Gauss-Hermite grid for a standard normal in `ℝ^dim`: nodes and
/// weights summing to one.
pub fn hermite_grid(nodes: usize, dim: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if dim > MAX_QUADRATURE_DIM {
        return Err(LabError::Unsupported(format!(
            "tensor Gauss-Hermite is offered for dimension ≤ {MAX_QUADRATURE_DIM}, got {dim}"
        )));
    }
    if nodes == 0 {
        return Err(LabError::InvalidInput("quadrature needs at least one node".into()));
    }
    let rule = gauss_hermite(nodes);
    let total = nodes.pow(dim as u32);
    let mut points = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    for flat in 0..total {
        let mut idx = flat;
        let mut weight = 1.0;
        let mut w = vec![0.0; dim];
        for wj in w.iter_mut() {
            let k = idx % nodes;
            idx /= nodes;
            *wj = rule.nodes[k];
            weight *= rule.weights[k];
        }
        points.push(w);
        weights.push(weight);
    }
    Ok((points, weights))
}

fn tensor_hermite<F>(nodes: usize, dim: usize, outputs: usize, f: &F) -> Result<SampleStats>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let (points, weights) = hermite_grid(nodes, dim)?;
    let mut means = vec![0.0; outputs];
    let mut out = vec![0.0; outputs];
    for (w, weight) in points.iter().zip(&weights) {
        f(w, &mut out);
        for (m, o) in means.iter_mut().zip(&out) {
            *m += weight * o;
        }
    }
    Ok(SampleStats {
        means,
        cov_of_mean: vec![0.0; outputs * outputs],
        n: points.len() as u64,
        seed: 0,
        scheme: Scheme::Quadrature,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mc_second_moment_within_bands() {
        let eval = Evaluation::mc(50_000, 42);
        let s = integrate_normal(&eval, 2, 2, |w, out| {
            out[0] = w[0] * w[0];
            out[1] = w[0] * w[1];
        })
        .unwrap();
        assert!(s.estimate(0).within(1.0, 4.0, 0.0));
        assert!(s.estimate(1).within(0.0, 4.0, 0.0));
        assert_eq!(s.n, 50_000);
    }

    #[test]
    fn mc_is_thread_count_independent() {
        let eval = Evaluation::mc(20_000, 9);
        let f = |w: &[f64], out: &mut [f64]| out[0] = (w[0] + w[1]).cos();
        let a = integrate_normal(&eval, 2, 1, f).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| integrate_normal(&eval, 2, 1, f).unwrap());
        assert_eq!(a.means[0].to_bits(), b.means[0].to_bits());
        assert_eq!(a.cov_of_mean[0].to_bits(), b.cov_of_mean[0].to_bits());
    }

    #[test]
    fn qmc_and_quadrature_agree_on_smooth_integrand() {
        // E cos(w) = e^{-1/2}
        let target = (-0.5f64).exp();
        let q = integrate_normal(&Evaluation::Quadrature { nodes: 30 }, 1, 1, |w, o| o[0] = w[0].cos())
            .unwrap();
        assert!((q.means[0] - target).abs() < 1e-13);
        let qmc = Evaluation::QuasiMonteCarlo {
            samples: 4096,
            replicates: 16,
            seed: 1,
        };
        let s = integrate_normal(&qmc, 1, 1, |w, o| o[0] = w[0].cos()).unwrap();
        assert!(s.estimate(0).within(target, 4.0, 1e-12));
        assert!(s.stderr(0) < 1e-3);
    }

    #[test]
    fn quadrature_refuses_high_dimension() {
        let r = integrate_normal(&Evaluation::Quadrature { nodes: 3 }, 5, 1, |_, o| o[0] = 1.0);
        assert!(matches!(r, Err(LabError::Unsupported(_))));
    }

    #[test]
    fn exact_is_not_a_sampling_scheme() {
        assert!(integrate_normal(&Evaluation::Exact, 1, 1, |_, o| o[0] = 1.0).is_err());
    }

    #[test]
    fn evaluation_json_shape() {
        let e: Evaluation = serde_json::from_str(r#"{"scheme":"mc","samples":10,"seed":3}"#).unwrap();
        assert_eq!(e, Evaluation::mc(10, 3));
        let e: Evaluation = serde_json::from_str(r#"{"scheme":"exact"}"#).unwrap();
        assert_eq!(e, Evaluation::Exact);
    }
}
