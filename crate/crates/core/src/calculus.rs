//! Cylindrical test functions, the directional gradient `D_H = iᵀ∇`, its
//! Gaussian divergence, the generator `L` and the form identities.

use std::fmt;
use std::sync::Arc;

use crate::error::{LabError, Result};
use crate::model::DerivedModel;
use crate::numkit::Matrix;
use crate::poly::{GaussianMoments, Polynomial};

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&[f64]) -> Matrix + Send + Sync>;
type LineFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The profile of a ridge `x ↦ φ(⟨x, u⟩)`.
#[derive(Clone)]
pub struct RidgeProfile {
    pub u: Arc<Vec<f64>>,
    pub phi: LineFn,
    pub dphi: LineFn,
}

/// A smooth non-polynomial function with analytic first and second
/// derivatives supplied by the caller.
#[derive(Clone)]
pub struct SmoothFunction {
    pub label: String,
    pub dim: usize,
    pub bounded: bool,
    value: ScalarFn,
    gradient: VectorFn,
    hessian: MatrixFn,
    ridge: Option<RidgeProfile>,
}

impl fmt::Debug for SmoothFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothFunction")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("bounded", &self.bounded)
            .finish()
    }
}

impl SmoothFunction {
    pub fn new(
        label: impl Into<String>,
        dim: usize,
        bounded: bool,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        hessian: impl Fn(&[f64]) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            dim,
            bounded,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian: Arc::new(hessian),
            ridge: None,
        }
    }

    /// Set for functions built by [`SmoothFunction::ridge`].
    pub fn ridge_profile(&self) -> Option<&RidgeProfile> {
        self.ridge.as_ref()
    }

    /// `x ↦ φ(⟨x, u⟩)`, the one-functional case of a cylindrical function.
    pub fn ridge(
        label: impl Into<String>,
        u: Vec<f64>,
        bounded: bool,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dphi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let dim = u.len();
        let u = Arc::new(u);
        let phi: LineFn = Arc::new(phi);
        let dphi: LineFn = Arc::new(dphi);
        let (u1, u2, u3) = (u.clone(), u.clone(), u.clone());
        let (p1, dp1) = (phi.clone(), dphi.clone());
        let mut f = Self::new(
            label,
            dim,
            bounded,
            move |x| p1(crate::numkit::dot(x, &u1)),
            move |x| {
                let s = dp1(crate::numkit::dot(x, &u2));
                u2.iter().map(|v| s * v).collect()
            },
            move |x| {
                let s = d2phi(crate::numkit::dot(x, &u3));
                let n = u3.len();
                Matrix::from_fn(n, n, |a, b| s * u3[a] * u3[b])
            },
        );
        f.ridge = Some(RidgeProfile { u, phi, dphi });
        f
    }

    /// `cos⟨x, u⟩`.
    pub fn cosine(u: Vec<f64>) -> Self {
        Self::ridge("cos", u, true, f64::cos, |s| -s.sin(), |s| -s.cos())
    }

    /// `tanh(k⟨x, u⟩)`, a smooth bounded stand-in for a sign function.
    pub fn tanh_ridge(u: Vec<f64>, k: f64) -> Self {
        Self::ridge(
            format!("tanh(k={k})"),
            u,
            true,
            move |s| (k * s).tanh(),
            move |s| k / (k * s).cosh().powi(2),
            move |s| {
                let th = (k * s).tanh();
                -2.0 * k * k * th * (1.0 - th * th)
            },
        )
    }
}

/// A real test function on `ℝ^d`.
#[derive(Debug, Clone)]
pub enum TestFunction {
    Polynomial(Polynomial),
    Smooth(SmoothFunction),
}

impl From<Polynomial> for TestFunction {
    fn from(p: Polynomial) -> Self {
        Self::Polynomial(p)
    }
}

impl From<SmoothFunction> for TestFunction {
    fn from(s: SmoothFunction) -> Self {
        Self::Smooth(s)
    }
}

impl TestFunction {
    pub fn dim(&self) -> usize {
        match self {
            Self::Polynomial(p) => p.dim(),
            Self::Smooth(s) => s.dim,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Polynomial(p) => format!("poly(deg={})", p.degree()),
            Self::Smooth(s) => s.label.clone(),
        }
    }

    pub fn as_polynomial(&self) -> Option<&Polynomial> {
        match self {
            Self::Polynomial(p) => Some(p),
            Self::Smooth(_) => None,
        }
    }

    pub fn require_polynomial(&self, what: &str) -> Result<&Polynomial> {
        self.as_polynomial()
            .ok_or_else(|| LabError::Unsupported(format!("{what} is kept exact-only: needs a polynomial")))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Polynomial(p) => p.eval(x),
            Self::Smooth(s) => (s.value)(x),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Polynomial(p) => (0..p.dim()).map(|j| p.partial(j).eval(x)).collect(),
            Self::Smooth(s) => (s.gradient)(x),
        }
    }

    pub fn hessian(&self, x: &[f64]) -> Matrix {
        match self {
            Self::Polynomial(p) => {
                let h = p.hessian();
                Matrix::from_fn(p.dim(), p.dim(), |a, b| h[a][b].eval(x))
            }
            Self::Smooth(s) => (s.hessian)(x),
        }
    }
}

/// An `H`-valued test function, one scalar component per noise direction.
#[derive(Debug, Clone)]
pub struct VectorTestFunction {
    pub components: Vec<TestFunction>,
}

impl VectorTestFunction {
    pub fn new(components: Vec<TestFunction>) -> Result<Self> {
        let d = components
            .first()
            .map(|c| c.dim())
            .ok_or_else(|| LabError::InvalidInput("vector test function has no components".into()))?;
        if components.iter().any(|c| c.dim() != d) {
            return Err(LabError::Dimension(
                "vector test function components differ in dimension".into(),
            ));
        }
        Ok(Self { components })
    }

    pub fn from_polynomials(ps: Vec<Polynomial>) -> Result<Self> {
        Self::new(ps.into_iter().map(TestFunction::from).collect())
    }

    /// Constant field `x ↦ h`.
    pub fn constant(dim: usize, h: &[f64]) -> Self {
        Self {
            components: h
                .iter()
                .map(|&c| Polynomial::constant(dim, c).into())
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.value(x)).collect()
    }

    pub fn as_polynomials(&self) -> Option<Vec<&Polynomial>> {
        self.components.iter().map(|c| c.as_polynomial()).collect()
    }
}

/// `D_H f(x) = iᵀ ∇f(x)`.
pub fn grad_h(f: &TestFunction, x: &[f64], i: &Matrix) -> Vec<f64> {
    let g = f.gradient(x);
    (0..i.ncols())
        .map(|k| (0..i.nrows()).map(|j| i[(j, k)] * g[j]).sum())
        .collect()
}

/// Symbolic `D_H p` as `m` polynomials.
pub fn grad_h_poly(p: &Polynomial, i: &Matrix) -> Vec<Polynomial> {
    let grad = p.gradient();
    (0..i.ncols())
        .map(|k| {
            grad.iter()
                .enumerate()
                .fold(Polynomial::zero(p.dim()), |acc, (j, g)| {
                    if i[(j, k)] == 0.0 {
                        acc
                    } else {
                        &acc + &g.scale(i[(j, k)])
                    }
                })
        })
        .collect()
}

/// `Lf = ⟨Ax, ∇f⟩ + ½ Tr(Q ∇²f)` on polynomials.
pub fn generator_l(dm: &DerivedModel, f: &TestFunction) -> Result<Polynomial> {
    let p = f.require_polynomial("the generator")?;
    Ok(generator_poly(dm, p))
}

pub fn generator_poly(dm: &DerivedModel, p: &Polynomial) -> Polynomial {
    let d = p.dim();
    let a = dm.a();
    let grad = p.gradient();
    let mut out = Polynomial::zero(d);
    for (j, gj) in grad.iter().enumerate() {
        if gj.is_zero() {
            continue;
        }
        let row: Vec<f64> = (0..d).map(|k| a[(j, k)]).collect();
        out = &out + &(&Polynomial::linear(&row) * gj);
        for k in 0..d {
            let q = dm.q[(j, k)];
            if q != 0.0 {
                out = &out + &gj.partial(k).scale(0.5 * q);
            }
        }
    }
    out
}

pub(crate) fn stationary_moments(dm: &DerivedModel) -> GaussianMoments {
    GaussianMoments::new(dm.qinf.clone())
}

/// `∫ ⟨F, G⟩ dμ_inf` for polynomial vector fields.
pub(crate) fn pairing(moments: &mut GaussianMoments, f: &[Polynomial], g: &[Polynomial]) -> f64 {
    f.iter().zip(g).map(|(a, b)| moments.expectation(&(a * b))).sum()
}

/// `|⟨Lf,g⟩ + ⟨Lg,f⟩ + ∫⟨D_H f, D_H g⟩ dμ_inf|`, all terms by exact moments.
pub fn form_identity_defect(dm: &DerivedModel, f: &TestFunction, g: &TestFunction) -> Result<f64> {
    dm.require_nondegenerate_qinf()?;
    let (f, g) = (
        f.require_polynomial("form identity")?,
        g.require_polynomial("form identity")?,
    );
    let mut mom = stationary_moments(dm);
    let lf = generator_poly(dm, f);
    let lg = generator_poly(dm, g);
    let lhs = mom.expectation(&(&lf * g)) + mom.expectation(&(&lg * f));
    let rhs = -pairing(&mut mom, &grad_h_poly(f, dm.i()), &grad_h_poly(g, dm.i()));
    Ok((lhs - rhs).abs())
}

/// Symbolic divergence `D_H^* F = ⟨Q_inf^{-1} x, iF⟩ - div(iF)`, the adjoint
/// of `D_H` in `L²(μ_inf)` (Gaussian integration by parts).
pub fn divergence_h_poly(dm: &DerivedModel, field: &[Polynomial]) -> Result<Polynomial> {
    let qinv = dm.qinf_inverse()?;
    let (d, m) = (dm.d(), dm.m());
    if field.len() != m {
        return Err(LabError::Dimension(format!(
            "field has {} components, noise dimension is {m}",
            field.len()
        )));
    }
    let i = dm.i();
    let i_field: Vec<Polynomial> = (0..d)
        .map(|j| {
            field.iter().enumerate().fold(Polynomial::zero(d), |acc, (k, fk)| {
                if i[(j, k)] == 0.0 {
                    acc
                } else {
                    &acc + &fk.scale(i[(j, k)])
                }
            })
        })
        .collect();
    let mut out = Polynomial::zero(d);
    for (j, comp) in i_field.iter().enumerate() {
        let row: Vec<f64> = (0..d).map(|k| qinv[(j, k)]).collect();
        out = &out + &(&Polynomial::linear(&row) * comp);
        out = &out - &comp.partial(j);
    }
    Ok(out)
}

/// Pointwise `D_H^* F(x)`; smooth components use their gradient callbacks.
pub fn divergence_h(dm: &DerivedModel, field: &VectorTestFunction, x: &[f64]) -> Result<f64> {
    let qinv = dm.qinf_inverse()?;
    if field.len() != dm.m() {
        return Err(LabError::Dimension(format!(
            "field has {} components, noise dimension is {}",
            field.len(),
            dm.m()
        )));
    }
    let i = dm.i();
    let d = dm.d();
    let values = field.eval(x);
    let i_f: Vec<f64> = (0..d)
        .map(|j| (0..dm.m()).map(|k| i[(j, k)] * values[k]).sum())
        .collect();
    let qx: Vec<f64> = (0..d)
        .map(|j| (0..d).map(|k| qinv[(j, k)] * x[k]).sum())
        .collect();
    let mut div = 0.0;
    for (k, comp) in field.components.iter().enumerate() {
        let g = comp.gradient(x);
        for (j, gj) in g.iter().enumerate() {
            div += i[(j, k)] * gj;
        }
    }
    Ok(crate::numkit::dot(&qx, &i_f) - div)
}

/// `|∫⟨D_H f, F⟩ dμ_inf - ∫ f · D_H^*F dμ_inf|` by exact moments.
pub fn adjointness_defect(dm: &DerivedModel, f: &Polynomial, field: &[Polynomial]) -> Result<f64> {
    let div = divergence_h_poly(dm, field)?;
    let mut mom = stationary_moments(dm);
    let lhs = pairing(&mut mom, &grad_h_poly(f, dm.i()), field);
    let rhs = mom.expectation(&(f * &div));
    Ok((lhs - rhs).abs())
}

/// Defect of the weak form `⟨Lf, g⟩ = ∫⟨B D_H f, D_H g⟩ dμ_inf`.
///
/// With `B = i^{-1} Q_inf Aᵀ i^{-ᵀ}` this orientation reduces at `f = g` to
/// the symmetric form identity, since `⟨(B + Bᵀ)v, v⟩ = -|v|²`.
pub fn b_form_defect(dm: &DerivedModel, f: &TestFunction, g: &TestFunction) -> Result<f64> {
    dm.require_nondegenerate_qinf()?;
    let b = dm.form_operator()?;
    let (f, g) = (
        f.require_polynomial("B-form")?,
        g.require_polynomial("B-form")?,
    );
    let mut mom = stationary_moments(dm);
    let lhs = mom.expectation(&(&generator_poly(dm, f) * g));
    let df = grad_h_poly(f, dm.i());
    let dg = grad_h_poly(g, dm.i());
    let bdf: Vec<Polynomial> = (0..dm.m())
        .map(|a| {
            df.iter().enumerate().fold(Polynomial::zero(dm.d()), |acc, (c, p)| {
                &acc + &p.scale(b[(a, c)])
            })
        })
        .collect();
    let rhs = pairing(&mut mom, &bdf, &dg);
    Ok((lhs - rhs).abs())
}
