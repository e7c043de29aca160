//! Scenario configuration schema and the preset catalog.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::inequality::{dirichlet_laplacian, TimeRule};
use crate::model::{ModelSpec, ModelSpecJson};
use crate::numkit::{to_row_major, Matrix};
use crate::sampling::Evaluation;

/// Top-level config: `{model | preset, experiments, seed, output_dir}`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub model: Option<ModelSpecJson>,
    #[serde(default)]
    pub preset: Option<PresetRef>,
    /// Absent: the preset's default battery. Empty: derivation only.
    #[serde(default)]
    pub experiments: Option<Vec<ExperimentSpec>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum PresetRef {
    Name(String),
    WithParams {
        name: String,
        #[serde(default)]
        d: Option<usize>,
        #[serde(default)]
        dim: Option<usize>,
    },
}

impl PresetRef {
    pub fn name(&self) -> &str {
        match self {
            Self::Name(n) | Self::WithParams { name: n, .. } => n,
        }
    }

    fn size(&self) -> Option<usize> {
        match self {
            Self::Name(_) => None,
            Self::WithParams { d, dim, .. } => d.or(*dim),
        }
    }
}

/// How an experiment evaluates Gaussian expectations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    #[default]
    Exact,
    Mc,
    Qmc,
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    #[serde(default)]
    pub scheme: SchemeName,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
}

fn default_samples() -> usize {
    1 << 16
}
fn default_replicates() -> usize {
    16
}
fn default_nodes() -> usize {
    12
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            scheme: SchemeName::Exact,
            samples: default_samples(),
            replicates: default_replicates(),
            nodes: default_nodes(),
        }
    }
}

impl Sampling {
    pub fn mc(samples: usize) -> Self {
        Self {
            scheme: SchemeName::Mc,
            samples,
            ..Self::default()
        }
    }

    pub fn evaluation(&self, seed: u64) -> Evaluation {
        match self.scheme {
            SchemeName::Exact => Evaluation::Exact,
            SchemeName::Mc => Evaluation::MonteCarlo {
                samples: self.samples,
                seed,
            },
            SchemeName::Qmc => Evaluation::QuasiMonteCarlo {
                samples: self.samples,
                replicates: self.replicates,
                seed,
            },
            SchemeName::Quadrature => Evaluation::Quadrature { nodes: self.nodes },
        }
    }

    /// Exact for even integer `p`, Monte Carlo otherwise.
    pub fn for_exponent(&self, p: f64) -> Self {
        let even = p.fract() == 0.0 && (p as u64).is_multiple_of(2);
        if self.scheme == SchemeName::Exact && !even {
            Self {
                scheme: SchemeName::Mc,
                ..*self
            }
        } else {
            *self
        }
    }
}

/// A declared family of test functions: seeded random polynomials of
/// degree `1..=degree_cap` plus optional bounded smooth ridges.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Family {
    #[serde(default = "default_degree_cap")]
    pub degree_cap: u32,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub smooth: bool,
}

fn default_degree_cap() -> u32 {
    4
}
fn default_count() -> usize {
    8
}

impl Default for Family {
    fn default() -> Self {
        Self {
            degree_cap: default_degree_cap(),
            count: default_count(),
            smooth: false,
        }
    }
}

fn p_two() -> Vec<f64> {
    vec![2.0]
}
fn p_three() -> Vec<f64> {
    vec![4.0 / 3.0, 2.0, 4.0]
}
fn default_times() -> Vec<f64> {
    vec![0.1, 0.5, 1.0, 2.0]
}
fn default_decay_times() -> Vec<f64> {
    (0..=8).map(|k| 0.25 * k as f64).collect()
}
fn default_gradient_times() -> Vec<f64> {
    vec![0.01, 0.02, 0.05, 0.1, 0.25, 0.5, 1.0]
}
fn default_steps() -> Vec<usize> {
    vec![32, 64, 128, 256]
}
fn default_nodes_schedule() -> Vec<usize> {
    vec![50, 100, 200, 400]
}
fn default_radius_schedule() -> Vec<f64> {
    vec![1e2, 1e6, 1e12]
}
fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn four() -> u32 {
    4
}

/// One experiment; `kind` selects the entry of the fixed registry.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentSpec {
    Conditions {
        #[serde(default)]
        tolerance: Option<f64>,
    },
    Poincare {
        #[serde(default = "p_two")]
        p: Vec<f64>,
        #[serde(default)]
        family: Family,
        #[serde(default)]
        sampling: Sampling,
        #[serde(default)]
        tolerance: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Sharpness {
        #[serde(default = "four")]
        degree_cap: u32,
        #[serde(default = "default_random_count")]
        random_count: usize,
        #[serde(default)]
        tolerance: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    FormIdentity {
        #[serde(default)]
        family: Family,
        #[serde(default)]
        tolerance: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Intertwining {
        #[serde(default = "default_times")]
        times: Vec<f64>,
        #[serde(default)]
        family: Family,
        #[serde(default)]
        tolerance: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Invariance {
        #[serde(default = "default_times")]
        times: Vec<f64>,
        #[serde(default)]
        family: Family,
        #[serde(default)]
        tolerance: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Chaos {
        #[serde(default = "four")]
        max_degree: u32,
        #[serde(default = "one")]
        t: f64,
        #[serde(default)]
        tolerance: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Decay {
        #[serde(default = "p_two")]
        p: Vec<f64>,
        #[serde(default = "default_decay_times")]
        times: Vec<f64>,
        #[serde(default = "four")]
        max_degree: u32,
        #[serde(default)]
        sampling: Sampling,
        #[serde(default)]
        tolerance: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Duality {
        #[serde(default = "two")]
        t: f64,
        #[serde(default = "default_steps")]
        steps: Vec<usize>,
        #[serde(default)]
        family: Family,
        #[serde(default)]
        tolerance: Option<f64>,
        #[serde(default = "default_rule")]
        rule: TimeRule,
        #[serde(default)]
        min_order: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    GradientEstimate {
        #[serde(default = "two")]
        q: f64,
        #[serde(default = "default_gradient_times")]
        times: Vec<f64>,
        #[serde(default)]
        family: Family,
        #[serde(default)]
        sampling: Sampling,
        #[serde(default)]
        growth_limit: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Dhstar {
        #[serde(default = "p_two")]
        p: Vec<f64>,
        #[serde(default)]
        family: Family,
        #[serde(default)]
        sampling: Sampling,
        #[serde(default)]
        tolerance: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    LpStability {
        #[serde(default = "p_three")]
        p: Vec<f64>,
        #[serde(default)]
        family: Family,
        #[serde(default = "default_stability_samples")]
        samples: usize,
        /// Allowed change under doubling, in standard errors at `N`.
        #[serde(default)]
        tolerance: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Counterexample {
        #[serde(default = "default_counter_dim")]
        dim: usize,
        #[serde(default = "one")]
        omega: f64,
        #[serde(default = "default_t0")]
        t0: f64,
        #[serde(default = "default_r_max")]
        r_max: f64,
        #[serde(default = "default_sweep_points")]
        points: usize,
        /// Required margin: growth must exceed `1 + tolerance`.
        #[serde(default)]
        tolerance: Option<f64>,
    },
    ResolventBattery {
        #[serde(default)]
        nodes: Option<usize>,
        #[serde(default, rename = "R")]
        big_r: Option<f64>,
        #[serde(default)]
        tolerance: Option<f64>,
        #[serde(default)]
        identity_tolerance: Option<f64>,
        #[serde(default)]
        scalar_tolerance: Option<f64>,
    },
    ConvergenceStudy {
        #[serde(default = "default_nodes_schedule")]
        nodes: Vec<usize>,
        #[serde(default = "default_radius_schedule", rename = "R")]
        radii: Vec<f64>,
        #[serde(default)]
        tolerance: Option<f64>,
    },
}

fn default_rule() -> TimeRule {
    TimeRule::GaussLegendre2
}
fn default_random_count() -> usize {
    48
}
fn default_stability_samples() -> usize {
    1 << 15
}
fn default_counter_dim() -> usize {
    20
}
fn default_t0() -> f64 {
    0.1
}
fn default_r_max() -> f64 {
    1e6
}
fn default_sweep_points() -> usize {
    121
}

impl ExperimentSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Conditions { .. } => "conditions",
            Self::Poincare { .. } => "poincare",
            Self::Sharpness { .. } => "sharpness",
            Self::FormIdentity { .. } => "form_identity",
            Self::Intertwining { .. } => "intertwining",
            Self::Invariance { .. } => "invariance",
            Self::Chaos { .. } => "chaos",
            Self::Decay { .. } => "decay",
            Self::Duality { .. } => "duality",
            Self::GradientEstimate { .. } => "gradient_estimate",
            Self::Dhstar { .. } => "dhstar",
            Self::LpStability { .. } => "lp_stability",
            Self::Counterexample { .. } => "counterexample",
            Self::ResolventBattery { .. } => "resolvent_battery",
            Self::ConvergenceStudy { .. } => "convergence_study",
        }
    }

    /// Whether the experiment needs a derived OU model.
    pub fn needs_model(&self) -> bool {
        !matches!(
            self,
            Self::Counterexample { .. } | Self::ResolventBattery { .. } | Self::ConvergenceStudy { .. }
        )
    }

    fn parse(raw: &'static str) -> Self {
        serde_json::from_str(raw).expect("built-in experiment spec parses")
    }
}

/// A catalog entry.
#[derive(Debug, Clone, Serialize)]
pub struct PresetInfo {
    pub name: &'static str,
    pub description: &'static str,
    /// Name of the size parameter, if any.
    pub parameter: Option<&'static str>,
}

pub fn list_presets() -> Vec<PresetInfo> {
    vec![
        PresetInfo {
            name: "classical-ou",
            description: "A = -I, i = I in dimension d (default 2); sharp constant 1/√2",
            parameter: Some("d"),
        },
        PresetInfo {
            name: "diag-gap",
            description: "A = diag(-1, -3), i = I; slowest mode sets ω = 1",
            parameter: None,
        },
        PresetInfo {
            name: "jordan-2d",
            description: "A = [[-1, 1], [0, -1]], i = I; non-normal drift",
            parameter: None,
        },
        PresetInfo {
            name: "dirichlet-laplacian-sym",
            description: "A = discrete Dirichlet Laplacian on (-1, 1), i = I; self-adjoint case",
            parameter: Some("dim"),
        },
        PresetInfo {
            name: "weighted-counterexample",
            description: "heat semigroup e^{t(Δ_h - ω)} that is stable but not contractive in a weighted norm",
            parameter: None,
        },
        PresetInfo {
            name: "sector-demo",
            description: "contour resolvent of Kronecker sums against the dense oracle",
            parameter: None,
        },
    ]
}

/// A resolved preset: optional model plus default battery.
#[derive(Debug, Clone)]
pub struct Preset {
    pub label: String,
    pub model: Option<ModelSpec>,
    pub battery: Vec<ExperimentSpec>,
}

fn ou_battery(symmetric: bool) -> Vec<ExperimentSpec> {
    let mut specs = vec![
        r#"{"kind":"conditions","tolerance":1e-10}"#,
        r#"{"kind":"sharpness","tolerance":1e-8}"#,
        r#"{"kind":"poincare","p":[2,4],"family":{"degree_cap":4,"count":12},"tolerance":1e-8}"#,
        r#"{"kind":"form_identity","family":{"degree_cap":4,"count":12},"tolerance":1e-9}"#,
        r#"{"kind":"intertwining","family":{"degree_cap":4,"count":4},"tolerance":1e-8}"#,
        r#"{"kind":"invariance","family":{"degree_cap":4,"count":4},"tolerance":1e-9}"#,
    ];
    if symmetric {
        specs.push(r#"{"kind":"chaos","tolerance":1e-7}"#);
        specs.push(r#"{"kind":"decay","p":[2,4],"tolerance":0.01}"#);
    }
    specs.extend([
        r#"{"kind":"duality","family":{"degree_cap":3,"count":2},"tolerance":1e-6,"min_order":1.9}"#,
        r#"{"kind":"gradient_estimate","family":{"degree_cap":3,"count":3,"smooth":true},"sampling":{"samples":8192},"growth_limit":3}"#,
        r#"{"kind":"dhstar","p":[2,4],"family":{"degree_cap":4,"count":8},"tolerance":1e-9}"#,
        r#"{"kind":"lp_stability","family":{"degree_cap":3,"count":4,"smooth":true},"tolerance":2}"#,
    ]);
    specs.into_iter().map(ExperimentSpec::parse).collect()
}

fn model(label: &str, a: Matrix, i: Matrix) -> Result<ModelSpec> {
    ModelSpec::new(label, a, i)
}

/// Resolves a preset by name and size parameter.
pub fn preset(r: &PresetRef) -> Result<Preset> {
    let name = r.name();
    let size = r.size();
    let p = match name {
        "classical-ou" => {
            let d = size.unwrap_or(2);
            if d == 0 {
                return Err(LabError::InvalidInput("classical-ou needs d ≥ 1".into()));
            }
            Preset {
                label: format!("classical-ou(d={d})"),
                model: Some(model("classical-ou", -Matrix::identity(d, d), Matrix::identity(d, d))?),
                battery: ou_battery(true),
            }
        }
        "diag-gap" => Preset {
            label: "diag-gap".into(),
            model: Some(model(
                "diag-gap",
                Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -3.0]),
                Matrix::identity(2, 2),
            )?),
            battery: ou_battery(true),
        },
        "jordan-2d" => Preset {
            label: "jordan-2d".into(),
            model: Some(model(
                "jordan-2d",
                Matrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]),
                Matrix::identity(2, 2),
            )?),
            battery: ou_battery(false),
        },
        "dirichlet-laplacian-sym" => {
            let dim = size.unwrap_or(6);
            if dim < 2 {
                return Err(LabError::InvalidInput("dirichlet-laplacian-sym needs dim ≥ 2".into()));
            }
            let light = [
                r#"{"kind":"conditions","tolerance":1e-10}"#,
                r#"{"kind":"sharpness","degree_cap":2,"random_count":8,"tolerance":1e-8}"#,
                r#"{"kind":"poincare","p":[2],"family":{"degree_cap":2,"count":4},"tolerance":1e-8}"#,
                r#"{"kind":"form_identity","family":{"degree_cap":2,"count":4},"tolerance":1e-9}"#,
                r#"{"kind":"intertwining","family":{"degree_cap":2,"count":2},"tolerance":1e-8}"#,
                r#"{"kind":"chaos","max_degree":2,"t":0.05,"tolerance":1e-7}"#,
            ];
            Preset {
                label: format!("dirichlet-laplacian-sym(dim={dim})"),
                model: Some(model(
                    "dirichlet-laplacian-sym",
                    dirichlet_laplacian(dim),
                    Matrix::identity(dim, dim),
                )?),
                battery: light.iter().map(|s| ExperimentSpec::parse(s)).collect(),
            }
        }
        "weighted-counterexample" => Preset {
            label: "weighted-counterexample".into(),
            model: None,
            battery: vec![ExperimentSpec::parse(r#"{"kind":"counterexample","tolerance":0}"#)],
        },
        "sector-demo" => Preset {
            label: "sector-demo".into(),
            model: None,
            battery: vec![
                ExperimentSpec::parse(
                    r#"{"kind":"resolvent_battery","tolerance":1e-6,"identity_tolerance":1e-8,"scalar_tolerance":1e-10}"#,
                ),
                ExperimentSpec::parse(r#"{"kind":"convergence_study","tolerance":1e-6}"#),
            ],
        },
        other => {
            return Err(LabError::InvalidInput(format!(
                "unknown preset '{other}'; see the preset catalog"
            )))
        }
    };
    Ok(p)
}

impl Config {
    pub fn from_json(raw: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(raw)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.model, &self.preset) {
            (Some(_), Some(_)) => Err(LabError::InvalidInput(
                "config has both 'model' and 'preset'; give exactly one".into(),
            )),
            (None, None) => Err(LabError::InvalidInput(
                "config needs one of 'model' or 'preset'".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Model, label and experiment list after preset expansion.
    pub fn resolve(&self) -> Result<(String, Option<ModelSpecJson>, Vec<ExperimentSpec>)> {
        self.validate()?;
        if let Some(m) = &self.model {
            let label = self.label.clone().unwrap_or_else(|| m.label.clone());
            return Ok((label, Some(m.clone()), self.experiments.clone().unwrap_or_default()));
        }
        let p = preset(self.preset.as_ref().expect("validated"))?;
        let label = self.label.clone().unwrap_or(p.label);
        let experiments = self.experiments.clone().unwrap_or(p.battery);
        Ok((label, p.model.map(|m| m.to_json()), experiments))
    }
}

/// Input of the `resolvent-sum` subcommand.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ResolventConfig {
    pub d_a: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    pub theta_a: f64,
    pub d_b: usize,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    pub theta_b: f64,
    /// `[re, im]`.
    pub lambda: [f64; 2],
    #[serde(default)]
    pub nodes: Option<usize>,
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default, rename = "R")]
    pub big_r: Option<f64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Row-major dump used in reports.
pub fn matrix_json(m: &Matrix) -> serde_json::Value {
    serde_json::json!({ "rows": m.nrows(), "cols": m.ncols(), "data": to_row_major(m) })
}
