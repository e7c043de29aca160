//! Scenario ingestion, experiment orchestration and machine-readable reports.
//!
//! A run derives the model once, executes the experiments in declared order
//! and writes `report.json` plus one CSV per experiment. Every record carries
//! its seed and evaluation scheme; pass/fail appears only where a tolerance
//! was declared.

pub mod config;
pub mod experiments;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

pub use config::{list_presets, preset, Config, ExperimentSpec, PresetInfo, PresetRef, ResolventConfig};

use crate::error::{LabError, Result};
use crate::model::{DerivedModel, ModelSpec, ModelSpecJson};

pub const TOOL: &str = "oulab";

/// Process exit codes of a run.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const TOLERANCE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const ASSUMPTION: i32 = 3;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Ran, but no tolerance was declared.
    Info,
    NotApplicable,
    AssumptionFailure,
    /// Invalid parameters inside an otherwise valid config.
    Invalid,
    Skipped,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentRecord {
    pub index: usize,
    pub kind: String,
    pub status: Status,
    pub inputs: Value,
    pub results: Value,
    pub tolerance: Option<f64>,
    pub pass: Option<bool>,
    pub seed: u64,
    pub scheme: String,
    pub csv: Option<String>,
    pub message: Option<String>,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub informational: usize,
    pub not_applicable: usize,
    pub assumption_failures: usize,
    pub invalid: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub seed: u64,
    pub model: Option<ModelSpecJson>,
    pub derivation: Option<Value>,
    pub experiments: Vec<ExperimentRecord>,
    pub summary: Summary,
    pub exit_code: i32,
    pub wall_time_ms: f64,
}

/// Overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub output_dir: Option<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.report.exit_code
    }
}

pub fn load_config(path: &Path) -> Result<Config> {
    Config::from_json(&fs::read_to_string(path)?)
}

fn matrix(m: &crate::numkit::Matrix) -> Value {
    config::matrix_json(m)
}

/// The derivation block: `Q_inf`, `Ã_inf`, `ω`, `B` and the condition
/// checklist.
pub fn derivation_block(dm: &DerivedModel) -> Value {
    json!({
        "d": dm.d(),
        "m": dm.m(),
        "flags": dm.flags,
        "Q": matrix(&dm.q),
        "Q_inf": matrix(&dm.qinf),
        "Q_inf_rank": dm.qinf_factor.rank,
        "A_tilde_inf": matrix(&dm.atilde_inf),
        "omega": dm.omega,
        "poincare_constant_p2": dm.poincare_constant_p2(),
        "B": dm.b.as_ref().map(matrix),
        "B_structure_defect": experiments::b_structure_defect(dm),
        "A_tilde_h": dm.atilde_h.as_ref().map(matrix),
        "conditions": dm.check_theorem_conditions(),
    })
}

/// Derives the model of a config; `Ok(None)` for model-free presets.
pub fn derive_config(cfg: &Config) -> Result<(String, Option<ModelSpecJson>, Option<Result<DerivedModel>>)> {
    let (label, model, _) = cfg.resolve()?;
    let derived = match &model {
        Some(m) => Some(DerivedModel::derive(&ModelSpec::from_json(m)?)),
        None => None,
    };
    Ok((label, model, derived))
}

fn experiment_seed(base: u64, index: usize, spec: &ExperimentSpec) -> u64 {
    serde_json::to_value(spec)
        .ok()
        .and_then(|v| v.get("seed").and_then(Value::as_u64))
        .unwrap_or_else(|| base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64 + 1))
}

fn classify(err: &LabError) -> Status {
    match err {
        LabError::AssumptionFailure(_) | LabError::NotPsd { .. } => Status::AssumptionFailure,
        LabError::Unsupported(_) | LabError::Refused(_) | LabError::DegenerateCovariance { .. } => {
            Status::NotApplicable
        }
        _ => Status::Invalid,
    }
}

fn write_csv(path: &Path, table: &experiments::Table) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs a config. Errors are config-level (exit 2) or I/O; everything else
/// lands in the report.
pub fn run_config(cfg: &Config, opts: &RunOptions) -> Result<RunOutcome> {
    let start = Instant::now();
    let (label, model, experiment_specs) = cfg.resolve()?;
    let seed = opts.seed.or(cfg.seed).unwrap_or(0);
    let output_dir = opts.output_dir.clone().or_else(|| cfg.output_dir.clone());
    if let Some(dir) = &output_dir {
        fs::create_dir_all(dir)?;
    }
    let derived = match &model {
        Some(m) => Some(DerivedModel::derive(&ModelSpec::from_json(m)?)),
        None => None,
    };
    let mut records = Vec::new();
    let (dm, derivation) = match derived {
        Some(Ok(dm)) => {
            let block = derivation_block(&dm);
            (Some(dm), Some(block))
        }
        Some(Err(e)) => {
            let status = classify(&e);
            if status == Status::Invalid {
                return Err(e);
            }
            records.push(ExperimentRecord {
                index: 0,
                kind: "derivation".into(),
                status,
                inputs: json!({}),
                results: Value::Null,
                tolerance: None,
                pass: None,
                seed,
                scheme: "deterministic".into(),
                csv: None,
                message: Some(e.to_string()),
                runtime_ms: 0.0,
            });
            (None, Some(json!({"error": e.to_string()})))
        }
        None => (None, None),
    };
    let model_failed = model.is_some() && dm.is_none();

    for (k, spec) in experiment_specs.iter().enumerate() {
        let index = k + 1;
        let exp_seed = experiment_seed(seed, index, spec);
        let inputs = serde_json::to_value(spec)?;
        let tolerance = inputs.get("tolerance").and_then(Value::as_f64);
        let mut rec = ExperimentRecord {
            index,
            kind: spec.kind().into(),
            status: Status::Skipped,
            inputs,
            results: Value::Null,
            tolerance,
            pass: None,
            seed: exp_seed,
            scheme: "deterministic".into(),
            csv: None,
            message: None,
            runtime_ms: 0.0,
        };
        if spec.needs_model() && dm.is_none() {
            rec.message = Some(if model_failed {
                "model derivation failed".into()
            } else {
                "scenario has no model".into()
            });
            if !model_failed {
                rec.status = Status::NotApplicable;
            }
            records.push(rec);
            continue;
        }
        let t0 = Instant::now();
        match experiments::run(spec, dm.as_ref(), exp_seed) {
            Ok(out) => {
                rec.status = match out.pass {
                    Some(true) => Status::Pass,
                    Some(false) => Status::Fail,
                    None => Status::Info,
                };
                rec.pass = out.pass;
                rec.results = out.results;
                rec.scheme = out.scheme;
                if let (Some(dir), Some(table)) = (&output_dir, &out.table) {
                    let name = format!("{index:02}_{}.csv", spec.kind());
                    write_csv(&dir.join(&name), table)?;
                    rec.csv = Some(name);
                }
            }
            Err(e) => {
                rec.status = classify(&e);
                rec.message = Some(e.to_string());
            }
        }
        rec.runtime_ms = t0.elapsed().as_secs_f64() * 1e3;
        records.push(rec);
    }

    let mut summary = Summary {
        total: records.len(),
        ..Default::default()
    };
    for r in &records {
        match r.status {
            Status::Pass => summary.passed += 1,
            Status::Fail => summary.failed += 1,
            Status::Info => summary.informational += 1,
            Status::NotApplicable => summary.not_applicable += 1,
            Status::AssumptionFailure => summary.assumption_failures += 1,
            Status::Invalid => summary.invalid += 1,
            Status::Skipped => summary.skipped += 1,
        }
    }
    let exit_code = if summary.assumption_failures > 0 {
        exit::ASSUMPTION
    } else if summary.invalid > 0 {
        exit::CONFIG
    } else if summary.failed > 0 {
        exit::TOLERANCE
    } else {
        exit::PASS
    };
    let report = RunReport {
        tool: TOOL.into(),
        version: crate::VERSION.into(),
        scenario: label,
        seed,
        model,
        derivation,
        experiments: records,
        summary,
        exit_code,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    if let Some(dir) = &output_dir {
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(RunOutcome { report, output_dir })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Removes `wall_time_ms` and `runtime_ms` at every depth.
pub fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("wall_time_ms");
            map.remove("runtime_ms");
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}
