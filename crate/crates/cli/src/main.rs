use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use oulab::scenario::{self, exit, list_presets, Config, ResolventConfig, RunOptions, Status};
use oulab::LabError;

/// Ornstein-Uhlenbeck laboratory: run scenarios, list presets, derive models.
#[derive(Parser, Debug)]
#[command(name = "oulab", version, about)]
struct Cli {
    /// Base seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for estimators (results do not depend on it).
    #[arg(long, global = true, env = "OU_LAB_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every experiment of a scenario and write report.json plus CSVs.
    Run { config: PathBuf },
    /// List the built-in presets.
    Presets {
        /// Print the catalog as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Print only the derivation block of a scenario.
    Derive { config: PathBuf },
    /// Contour-integral resolvent of a Kronecker sum, checked against the dense oracle.
    ResolventSum { config: PathBuf },
}

const DEFAULT_OUT: &str = "oulab-out";

fn code_of(err: &LabError) -> i32 {
    match err {
        LabError::AssumptionFailure(_) | LabError::NotPsd { .. } => exit::ASSUMPTION,
        _ => exit::CONFIG,
    }
}

fn fail(err: &LabError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(code_of(err) as u8)
}

fn load(path: &Path) -> Result<Config, LabError> {
    scenario::load_config(path)
}

fn status_tag(s: Status) -> &'static str {
    match s {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Info => "INFO",
        Status::NotApplicable => "N/A ",
        Status::AssumptionFailure => "ASSM",
        Status::Invalid => "ERR ",
        Status::Skipped => "SKIP",
    }
}

fn run(cli: &Cli, path: &Path) -> anyhow::Result<ExitCode> {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(e) => return Ok(fail(&e)),
    };
    let output_dir = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let opts = RunOptions {
        seed: cli.seed,
        output_dir: Some(output_dir),
    };
    let outcome = match scenario::run_config(&cfg, &opts) {
        Ok(o) => o,
        Err(LabError::Io(e)) => return Err(e).context("writing run outputs"),
        Err(e) => return Ok(fail(&e)),
    };
    let report = &outcome.report;
    println!("scenario {} (seed {})", report.scenario, report.seed);
    for r in &report.experiments {
        let note = r.message.as_deref().map(|m| format!("  {m}")).unwrap_or_default();
        println!(
            "[{}] {:02} {:<18} {:>9.1} ms{}",
            status_tag(r.status),
            r.index,
            r.kind,
            r.runtime_ms,
            note
        );
    }
    let s = &report.summary;
    println!(
        "{} passed, {} failed, {} informational, {} n/a, {} assumption failures; exit {}",
        s.passed, s.failed, s.informational, s.not_applicable, s.assumption_failures, report.exit_code
    );
    if let Some(dir) = &outcome.output_dir {
        println!("report: {}", dir.join("report.json").display());
    }
    Ok(ExitCode::from(report.exit_code as u8))
}

fn derive(cli: &Cli, path: &Path) -> anyhow::Result<ExitCode> {
    let cfg = match load(path) {
        Ok(c) => c,
        Err(e) => return Ok(fail(&e)),
    };
    let (label, model, derived) = match scenario::derive_config(&cfg) {
        Ok(v) => v,
        Err(e) => return Ok(fail(&e)),
    };
    let (block, code) = match derived {
        Some(Ok(dm)) => (Some(scenario::derivation_block(&dm)), exit::PASS),
        Some(Err(e)) => {
            eprintln!("error: {e}");
            (Some(serde_json::json!({"error": e.to_string()})), code_of(&e))
        }
        None => (None, exit::PASS),
    };
    let doc = serde_json::json!({
        "tool": scenario::TOOL,
        "version": oulab::VERSION,
        "scenario": label,
        "model": model,
        "derivation": block,
    });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir)?;
        scenario::write_json(&dir.join("derivation.json"), &doc)?;
    }
    Ok(ExitCode::from(code as u8))
}

fn resolvent_sum(cli: &Cli, path: &Path) -> anyhow::Result<ExitCode> {
    let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()));
    let cfg: ResolventConfig = match raw.map(|r| serde_json::from_str(&r)) {
        Ok(Ok(c)) => c,
        Ok(Err(e)) => return Ok(fail(&LabError::Json(e))),
        Err(e) => {
            eprintln!("error: {e:#}");
            return Ok(ExitCode::from(exit::CONFIG as u8));
        }
    };
    let (doc, pass) = match scenario::experiments::resolvent_sum(&cfg) {
        Ok(v) => v,
        Err(e) => return Ok(fail(&e)),
    };
    println!("{}", serde_json::to_string_pretty(&doc)?);
    if let Some(dir) = cli.out.clone().or(cfg.output_dir) {
        std::fs::create_dir_all(&dir)?;
        scenario::write_json(&dir.join("resolvent.json"), &doc)?;
    }
    Ok(ExitCode::from(if pass == Some(false) { exit::TOLERANCE } else { exit::PASS } as u8))
}

fn presets(json: bool) -> anyhow::Result<ExitCode> {
    let catalog = list_presets();
    if json {
        println!("{}", serde_json::to_string_pretty(&catalog)?);
    } else {
        for p in catalog {
            let param = p.parameter.map(|s| format!("[{s}]")).unwrap_or_default();
            println!("{:<26}{:<7}{}", p.name, param, p.description);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::Run { config } => run(&cli, config),
        Command::Presets { json } => presets(*json),
        Command::Derive { config } => derive(&cli, config),
        Command::ResolventSum { config } => resolvent_sum(&cli, config),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(exit::CONFIG as u8)
    })
}
