use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hypomix_core::experiment::{run_experiment_in, ExperimentConfig, ExperimentKind};
use hypomix_core::sim::with_workers;
use hypomix_core::Error;

const WORKERS_ENV: &str = "HYPOMIX_WORKERS";

/// Run one configured mixing experiment and write its artifacts.
///
/// Exit codes: 0 all verdicts pass, 1 a verdict failed, 2 usage or
/// validation error, 3 runtime error. Set HYPOMIX_WORKERS to fix the
/// worker-thread count; outputs do not depend on it.
#[derive(Parser, Debug)]
#[command(name = "hypomix", version)]
struct Cli {
    /// Experiment kind; overrides `kind` in the config file.
    kind: ExperimentKind,
    #[arg(long)]
    config: PathBuf,
    /// `section.key=value`, applied before validation. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output root; defaults to `output.dir` or `results`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run directory name; defaults to `output.tag` or a timestamp.
    #[arg(long)]
    tag: Option<String>,
}

fn workers() -> Result<Option<usize>, String> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("{WORKERS_ENV}: expected a positive integer, got '{v}'")),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = match workers() {
        Ok(w) => w,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut overrides = vec![format!("kind=\"{}\"", cli.kind)];
    overrides.extend(cli.overrides.iter().cloned());
    let cfg = match ExperimentConfig::load(&cli.config, &overrides) {
        Ok(c) => c,
        Err(Error::Validation(problems)) => {
            eprintln!("error: invalid configuration");
            for p in problems {
                eprintln!("  {p}");
            }
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let output = cfg.output.clone().unwrap_or_default();
    let root = cli
        .out
        .or_else(|| output.dir.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    let tag = cli.tag.or(output.tag);
    let run = || run_experiment_in(&cfg, &root, tag.as_deref());
    let result = match workers {
        Some(n) => with_workers(n, run).and_then(|r| r),
        None => run(),
    };
    let manifest = match result {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    for v in &manifest.verdicts {
        let status = if v.pass { "pass" } else { "FAIL" };
        let note = if v.tagged { "" } else { " (informational)" };
        println!("{status} {}{note}: {}", v.name, v.detail);
    }
    if let Some(e) = &manifest.error {
        eprintln!("error: {e}");
    }
    println!("manifest: {}", manifest.out_dir.join("manifest.json").display());
    ExitCode::from(manifest.exit_code() as u8)
}
