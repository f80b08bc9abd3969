//! `curvlab`: runs experiments from JSON configs and writes CSV tables,
//! field dumps and a manifest per experiment directory.

mod config;
mod run;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use run::{run_experiment, Manifest};

#[derive(Parser)]
#[command(name = "curvlab", version, about = "Mean curvature operator experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dirichlet problems for H_1[u] = f.
    Solve(RunArgs),
    /// Perron sweeps and smooth approximating sequences.
    Perron(RunArgs),
    /// Mean curvature measure of balls.
    Measure(RunArgs),
    /// Harnack ratios of minimal graphs.
    Harnack(RunArgs),
    /// The measure-data continuation.
    Dirichlet(RunArgs),
    /// Exact-answer checks; runs without a config.
    Verify(RunArgs),
    /// Summarise the manifests of experiment directories.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated cells per unit length, e.g. 32,64,128.
    #[arg(long, value_delimiter = ',')]
    resolution: Option<Vec<f64>>,
}

fn load(kind: &str, args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<ExperimentConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None if kind == "verify" => ExperimentConfig::verify_default(),
        None => bail!("{kind} needs --config"),
    };
    if cfg.experiment.name() != kind {
        bail!("config describes a {} experiment, not {kind}", cfg.experiment.name());
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(res) = &args.resolution {
        cfg.resolutions = res.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(kind: &str, args: &RunArgs) -> Result<bool> {
    let cfg = load(kind, args)?;
    let dir = match (&args.out, &cfg.output) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => PathBuf::from("runs").join(kind),
    };
    let manifest = run_experiment(&cfg, &dir)?;
    print_manifest(&dir, &manifest);
    Ok(manifest.passed)
}

fn print_manifest(dir: &Path, m: &Manifest) {
    println!("{} [{}] {}", m.kind, &m.inputs_hash[..12], dir.display());
    for a in &m.assertions {
        println!("  {} {} {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
    }
    let failed = m.assertions.iter().filter(|a| !a.passed).count();
    println!("  {} assertions, {failed} failed", m.assertions.len());
}

fn report(dirs: &[PathBuf]) -> Result<bool> {
    let mut all = true;
    for dir in dirs {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        print_manifest(dir, &m);
        all &= m.passed;
    }
    Ok(all)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => execute("solve", a),
        Command::Perron(a) => execute("perron", a),
        Command::Measure(a) => execute("measure", a),
        Command::Harnack(a) => execute("harnack", a),
        Command::Dirichlet(a) => execute("dirichlet", a),
        Command::Verify(a) => execute("verify", a),
        Command::Report { dirs } => report(dirs),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
