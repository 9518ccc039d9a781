use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use flowbench_core::app::{run, RunConfig};

#[derive(Parser)]
#[command(
    name = "flowbench",
    version,
    about = "High-order matrix-free flow solver experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Matrix-free versus assembled operator timings
    BenchOp(Common),
    /// Preconditioned CG iterations for mass, Poisson and Helmholtz problems
    Subproblems(Common),
    /// Steady Stokes manufactured-solution convergence
    StokesSteady(Common),
    /// SDIRK temporal convergence for unsteady Stokes
    StokesUnsteady(Common),
    /// Kovasznay flow by pseudo-time projection
    Kovasznay(Common),
    /// 2D Taylor-Green vortex: energy decay and temporal order
    TaylorGreen2d(Common),
}

#[derive(Args)]
struct Common {
    /// key = value file; flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    p: Option<usize>,
    /// Elements per axis, e.g. 8x8
    #[arg(long)]
    mesh: Option<String>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra overrides as key=value
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Command {
    fn split(self) -> (&'static str, Common) {
        match self {
            Command::BenchOp(c) => ("bench-op", c),
            Command::Subproblems(c) => ("subproblems", c),
            Command::StokesSteady(c) => ("stokes-steady", c),
            Command::StokesUnsteady(c) => ("stokes-unsteady", c),
            Command::Kovasznay(c) => ("kovasznay", c),
            Command::TaylorGreen2d(c) => ("taylor-green-2d", c),
        }
    }
}

fn build_config(problem: &str, args: &Common) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path, Some(problem))
            .with_context(|| format!("reading {}", path.display()))?,
        None => RunConfig::for_problem(problem)?,
    };
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got '{kv}'"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(p) = args.p {
        cfg.set("p", &p.to_string())?;
    }
    if let Some(m) = &args.mesh {
        cfg.set("mesh", m)?;
    }
    if let Some(dt) = args.dt {
        cfg.set("dt", &dt.to_string())?;
    }
    if let Some(nu) = args.nu {
        cfg.set("nu", &nu.to_string())?;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (problem, args) = cli.command.split();
    match execute(problem, &args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(problem: &str, args: &Common) -> Result<bool> {
    let cfg = build_config(problem, args)?;
    log::info!("running {problem}");
    let report = run(&cfg)?;
    print!("{}", report.summary());
    let out = cfg
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(problem));
    report
        .write(&out, &cfg)
        .with_context(|| format!("writing results to {}", out.display()))?;
    log::info!("results written to {}", out.display());
    Ok(report.success())
}
