use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tlsbath::config::{parse_temperature_list, RunConfig};
use tlsbath::pipeline::{self, Layout, StageOutcome, Summary, SweepReport};
use tlsbath::Error;

/// Simulate a two-level-system bath, emulate its spectroscopic detection and
/// analyze the resulting frequency-shift traces.
#[derive(Debug, Parser)]
#[command(name = "tlsbath", version)]
struct Cli {
    /// TOML configuration. Defaults to `<out>/config.toml` when present, else built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Number of trajectories, overriding the configuration.
    #[arg(long, global = true)]
    n_traj: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, env = "TLSBATH_OUT")]
    out: Option<PathBuf>,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the bath and write shift traces.
    Simulate,
    /// Emulate the analyzer channels on stored shift traces.
    Detect,
    /// Correlations, linewidths and fast scans from stored traces.
    Analyze {
        /// Also run a temperature sweep: `0.2..4:8` (log-spaced) or `0.2,0.8,3.2`.
        #[arg(long)]
        temperature_sweep: Option<String>,
    },
    /// Linewidth versus temperature.
    Sweep {
        /// Temperatures in kelvin; defaults to the configured list.
        #[arg(long)]
        temperatures: Option<String>,
    },
    /// Simulate, detect and analyze.
    All {
        #[arg(long)]
        temperature_sweep: Option<String>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => 2,
        Error::MissingArtifact { .. } => 3,
        _ => 1,
    }
}

fn load_config(cli: &Cli, out: Option<&Path>) -> Result<RunConfig, Error> {
    let stored = out.map(|o| Layout::new(o).config()).filter(|p| p.exists());
    let mut cfg = match cli.config.as_deref().or(stored.as_deref()) {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(n) = cli.n_traj {
        cfg.n_traj = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report_stage(name: &str, outcome: &StageOutcome) {
    println!(
        "{name}: {} artifacts in {:.1} s",
        outcome.artifacts.len(),
        outcome.wall_time_s
    );
}

fn print_sweep(report: &SweepReport) {
    println!("temperature sweep ({} trajectories):", report.n_traj);
    for m in &report.modes {
        let fwhm: Vec<String> = m.fwhm_hz.iter().map(|f| format!("{:.0}", f)).collect();
        println!(
            "  {}: fwhm_hz = [{}], exponent = {:.3} +- {:.3}",
            m.mode,
            fwhm.join(", "),
            m.exponent,
            m.exponent_stderr
        );
    }
}

fn print_summary(s: &Summary) {
    for p in &s.correlation.pairs {
        println!("rho0 {} = {:.4} ({} points)", p.pair, p.rho0, p.n_points);
    }
    for h in &s.histograms {
        println!("fwhm {} = {:.0} Hz", h.name, h.fwhm_hz);
    }
    for m in &s.monte_carlo {
        println!("monte carlo {} = {:.4}", m.pair, m.filtered_zero_delay);
    }
    for d in &s.fast_scan.distances {
        match d.distance {
            Some(v) => println!("scan distance {} = {:.4} ({} sweeps)", d.pair, v, d.n_scans),
            None => println!("scan distance {} undefined ({} sweeps)", d.pair, d.n_scans),
        }
    }
    for w in &s.low_confidence {
        println!("warning: {w}");
    }
    if let Some(sweep) = &s.sweep {
        print_sweep(sweep);
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config {
                key: "threads".into(),
                reason: "must be at least 1".into(),
            });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Contract(e.to_string()))?;
    }
    let reads_stored = !matches!(cli.command, Command::Simulate | Command::All { .. });
    let preliminary = cli.out.clone();
    let cfg = load_config(cli, preliminary.as_deref().filter(|_| reads_stored))?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let temps = |spec: &Option<String>| spec.as_deref().map(parse_temperature_list).transpose();
    match &cli.command {
        Command::Simulate => report_stage("simulate", &pipeline::simulate(&cfg, &out)?),
        Command::Detect => report_stage("detect", &pipeline::detect(&cfg, &out)?),
        Command::Analyze { temperature_sweep } => {
            let t = temps(temperature_sweep)?;
            let (summary, outcome) = pipeline::analyze(&cfg, &out, t.as_deref())?;
            report_stage("analyze", &outcome);
            print_summary(&summary);
        }
        Command::Sweep { temperatures } => {
            let t = temps(temperatures)?.unwrap_or_else(|| cfg.sweep.temperatures_k.clone());
            let (report, outcome) = pipeline::sweep(&cfg, &out, &t)?;
            report_stage("sweep", &outcome);
            print_sweep(&report);
        }
        Command::All { temperature_sweep } => {
            let t = temps(temperature_sweep)?;
            report_stage("simulate", &pipeline::simulate(&cfg, &out)?);
            report_stage("detect", &pipeline::detect(&cfg, &out)?);
            let (summary, outcome) = pipeline::analyze(&cfg, &out, t.as_deref())?;
            report_stage("analyze", &outcome);
            print_summary(&summary);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
