//! `lsw`: run the lsw-core scenarios from the command line.
//!
//! Exit codes: 0 all verdicts pass, 2 a verdict fails, 3 a numerical stage
//! failed, 4 the configuration or command line is invalid.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use lsw_core::metric::MetricFamily;
use lsw_core::scenarios::{exit_code_for_error, run, ExperimentConfig, RunReport, Scenario};
use lsw_core::Error;

#[derive(Parser, Debug)]
#[command(name = "lsw", version, about = "Area-constrained Willmore spheres: experiment runner")]
#[command(after_help = "The worker count is read from the LSW_THREADS environment variable.")]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override individual keys of the config file.
#[derive(Args, Debug)]
struct Overrides {
    /// Experiment config (.toml or .json).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory receiving `<scenario>/*.csv` and `manifest.json`.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Metric as JSON, e.g. '{"variant":"schwarzschild","mass":2}'. Repeatable.
    #[arg(long, global = true)]
    metric: Vec<String>,
    /// Radius λ. Repeatable.
    #[arg(long = "lambda", global = true)]
    lambdas: Vec<f64>,
    /// Center ξ as `x,y,z`. Repeatable.
    #[arg(long = "xi", global = true, value_parser = parse_vec3)]
    xis: Vec<[f64; 3]>,
    /// Pulse amplitude; skips calibration.
    #[arg(long, global = true)]
    amplitude: Option<f64>,
    /// Harmonic band limit of the solver.
    #[arg(long, global = true)]
    l_max: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print result tables as CSV.
    #[arg(long, global = true)]
    print_tables: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Spectral tables, inverse-power series, Schwarzschild exactness,
    /// Willmore expansion and the identity suite.
    VerifyIdentities,
    /// Surface report for a sphere graph `(ξ, λ, u)`.
    Energy {
        /// Coefficients of `u`, comma separated, `(l+1)²` of them.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        u: Vec<f64>,
    },
    /// Lyapunov–Schmidt solve at each `(ξ, λ)`.
    Solve,
    /// Reduced energy `G_λ(ξ)` by direct solve and by expansion.
    Reduce,
    /// Foliation by continuation in λ.
    Foliate,
    /// One of the counterexample metrics.
    Counterexample { which: Which },
    /// Reduced area of CMC spheres in the outlying regime.
    CmcArea,
    /// Any scenario by name, or the one named in the config.
    Run {
        #[arg(long)]
        scenario: Option<String>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Which {
    G1,
    G2,
    G3,
    G4,
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|p| format!("expected three components, got {}", p.len()))
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let o = &cli.overrides;
    let mut cfg = match &o.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.scenario = match &cli.command {
        Command::VerifyIdentities => Scenario::VerifyIdentities,
        Command::Energy { u } => {
            if !u.is_empty() {
                cfg.u_coeffs = u.clone();
            }
            Scenario::Energy
        }
        Command::Solve => Scenario::Solve,
        Command::Reduce => Scenario::Reduce,
        Command::Foliate => Scenario::SchwarzschildFoliation,
        Command::CmcArea => Scenario::CmcArea,
        Command::Counterexample { which } => match which {
            Which::G1 => Scenario::CounterexampleG1,
            Which::G2 => Scenario::CounterexampleG2,
            Which::G3 => Scenario::CounterexampleG3,
            Which::G4 => Scenario::CounterexampleG4,
        },
        Command::Run { scenario: Some(s) } => s.parse()?,
        Command::Run { scenario: None } if o.config.is_some() => cfg.scenario,
        Command::Run { scenario: None } => {
            return Err(Error::Config("run needs --scenario or a config naming one".into()));
        }
    };
    if !o.metric.is_empty() {
        cfg.metrics = o
            .metric
            .iter()
            .map(|m| serde_json::from_str::<MetricFamily>(m).map_err(|e| Error::Config(format!("--metric {m}: {e}"))))
            .collect::<Result<_, _>>()?;
    }
    if !o.lambdas.is_empty() {
        cfg.lambdas = o.lambdas.clone();
    }
    if !o.xis.is_empty() {
        cfg.xi_seeds = o.xis.clone();
    }
    if o.amplitude.is_some() {
        cfg.amplitude = o.amplitude;
    }
    if let Some(l) = o.l_max {
        cfg.energy.solver.l_max = l;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if o.output_dir.is_some() {
        cfg.output_dir = o.output_dir.clone();
    }
    Ok(cfg)
}

fn print_report(r: &RunReport, tables: bool) {
    for line in r.summary_lines() {
        println!("{line}");
    }
    for d in &r.diagnostics {
        eprintln!("numerical failure: {d}");
    }
    if tables {
        for t in &r.tables {
            match t.to_csv() {
                Ok(csv) => print!("# {}\n{csv}", t.name),
                Err(e) => eprintln!("table {}: {e}", t.name),
            }
        }
    }
    let total = r.timings.last().map(|t| t.seconds).unwrap_or(0.0);
    println!(
        "{}: {:?} ({} verdicts, {total:.2} s, {} threads)",
        r.scenario,
        r.status,
        r.verdicts.len(),
        r.environment.threads
    );
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(4);
        }
    };
    let outcome = build_config(&cli).and_then(|cfg| {
        let tables = cli.overrides.print_tables || (cfg.output_dir.is_none() && cfg.scenario.criteria().is_empty());
        run(&cfg).map(|r| (r, tables))
    });
    match outcome {
        Ok((report, tables)) => {
            print_report(&report, tables);
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for_error(&e) as u8)
        }
    }
}
