use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use maml_lr::cli::commands::{cmd_compare, cmd_moments, cmd_simulate, cmd_sweep, cmd_theory};
use maml_lr::cli::config::SweepConfig;
use maml_lr::cli::scenarios::{scenario, Scenario};
use maml_lr::Error;

#[derive(Parser)]
#[command(name = "maml-lr", version, about = "One-step MAML on mixed linear regression: theory, simulation and learning-rate sweeps")]
struct Cli {
    /// JSON sweep configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in scenario used when no config is given.
    #[arg(long, global = true)]
    scenario: Option<String>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Runs per grid point, overriding the config.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output CSV path, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form loss, its breakdown and optimal rates at the base point.
    Theory,
    /// Theory and Monte Carlo over the configured grid, written as CSV.
    Sweep,
    /// Closed-form Wishart moments against Monte Carlo.
    Moments {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
    /// Sweep a scenario and check theory against simulation.
    Compare {
        /// fig2a, fig2b, fig3a, fig3b, wishart_a or wishart_b.
        name: Option<String>,
        /// Tolerance in standard errors for a custom config.
        #[arg(long, default_value_t = 5.0)]
        tolerance: f64,
    },
    /// Monte Carlo estimate at the base point.
    Simulate,
}

enum Outcome {
    Ok,
    OutOfTolerance,
}

fn load(cli: &Cli, name: Option<&str>) -> Result<(SweepConfig, Option<Scenario>), Error> {
    let (mut cfg, sc) = match (&cli.config, name.or(cli.scenario.as_deref())) {
        (Some(path), _) => (SweepConfig::load(path)?, None),
        (None, Some(name)) => {
            let sc = scenario(name)?;
            (sc.config.clone(), Some(sc))
        }
        (None, None) => return Err(Error::Config("provide --config or --scenario".into())),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(runs) = cli.runs {
        cfg.runs = runs;
    }
    if let Some(out) = &cli.out {
        cfg.output_path = Some(out.clone());
    }
    cfg.validate()?;
    let offset = cfg.base.init_offset_sq();
    if offset > 1.0 {
        eprintln!("warning: |omega0 - w0|^2 = {offset:.3} is large; the closed forms assume a nearby initialisation");
    }
    Ok((cfg, sc))
}

fn run(cli: &Cli) -> Result<Outcome, Error> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match &cli.command {
        Command::Theory => {
            cmd_theory(&load(cli, None)?.0, &mut out)?;
        }
        Command::Sweep => {
            cmd_sweep(&load(cli, None)?.0, &mut out)?;
        }
        Command::Simulate => {
            cmd_simulate(&load(cli, None)?.0, &mut out)?;
        }
        Command::Moments { n, p, samples } => {
            let seed = cli.seed.unwrap_or(0);
            let rows = cmd_moments(*n, *p, *samples, seed, &mut out)?;
            if rows.iter().any(|r| !r.pass) {
                return Ok(Outcome::OutOfTolerance);
            }
        }
        Command::Compare { name, tolerance } => {
            let (cfg, sc) = load(cli, name.as_deref())?;
            let (label, tol) = match &sc {
                Some(sc) => (sc.name.to_string(), sc.tolerance_se),
                None => ("custom".to_string(), *tolerance),
            };
            if !cmd_compare(&label, &cfg, tol, &mut out)?.passed() {
                return Ok(Outcome::OutOfTolerance);
            }
        }
    }
    out.flush()?;
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::OutOfTolerance) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 1 })
        }
    }
}
