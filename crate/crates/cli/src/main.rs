//! Batch driver: scenario runs, diagnostics and the standalone experiments.

use clap::{Args, Parser, Subcommand};
use driftwave::classical::{detect_caustics, integrate_characteristics};
use driftwave::ensemble::com_diffusion_experiment;
use driftwave::io::read_scalar_csv;
use driftwave::scenario::{
    diagnose_checkpoint, run_scenario, InitialSpec, PipelineMode, ScenarioConfig, ScenarioError,
};
use driftwave::stats::compare_densities;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "driftwave",
    version,
    about = "Drift-diffusion particle ensembles whose density follows the Schrödinger equation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Suppress the report on stdout; files are still written.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint the wavefunction every N steps.
    #[arg(long, value_name = "N")]
    checkpoint_every: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the wavefunction only: fields, checkpoints and residuals.
    Solve(RunArgs),
    /// Full pipeline: wave, drift, particle ensemble and comparisons.
    Ensemble(RunArgs),
    /// Phase-winding and nodal diagnostics on a wavefunction checkpoint.
    Diagnose {
        /// Checkpoint NDJSON file written by `solve`/`ensemble`.
        checkpoint: PathBuf,
    },
    /// Deterministic limit: classical characteristics for the configured
    /// potential (zero diffusion).
    Classical(RunArgs),
    /// Center-of-mass diffusion of n-particle systems; the fitted constant
    /// is expected at D/n.
    Comdiff {
        /// Particles per system.
        #[arg(long)]
        n: usize,
        /// Single-particle diffusion constant.
        #[arg(long = "D")]
        d: f64,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        /// Independent systems to average over.
        #[arg(long, default_value_t = 200)]
        ensembles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the summary JSON here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two density CSV files (argument order: empirical, reference).
    Compare {
        empirical: PathBuf,
        reference: PathBuf,
    },
}

fn apply_overrides(cfg: &mut ScenarioConfig, args: &RunArgs) {
    if let Some(seed) = args.seed {
        cfg.ensemble.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.display().to_string();
    }
    if let Some(every) = args.checkpoint_every {
        cfg.output.checkpoint_every = every;
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(args) => {
            let mut cfg = ScenarioConfig::load(&args.config)?;
            apply_overrides(&mut cfg, &args);
            let outcome = run_scenario(&cfg, PipelineMode::SolveOnly)?;
            emit(
                &cli.quiet,
                &serde_json::to_value(&outcome).expect("serializes"),
            );
        }
        Command::Ensemble(args) => {
            let mut cfg = ScenarioConfig::load(&args.config)?;
            apply_overrides(&mut cfg, &args);
            let outcome = run_scenario(&cfg, PipelineMode::Full)?;
            emit(
                &cli.quiet,
                &serde_json::to_value(&outcome).expect("serializes"),
            );
        }
        Command::Diagnose { checkpoint } => {
            let findings = diagnose_checkpoint(&checkpoint)?;
            let mut stdout = std::io::stdout().lock();
            for f in findings {
                writeln!(stdout, "{f}").map_err(|e| CliError::Io(e.to_string()))?;
            }
        }
        Command::Classical(args) => {
            let mut cfg = ScenarioConfig::load(&args.config)?;
            apply_overrides(&mut cfg, &args);
            classical_run(&cfg, cli.quiet)?;
        }
        Command::Comdiff {
            n,
            d,
            steps,
            dt,
            ensembles,
            seed,
            out,
        } => {
            if n == 0 || steps < 2 || ensembles < 2 || !(d > 0.0) || !(dt > 0.0) {
                return Err(CliError::Usage(
                    "comdiff needs n >= 1, steps >= 2, ensembles >= 2, D > 0, dt > 0".into(),
                ));
            }
            let result = com_diffusion_experiment(n, d, steps, dt, ensembles, seed);
            let json = serde_json::to_string_pretty(&result).expect("serializes");
            if let Some(path) = out {
                std::fs::write(&path, &json).map_err(|e| CliError::Io(e.to_string()))?;
            }
            println!("{json}");
        }
        Command::Compare {
            empirical,
            reference,
        } => {
            let p = read_scalar_csv(&empirical)?;
            let q = read_scalar_csv(&reference)?;
            let report = compare_densities(&p, &q).map_err(ScenarioError::Stats)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("serializes")
            );
        }
    }
    Ok(())
}

/// Classical characteristics for the configured potential: a fan spread over
/// the initial packet, written as `t,id,x,p` CSV with a small summary.
fn classical_run(cfg: &ScenarioConfig, quiet: bool) -> Result<(), CliError> {
    cfg.validate()?;
    let grid = cfg.build_grid()?;
    if grid.dim() != 1 {
        return Err(CliError::Usage("classical runs are one-dimensional".into()));
    }
    let potential = cfg.build_potential(&grid)?;
    let (x0, p0, sigma0) = match &cfg.initial {
        InitialSpec::Gaussian { x0, p0, sigma0 } => (x0[0], p0[0], sigma0[0]),
        _ => {
            return Err(CliError::Usage(
                "classical runs take a gaussian initial spec (fan center and momentum)".into(),
            ))
        }
    };
    let fan_n = cfg.ensemble.n.clamp(2, 1024);
    let initial: Vec<(f64, f64)> = (0..fan_n)
        .map(|j| {
            let u = j as f64 / (fan_n - 1) as f64;
            (x0 - 4.0 * sigma0 + 8.0 * sigma0 * u, p0)
        })
        .collect();
    let bundle = integrate_characteristics(
        &potential,
        &initial,
        cfg.physical.m,
        cfg.schedule.t_end,
        grid.dt(),
    )
    .map_err(|e| CliError::Numeric(e.to_string()))?;
    let caustics = detect_caustics(&bundle);

    let out_dir = PathBuf::from(&cfg.output.dir).join(&cfg.name);
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError::Io(e.to_string()))?;
    let path = out_dir.join("characteristics.csv");
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(&path).map_err(|e| CliError::Io(e.to_string()))?,
    );
    writeln!(w, "t,id,x,p").map_err(|e| CliError::Io(e.to_string()))?;
    for (id, traj) in bundle.trajectories.iter().enumerate() {
        for (k, &t) in bundle.times.iter().enumerate() {
            writeln!(
                w,
                "{},{id},{},{}",
                driftwave::io::fmt_f64(t),
                driftwave::io::fmt_f64(traj.x[k]),
                driftwave::io::fmt_f64(traj.p[k])
            )
            .map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;

    let summary = serde_json::json!({
        "trajectories": bundle.trajectories.len(),
        "steps": bundle.times.len() - 1,
        "max_energy_drift": bundle.max_energy_drift,
        "caustics": caustics.len(),
        "first_caustic_t": caustics.first().map(|(_, t)| *t),
        "output": path.display().to_string(),
    });
    std::fs::write(
        out_dir.join("classical_summary.json"),
        serde_json::to_string_pretty(&summary).expect("serializes"),
    )
    .map_err(|e| CliError::Io(e.to_string()))?;
    emit(&quiet, &summary);
    Ok(())
}

fn emit(quiet: &bool, value: &serde_json::Value) {
    if !*quiet {
        println!(
            "{}",
            serde_json::to_string_pretty(value).expect("serializes")
        );
    }
}

enum CliError {
    Scenario(ScenarioError),
    Usage(String),
    Io(String),
    Numeric(String),
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Scenario(e)
    }
}

impl From<driftwave::io::IoError> for CliError {
    fn from(e: driftwave::io::IoError) -> Self {
        CliError::Scenario(ScenarioError::Io(e))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Scenario(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
        Err(CliError::Numeric(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(4)
        }
    }
}
