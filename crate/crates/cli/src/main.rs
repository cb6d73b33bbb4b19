use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use covbridge::commands::{self, VerifyHooks};
use covbridge::config::{self, Problem, SimulateSettings};
use covbridge::CliError;
use covbridge_core::sim::SimConfig;

/// Minimum-energy steering of a linear stochastic system between two
/// zero-mean Gaussian state distributions.
#[derive(Parser)]
#[command(name = "covbridge", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the steering problem; writes gain.csv, covariance.csv,
    /// schedules.json and report.json
    Solve {
        config: PathBuf,
        /// Override the solver grid interval count
        #[arg(long)]
        steps: Option<usize>,
        /// Output directory (default: config, then $COVBRIDGE_OUT, then ./out)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve, then Monte Carlo simulate the closed loop; adds paths.csv,
    /// tube.csv and empirical.json
    Simulate {
        config: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Override the Monte Carlo path count
        #[arg(long)]
        paths: Option<usize>,
        /// Override the RNG seed
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full verification suite; exit 0 only if every check passes
    Verify {
        config: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Test hook: scale the feedback schedule to force a failure
        #[arg(long, hide = true, default_value_t = 1.0)]
        corrupt_gain: f64,
    },
    /// List built-in scenarios or write a ready-to-run template config
    Scenario {
        /// "list" or a scenario name
        name: String,
        /// Directory for the emitted template (default ".")
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn apply_overrides(
    problem: &mut Problem,
    steps: Option<usize>,
    paths: Option<usize>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    if let Some(s) = steps {
        if s < 2 {
            return Err(CliError::Config("steps override must be at least 2".into()));
        }
        problem.steps = s;
    }
    if paths.is_some() || seed.is_some() {
        if problem.simulate.is_none() {
            let cfg = SimConfig::new(
                config::DEFAULT_PATHS,
                config::DEFAULT_SEED,
                config::DEFAULT_SIM_STEPS,
                config::default_record_stride(config::DEFAULT_SIM_STEPS),
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            problem.simulate = Some(SimulateSettings {
                cfg,
                display_paths: config::DEFAULT_DISPLAY_PATHS,
            });
        }
        let sim = problem.simulate.as_mut().expect("just ensured");
        if let Some(p) = paths {
            sim.cfg.paths = p;
        }
        if let Some(s) = seed {
            sim.cfg.seed = s;
        }
    }
    Ok(())
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve { config, steps, out } => {
            let (_, mut problem) = config::load_config(&config)?;
            apply_overrides(&mut problem, steps, None, None)?;
            let out_dir = commands::resolve_out_dir(out.as_deref(), &problem);
            commands::cmd_solve(&problem, &out_dir)?;
            println!("solved; artifacts in {}", out_dir.display());
            Ok(())
        }
        Command::Simulate {
            config,
            steps,
            paths,
            seed,
            out,
        } => {
            let (_, mut problem) = config::load_config(&config)?;
            apply_overrides(&mut problem, steps, paths, seed)?;
            let out_dir = commands::resolve_out_dir(out.as_deref(), &problem);
            commands::cmd_simulate(&problem, &out_dir)?;
            println!("simulated; artifacts in {}", out_dir.display());
            Ok(())
        }
        Command::Verify {
            config,
            steps,
            out,
            corrupt_gain,
        } => {
            let (_, mut problem) = config::load_config(&config)?;
            apply_overrides(&mut problem, steps, None, None)?;
            let out_dir = commands::resolve_out_dir(out.as_deref(), &problem);
            let hooks = VerifyHooks {
                gain_scale: corrupt_gain,
            };
            let summary = commands::cmd_verify(&problem, &out_dir, &hooks)?;
            for c in &summary.checks {
                let status = if c.passed { "pass" } else { "FAIL" };
                match &c.note {
                    Some(note) => println!("{status}  {:32} {note}", c.name),
                    None => println!(
                        "{status}  {:32} value {:.3e} vs {:.3e}",
                        c.name, c.value, c.threshold
                    ),
                }
            }
            if summary.passed {
                println!("verification passed; report in {}", out_dir.display());
                Ok(())
            } else {
                let failed: Vec<&str> = summary
                    .checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(|c| c.name)
                    .collect();
                Err(CliError::VerificationFailed(failed.join(", ")))
            }
        }
        Command::Scenario { name, out } => {
            let out_dir = out.unwrap_or_else(|| PathBuf::from("."));
            commands::cmd_scenario(&name, &out_dir)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
