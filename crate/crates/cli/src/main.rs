//! `kramers` — config-driven comparison of mean-exit-time estimates for
//! overdamped Langevin dynamics in a planar domain.

mod commands;
mod config;
mod output;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use commands::{CmdError, CommandResult, Workspace};
use config::ExperimentConfig;
use output::RunWriter;

#[derive(Parser)]
#[command(
    name = "kramers",
    about = "Exit-time asymptotics for overdamped Langevin dynamics, cross-checked four ways",
    version
)]
struct Cli {
    /// Experiment configuration (TOML)
    #[arg(long, global = true, default_value = "experiment.toml")]
    config: PathBuf,
    /// Output directory (overrides [output].dir)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed override
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Temperature list override, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    epsilon: Option<Vec<f64>>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Dump raw exit-time samples (little-endian f64) next to the stats
    #[arg(long, global = true)]
    dump_exits: bool,
    /// Export nodal PDE fields as CSV
    #[arg(long, global = true)]
    export_fields: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Check the standing hypothesis (exit code 0 iff it holds)
    Verify,
    /// Evaluate the analytic exit-time formulas across temperatures
    Predict,
    /// Monte Carlo first-exit simulation
    Simulate,
    /// Finite-difference mean exit time and smallest eigenvalue
    Solve,
    /// Capacity estimates (boundary integral, test function, PDE)
    Capacity,
    /// Master comparison table across all requested methods
    Compare,
}

fn exit_code_for(err: &CmdError) -> u8 {
    match err {
        CmdError::Config(_) => 2,
        CmdError::Verification(_) => 3,
        CmdError::Numerical { .. } => 4,
        CmdError::Io(_) => 5,
    }
}

fn run(cli: &Cli) -> Result<(CommandResult, ExperimentConfig, PathBuf), CmdError> {
    let text = std::fs::read_to_string(&cli.config).map_err(|e| {
        CmdError::Config(config::ConfigError::Parse(format!(
            "cannot read {}: {e}",
            cli.config.display()
        )))
    })?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(eps) = &cli.epsilon {
        cfg.epsilons = eps.clone();
    }
    cfg.validate()?;
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));

    let ws = Workspace::prepare(cfg.clone())?;
    let result = match cli.command {
        Command::Verify => commands::cmd_verify(&ws)?,
        Command::Predict => commands::cmd_predict(&ws)?,
        Command::Simulate => commands::cmd_simulate(&ws, cli.dump_exits)?,
        Command::Solve => commands::cmd_solve(&ws, cli.export_fields)?,
        Command::Capacity => commands::cmd_capacity(&ws)?,
        Command::Compare => commands::cmd_compare(&ws, cli.dump_exits)?,
    };
    Ok((result, cfg, out_dir))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build();
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot build thread pool: {e}");
            return ExitCode::from(2);
        }
    };
    let outcome = pool.install(|| run(&cli));
    match outcome {
        Ok((result, cfg, out_dir)) => {
            let mut writer = match RunWriter::new(&out_dir) {
                Ok(w) => w,
                Err(e) => {
                    eprintln!("error: cannot open output directory: {e}");
                    return ExitCode::from(5);
                }
            };
            for (name, bytes) in &result.artifacts {
                if let Err(e) = writer.write(name, bytes) {
                    eprintln!("error writing {name}: {e}");
                    return ExitCode::from(5);
                }
            }
            if let Err(e) = writer.finish(&cfg.echo_toml()) {
                eprintln!("error finalizing run directory: {e}");
                return ExitCode::from(5);
            }
            // the timestamp lives only here, never in the artifacts
            let now = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            println!("{}", result.summary.trim_end());
            println!("artifacts in {} (finished at unix {now})", out_dir.display());
            if result.hypothesis_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
