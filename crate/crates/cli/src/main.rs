//! `stiga run <config>`, `stiga validate <config>`, `stiga list-examples`.
//!
//! `STIGA_THREADS` sets the worker count of the parallel loops (0 or unset: all cores).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use stiga::cases::{catalog, ProblemCase};
use stiga::experiment::{run_experiment, ExperimentConfig};
use stiga::parallel::with_threads;

#[derive(Parser)]
#[command(name = "stiga", version, about = "Adaptive space-time IgA experiments for the heat equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Parse a config and check the manufactured source of its example.
    Validate { config: PathBuf },
    /// Print the benchmark catalog.
    ListExamples,
}

fn threads() -> Result<usize, String> {
    match std::env::var("STIGA_THREADS") {
        Ok(v) => v.trim().parse().map_err(|_| format!("STIGA_THREADS must be a count, got `{v}`")),
        Err(_) => Ok(0),
    }
}

fn run(cmd: Command) -> Result<(), String> {
    match cmd {
        Command::ListExamples => {
            for id in catalog() {
                let case = ProblemCase::new(id).map_err(|e| e.to_string())?;
                println!("{:<10} d={}  T={}  {}", id.to_string(), case.d(), case.t_end, id.describe());
            }
            println!("parameters: ex2(k1,k2), ex4(lambda) with lambda > 0");
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::from_file(&config).map_err(|e| format!("{}: {e}", config.display()))?;
            let case = ProblemCase::new(cfg.example).map_err(|e| e.to_string())?;
            let worst = case.validate(1000, 1e-8).map_err(|e| e.to_string())?;
            println!("{}: ok (example {}, max source residual {worst:.2e})", config.display(), cfg.example);
        }
        Command::Run { config } => {
            let cfg = ExperimentConfig::from_file(&config).map_err(|e| format!("{}: {e}", config.display()))?;
            let n = if cfg.strict { 1 } else { threads()? };
            let exp = with_threads(n, || run_experiment(&cfg)).map_err(|e| e.to_string())?;
            println!("step   dofs_u   |grad_x e|   Ieff(M^I)  Ieff(M^II)  Ieff(EId)");
            for r in &exp.rows {
                let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
                println!(
                    "{:>4} {:>8} {:>12.4e} {:>11} {:>11} {:>10}",
                    r.step,
                    r.dofs_u,
                    r.grad_x_error,
                    f(r.ieff_majorant_i),
                    f(r.ieff_majorant_ii),
                    f(r.ieff_eid)
                );
            }
            println!("elapsed {:.2}s", exp.elapsed);
            if let Some(e) = &exp.result.failure {
                return Err(format!("run stopped after {} steps: {e}", exp.result.steps.len()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
