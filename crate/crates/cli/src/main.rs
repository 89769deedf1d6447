use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lambda_switch::model::describe;
use lambda_switch_cli::config::{Overrides, Scenario, ScenarioConfig};
use lambda_switch_cli::output::params_json;
use lambda_switch_cli::{scenarios, CliError};

#[derive(Parser)]
#[command(
    name = "lambda-switch",
    version,
    about = "Scenario runner for the lambda-emitter optical switch"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a configuration file.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output path prefix.
        #[arg(long)]
        out: Option<String>,
        /// Number of Monte Carlo trajectories.
        #[arg(long)]
        trajectories: Option<usize>,
        /// Fock cutoff of mode a.
        #[arg(long, requires = "fock_nb")]
        fock_na: Option<usize>,
        /// Fock cutoff of mode b.
        #[arg(long, requires = "fock_na")]
        fock_nb: Option<usize>,
        /// Run a different scenario than the one named in the file.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Parse and check a configuration without running it.
    Validate {
        config: PathBuf,
        #[arg(long)]
        scenario: Option<String>,
    },
    /// List the available scenarios.
    Scenarios,
}

fn scenario_override(name: Option<String>) -> Result<Option<Scenario>, CliError> {
    name.map(|s| Scenario::parse(&s)).transpose()
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Scenarios => {
            for s in Scenario::ALL {
                println!("{:<13} {}", s.name(), s.summary());
            }
            Ok(())
        }
        Command::Validate { config, scenario } => {
            let overrides = Overrides {
                scenario: scenario_override(scenario)?,
                ..Overrides::default()
            };
            let resolved = ScenarioConfig::load(&config)?.resolve(&overrides)?;
            for w in &resolved.warnings {
                log::warn!("{w}");
            }
            println!("scenario = \"{}\"", resolved.config.scenario);
            println!("seed = {}", resolved.config.seed);
            println!("output = \"{}\"", resolved.config.output);
            println!(
                "fock-convergence-check = {}",
                resolved.config.fock_convergence_check
            );
            println!("[params]");
            if let Some(obj) = params_json(&resolved.params).as_object() {
                for (k, v) in obj {
                    println!("{k} = {v}");
                }
            }
            log::debug!("{}", describe(&resolved.params));
            println!("# ok");
            Ok(())
        }
        Command::Run {
            config,
            seed,
            out,
            trajectories,
            fock_na,
            fock_nb,
            scenario,
        } => {
            let overrides = Overrides {
                scenario: scenario_override(scenario)?,
                seed,
                output: out,
                trajectories,
                cutoffs: fock_na.zip(fock_nb),
            };
            let resolved = ScenarioConfig::load(&config)?.resolve(&overrides)?;
            for w in &resolved.warnings {
                log::warn!("{w}");
            }
            let report = scenarios::run(&resolved)?;
            println!("{}", report.summary_path.display());
            for f in &report.files {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
