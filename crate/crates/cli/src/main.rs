use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use snellforge::check::{check_problem, check_random, check_replay, SuiteReport};
use snellforge::gen::{generate, GenParams};
use snellforge::run::{enum_cap, run, to_json, Task};
use snellforge::{load_input, load_scenario, CliError, CliResult, Input};

#[derive(Parser)]
#[command(
    name = "snellforge",
    version,
    about = "Optimal stopping over split stopping times and reflected BSDEs on finite trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write summary.json plus CSV tables.
    Run {
        file: PathBuf,
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the invariant suite on a scenario, a solution file, or random scenarios.
    Check {
        #[arg(conflicts_with = "random")]
        file: Option<PathBuf>,
        /// Number of random scenarios to generate and check.
        #[arg(long)]
        random: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Write a random admissible scenario.
    Gen {
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        branching: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run { file, task, out } => {
            let problem = load_scenario(&file)?;
            run(&problem, task)?.write(&out)
        }
        Command::Check {
            file,
            random,
            seed,
            json,
        } => {
            let cap = enum_cap()?;
            let suite = match (file, random) {
                (_, Some(n)) => check_random(n, seed, cap)?,
                (Some(path), None) => {
                    let mut suite = SuiteReport::default();
                    let case = path.display().to_string();
                    match load_input(&path)? {
                        Input::Scenario(p) => check_problem(&p, &mut suite, &case, cap),
                        Input::Solution(p, f) => check_replay(&p, &f, &mut suite, &case, cap)?,
                    }
                    suite
                }
                (None, None) => {
                    return Err(CliError::Invalid(
                        "give a scenario file or --random N".into(),
                    ))
                }
            };
            if json {
                print!("{}", to_json(&suite));
            } else {
                print!("{}", suite.render());
            }
            match suite.failed() {
                0 => Ok(()),
                failed => Err(CliError::InvariantsFailed { failed }),
            }
        }
        Command::Gen {
            steps,
            branching,
            seed,
            out,
        } => {
            let text = generate(GenParams {
                steps,
                branching,
                seed,
            })?
            .to_json();
            match out {
                Some(path) => std::fs::write(&path, text).map_err(|e| CliError::io(&path, e)),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            let diag = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": code,
            });
            eprintln!("{diag}");
            ExitCode::from(code as u8)
        }
    }
}
