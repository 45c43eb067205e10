use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lincert::error::{CliError, CliResult, EXIT_FAIL, EXIT_PASS};
use lincert::report::{write_file, Report};
use lincert::run::{run_scenario, RunOptions};
use lincert::scenario::{bundled, Scenario, Stage};
use lincert::verify::{bundled_suite, dir_suite, run_criterion, verify_all, CRITERIA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

/// Certify linearizations of random and stochastic differential equations.
#[derive(Debug, Parser)]
#[command(name = "lincert", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// First seed of the ensemble, replacing the scenario's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for the report and plot data.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Worker threads for seed ensembles, replacing the scenario's.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Lyapunov spectrum and stability gate of the linear part.
    Spectrum,
    /// Global conjugacy certificate (deterministic or random route).
    Conjugacy,
    /// Local linearization through a random cutoff.
    Local,
    /// SDE to random ODE to local linearization pipeline.
    SdePipeline,
    /// The scenario's own stage.
    Run,
    /// Run a scenario suite, or the numbered acceptance criteria.
    Verify {
        /// Directory of scenario files; defaults to the bundled suite.
        #[arg(long, conflicts_with = "criteria")]
        suite: Option<PathBuf>,
        /// Comma-separated acceptance criteria to run; `all` for every one.
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<String>>,
    },
    /// List the bundled scenarios, or write them to `--out`.
    Scenarios,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code.clamp(0, 255) as u8)
}

fn execute(cli: &Cli) -> CliResult<i32> {
    let opts = RunOptions {
        stage: None,
        seed: cli.seed,
        workers: cli.workers,
    };
    match &cli.command {
        Command::Spectrum => run_stage(cli, Some(Stage::Spectrum), &opts),
        Command::Conjugacy => run_stage(cli, Some(Stage::Conjugacy), &opts),
        Command::Local => run_stage(cli, Some(Stage::Local), &opts),
        Command::SdePipeline => run_stage(cli, Some(Stage::SdePipeline), &opts),
        Command::Run => run_stage(cli, None, &opts),
        Command::Verify { suite, criteria } => match criteria {
            Some(list) => criteria_run(cli, list),
            None => {
                let suite = match (suite, &cli.scenario) {
                    (Some(dir), _) => dir_suite(dir)?,
                    (None, Some(file)) => vec![(file.display().to_string(), Scenario::load(file))],
                    (None, None) => bundled_suite(),
                };
                let report = verify_all(&suite, &opts);
                emit(cli, &report, "suite")?;
                Ok(report.exit_code)
            }
        },
        Command::Scenarios => {
            for (file, text) in bundled() {
                match &cli.out {
                    Some(dir) => write_file(dir, file, text)?,
                    None => println!("{file}"),
                }
            }
            Ok(EXIT_PASS)
        }
    }
}

fn run_stage(cli: &Cli, stage: Option<Stage>, opts: &RunOptions) -> CliResult<i32> {
    let path = cli
        .scenario
        .as_deref()
        .ok_or_else(|| CliError::scenario("--scenario <file> is required"))?;
    let sc = Scenario::load(path)?;
    let out = run_scenario(&sc, &RunOptions { stage, ..opts.clone() });
    let stem = file_stem(path);
    emit(cli, &out.report, &stem)?;
    if let Some(dir) = &cli.out {
        for (name, series) in &out.series {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display().to_string(), e))?;
            series.write_csv(&dir.join(format!("{name}.csv")))?;
        }
    }
    for e in &out.report.errors {
        eprintln!("error: {}", e.message);
    }
    if out.report.expected_rejection == Some(true) {
        eprintln!("expected rejection observed");
    }
    Ok(out.report.exit_code)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into())
}

/// Print the report and write it under `--out`.
fn emit(cli: &Cli, report: &Report, stem: &str) -> CliResult<()> {
    let json = report.to_json()?;
    let csv = report.checks_csv()?;
    match cli.format {
        Format::Json => println!("{json}"),
        Format::Csv => print!("{csv}"),
    }
    if let Some(dir) = &cli.out {
        write_file(dir, &format!("{stem}.report.json"), &json)?;
        write_file(dir, &format!("{stem}.checks.csv"), &csv)?;
    }
    eprintln!(
        "{} {} ({} checks, {} failing, exit {})",
        if report.pass { "PASS" } else { "FAIL" },
        report.scenario,
        report.checks.len(),
        report.failures().len(),
        report.exit_code
    );
    Ok(())
}

fn criteria_run(cli: &Cli, list: &[String]) -> CliResult<i32> {
    let ids: Vec<u8> = if list.iter().any(|s| s == "all") {
        CRITERIA.iter().map(|c| c.0).collect()
    } else {
        list.iter()
            .map(|s| s.trim().parse::<u8>().map_err(|_| CliError::scenario(format!("bad criterion `{s}`"))))
            .collect::<CliResult<_>>()?
    };
    let mut outcomes = Vec::new();
    for id in ids {
        let o = run_criterion(id)?;
        eprintln!("{}", o.line());
        outcomes.push(o);
    }
    let json = serde_json::to_string_pretty(&outcomes).map_err(|e| CliError::Output(e.to_string()))?;
    match cli.format {
        Format::Json => println!("{json}"),
        Format::Csv => {
            for o in &outcomes {
                println!("{},{},{},{:.3}", o.id, o.title, o.pass, o.runtime_s);
            }
        }
    }
    if let Some(dir) = &cli.out {
        write_file(dir, "criteria.json", &json)?;
    }
    Ok(if outcomes.iter().all(|o| o.pass) { EXIT_PASS } else { EXIT_FAIL })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
