//! `spdelab` command line: runs a scenario or the acceptance suite and
//! writes its outputs under a directory named by the manifest hash.
//!
//! Exit status is 0 when every check passes, 1 when a check fails or a run
//! breaks down, and 2 for usage, configuration or validation errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spdelab::config::{self, ScenarioConfig};
use spdelab::diagnostics::CheckReport;
use spdelab::runner::{self, RunManifest};
use spdelab::{suite, Error};

#[derive(Parser, Debug)]
#[command(name = "spdelab", version, about = "Degenerate SPDE, commutator and filtering laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the linear SPDE of a scenario.
    RunSpde(Source),
    /// Run the Zakai and Kushner filters with their oracles.
    RunFilter(Source),
    /// Sweep the mollifier commutator over a list of scales.
    SweepCommutator(Source),
    /// Picard iteration for a nonlinear source.
    Picard(Source),
    /// Run the checks of one scenario, or the whole acceptance suite when no
    /// scenario is given.
    Check(Source),
}

#[derive(Args, Debug)]
struct Source {
    /// Scenario file (TOML).
    #[arg(long, group = "input")]
    config: Option<PathBuf>,
    /// Builtin scenario name.
    #[arg(long, group = "input")]
    scenario: Option<String>,
    /// Replay a `manifest.json` written by an earlier run.
    #[arg(long, group = "input")]
    manifest: Option<PathBuf>,
    /// Root directory for run outputs.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

/// Error with the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Usage(_) | Error::Config(_) | Error::Parse(_) | Error::Validation { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn input_error(e: Error) -> Failure {
    Failure {
        code: 2,
        message: e.to_string(),
    }
}

impl Source {
    /// The scenario and, for a manifest, the subcommand it was written by.
    fn load(&self) -> Result<Option<(ScenarioConfig, Option<runner::Subcommand>)>, Failure> {
        if let Some(p) = &self.config {
            return Ok(Some((ScenarioConfig::from_path(p).map_err(input_error)?, None)));
        }
        if let Some(name) = &self.scenario {
            return Ok(Some((config::builtin(name).map_err(input_error)?, None)));
        }
        if let Some(p) = &self.manifest {
            let m = RunManifest::from_path(p).map_err(input_error)?;
            return Ok(Some((m.config, Some(m.subcommand))));
        }
        Ok(None)
    }
}

fn print_reports(reports: &[CheckReport]) {
    for r in reports {
        let status = if r.pass { "PASS" } else { "FAIL" };
        println!("{status} {} measured {:e} threshold {:e}", r.name, r.measured, r.threshold);
    }
}

fn run_scenario(src: &Source, requested: Option<runner::Subcommand>) -> Result<bool, Failure> {
    let (cfg, recorded) = src.load()?.ok_or_else(|| Failure {
        code: 2,
        message: "one of --config, --scenario or --manifest is required".into(),
    })?;
    let sub = match (requested, recorded) {
        (Some(r), Some(m)) if r != m => {
            return Err(Failure {
                code: 2,
                message: format!("manifest was written by `{m:?}`, not `{r:?}`"),
            })
        }
        (Some(r), _) => r,
        (None, Some(m)) => m,
        (None, None) => runner::Subcommand::infer(&cfg),
    };
    let (outcome, dir) = runner::execute_to(&cfg, sub, &src.out)?;
    println!("run directory: {}", dir.display());
    print_reports(&outcome.reports);
    let pass = outcome.pass();
    if !pass {
        println!("check failed; report: {}", dir.join("report.json").display());
    }
    Ok(pass)
}

fn run_suite(out: &Path) -> Result<bool, Failure> {
    let report = suite::run_suite(out)?;
    for c in &report.criteria {
        println!("{}", c.summary());
    }
    fs::create_dir_all(out).map_err(Error::from)?;
    let path = out.join("report.json");
    let json = serde_json::to_vec_pretty(&report.reports()).map_err(Error::from)?;
    fs::write(&path, json).map_err(Error::from)?;
    let pass = report.pass();
    if pass {
        println!("report: {}", path.display());
    } else {
        println!("check failed; report: {}", path.display());
    }
    Ok(pass)
}

fn dispatch(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::RunSpde(s) => run_scenario(&s, Some(runner::Subcommand::RunSpde)),
        Command::RunFilter(s) => run_scenario(&s, Some(runner::Subcommand::RunFilter)),
        Command::SweepCommutator(s) => run_scenario(&s, Some(runner::Subcommand::SweepCommutator)),
        Command::Picard(s) => run_scenario(&s, Some(runner::Subcommand::Picard)),
        Command::Check(s) => {
            if s.config.is_none() && s.scenario.is_none() && s.manifest.is_none() {
                run_suite(&s.out)
            } else {
                run_scenario(&s, None)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
