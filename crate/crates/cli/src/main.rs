//! `qres`: runs the numerical experiments and writes CSV or JSON results.

mod experiments;
mod failure;
mod spec;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use failure::Failure;
use spec::{Command, Spec};

#[derive(Debug, Parser)]
#[command(name = "qres", version, about = "Noisy twenty-questions experiments")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// C(q) and V(q) over a query-size grid for each family parameter.
    CapacitySweep(Spec),
    /// Measurement-dependent versus measurement-independent rates.
    RateCompare(Spec),
    /// Non-adaptive and adaptive resolution and the adaptivity gain.
    Gain(Spec),
    /// Excess-resolution rate with log M on either side of nC/d.
    PhaseTransition(Spec),
    /// Single-target non-adaptive search, jointly or per axis.
    SimNonadaptive(Spec),
    /// Simultaneous search for several targets.
    SimMultitarget(Spec),
    /// Adaptive search with a posterior-score stopping rule.
    SimAdaptive(Spec),
    /// Achievability and converse bounds as JSON.
    Bounds(Spec),
    /// Distance between the exact sum law and its Gaussian approximation.
    BerryEsseen(Spec),
    /// Runs a JSON spec file; flags override its fields.
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    spec: PathBuf,
    #[command(flatten)]
    overrides: Spec,
}

fn command_and_flags(cmd: Cmd) -> Result<(Command, Spec), Failure> {
    Ok(match cmd {
        Cmd::CapacitySweep(s) => (Command::CapacitySweep, s),
        Cmd::RateCompare(s) => (Command::RateCompare, s),
        Cmd::Gain(s) => (Command::Gain, s),
        Cmd::PhaseTransition(s) => (Command::PhaseTransition, s),
        Cmd::SimNonadaptive(s) => (Command::SimNonadaptive, s),
        Cmd::SimMultitarget(s) => (Command::SimMultitarget, s),
        Cmd::SimAdaptive(s) => (Command::SimAdaptive, s),
        Cmd::Bounds(s) => (Command::Bounds, s),
        Cmd::BerryEsseen(s) => (Command::BerryEsseen, s),
        Cmd::Run(run) => {
            let text = std::fs::read_to_string(&run.spec)
                .map_err(|e| Failure::invalid(format!("{}: {e}", run.spec.display())))?;
            let (command, file) = spec::read_file(&text)?;
            (command, spec::merge(&file, &run.overrides)?)
        }
    })
}

/// `out.csv` becomes `out.spec.json`.
fn spec_path(output: &Path) -> PathBuf {
    output.with_extension("spec.json")
}

fn execute(cli: Cli) -> Result<ExitCode, Failure> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Failure::invalid("threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(|e| Failure::Io(e.to_string()))?;
    }
    let (command, flags) = command_and_flags(cli.command)?;
    let env_seed = std::env::var("QRES_SEED").ok();
    let resolved = spec::resolve(command, flags, env_seed.as_deref())?;
    let report = experiments::run(command, &resolved)?;
    let spec_json = spec::to_json(command, &resolved);
    match &resolved.output {
        Some(path) => {
            std::fs::write(path, &report.body)?;
            std::fs::write(spec_path(path), spec_json)?;
        }
        None => {
            std::io::stdout().write_all(&report.body)?;
            eprint!("{spec_json}");
        }
    }
    for (path, bytes) in &report.extras {
        std::fs::write(path, bytes)?;
    }
    if report.failed_checks.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{}", json!({ "check_failed": report.failed_checks }));
        Ok(ExitCode::from(1))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", Failure::invalid(e.to_string().trim()).to_json());
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(2)
        }
    }
}
