use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evdistill_cli::commands::{self, Context, Outcome};
use evdistill_cli::config::Config;
use evdistill_cli::error::{CliError, CliResult};
use log::error;

/// Distil a weighted ensemble teacher into single-pass softmax and
/// evidential students.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// TOML or JSON experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run root; every stage writes into a subdirectory.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    /// Rerun stages whose manifest is current.
    #[arg(long, global = true)]
    force: bool,
    /// Validate the config and report what would run.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate or split the data and write the OOD sets.
    MakeData,
    /// Train the members, fit weights and cache teacher predictions.
    FitTeacher,
    /// Train the configured students against the cached teacher.
    Distill,
    /// Accuracy, ECE, NLL and Brier on the test split.
    Eval,
    /// Uncertainty scores, distribution distances and AUROC on the OOD sets.
    Ood,
    /// Forward-pass counts and inference timing.
    Bench,
    /// Evidential metrics with fixed total evidence.
    AlphaSweep,
    /// All stages in order.
    Run,
    /// Print the effective config as TOML.
    ShowConfig,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("--threads: {e}")))?;
    }
    if let Command::ShowConfig = cli.command {
        let text = toml::to_string_pretty(&cfg).map_err(|e| CliError::config(e.to_string()))?;
        print!("{text}");
        return Ok(());
    }
    let ctx = Context {
        root: cli.out,
        cfg,
        force: cli.force,
        dry_run: cli.dry_run,
    };
    let outcomes = match cli.command {
        Command::MakeData => vec![("make-data", commands::make_data(&ctx)?)],
        Command::FitTeacher => vec![("fit-teacher", commands::fit_teacher(&ctx)?)],
        Command::Distill => vec![("distill", commands::distill(&ctx)?)],
        Command::Eval => vec![("eval", commands::eval(&ctx)?)],
        Command::Ood => vec![("ood", commands::ood(&ctx)?)],
        Command::Bench => vec![("bench", commands::bench(&ctx)?)],
        Command::AlphaSweep => vec![("alpha-sweep", commands::alpha_sweep(&ctx)?)],
        Command::Run => commands::run_all(&ctx)?,
        Command::ShowConfig => unreachable!(),
    };
    for (name, o) in outcomes {
        let what = match o {
            Outcome::Ran => "done",
            Outcome::UpToDate => "up to date",
            Outcome::DryRun => "ok (dry run)",
        };
        println!("{name}: {what}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EVDISTILL_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
