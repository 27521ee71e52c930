use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use agora_cli::commands::{self, Format, GridAxis, RunManifest};
use agora_cli::{acceptance, scenario};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "agora", version, about = "Uncertainty-market simulator for multi-agent task routing")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated seeds or ranges, e.g. `1,2,3` or `1-10`. Defaults to the scenario seed.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario for each seed and write reports.
    Run(RunArgs),
    /// Check a scenario without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run a parameter grid for each seed and write sweep.csv.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// `name=v1,v2,...`; repeatable. Names: pool_size, tau_trade, tau_benefit, gamma, lambda, eta, omega.
        #[arg(long)]
        grid: Vec<String>,
    },
    /// Run the acceptance suite and print a pass/fail table.
    Acceptance,
}

fn manifest(args: RunArgs) -> anyhow::Result<RunManifest> {
    let seeds = match args.seeds {
        Some(s) => commands::parse_seeds(&s).map_err(|e| anyhow::anyhow!("--seeds: {e}"))?,
        None => vec![scenario::load(&args.scenario)?.seed],
    };
    Ok(RunManifest { scenario: args.scenario, out: args.out, seeds, format: args.format })
}

fn report_files(files: &[PathBuf]) {
    let mut out = std::io::stdout().lock();
    for f in files {
        // A closed pipe (e.g. `| head`) is not an error for a listing.
        if writeln!(out, "{}", f.display()).is_err() {
            break;
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Cmd::Run(args) => {
            report_files(&commands::run(&manifest(args)?)?);
            Ok(true)
        }
        Cmd::Validate { scenario: path } => {
            let problems = scenario::validate(&path)?;
            if problems.is_empty() {
                println!("{}: ok", path.display());
                return Ok(true);
            }
            for v in &problems {
                println!("{v}");
            }
            eprintln!("{}: {} problem(s)", path.display(), problems.len());
            Ok(false)
        }
        Cmd::Sweep { run, grid } => {
            let axes = grid.iter().map(|g| commands::parse_axis(g)).collect::<Result<Vec<GridAxis>, _>>()?;
            report_files(&commands::sweep(&manifest(run)?, &axes)?);
            Ok(true)
        }
        Cmd::Acceptance => {
            let binary = std::env::current_exe()?;
            let results = acceptance::run_all(&binary);
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} passed, {failed} failed", results.len() - failed);
            Ok(failed == 0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AGORA_LOG_LEVEL", "warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
