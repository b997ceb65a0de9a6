use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use superproc::harness::{run_experiment, Config, Experiment, RunResult, ScenarioConfig, ScenarioName, TableFormat};

#[derive(Parser)]
#[command(name = "superproc", version, about = "Branching particle systems, their superprocess limits and log-Laplace solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory of the rescaled particle system.
    Simulate(RunArgs),
    /// Solve the log-Laplace equation on the configured grid.
    Solve(RunArgs),
    /// Compare particle Laplace functionals with the solvers over a β schedule.
    Convergence(RunArgs),
    /// Compare the replica mean with the first-moment solver.
    Moments(RunArgs),
    /// Mean mass of the hyperbolic system against the killed-motion survival.
    Extinction(RunArgs),
    /// Small-window admissibility diagnostic of the clock.
    Admissibility(RunArgs),
    /// Mass-exceedance and squared-increment diagnostics across β.
    Tightness(RunArgs),
    /// Shipped scenarios.
    Scenarios {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Subcommand)]
enum ScenarioAction {
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    /// Table format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn run(exp: Experiment, args: &RunArgs) -> superproc::Result<RunResult> {
    let mut cfg = Config::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    let res = run_experiment(exp, &cfg, args.workers)?;
    let format = match args.format {
        Format::Csv => TableFormat::Csv,
        Format::Json => TableFormat::Json,
    };
    res.write(&args.out, format)?;
    Ok(res)
}

fn report(res: &RunResult) {
    for c in &res.checks {
        let status = if c.passed { "pass" } else { "FAIL" };
        let z = c.z.map(|z| format!(" z={z:.2}")).unwrap_or_default();
        let info = if c.informational { " (informational)" } else { "" };
        println!("{status} {}: {:.6} vs {:.6}{z}{info}", c.name, c.estimate, c.reference);
    }
    for n in &res.notes {
        println!("  {n}");
    }
    println!("{} {}: {:?}", res.experiment, res.scenario, res.outcome);
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (exp, args) = match &cli.command {
        Command::Scenarios { action: ScenarioAction::List } => {
            for name in ScenarioName::ALL {
                let sc = ScenarioConfig::named(name).resolve().expect("shipped scenario");
                println!("{:<16} {}", name.as_str(), sc.notes);
            }
            return ExitCode::SUCCESS;
        }
        Command::Simulate(a) => (Experiment::Simulate, a),
        Command::Solve(a) => (Experiment::Solve, a),
        Command::Convergence(a) => (Experiment::Convergence, a),
        Command::Moments(a) => (Experiment::Moments, a),
        Command::Extinction(a) => (Experiment::Extinction, a),
        Command::Admissibility(a) => (Experiment::Admissibility, a),
        Command::Tightness(a) => (Experiment::Tightness, a),
    };
    match run(exp, args) {
        Ok(res) => {
            report(&res);
            if res.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
