use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fpmv_cli::{load_scenario, run, CliError, Command, RunOptions};

#[derive(Parser)]
#[command(name = "fpmv", version, about = "Nonlinear Fokker–Planck solver and McKean–Vlasov particle checks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Leave the timestamp out of manifest.txt so outputs compare byte for byte.
    #[arg(long, global = true)]
    no_timestamp: bool,
    /// Replace every seed in the scenario.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Output directory (default: output.dir of the scenario).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample the structural hypotheses on the computational box.
    Check { scenario: PathBuf },
    /// One resolvent solve of the initial density at resolvent.lambda.
    Resolve { scenario: PathBuf },
    /// Randomized contraction / positivity / mass suite.
    Suite { scenario: PathBuf },
    /// Implicit Euler evolution; writes trace/ and weak.csv.
    Evolve { scenario: PathBuf },
    /// Self-convergence of the exponential formula over expcheck.n_list.
    Expcheck { scenario: PathBuf },
    /// Vanishing-viscosity study for degenerate coefficients.
    Viscosity { scenario: PathBuf },
    /// Particle simulation with coefficients frozen through the trace.
    Simulate { scenario: PathBuf },
    /// Particle marginals against the density at every trace time.
    Compare { scenario: PathBuf },
    /// Box-size study: rerun on boxes 2, 4, … times wider.
    Convergence {
        scenario: PathBuf,
        #[arg(long = "double-L", default_value_t = 3)]
        double_l: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FPMV_LOG", "warn")).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not configure the thread pool: {e}");
        }
    }
    let (command, path) = match cli.command {
        Cmd::Check { scenario } => (Command::Check, scenario),
        Cmd::Resolve { scenario } => (Command::Resolve, scenario),
        Cmd::Suite { scenario } => (Command::Suite, scenario),
        Cmd::Evolve { scenario } => (Command::Evolve, scenario),
        Cmd::Expcheck { scenario } => (Command::Expcheck, scenario),
        Cmd::Viscosity { scenario } => (Command::Viscosity, scenario),
        Cmd::Simulate { scenario } => (Command::Simulate, scenario),
        Cmd::Compare { scenario } => (Command::Compare, scenario),
        Cmd::Convergence { scenario, double_l } => (Command::Convergence { double_l }, scenario),
    };
    let opts = RunOptions { out: cli.out, no_timestamp: cli.no_timestamp, seed_override: cli.seed_override };
    let result = load_scenario(&path).map_err(CliError::from).and_then(|s| run(command, &s, &opts));
    match result {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("fpmv {}: {e}", command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
