use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gossipkf::scheduler::Method;
use gossipkf::sim::Strategy;
use gossipkf_cli::commands::{self, Overrides};
use gossipkf_cli::{CliError, KSpec};

#[derive(Parser)]
#[command(
    name = "gossipkf",
    version,
    about = "Distributed Kalman filtering with randomized gossip"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Base seed; run r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Gossip rounds per step, or "auto".
    #[arg(long)]
    k: Option<KSpec>,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            runs: self.runs,
            k: self.k,
            strategy: self.strategy,
        }
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    Strategy::parse(s).map_err(|e| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario and report warnings.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Monte-Carlo campaign; writes metrics.csv.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Steady-state metrics over a range of K; writes sweep.csv.
    SweepK {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated round counts (default 1,6,...,41).
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
    },
    /// Expected covariance recursion and its fixed point; writes analysis.csv.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Power-constrained sensor selection; writes schedule.csv.
    Schedule {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "exact", value_parser = parse_method)]
        method: Method,
        /// File with a [budget] section; defaults to the scenario's own.
        #[arg(long)]
        budget: Option<PathBuf>,
    },
    /// Print the scenario in canonical form.
    Echo {
        #[command(flatten)]
        common: Common,
    },
}

fn dispatch(cli: Cli) -> Result<Vec<String>, CliError> {
    match cli.command {
        Command::Validate { config } => commands::validate(&config),
        Command::Run { common, out } => commands::run(&common.config, &out, &common.overrides()),
        Command::SweepK { common, out, ks } => {
            commands::sweep_k(&common.config, &out, &common.overrides(), ks)
        }
        Command::Analyze { common, out } => {
            commands::analyze(&common.config, &out, &common.overrides())
        }
        Command::Schedule {
            common,
            out,
            method,
            budget,
        } => commands::schedule(&common.config, &out, &common.overrides(), method, budget),
        Command::Echo { common } => {
            commands::echo(&common.config, &common.overrides()).map(|t| vec![t])
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(lines) => {
            for l in lines {
                println!("{}", l.trim_end());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
