use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use carpool::cli::{self, RunOptions};
use carpool::config::Config;
use carpool::sim::Scenario;

#[derive(Debug, Parser)]
#[command(
    name = "carpool",
    version,
    about = "Personalised carpooling recommender simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate users, trips and commuter queries as CSV files.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured sweep on generated data.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding trips.csv, users.csv and queries.csv.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long, value_parser = parse_scenario)]
        scenario: Option<Scenario>,
        #[arg(long, value_delimiter = ',')]
        epsilon: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        threshold: Option<Vec<f64>>,
        #[arg(long)]
        verbose_outcomes: bool,
    },
    /// Summarise metrics files into plot-ready series.
    Report {
        metrics: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|e: carpool::Error| e.to_string())
}

fn load_config(path: Option<&PathBuf>) -> carpool::Result<Config> {
    path.map_or_else(|| Ok(Config::default()), |p| Config::load(p))
}

fn execute(cmd: Command) -> carpool::Result<()> {
    match cmd {
        Command::Generate { config, out } => {
            let cfg = load_config(config.as_ref())?;
            let s = cli::generate(&cfg, &out)?;
            println!(
                "generated {} users, {} trips, {} queries in {}",
                s.n_users,
                s.n_trips,
                s.n_queries,
                out.display()
            );
        }
        Command::Run {
            config,
            data,
            out,
            seeds,
            scenario,
            epsilon,
            threshold,
            verbose_outcomes,
        } => {
            let cfg = load_config(config.as_ref())?;
            let opts = RunOptions {
                n_seeds: seeds,
                scenario,
                epsilons: epsilon,
                thresholds: threshold,
                verbose_outcomes,
            };
            let files = cli::run(&cfg, &data, &out, &opts)?;
            println!("wrote {} metrics files to {}", files.len(), out.display());
        }
        Command::Report { metrics, out } => {
            let r = cli::report(&metrics, out.as_deref())?;
            print!("{}", r.summary);
            println!("wrote {} series files", r.files.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
