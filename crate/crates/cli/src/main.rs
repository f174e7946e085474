use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crt_glmm::model::Family;
use crt_glmm_cli::commands::{fit_dataset, format_fit, load_dataset, report, simulate, FitOptions, SimulateOptions};
use crt_glmm_cli::config::Overrides;
use crt_glmm_cli::CliError;

#[derive(Parser)]
#[command(name = "crtsim", version, about = "Small-sample tests for cluster-randomized trials with random-intercept GLMMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario grid and write results.csv and manifest.toml.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<String>,
        /// Significance level for the rejection counts.
        #[arg(long)]
        alpha: Option<f64>,
        /// Also write replications.csv with one row per replication and test.
        #[arg(long)]
        log_replications: bool,
        /// Also write every simulated dataset under datasets/.
        #[arg(long)]
        dump_datasets: bool,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Fit one dataset and test its treatment coefficient.
    Fit {
        /// CSV with columns cluster,treatment,y and covariates.
        #[arg(long)]
        data: PathBuf,
        /// binomial, poisson or gaussian.
        #[arg(long)]
        family: String,
        #[arg(long, value_delimiter = ',')]
        covariates: Vec<String>,
        #[arg(long)]
        no_intercept: bool,
        /// Print JSON instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Render SVG figures and a summary from a results CSV.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, seed, reps, threads, out, alpha, log_replications, dump_datasets, quiet } => {
            let opts = SimulateOptions {
                overrides: Overrides { seed, reps, threads, out, alpha },
                log_replications,
                dump_datasets,
                quiet,
            };
            let res = simulate(&config, &opts)?;
            println!("wrote {} and {}", res.results.display(), res.manifest.display());
        }
        Command::Fit { data, family, covariates, no_intercept, json } => {
            let family: Family = family.parse().map_err(|e| CliError::input(format!("--family: {e}")))?;
            let dataset = load_dataset(&data)?;
            let covariates = covariates.into_iter().filter(|c| !c.is_empty()).collect();
            let rep = fit_dataset(&dataset, &FitOptions { family, covariates, no_intercept })?;
            if json {
                println!("{}", serde_json::to_string_pretty(&rep).map_err(CliError::runtime)?);
            } else {
                print!("{}", format_fit(&rep));
            }
        }
        Command::Report { results, out } => {
            let (files, summary) = report(&results, &out)?;
            print!("{summary}");
            println!("wrote {} files to {}", files.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
