use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mvcov::config::{ExperimentConfig, WeightingName};
use mvcov::experiment::point_info;
use mvcov::{run_and_write, Overrides};

#[derive(Parser)]
#[command(name = "mvcov", version, about = "Covariance model validation, weighted BA benchmark and information experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment and write report.csv, config.resolved and summary.txt.
    Run {
        config: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Check and resolve a config without running it; prints the resolved config.
    Validate {
        config: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Print the information gain of one point of the configured problem.
    Info {
        #[arg(long)]
        point: usize,
        config: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
}

#[derive(Args)]
struct Flags {
    /// Top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum)]
    weighting: Option<WeightingName>,
}

impl Flags {
    fn load(&self, path: &PathBuf) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(path)?;
        Overrides { seed: self.seed, out: self.out.clone(), threads: self.threads, weighting: self.weighting }.apply(&mut config);
        Ok(config)
    }
}

/// Exit status 2 marks a run that completed but missed a tolerance.
fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, flags } => {
            let config = flags.load(&config)?;
            let report = run_and_write(&config)?;
            print!("{}", report.summary(config.experiment.kind.name()));
            println!("results in {}", config.experiment.output.display());
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Validate { config, flags } => {
            let config = flags.load(&config)?;
            print!("{}", config.to_toml());
            Ok(ExitCode::SUCCESS)
        }
        Command::Info { point, config, flags } => {
            let config = flags.load(&config)?;
            let info = point_info(&config, point)?;
            println!("mode: {}", info.mode.name());
            println!("point: {}", info.point);
            println!("weighting: {}", info.weighting);
            println!("views: {}", info.views);
            println!("host slant (deg): {:.2}", info.slant_deg);
            println!("information gain (nats): {:.6}", info.gain);
            println!("gain regularized: {}", info.regularized);
            println!("posterior entropy (bits): {:.3}", info.entropy_bits);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
