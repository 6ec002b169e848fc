//! Experiment orchestration for the covariance models: configuration,
//! RGB-D ingestion, the validation and benchmark experiments, and reports.

pub mod config;
pub mod experiment;
pub mod report;
pub mod tum;

use std::path::PathBuf;

use anyhow::{Context, Result};

use crate::config::{ExperimentConfig, WeightingName};
use crate::report::{write_artifacts, Report};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub weighting: Option<WeightingName>,
}

impl Overrides {
    pub fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            config.experiment.seed = s;
        }
        if let Some(o) = &self.out {
            config.experiment.output = o.clone();
        }
        if let Some(t) = self.threads {
            config.experiment.threads = t;
        }
        if let Some(w) = self.weighting {
            config.estimator.weighting = w;
        }
    }
}

/// Runs the experiment and, only once it has finished, writes
/// `report.csv`, `config.resolved` and `summary.txt` to the output
/// directory.
pub fn run_and_write(config: &ExperimentConfig) -> Result<Report> {
    let report = experiment::run_experiment(config)?;
    let dir = &config.experiment.output;
    let title = format!("{} (seed {}, {} seed(s))", config.experiment.kind, config.experiment.seed, config.experiment.seeds);
    write_artifacts(
        dir,
        &[("report.csv", report.to_csv()), ("config.resolved", config.to_toml()), ("summary.txt", report.summary(&title))],
    )
    .with_context(|| format!("writing results to {}", dir.display()))?;
    Ok(report)
}
