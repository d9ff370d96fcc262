//! Config-driven experiment orchestration and persistence.
//!
//! Output directory layout:
//!
//! ```text
//! records.jsonl                  one RunRecord per prompt instance, key order
//! responses.jsonl                response store (cache key order)
//! analysis/<id>.{distribution,fractions,kld}.csv
//! probe.csv, probe/<id>.predictions.csv
//! mitigation.csv
//! report.txt
//! ```

mod analyze;
mod config;
mod pipeline;
mod records;
mod report;

pub use analyze::{
    analysis_paths, analyze, cmd_analyze, cmd_mitigate, cmd_probe, fmt_num, mitigation_for, probe_question,
    AnalysisResult, GroupTable, MitigationReport, ProbeRow,
};
pub use config::{
    Analysis, ExperimentConfig, FairnessQuestion, MitigationCase, PersonaSampling, ProviderSettings, Scope,
    SyntheticSettings,
};
pub use pipeline::{plan_personas, plan_prompts, repetition_seed, Pipeline, PlannedPrompt, RunSummary};
pub use records::{record_key, FailureStage, RecordStatus, RecordStore, RunRecord};
pub use report::{cmd_report, render_table};

use std::path::Path;

use thiserror::Error;

use crate::metrics::MetricError;
use crate::probe::ProbeError;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt artifact: {0}")]
    Corrupt(String),
    #[error("`{owner}`: group `{label}` ({selector}) matches no records")]
    EmptyGroup {
        owner: String,
        label: String,
        selector: String,
    },
    #[error("question `{question}`: {source}")]
    Probe { question: String, source: ProbeError },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{failed} of {planned} records failed after provider retries were exhausted")]
    ProviderExhausted { failed: usize, planned: usize },
    #[error("{failed} of {planned} records failed (threshold {threshold})")]
    FailureThreshold {
        failed: usize,
        planned: usize,
        threshold: f64,
    },
}

impl RunnerError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        RunnerError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) => 2,
            RunnerError::ProviderExhausted { .. } => 3,
            RunnerError::FailureThreshold { .. } => 4,
            _ => 1,
        }
    }
}
