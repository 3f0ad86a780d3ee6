//! Metrics, scenario evaluation, experiment drivers, reports and the
//! command line.

pub mod cli;
mod experiment;
pub mod metrics;
mod pipeline;
mod report;

use thiserror::Error;

pub use experiment::{
    prepare, rag_fraction_experiment, run_scenario, sample_fraction, Artifacts, BackendSpec,
    ExperimentConfig,
};
pub use metrics::{ClassStats, ConfusionMatrix, MetricError, Metrics};
pub use pipeline::{Pipeline, Prediction, Scored};
pub use report::{format_table, EvalReport, StoreDelta};

use crate::corpus::{CorpusError, Split};
use crate::embed::EmbedError;
use crate::glm::GlmError;
use crate::promptkit::PromptError;
use crate::vstore::StoreError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("corpus has no {0} split")]
    MissingSplit(Split),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
