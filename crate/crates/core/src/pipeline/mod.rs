//! Dataset ingestion, training, evaluation, persistence and export.

mod checkpoint;
mod config;
mod dataset;
mod evaluate;
mod gradcheck;
mod session;
mod synthetic;
mod train;

use std::path::PathBuf;

use thiserror::Error;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, NamedTensor, CHECKPOINT_VERSION,
};
pub use config::{SkipMode, TrainConfig};
pub use dataset::{load_dataset, DatasetBundle, DatasetKind};
pub use evaluate::{
    cluster_scores, embeddings_tsv, evaluate, export_embeddings, infer_pair, metrics_tsv,
    predict_pairs, session_mse, ClusterScores, EmbeddingRow, Evaluation,
};
pub use gradcheck::gradient_check;
pub use session::{input_dims, GraphCache, Session};
pub use synthetic::{write_planted_dataset, PlantedSpec};
pub use train::{prepare, train, EpochLog, Preparation, TrainingPlan, TrainingResult};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: unknown {kind} id {id:?}")]
    UnknownId {
        path: String,
        line: usize,
        kind: &'static str,
        id: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("no similarity data for unseen {kind} {id:?}")]
    MissingSimilarity { kind: &'static str, id: String },
    #[error(transparent)]
    Protein(#[from] crate::protein::ProteinError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Split(#[from] crate::split::SplitError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error(transparent)]
    ColdStart(#[from] crate::cold_start::ColdStartError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}
