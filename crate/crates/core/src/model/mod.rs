//! The affinity network: a global GCN over the drug-target
//! affinity graph, local self-loop GCNs over each molecular graph, message
//! broadcasting between the two levels, readout and an MLP predictor.

mod layers;
mod network;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::TensorError;

pub use layers::{global_encode, local_gcn_layer, message_broadcast, mlp, readout_pool, Dense};
pub use network::{
    xavier_uniform, ForwardOutput, GlobalInputs, GraphSource, InputDims, Network, PreparedGraph,
    Routing, RowSource, StaticGraphs,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("drug index {0} out of range")]
    DrugOutOfRange(usize),
    #[error("target index {0} out of range")]
    TargetOutOfRange(usize),
    #[error("{0}")]
    Graph(String),
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("empty batch")]
    EmptyBatch,
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Architecture and ablation switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden width of the first global GCN layer.
    pub global_hidden: usize,
    /// Width of the global embedding matrix H.
    pub global_dim: usize,
    /// Hidden width of the drug/target transform MLPs.
    pub transform_hidden: usize,
    /// Local hidden width of drug atoms; also the width of the transformed
    /// global drug embedding so that broadcasting is well typed.
    pub drug_dim: usize,
    pub target_dim: usize,
    /// Local GCN layers before broadcasting.
    pub local_layers: usize,
    /// Local GCN layers after broadcasting.
    pub refine_layers: usize,
    pub drug_refined: usize,
    pub target_refined: usize,
    pub readout_hidden: usize,
    pub readout_dim: usize,
    pub predictor_hidden: Vec<usize>,
    pub use_global_graph: bool,
    pub use_local_graphs: bool,
    pub weighted_affinities: bool,
    pub use_message_broadcasting: bool,
    /// Concatenate the global embedding with the pooled local state before
    /// the readout MLP. Only meaningful when broadcasting is active.
    pub use_skip_connection: bool,
    pub dropedge: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            global_hidden: 128,
            global_dim: 128,
            transform_hidden: 128,
            drug_dim: 64,
            target_dim: 64,
            local_layers: 3,
            refine_layers: 2,
            drug_refined: 128,
            target_refined: 128,
            readout_hidden: 256,
            readout_dim: 128,
            predictor_hidden: vec![512, 256],
            use_global_graph: true,
            use_local_graphs: true,
            weighted_affinities: true,
            use_message_broadcasting: true,
            use_skip_connection: false,
            dropedge: 0.2,
        }
    }
}

/// The four single-component ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    /// No global affinity graph.
    Gag,
    /// No local molecular graphs.
    Lmg,
    /// Unweighted affinity graph.
    Wa,
    /// No message broadcasting.
    Mb,
}

impl std::str::FromStr for Ablation {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gag" => Ok(Ablation::Gag),
            "lmg" => Ok(Ablation::Lmg),
            "wa" => Ok(Ablation::Wa),
            "mb" => Ok(Ablation::Mb),
            other => Err(ModelError::Config(format!(
                "unknown ablation {other:?} (expected gag, lmg, wa or mb)"
            ))),
        }
    }
}

impl ModelConfig {
    pub fn with_ablation(mut self, ablation: Option<Ablation>) -> Self {
        match ablation {
            None => {}
            Some(Ablation::Gag) => self.use_global_graph = false,
            Some(Ablation::Lmg) => self.use_local_graphs = false,
            Some(Ablation::Wa) => self.weighted_affinities = false,
            Some(Ablation::Mb) => self.use_message_broadcasting = false,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("global_hidden", self.global_hidden),
            ("global_dim", self.global_dim),
            ("transform_hidden", self.transform_hidden),
            ("drug_dim", self.drug_dim),
            ("target_dim", self.target_dim),
            ("drug_refined", self.drug_refined),
            ("target_refined", self.target_refined),
            ("readout_hidden", self.readout_hidden),
            ("readout_dim", self.readout_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if self.predictor_hidden.contains(&0) {
            return Err(ModelError::Config(
                "predictor hidden widths must be at least 1".into(),
            ));
        }
        if self.local_layers + self.refine_layers == 0 {
            return Err(ModelError::Config(
                "local stacks need at least one layer".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.dropedge) {
            return Err(ModelError::Config(format!(
                "dropedge rate {} outside [0, 1]",
                self.dropedge
            )));
        }
        if !self.use_global_graph && !self.use_local_graphs {
            return Err(ModelError::Config(
                "at least one of the global graph and the local graphs must be enabled".into(),
            ));
        }
        Ok(())
    }

    /// Whether global embeddings are broadcast into the local graphs.
    pub fn broadcasting(&self) -> bool {
        self.use_global_graph && self.use_local_graphs && self.use_message_broadcasting
    }

    /// Whether the skip connection is wired in (it needs broadcasting).
    pub fn skip_active(&self) -> bool {
        self.use_skip_connection && self.broadcasting()
    }

    /// Global and local outputs are merged after readout instead of by
    /// broadcasting.
    pub fn late_merge(&self) -> bool {
        self.use_global_graph && self.use_local_graphs && !self.use_message_broadcasting
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablations_toggle_one_flag() {
        let base = ModelConfig::default();
        assert!(
            !base
                .clone()
                .with_ablation(Some(Ablation::Gag))
                .use_global_graph
        );
        assert!(
            !base
                .clone()
                .with_ablation(Some(Ablation::Lmg))
                .use_local_graphs
        );
        assert!(
            !base
                .clone()
                .with_ablation(Some(Ablation::Wa))
                .weighted_affinities
        );
        let mb = base.clone().with_ablation(Some(Ablation::Mb));
        assert!(mb.late_merge() && !mb.broadcasting());
        assert_eq!("LMG".parse::<Ablation>().unwrap(), Ablation::Lmg);
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let c = ModelConfig {
            use_global_graph: false,
            use_local_graphs: false,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            dropedge: 1.5,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            drug_dim: 0,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
