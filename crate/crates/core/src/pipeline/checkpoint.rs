use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    io_err, DatasetBundle, DatasetKind, EpochLog, PipelineError, Result, Session, TrainConfig,
    TrainingResult,
};
use crate::graph::MinMax;
use crate::model::InputDims;
use crate::split::Scenario;
use crate::tensor::{AdamState, ParamStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Everything needed to rebuild a trained session or continue training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub scenario: Scenario,
    pub kind: DatasetKind,
    pub dims: InputDims,
    pub params: Vec<NamedTensor>,
    pub adam: AdamState,
    pub epoch: usize,
    pub split_digest: String,
    pub minmax: Option<MinMax>,
    /// Entries of the global affinity graph, by id.
    pub graph_pairs: Vec<(String, String)>,
    pub drug_ids: Vec<String>,
    pub target_ids: Vec<String>,
    pub final_train_mse: f64,
    pub history: Vec<EpochLog>,
}

impl Checkpoint {
    pub fn from_result(result: &TrainingResult) -> Self {
        let s = &result.session;
        let b = &s.bundle;
        Self {
            version: CHECKPOINT_VERSION,
            config: s.config.clone(),
            scenario: s.scenario,
            kind: b.kind,
            dims: *s.network.dims(),
            params: s
                .params
                .iter()
                .map(|(_, name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
            adam: result.adam.clone(),
            epoch: result.epoch,
            split_digest: result.preparation.split_digest.clone(),
            minmax: s.minmax(),
            graph_pairs: s
                .graph()
                .visible()
                .map(|(d, t, _)| (b.drug_ids[d].clone(), b.target_ids[t].clone()))
                .collect(),
            drug_ids: b.drug_ids.clone(),
            target_ids: b.target_ids.clone(),
            final_train_mse: result.final_train_mse,
            history: result.history.clone(),
        }
    }

    pub fn param_store(&self) -> ParamStore {
        let mut store = ParamStore::new();
        for p in &self.params {
            let t = Tensor::new(p.shape.clone(), p.data.clone()).expect("checked when loaded");
            store.add(p.name.clone(), t);
        }
        store
    }

    fn check_dataset(&self, bundle: &DatasetBundle) -> Result<()> {
        if self.kind != bundle.kind {
            return Err(PipelineError::Checkpoint(format!(
                "trained on {:?} data, dataset is {:?}",
                self.kind, bundle.kind
            )));
        }
        if self.drug_ids != bundle.drug_ids || self.target_ids != bundle.target_ids {
            return Err(PipelineError::Checkpoint(
                "drug or target ids differ from the dataset".into(),
            ));
        }
        Ok(())
    }

    /// Errors unless training can continue from this checkpoint with
    /// `config` (only the epoch budget may differ).
    pub fn check_compatible(
        &self,
        bundle: &DatasetBundle,
        config: &TrainConfig,
        scenario: Scenario,
        split_digest: &str,
    ) -> Result<()> {
        self.check_dataset(bundle)?;
        let mut mine = self.config.clone();
        mine.epochs = config.epochs;
        if &mine != config || self.scenario != scenario {
            return Err(PipelineError::Checkpoint(
                "configuration differs from the checkpoint".into(),
            ));
        }
        if self.split_digest != split_digest {
            return Err(PipelineError::Checkpoint(
                "split differs from the one the checkpoint was trained on".into(),
            ));
        }
        if self.epoch >= config.epochs {
            return Err(PipelineError::Checkpoint(format!(
                "checkpoint already ran {} of {} epochs",
                self.epoch, config.epochs
            )));
        }
        Ok(())
    }

    /// Rebuilds the trained session over `bundle`.
    pub fn session(&self, bundle: Arc<DatasetBundle>) -> Result<Session> {
        self.check_dataset(&bundle)?;
        let drugs: HashMap<&str, usize> = self
            .drug_ids
            .iter()
            .enumerate()
            .map(|(i, d)| (d.as_str(), i))
            .collect();
        let targets: HashMap<&str, usize> = self
            .target_ids
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        let mut pairs = BTreeSet::new();
        for (d, t) in &self.graph_pairs {
            match (drugs.get(d.as_str()), targets.get(t.as_str())) {
                (Some(&d), Some(&t)) => pairs.insert((d, t)),
                _ => {
                    return Err(PipelineError::Checkpoint(format!(
                        "graph pair ({d}, {t}) names an unknown id"
                    )))
                }
            };
        }
        Session::new(
            bundle,
            self.config.clone(),
            self.scenario,
            self.param_store(),
            &pairs,
            self.minmax,
        )
    }

    fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(PipelineError::Checkpoint(format!(
                "version {} is not supported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        for p in &self.params {
            if p.shape.iter().product::<usize>() != p.data.len() {
                return Err(PipelineError::Checkpoint(format!(
                    "parameter {} has shape {:?} but {} values",
                    p.name,
                    p.shape,
                    p.data.len()
                )));
            }
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let text = serde_json::to_string(checkpoint)
        .map_err(|e| PipelineError::Checkpoint(format!("cannot serialize: {e}")))?;
    fs::write(path, text).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| PipelineError::Checkpoint(format!("{}: {e}", path.display())))?;
    if let Some(v) = value.get("version").and_then(|v| v.as_u64()) {
        if v != u64::from(CHECKPOINT_VERSION) {
            return Err(PipelineError::Checkpoint(format!(
                "version {v} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
    }
    let ckpt: Checkpoint = serde_json::from_value(value)
        .map_err(|e| PipelineError::Checkpoint(format!("{}: {e}", path.display())))?;
    ckpt.validate()?;
    Ok(ckpt)
}
