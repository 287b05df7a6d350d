use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::model::{Ablation, ModelConfig};
use crate::split::{Scenario, DEFAULT_TEST_FRACTION};

/// Whether the global-to-readout skip connection is used. `Auto` enables it
/// for the scenarios with unseen entities (S2–S4).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkipMode {
    Auto,
    On,
    Off,
}

impl FromStr for SkipMode {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(SkipMode::Auto),
            "on" | "true" => Ok(SkipMode::On),
            "off" | "false" => Ok(SkipMode::Off),
            _ => Err(PipelineError::Config(format!(
                "skip_connection must be auto, on or off, got {s:?}"
            ))),
        }
    }
}

/// Everything that shapes a training run besides the data and the scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub skip_connection: SkipMode,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping; 0 disables
    /// early stopping and the validation hold-out.
    pub patience: usize,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    /// Pruning bounds for kiba-like data; `None` picks the scenario default.
    pub topk_drug: Option<usize>,
    pub topk_target: Option<usize>,
    pub contact_threshold: f64,
    pub simk_drug: usize,
    pub simk_target: usize,
    /// Synthesize contact maps for targets without a map file.
    pub synthesize_contact_maps: bool,
    pub contact_density: f64,
    /// Strong/weak boundary for exported embeddings; `None` uses the dataset
    /// kind's default.
    pub strong_threshold: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            skip_connection: SkipMode::Auto,
            learning_rate: 5e-4,
            epochs: 2000,
            batch_size: 512,
            patience: 30,
            validation_fraction: 1.0 / 6.0,
            test_fraction: DEFAULT_TEST_FRACTION,
            topk_drug: None,
            topk_target: None,
            contact_threshold: 0.5,
            simk_drug: 2,
            simk_target: 7,
            synthesize_contact_maps: false,
            contact_density: 0.05,
            strong_threshold: None,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| PipelineError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(PipelineError::Config(format!(
            "{key}: expected a boolean, got {value:?}"
        ))),
    }
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl TrainConfig {
    /// Sets one `key = value` option.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "global_hidden" => m.global_hidden = parse(key, value)?,
            "global_dim" => m.global_dim = parse(key, value)?,
            "transform_hidden" => m.transform_hidden = parse(key, value)?,
            "drug_dim" => m.drug_dim = parse(key, value)?,
            "target_dim" => m.target_dim = parse(key, value)?,
            "local_layers" => m.local_layers = parse(key, value)?,
            "refine_layers" => m.refine_layers = parse(key, value)?,
            "drug_refined" => m.drug_refined = parse(key, value)?,
            "target_refined" => m.target_refined = parse(key, value)?,
            "readout_hidden" => m.readout_hidden = parse(key, value)?,
            "readout_dim" => m.readout_dim = parse(key, value)?,
            "predictor_hidden" => {
                m.predictor_hidden = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
            "use_global_graph" => m.use_global_graph = parse_bool(key, value)?,
            "use_local_graphs" => m.use_local_graphs = parse_bool(key, value)?,
            "weighted_affinities" => m.weighted_affinities = parse_bool(key, value)?,
            "use_message_broadcasting" => m.use_message_broadcasting = parse_bool(key, value)?,
            "skip_connection" => self.skip_connection = value.parse()?,
            "dropedge" => m.dropedge = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "validation_fraction" => self.validation_fraction = parse(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "topk_drug" => self.topk_drug = parse_opt(key, value)?,
            "topk_target" => self.topk_target = parse_opt(key, value)?,
            "contact_threshold" => self.contact_threshold = parse(key, value)?,
            "simk_drug" => self.simk_drug = parse(key, value)?,
            "simk_target" => self.simk_target = parse(key, value)?,
            "synthesize_contact_maps" => self.synthesize_contact_maps = parse_bool(key, value)?,
            "contact_density" => self.contact_density = parse(key, value)?,
            "strong_threshold" => self.strong_threshold = parse_opt(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(PipelineError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses line-oriented `key = value` text on top of the defaults. Blank
    /// lines and lines starting with `#` are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                PipelineError::Config(format!("line {}: expected key = value", i + 1))
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| {
                PipelineError::Config(format!(
                    "line {}: {}",
                    i + 1,
                    e.to_string().trim_start_matches("invalid configuration: ")
                ))
            })?;
        }
        Ok(cfg)
    }

    pub fn with_ablation(mut self, ablation: Option<Ablation>) -> Self {
        self.model = self.model.with_ablation(ablation);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(PipelineError::Config(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(PipelineError::Config(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        for (name, f) in [
            ("validation_fraction", self.validation_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(PipelineError::Config(format!("{name} must lie in (0, 1)")));
            }
        }
        if self.simk_drug == 0 || self.simk_target == 0 {
            return Err(PipelineError::Config(
                "simK values must be at least 1".into(),
            ));
        }
        if self.topk_drug == Some(0) || self.topk_target == Some(0) {
            return Err(PipelineError::Config(
                "topK values must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Model configuration with the skip connection resolved for `scenario`.
    pub fn model_for(&self, scenario: Scenario) -> ModelConfig {
        let mut m = self.model.clone();
        m.use_skip_connection = match self.skip_connection {
            SkipMode::On => true,
            SkipMode::Off => false,
            SkipMode::Auto => scenario != Scenario::S1,
        };
        m
    }

    /// `(topK_d, topK_t)` for kiba-like pruning.
    pub fn topk_for(&self, scenario: Scenario) -> (usize, usize) {
        let t_default = match scenario {
            Scenario::S1 | Scenario::S3 => 150,
            Scenario::S2 | Scenario::S4 => 90,
        };
        (
            self.topk_drug.unwrap_or(40),
            self.topk_target.unwrap_or(t_default),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_known_keys() {
        let cfg = TrainConfig::from_text("# comment\nepochs = 12\npredictor_hidden = 8, 4\nskip_connection=on\ntopk_target = auto\n").unwrap();
        assert_eq!(cfg.epochs, 12);
        assert_eq!(cfg.model.predictor_hidden, vec![8, 4]);
        assert_eq!(cfg.skip_connection, SkipMode::On);
        assert_eq!(cfg.topk_target, None);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = TrainConfig::from_text("epochs = 3\nlearnig_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("learnig_rate"), "{err}");
        assert!(TrainConfig::from_text("epochs 3\n").is_err());
        assert!(TrainConfig::from_text("epochs = many\n").is_err());
    }

    #[test]
    fn scenario_defaults() {
        let cfg = TrainConfig::default();
        assert!(!cfg.model_for(Scenario::S1).use_skip_connection);
        assert!(cfg.model_for(Scenario::S4).use_skip_connection);
        assert_eq!(cfg.topk_for(Scenario::S1), (40, 150));
        assert_eq!(cfg.topk_for(Scenario::S2), (40, 90));
    }
}
