use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::session::input_dims;
use super::{Checkpoint, DatasetBundle, DatasetKind, PipelineError, Result, Session, TrainConfig};
use crate::graph::topk_prune;
use crate::metrics::mse;
use crate::model::Network;
use crate::split::{split, test_count, Pair, Scenario, ScenarioSplit};
use crate::tensor::{Adam, AdamConfig, AdamState, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-pair training loss over the epoch's batches.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// How the labelled pairs of one run are used.
#[derive(Clone, Debug, PartialEq)]
pub struct Preparation {
    pub split: ScenarioSplit,
    pub split_digest: String,
    /// Held out of both the loss and the graph, for early stopping.
    pub validation: BTreeSet<Pair>,
    /// Pairs the loss is computed on.
    pub fit: BTreeSet<Pair>,
    /// Pairs forming the global affinity graph.
    pub graph_pairs: BTreeSet<Pair>,
}

fn mix(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt
}

/// Splits the data for `scenario` and derives the validation, fit and graph
/// pair sets.
pub fn prepare(
    bundle: &DatasetBundle,
    config: &TrainConfig,
    scenario: Scenario,
) -> Result<Preparation> {
    config.validate()?;
    let split = split(
        &bundle.affinity,
        scenario,
        config.test_fraction,
        config.seed,
    )?;
    let mut train: Vec<Pair> = split.train.iter().copied().collect();
    let validation: BTreeSet<Pair> = if config.patience > 0 && train.len() >= 2 {
        train.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(config.seed, 0x76616c)));
        train[..test_count(train.len(), config.validation_fraction)]
            .iter()
            .copied()
            .collect()
    } else {
        BTreeSet::new()
    };
    let fit: BTreeSet<Pair> = split.train.difference(&validation).copied().collect();
    let graph_pairs = if bundle.kind == DatasetKind::KibaLike {
        let (kd, kt) = config.topk_for(scenario);
        topk_prune(&bundle.affinity.restricted_to(&fit), kd, kt)?
            .visible()
            .map(|(d, t, _)| (d, t))
            .collect()
    } else {
        fit.clone()
    };
    Ok(Preparation {
        split_digest: split.digest(&bundle.drug_ids, &bundle.target_ids),
        split,
        validation,
        fit,
        graph_pairs,
    })
}

/// One training run: configuration, scenario and an optional checkpoint to
/// continue from.
#[derive(Clone, Debug)]
pub struct TrainingPlan {
    pub config: TrainConfig,
    pub scenario: Scenario,
    pub resume: Option<Checkpoint>,
}

pub struct TrainingResult {
    pub session: Session,
    pub preparation: Preparation,
    pub history: Vec<EpochLog>,
    pub adam: AdamState,
    /// Last epoch that ran.
    pub epoch: usize,
    /// Epoch whose parameters were kept (differs from `epoch` with early stopping).
    pub best_epoch: usize,
    /// Evaluation-mode MSE over the fit pairs with the kept parameters.
    pub final_train_mse: f64,
}

fn truths(bundle: &DatasetBundle, pairs: &[Pair]) -> Vec<f64> {
    pairs
        .iter()
        .map(|&(d, t)| {
            bundle
                .affinity
                .get(d, t)
                .expect("pairs come from the affinity matrix")
        })
        .collect()
}

/// Evaluation-mode MSE of `session` on `pairs`.
pub(crate) fn pairs_mse(session: &Session, pairs: &[Pair]) -> Result<f64> {
    let (preds, _) = session.run(pairs)?;
    Ok(mse(&truths(&session.bundle, pairs), &preds)?)
}

/// Trains for `plan.config.epochs` epochs (minus those already done by a
/// resumed checkpoint), calling `on_epoch` after each.
pub fn train(
    bundle: Arc<DatasetBundle>,
    plan: TrainingPlan,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainingResult> {
    let TrainingPlan {
        config,
        scenario,
        resume,
    } = plan;
    let prep = prepare(&bundle, &config, scenario)?;
    if prep.fit.is_empty() {
        return Err(PipelineError::Config("no training pairs".into()));
    }
    let model = config.model_for(scenario);
    let dims = input_dims(&bundle);
    let (params, adam_state, start, mut history) = match resume {
        Some(ckpt) => {
            ckpt.check_compatible(&bundle, &config, scenario, &prep.split_digest)?;
            let params = ckpt.param_store();
            Network::with_params(model.clone(), dims, &params)?;
            (params, Some(ckpt.adam), ckpt.epoch + 1, ckpt.history)
        }
        None => {
            let (_, params) = Network::init(model.clone(), dims, config.seed)?;
            (params, None, 1, Vec::new())
        }
    };
    let mut session = Session::new(
        bundle.clone(),
        config.clone(),
        scenario,
        params,
        &prep.graph_pairs,
        None,
    )?;
    let adam_config = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_config, &session.params);
    if let Some(state) = adam_state {
        if !state.matches(&session.params) {
            return Err(PipelineError::Checkpoint(
                "optimizer state does not match the parameters".into(),
            ));
        }
        adam.state = state;
    }

    let fit: Vec<Pair> = prep.fit.iter().copied().collect();
    let validation: Vec<Pair> = prep.validation.iter().copied().collect();
    let routing = session.routing(&fit)?;
    let mut best: Option<(f64, usize, crate::tensor::ParamStore)> = None;
    let mut epoch = start.saturating_sub(1);
    for e in start..=config.epochs {
        epoch = e;
        let mut order = fit.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(config.seed, e as u64)));
        // One DropEdge mask per epoch, shared by its batches.
        let global = session.training_global(mix(config.seed ^ 0xd20b, (e as u64) << 20))?;
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let out = session.network.forward(
                &mut tape,
                &session.params,
                global.as_ref(),
                &session.graphs,
                &routing,
                batch,
            )?;
            let y = tape.constant(Tensor::matrix(batch.len(), 1, truths(&bundle, batch))?);
            let loss = tape.mse(out.predictions, y)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(PipelineError::Diverged {
                    epoch: e,
                    loss: value,
                });
            }
            total += value * batch.len() as f64;
            let grads = tape.backward(loss)?;
            adam.step(&mut session.params, &grads)?;
        }
        let val_loss = if validation.is_empty() {
            None
        } else {
            Some(pairs_mse(&session, &validation)?)
        };
        let log = EpochLog {
            epoch: e,
            train_loss: total / fit.len() as f64,
            val_loss,
        };
        on_epoch(&log);
        history.push(log);

        if let Some(v) = val_loss {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, e, session.params.clone()));
            } else if e - best.as_ref().map_or(e, |(_, be, _)| *be) >= config.patience {
                break;
            }
        }
    }
    let best_epoch = match best {
        Some((_, be, params)) => {
            session.params = params;
            be
        }
        None => epoch,
    };
    let final_train_mse = pairs_mse(&session, &fit)?;
    Ok(TrainingResult {
        session,
        preparation: prep,
        history,
        adam: adam.state,
        epoch,
        best_epoch,
        final_train_mse,
    })
}
