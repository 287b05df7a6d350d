use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::session::input_dims;
use super::{prepare, DatasetBundle, Result, Session, TrainConfig};
use crate::model::Network;
use crate::split::{Pair, Scenario};
use crate::tensor::{
    finite_difference_check, GradCheckConfig, GradCheckReport, ParamStore, Tape, Tensor,
    TensorError,
};

/// Compares backpropagated gradients with central differences for a freshly
/// initialized network on up to `max_pairs` training pairs. Biases are drawn
/// from U(-0.2, 0.2) so that no ReLU input sits exactly on its kink, and
/// DropEdge is off so that the loss is a deterministic function of the
/// parameters. The loss is fitted to mean-centred affinities. Every
/// parameter element is perturbed, so keep the model small.
pub fn gradient_check(
    bundle: Arc<DatasetBundle>,
    config: &TrainConfig,
    scenario: Scenario,
    max_pairs: usize,
    check: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let prep = prepare(&bundle, config, scenario)?;
    let (_, mut params) =
        Network::init(config.model_for(scenario), input_dims(&bundle), config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xb1a5);
    for id in params.ids().collect::<Vec<_>>() {
        if params.name(id).ends_with(".b") {
            params
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = rng.gen_range(-0.2..0.2));
        }
    }
    let session = Session::new(
        bundle.clone(),
        config.clone(),
        scenario,
        params,
        &prep.graph_pairs,
        None,
    )?;
    let pairs: Vec<Pair> = prep.fit.iter().take(max_pairs.max(1)).copied().collect();
    let routing = session.routing(&pairs)?;
    // Raw affinities sit far from the initial predictions, and the resulting
    // large loss drowns small gradient components in cancellation error at
    // practical step sizes. Centred targets keep the loss near unit scale.
    let mut truths: Vec<f64> = pairs
        .iter()
        .map(|&(d, t)| bundle.affinity.get(d, t).expect("fit pairs are labelled"))
        .collect();
    let mean = truths.iter().sum::<f64>() / truths.len() as f64;
    truths.iter_mut().for_each(|y| *y -= mean);
    let truths = Tensor::matrix(pairs.len(), 1, truths)?;
    let report = finite_difference_check(
        |tape: &mut Tape, p: &ParamStore| {
            let out = session
                .network
                .forward(
                    tape,
                    p,
                    session.eval_global(),
                    &session.graphs,
                    &routing,
                    &pairs,
                )
                .map_err(|e| TensorError::InvalidArgument(e.to_string()))?;
            let y = tape.constant(truths.clone());
            tape.mse(out.predictions, y)
        },
        &session.params,
        check,
    )?;
    Ok(report)
}
