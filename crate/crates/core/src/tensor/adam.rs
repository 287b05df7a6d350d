use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators, one pair per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn for_params(params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn matches(&self, params: &ParamStore) -> bool {
        self.first_moment.len() == params.len()
            && self.second_moment.len() == params.len()
            && params.iter().enumerate().all(|(i, (_, _, t))| {
                self.first_moment[i].shape() == t.shape()
                    && self.second_moment[i].shape() == t.shape()
            })
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        Self {
            config,
            state: AdamState::for_params(params),
        }
    }

    /// Applies one update. Parameters absent from `grads` are treated as
    /// having zero gradient; their moments still decay.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if !self.state.matches(params) {
            return Err(TensorError::InvalidArgument(
                "optimizer state does not match parameter shapes".into(),
            ));
        }
        for (id, g) in grads.iter() {
            if id.0 >= params.len() || g.shape() != params.get(id).shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    left: params
                        .ids()
                        .nth(id.0)
                        .map_or(vec![], |i| params.get(i).shape().to_vec()),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.state.step += 1;
        let t = self.state.step as f64;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bias1 = 1.0 - beta1.powf(t);
        let bias2 = 1.0 - beta2.powf(t);
        for id in params.ids().collect::<Vec<_>>() {
            let grad = grads.get(id).ok();
            let m = self.state.first_moment[id.0].data_mut();
            let v = self.state.second_moment[id.0].data_mut();
            let p = params.get_mut(id).data_mut();
            for k in 0..p.len() {
                let g = grad.map_or(0.0, |g| g.data()[k]);
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                p[k] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
