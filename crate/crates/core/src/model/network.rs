use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{global_encode, local_gcn_layer, message_broadcast, mlp, readout_pool, Dense};
use super::{ModelConfig, ModelError, Result};
use crate::molgraph::MolecularGraph;
use crate::tensor::{ParamId, ParamStore, SparseMatrix, Tape, Tensor, Var};

/// A molecular graph ready for the local stacks.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedGraph {
    pub propagation: Arc<SparseMatrix>,
    pub features: Tensor,
}

impl PreparedGraph {
    pub fn from_graph(graph: &MolecularGraph) -> Self {
        Self {
            propagation: graph.propagation(),
            features: graph.features().clone(),
        }
    }
}

/// Supplies molecular graphs on demand, so that configurations without local
/// graphs never build them.
pub trait GraphSource {
    fn drug_graph(&self, drug: usize) -> Result<Arc<PreparedGraph>>;
    fn target_graph(&self, target: usize) -> Result<Arc<PreparedGraph>>;
}

/// Eagerly built graphs, indexed by entity.
#[derive(Clone, Debug, Default)]
pub struct StaticGraphs {
    pub drugs: Vec<Arc<PreparedGraph>>,
    pub targets: Vec<Arc<PreparedGraph>>,
}

impl GraphSource for StaticGraphs {
    fn drug_graph(&self, drug: usize) -> Result<Arc<PreparedGraph>> {
        self.drugs
            .get(drug)
            .cloned()
            .ok_or(ModelError::DrugOutOfRange(drug))
    }

    fn target_graph(&self, target: usize) -> Result<Arc<PreparedGraph>> {
        self.targets
            .get(target)
            .cloned()
            .ok_or(ModelError::TargetOutOfRange(target))
    }
}

/// Normalized affinity adjacency and node signals of the global graph.
#[derive(Clone, Debug)]
pub struct GlobalInputs {
    pub adjacency: Arc<SparseMatrix>,
    pub signals: Arc<SparseMatrix>,
}

/// Where an entity's row of the global embedding matrix comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum RowSource {
    Own,
    /// Weighted combination of other entities' rows (entity indices of the
    /// same kind), used for entities absent from the training graph.
    Mix(Vec<(usize, f64)>),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Routing {
    pub drugs: BTreeMap<usize, Vec<(usize, f64)>>,
    pub targets: BTreeMap<usize, Vec<(usize, f64)>>,
}

impl Routing {
    pub fn drug(&self, i: usize) -> RowSource {
        self.drugs
            .get(&i)
            .map_or(RowSource::Own, |w| RowSource::Mix(w.clone()))
    }

    pub fn target(&self, j: usize) -> RowSource {
        self.targets
            .get(&j)
            .map_or(RowSource::Own, |w| RowSource::Mix(w.clone()))
    }
}

/// Dataset-dependent input sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub n_drugs: usize,
    pub n_targets: usize,
    pub drug_features: usize,
    pub target_features: usize,
}

impl InputDims {
    /// Node-signal width: two type bits plus one connectivity bit per node.
    pub fn signal_width(&self) -> usize {
        2 + self.n_drugs + self.n_targets
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Stack {
    transform: Vec<Dense>,
    local: Vec<ParamId>,
    readout: Vec<Dense>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: ModelConfig,
    dims: InputDims,
    global: Option<(ParamId, ParamId)>,
    drug: Stack,
    target: Stack,
    predictor: Vec<Dense>,
}

pub struct ForwardOutput {
    /// `m x 1` predicted affinities.
    pub predictions: Var,
    /// `m x (|d| + |t|)` concatenated pair embeddings fed to the predictor.
    pub pair_embeddings: Var,
    pub inferred_drugs: BTreeSet<usize>,
    pub inferred_targets: BTreeSet<usize>,
}

struct Builder<'a> {
    store: ParamStore,
    init: &'a mut dyn FnMut(&str, &[usize]) -> Tensor,
}

impl Builder<'_> {
    fn weight(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        let t = (self.init)(&name, &[rows, cols]);
        self.store.add(name, t)
    }

    fn bias(&mut self, name: String, cols: usize) -> ParamId {
        self.store.add(name, Tensor::zeros(&[1, cols]))
    }

    fn mlp(&mut self, prefix: &str, widths: &[usize]) -> Vec<Dense> {
        widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense {
                w: self.weight(format!("{prefix}.{i}.w"), w[0], w[1]),
                b: self.bias(format!("{prefix}.{i}.b"), w[1]),
            })
            .collect()
    }
}

/// Xavier-uniform sampler: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let (fan_in, fan_out) = (shape[0], shape[1]);
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-a..a))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data length")
}

impl Network {
    /// Builds the network with seeded Xavier-uniform weights and zero biases.
    pub fn init(config: ModelConfig, dims: InputDims, seed: u64) -> Result<(Self, ParamStore)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |_: &str, shape: &[usize]| xavier_uniform(&mut rng, shape);
        Self::build(config, dims, &mut init)
    }

    /// Rebuilds the layout for `config` and checks that `params` matches it
    /// name by name and shape by shape.
    pub fn with_params(config: ModelConfig, dims: InputDims, params: &ParamStore) -> Result<Self> {
        let mut zero = |_: &str, shape: &[usize]| Tensor::zeros(shape);
        let (net, layout) = Self::build(config, dims, &mut zero)?;
        if layout.len() != params.len() {
            return Err(ModelError::Config(format!(
                "parameter count {} does not match the configured network ({})",
                params.len(),
                layout.len()
            )));
        }
        for (id, name, t) in layout.iter() {
            let other = params.get(id);
            if params.name(id) != name {
                return Err(ModelError::MissingParam(name.to_string()));
            }
            if other.shape() != t.shape() {
                return Err(ModelError::ParamShape {
                    name: name.to_string(),
                    expected: t.shape().to_vec(),
                    found: other.shape().to_vec(),
                });
            }
        }
        Ok(net)
    }

    fn build(
        config: ModelConfig,
        dims: InputDims,
        init: &mut dyn FnMut(&str, &[usize]) -> Tensor,
    ) -> Result<(Self, ParamStore)> {
        config.validate()?;
        if config.broadcasting() && config.local_layers == 0 {
            return Err(ModelError::Config(
                "broadcasting needs at least one local layer before it".into(),
            ));
        }
        let mut b = Builder {
            store: ParamStore::new(),
            init,
        };
        let c = &config;
        let global = c.use_global_graph.then(|| {
            (
                b.weight("global.w1".into(), dims.signal_width(), c.global_hidden),
                b.weight("global.w2".into(), c.global_hidden, c.global_dim),
            )
        });
        let mut stacks = Vec::new();
        for (name, features, dim, refined) in [
            ("drug", dims.drug_features, c.drug_dim, c.drug_refined),
            (
                "target",
                dims.target_features,
                c.target_dim,
                c.target_refined,
            ),
        ] {
            let mut s = Stack::default();
            if c.use_global_graph {
                s.transform = b.mlp(
                    &format!("{name}_transform"),
                    &[c.global_dim, c.transform_hidden, dim],
                );
            }
            if c.use_local_graphs {
                let mut width = features;
                for i in 0..c.local_layers + c.refine_layers {
                    let out = if i < c.local_layers {
                        dim
                    } else {
                        if i == c.local_layers && c.broadcasting() {
                            width *= 2;
                        }
                        refined
                    };
                    s.local
                        .push(b.weight(format!("{name}_local.{i}.w"), width, out));
                    width = out;
                }
                let input = width + if c.skip_active() { dim } else { 0 };
                let out = if c.late_merge() { dim } else { c.readout_dim };
                s.readout = b.mlp(&format!("{name}_readout"), &[input, c.readout_hidden, out]);
            }
            stacks.push(s);
        }
        let target = stacks.pop().expect("two stacks");
        let drug = stacks.pop().expect("two stacks");
        let mut widths =
            vec![Self::final_width(c, c.drug_dim) + Self::final_width(c, c.target_dim)];
        widths.extend(&c.predictor_hidden);
        widths.push(1);
        let predictor = b.mlp("predictor", &widths);
        let net = Self {
            config,
            dims,
            global,
            drug,
            target,
            predictor,
        };
        Ok((net, b.store))
    }

    fn final_width(c: &ModelConfig, dim: usize) -> usize {
        if !c.use_local_graphs {
            dim
        } else if c.late_merge() {
            2 * dim
        } else {
            c.readout_dim
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> &InputDims {
        &self.dims
    }

    /// Width of the concatenated pair embedding.
    pub fn pair_embedding_width(&self) -> usize {
        Self::final_width(&self.config, self.config.drug_dim)
            + Self::final_width(&self.config, self.config.target_dim)
    }

    /// Global embedding matrix H for the given graph.
    pub fn global_embeddings(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        global: &GlobalInputs,
    ) -> Result<Var> {
        let (w1, w2) = self
            .global
            .ok_or_else(|| ModelError::Config("network has no global graph encoder".into()))?;
        let n = self.dims.n_drugs + self.dims.n_targets;
        if global.adjacency.rows() != n || global.signals.cols() != self.dims.signal_width() {
            return Err(ModelError::Config(format!(
                "global graph has {} nodes and signal width {}, network expects {} and {}",
                global.adjacency.rows(),
                global.signals.cols(),
                n,
                self.dims.signal_width()
            )));
        }
        let w1 = tape.param(params, w1);
        let w2 = tape.param(params, w2);
        global_encode(tape, &global.adjacency, &global.signals, w1, w2)
    }

    /// Transformed global embeddings for `entities`, one row each.
    #[allow(clippy::too_many_arguments)]
    fn transformed_rows(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        h: Var,
        entities: &[usize],
        sources: &[RowSource],
        offset: usize,
        stack: &Stack,
    ) -> Result<Var> {
        let n = self.dims.n_drugs + self.dims.n_targets;
        let mut triplets = Vec::new();
        for (r, (&e, src)) in entities.iter().zip(sources).enumerate() {
            match src {
                RowSource::Own => triplets.push((r, offset + e, 1.0)),
                RowSource::Mix(w) => triplets.extend(w.iter().map(|&(k, v)| (r, offset + k, v))),
            }
        }
        let select = Arc::new(SparseMatrix::from_triplets(entities.len(), n, &triplets)?);
        let rows = tape.spmm(&select, h)?;
        mlp(tape, params, &stack.transform, rows)
    }

    fn entity_embedding(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        stack: &Stack,
        graph: Option<&PreparedGraph>,
        global: Option<Var>,
    ) -> Result<Var> {
        let c = &self.config;
        let Some(graph) = graph else {
            return global.ok_or_else(|| ModelError::Config("no embedding source".into()));
        };
        if graph.features.rows() != graph.propagation.rows() {
            return Err(ModelError::Graph(
                "feature rows do not match the graph size".into(),
            ));
        }
        let mut states = tape.constant(graph.features.clone());
        for (i, &w) in stack.local.iter().enumerate() {
            if i == c.local_layers && c.broadcasting() {
                let g = global.expect("broadcasting implies a global embedding");
                states = message_broadcast(tape, states, g)?;
            }
            let w = tape.param(params, w);
            states = local_gcn_layer(tape, &graph.propagation, states, w)?;
        }
        let mut pooled = readout_pool(tape, states)?;
        if c.skip_active() {
            let g = global.expect("skip implies a global embedding");
            pooled = tape.concat_cols(&[pooled, g])?;
        }
        let out = mlp(tape, params, &stack.readout, pooled)?;
        if c.late_merge() {
            let g = global.expect("late merge implies a global embedding");
            let plus = tape.add(out, g)?;
            let minus = tape.sub(out, g)?;
            return Ok(tape.concat_cols(&[plus, minus])?);
        }
        Ok(out)
    }

    /// Predicts every pair in `pairs`. `global` is required when the network
    /// uses the global graph; `routing` replaces global rows of entities
    /// that are absent from the training graph.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        global: Option<&GlobalInputs>,
        graphs: &dyn GraphSource,
        routing: &Routing,
        pairs: &[(usize, usize)],
    ) -> Result<ForwardOutput> {
        if pairs.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        for &(d, t) in pairs {
            if d >= self.dims.n_drugs {
                return Err(ModelError::DrugOutOfRange(d));
            }
            if t >= self.dims.n_targets {
                return Err(ModelError::TargetOutOfRange(t));
            }
        }
        let drugs: Vec<usize> = pairs
            .iter()
            .map(|p| p.0)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let targets: Vec<usize> = pairs
            .iter()
            .map(|p| p.1)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let drug_src: Vec<RowSource> = drugs.iter().map(|&d| routing.drug(d)).collect();
        let target_src: Vec<RowSource> = targets.iter().map(|&t| routing.target(t)).collect();
        let mut out_inferred_d = BTreeSet::new();
        let mut out_inferred_t = BTreeSet::new();

        let (gd, gt) = if self.config.use_global_graph {
            let global =
                global.ok_or_else(|| ModelError::Config("global graph inputs required".into()))?;
            for (&d, s) in drugs.iter().zip(&drug_src) {
                if matches!(s, RowSource::Mix(_)) {
                    out_inferred_d.insert(d);
                }
            }
            for (&t, s) in targets.iter().zip(&target_src) {
                if matches!(s, RowSource::Mix(_)) {
                    out_inferred_t.insert(t);
                }
            }
            let h = self.global_embeddings(tape, params, global)?;
            let gd = self.transformed_rows(tape, params, h, &drugs, &drug_src, 0, &self.drug)?;
            let gt = self.transformed_rows(
                tape,
                params,
                h,
                &targets,
                &target_src,
                self.dims.n_drugs,
                &self.target,
            )?;
            (Some(gd), Some(gt))
        } else {
            (None, None)
        };

        let mut rows_d = Vec::with_capacity(drugs.len());
        for (k, &d) in drugs.iter().enumerate() {
            let g = gd.map(|m| tape.row(m, k)).transpose()?;
            let graph = if self.config.use_local_graphs {
                Some(graphs.drug_graph(d)?)
            } else {
                None
            };
            rows_d.push(self.entity_embedding(tape, params, &self.drug, graph.as_deref(), g)?);
        }
        let mut rows_t = Vec::with_capacity(targets.len());
        for (k, &t) in targets.iter().enumerate() {
            let g = gt.map(|m| tape.row(m, k)).transpose()?;
            let graph = if self.config.use_local_graphs {
                Some(graphs.target_graph(t)?)
            } else {
                None
            };
            rows_t.push(self.entity_embedding(tape, params, &self.target, graph.as_deref(), g)?);
        }
        let dmat = tape.concat_rows(&rows_d)?;
        let tmat = tape.concat_rows(&rows_t)?;
        let d_index: Vec<usize> = pairs
            .iter()
            .map(|p| drugs.binary_search(&p.0).expect("collected"))
            .collect();
        let t_index: Vec<usize> = pairs
            .iter()
            .map(|p| targets.binary_search(&p.1).expect("collected"))
            .collect();
        let dp = tape.gather_rows(dmat, &d_index)?;
        let tp = tape.gather_rows(tmat, &t_index)?;
        let pair_embeddings = tape.concat_cols(&[dp, tp])?;
        let predictions = mlp(tape, params, &self.predictor, pair_embeddings)?;
        Ok(ForwardOutput {
            predictions,
            pair_embeddings,
            inferred_drugs: out_inferred_d,
            inferred_targets: out_inferred_t,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{
        build_affinity_adjacency, build_node_signals, normalize_adjacency, AffinityMatrix,
        EdgeWeighting,
    };

    fn small_config() -> ModelConfig {
        ModelConfig {
            global_hidden: 4,
            global_dim: 3,
            transform_hidden: 3,
            drug_dim: 2,
            target_dim: 2,
            drug_refined: 3,
            target_refined: 3,
            readout_hidden: 3,
            readout_dim: 2,
            predictor_hidden: vec![4, 3],
            ..ModelConfig::default()
        }
    }

    fn toy() -> (GlobalInputs, StaticGraphs, InputDims) {
        let aff =
            AffinityMatrix::from_entries(2, 2, [(0, 0, 5.0), (1, 1, 7.0), (0, 1, 6.0)]).unwrap();
        let adj =
            build_affinity_adjacency(&aff, EdgeWeighting::Scaled(aff.visible_range().unwrap()));
        let global = GlobalInputs {
            adjacency: Arc::new(normalize_adjacency(&adj).unwrap().into_sparse()),
            signals: Arc::new(build_node_signals(&aff).sparse().clone()),
        };
        let g = |n: usize, w: usize| {
            let feats = Tensor::new(
                vec![n, w],
                (0..n * w).map(|i| (i % 3) as f64 * 0.5).collect(),
            )
            .unwrap();
            Arc::new(PreparedGraph::from_graph(
                &MolecularGraph::new(n, (1..n).map(|i| (i - 1, i)), feats).unwrap(),
            ))
        };
        let graphs = StaticGraphs {
            drugs: vec![g(3, 4), g(2, 4)],
            targets: vec![g(4, 5), g(3, 5)],
        };
        let dims = InputDims {
            n_drugs: 2,
            n_targets: 2,
            drug_features: 4,
            target_features: 5,
        };
        (global, graphs, dims)
    }

    #[test]
    fn zero_parameters_predict_zero() {
        let (global, graphs, dims) = toy();
        let (net, mut params) = Network::init(small_config(), dims, 1).unwrap();
        for id in params.ids().collect::<Vec<_>>() {
            params
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = 0.0);
        }
        let mut tape = Tape::new();
        let out = net
            .forward(
                &mut tape,
                &params,
                Some(&global),
                &graphs,
                &Routing::default(),
                &[(0, 0), (1, 1)],
            )
            .unwrap();
        assert_eq!(tape.value(out.predictions).data(), &[0.0, 0.0]);
    }

    #[test]
    fn batch_prediction_equals_single_pair_prediction() {
        let (global, graphs, dims) = toy();
        let (net, params) = Network::init(small_config(), dims, 3).unwrap();
        let pairs = [(0, 0), (1, 1), (0, 1), (1, 0)];
        let mut tape = Tape::new();
        let out = net
            .forward(
                &mut tape,
                &params,
                Some(&global),
                &graphs,
                &Routing::default(),
                &pairs,
            )
            .unwrap();
        let batch = tape.value(out.predictions).clone();
        for (k, &p) in pairs.iter().enumerate() {
            let mut t = Tape::new();
            let o = net
                .forward(
                    &mut t,
                    &params,
                    Some(&global),
                    &graphs,
                    &Routing::default(),
                    &[p],
                )
                .unwrap();
            assert_eq!(t.value(o.predictions).item(), batch.data()[k]);
        }
    }

    #[test]
    fn widths_per_configuration() {
        let (_, _, dims) = toy();
        let full = Network::init(small_config(), dims, 0).unwrap().0;
        assert_eq!(full.pair_embedding_width(), 4);
        let mb = Network::init(
            ModelConfig {
                use_message_broadcasting: false,
                ..small_config()
            },
            dims,
            0,
        )
        .unwrap()
        .0;
        assert_eq!(mb.pair_embedding_width(), 8);
        let (lmg, params) = Network::init(
            ModelConfig {
                use_local_graphs: false,
                ..small_config()
            },
            dims,
            0,
        )
        .unwrap();
        assert_eq!(lmg.pair_embedding_width(), 4);
        assert!(params.iter().all(|(_, name, _)| !name.contains("local")));
    }

    #[test]
    fn reload_checks_shapes() {
        let (_, _, dims) = toy();
        let (_, params) = Network::init(small_config(), dims, 0).unwrap();
        assert!(Network::with_params(small_config(), dims, &params).is_ok());
        let other = ModelConfig {
            readout_dim: 5,
            ..small_config()
        };
        assert!(matches!(
            Network::with_params(other, dims, &params),
            Err(ModelError::ParamShape { .. })
        ));
    }

    #[test]
    fn gradients_match_finite_differences_for_every_variant() {
        use crate::tensor::{finite_difference_check, GradCheckConfig};
        let (global, graphs, dims) = toy();
        let truths = Tensor::matrix(3, 1, vec![0.3, -0.2, 0.5]).unwrap();
        for cfg in [
            small_config(),
            ModelConfig {
                use_global_graph: false,
                ..small_config()
            },
            ModelConfig {
                use_local_graphs: false,
                ..small_config()
            },
            ModelConfig {
                use_message_broadcasting: false,
                ..small_config()
            },
            ModelConfig {
                use_skip_connection: true,
                ..small_config()
            },
        ] {
            let (net, mut params) = Network::init(cfg, dims, 7).unwrap();
            // Zero biases put many ReLU inputs exactly on the kink, where
            // central differences are meaningless; check at a generic point.
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for id in params.ids().collect::<Vec<_>>() {
                if params.name(id).ends_with(".b") {
                    params
                        .get_mut(id)
                        .data_mut()
                        .iter_mut()
                        .for_each(|x| *x = rng.gen_range(-0.2..0.2));
                }
            }
            let report = finite_difference_check(
                |tape: &mut Tape, p: &ParamStore| {
                    let out = net
                        .forward(
                            tape,
                            p,
                            Some(&global),
                            &graphs,
                            &Routing::default(),
                            &[(0, 0), (1, 1), (0, 1)],
                        )
                        .map_err(|e| crate::tensor::TensorError::InvalidArgument(e.to_string()))?;
                    let y = tape.constant(truths.clone());
                    tape.mse(out.predictions, y)
                },
                &params,
                &GradCheckConfig::default(),
            )
            .unwrap();
            assert!(report.passed, "{report:?}");
        }
    }
}
