use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use super::{DatasetBundle, PipelineError, Result, TrainConfig};
use crate::cold_start::{
    fingerprint, neighbor_weights, smith_waterman_similarity, tanimoto, Fingerprint, SwScoring,
};
use crate::graph::{
    build_affinity_adjacency, build_node_signals, drop_edge, normalize_adjacency, AdjacencyMatrix,
    AffinityMatrix, EdgeWeighting, MinMax,
};
use crate::model::{
    GlobalInputs, GraphSource, InputDims, ModelError, Network, PreparedGraph, Routing,
};
use crate::protein::{target_molecular_graph, PSSM_COLUMNS, RESIDUE_FEATURE_DIM};
use crate::smiles::{drug_molecular_graph, ATOM_FEATURE_DIM};
use crate::split::Scenario;
use crate::tensor::{ParamStore, SparseMatrix, Tape};

/// Builds molecular graphs the first time they are asked for and keeps them.
pub struct GraphCache {
    bundle: Arc<DatasetBundle>,
    contact_threshold: f64,
    drugs: Vec<OnceLock<Arc<PreparedGraph>>>,
    targets: Vec<OnceLock<Arc<PreparedGraph>>>,
    built: AtomicUsize,
}

impl GraphCache {
    pub fn new(bundle: Arc<DatasetBundle>, contact_threshold: f64) -> Self {
        Self {
            drugs: (0..bundle.n_drugs()).map(|_| OnceLock::new()).collect(),
            targets: (0..bundle.n_targets()).map(|_| OnceLock::new()).collect(),
            bundle,
            contact_threshold,
            built: AtomicUsize::new(0),
        }
    }

    /// Number of graphs built so far.
    pub fn built(&self) -> usize {
        self.built.load(Ordering::Relaxed)
    }

    fn cached(
        &self,
        cell: Option<&OnceLock<Arc<PreparedGraph>>>,
        missing: ModelError,
        build: impl FnOnce() -> std::result::Result<PreparedGraph, ModelError>,
    ) -> std::result::Result<Arc<PreparedGraph>, ModelError> {
        let cell = cell.ok_or(missing)?;
        if let Some(g) = cell.get() {
            return Ok(g.clone());
        }
        let g = Arc::new(build()?);
        if cell.set(g.clone()).is_ok() {
            self.built.fetch_add(1, Ordering::Relaxed);
        }
        Ok(cell.get().cloned().unwrap_or(g))
    }
}

impl GraphSource for GraphCache {
    fn drug_graph(&self, drug: usize) -> std::result::Result<Arc<PreparedGraph>, ModelError> {
        self.cached(
            self.drugs.get(drug),
            ModelError::DrugOutOfRange(drug),
            || {
                Ok(PreparedGraph::from_graph(&drug_molecular_graph(
                    &self.bundle.molecules[drug],
                )))
            },
        )
    }

    fn target_graph(&self, target: usize) -> std::result::Result<Arc<PreparedGraph>, ModelError> {
        self.cached(
            self.targets.get(target),
            ModelError::TargetOutOfRange(target),
            || {
                let b = &self.bundle;
                let pssm = b.pssm.as_ref().map(|p| p[target].as_slice());
                let g = target_molecular_graph(
                    &b.sequences[target],
                    &b.contact_maps[target],
                    self.contact_threshold,
                    pssm,
                )
                .map_err(|e| ModelError::Graph(format!("target {}: {e}", b.target_ids[target])))?;
                Ok(PreparedGraph::from_graph(&g))
            },
        )
    }
}

/// A network together with everything needed to run it on one dataset: the
/// training graph, its scaling, the molecular graph cache and cold-start
/// routing.
pub struct Session {
    pub bundle: Arc<DatasetBundle>,
    pub config: TrainConfig,
    pub scenario: Scenario,
    pub network: Network,
    pub params: ParamStore,
    pub graphs: GraphCache,
    graph: AffinityMatrix,
    minmax: Option<MinMax>,
    adjacency: Option<AdjacencyMatrix>,
    signals: Option<Arc<SparseMatrix>>,
    eval_global: Option<GlobalInputs>,
    fingerprints: Vec<OnceLock<Fingerprint>>,
    drug_routes: Mutex<BTreeMap<usize, Vec<(usize, f64)>>>,
    target_routes: Mutex<BTreeMap<usize, Vec<(usize, f64)>>>,
}

/// Input sizes for a network over `bundle`.
pub fn input_dims(bundle: &DatasetBundle) -> InputDims {
    InputDims {
        n_drugs: bundle.n_drugs(),
        n_targets: bundle.n_targets(),
        drug_features: ATOM_FEATURE_DIM,
        target_features: RESIDUE_FEATURE_DIM
            + if bundle.pssm.is_some() {
                PSSM_COLUMNS
            } else {
                0
            },
    }
}

impl Session {
    /// `graph_pairs` are the (drug, target) entries that form the global
    /// affinity graph. `minmax` defaults to the range of those entries.
    pub fn new(
        bundle: Arc<DatasetBundle>,
        config: TrainConfig,
        scenario: Scenario,
        params: ParamStore,
        graph_pairs: &BTreeSet<(usize, usize)>,
        minmax: Option<MinMax>,
    ) -> Result<Self> {
        let model = config.model_for(scenario);
        let network = Network::with_params(model.clone(), input_dims(&bundle), &params)?;
        let graph = bundle.affinity.restricted_to(graph_pairs);
        if graph.len() != graph_pairs.len() {
            return Err(PipelineError::Config(
                "graph pairs include entries without an affinity".into(),
            ));
        }
        let minmax = match minmax {
            Some(m) => Some(m),
            None if graph.is_empty() => None,
            None => Some(graph.visible_range()?),
        };
        let (adjacency, signals, eval_global) = if model.use_global_graph {
            let weighting = match (model.weighted_affinities, minmax) {
                (true, Some(m)) => EdgeWeighting::Scaled(m),
                _ => EdgeWeighting::Binary,
            };
            let adjacency = build_affinity_adjacency(&graph, weighting);
            let signals = Arc::new(build_node_signals(&graph).sparse().clone());
            let eval = GlobalInputs {
                adjacency: Arc::new(normalize_adjacency(&adjacency)?.into_sparse()),
                signals: signals.clone(),
            };
            (Some(adjacency), Some(signals), Some(eval))
        } else {
            (None, None, None)
        };
        Ok(Self {
            graphs: GraphCache::new(bundle.clone(), config.contact_threshold),
            fingerprints: (0..bundle.n_drugs()).map(|_| OnceLock::new()).collect(),
            bundle,
            config,
            scenario,
            network,
            params,
            graph,
            minmax,
            adjacency,
            signals,
            eval_global,
            drug_routes: Mutex::new(BTreeMap::new()),
            target_routes: Mutex::new(BTreeMap::new()),
        })
    }

    /// The affinity entries that make up the global graph.
    pub fn graph(&self) -> &AffinityMatrix {
        &self.graph
    }

    pub fn minmax(&self) -> Option<MinMax> {
        self.minmax
    }

    /// Global inputs without DropEdge.
    pub fn eval_global(&self) -> Option<&GlobalInputs> {
        self.eval_global.as_ref()
    }

    /// Global inputs for one training step, with DropEdge applied to the
    /// affinity edges.
    pub fn training_global(&self, seed: u64) -> Result<Option<GlobalInputs>> {
        let rate = self.network.config().dropedge;
        match (&self.adjacency, &self.signals) {
            (Some(adj), Some(signals)) if rate > 0.0 => {
                let dropped = drop_edge(adj, rate, seed)?;
                Ok(Some(GlobalInputs {
                    adjacency: Arc::new(normalize_adjacency(&dropped)?.into_sparse()),
                    signals: signals.clone(),
                }))
            }
            _ => Ok(self.eval_global.clone()),
        }
    }

    fn fingerprint(&self, drug: usize) -> &Fingerprint {
        self.fingerprints[drug].get_or_init(|| fingerprint(&self.bundle.molecules[drug]))
    }

    fn drug_similarities(&self, drug: usize, known: &[usize]) -> Result<Vec<f64>> {
        let b = &self.bundle;
        if let Some(rows) = &b.sim_drugs {
            return file_similarities(rows, &b.drug_ids, drug, known, "drug");
        }
        known
            .iter()
            .map(|&k| Ok(tanimoto(self.fingerprint(drug), self.fingerprint(k))?))
            .collect()
    }

    fn target_similarities(&self, target: usize, known: &[usize]) -> Result<Vec<f64>> {
        let b = &self.bundle;
        if let Some(rows) = &b.sim_targets {
            return file_similarities(rows, &b.target_ids, target, known, "target");
        }
        let scoring = SwScoring::default();
        known
            .iter()
            .map(|&k| {
                Ok(smith_waterman_similarity(
                    b.sequences[target].as_str(),
                    b.sequences[k].as_str(),
                    &scoring,
                )?)
            })
            .collect()
    }

    /// Cold-start routing for every entity in `pairs` that has no edge in
    /// the training graph. Empty when the global graph is disabled.
    pub fn routing(&self, pairs: &[(usize, usize)]) -> Result<Routing> {
        let mut routing = Routing::default();
        if !self.network.config().use_global_graph {
            return Ok(routing);
        }
        let drugs: BTreeSet<usize> = pairs
            .iter()
            .map(|p| p.0)
            .filter(|&d| self.graph.drug_degree(d) == 0)
            .collect();
        let targets: BTreeSet<usize> = pairs
            .iter()
            .map(|p| p.1)
            .filter(|&t| self.graph.target_degree(t) == 0)
            .collect();
        if !drugs.is_empty() {
            let known: Vec<usize> = (0..self.bundle.n_drugs())
                .filter(|&d| self.graph.drug_degree(d) > 0)
                .collect();
            let mut cache = self.drug_routes.lock().expect("route cache poisoned");
            for d in drugs {
                if let Entry::Vacant(slot) = cache.entry(d) {
                    let sims = self.drug_similarities(d, &known)?;
                    slot.insert(route(&sims, &known, self.config.simk_drug)?);
                }
                routing.drugs.insert(d, cache[&d].clone());
            }
        }
        if !targets.is_empty() {
            let known: Vec<usize> = (0..self.bundle.n_targets())
                .filter(|&t| self.graph.target_degree(t) > 0)
                .collect();
            let mut cache = self.target_routes.lock().expect("route cache poisoned");
            for t in targets {
                if let Entry::Vacant(slot) = cache.entry(t) {
                    let sims = self.target_similarities(t, &known)?;
                    slot.insert(route(&sims, &known, self.config.simk_target)?);
                }
                routing.targets.insert(t, cache[&t].clone());
            }
        }
        Ok(routing)
    }

    /// Runs the network in evaluation mode (no DropEdge) and returns the
    /// predictions and pair embeddings, processing `batch_size` pairs at a time.
    pub fn run(&self, pairs: &[(usize, usize)]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut preds = Vec::with_capacity(pairs.len());
        let mut embeddings = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(self.config.batch_size.max(1)) {
            let routing = self.routing(chunk)?;
            let mut tape = Tape::new();
            let out = self.network.forward(
                &mut tape,
                &self.params,
                self.eval_global.as_ref(),
                &self.graphs,
                &routing,
                chunk,
            )?;
            preds.extend_from_slice(tape.value(out.predictions).data());
            let emb = tape.value(out.pair_embeddings);
            embeddings.extend((0..emb.rows()).map(|r| emb.row(r).to_vec()));
        }
        Ok((preds, embeddings))
    }
}

fn route(sims: &[f64], known: &[usize], k: usize) -> Result<Vec<(usize, f64)>> {
    if known.is_empty() {
        return Err(PipelineError::Config(
            "the training graph has no entities to borrow embeddings from".into(),
        ));
    }
    Ok(neighbor_weights(sims, k.min(known.len()))?
        .into_iter()
        .map(|(i, w)| (known[i], w))
        .collect())
}

/// Similarities of `entity` to each of `known` from a precomputed table.
/// Pairs absent from the table count as 0; an entity with no rows at all is
/// an error.
fn file_similarities(
    rows: &[(String, String, f64)],
    ids: &[String],
    entity: usize,
    known: &[usize],
    kind: &'static str,
) -> Result<Vec<f64>> {
    let id = &ids[entity];
    let mine: BTreeMap<&str, f64> = rows
        .iter()
        .filter(|r| &r.0 == id)
        .map(|r| (r.1.as_str(), r.2))
        .collect();
    if mine.is_empty() {
        return Err(PipelineError::MissingSimilarity {
            kind,
            id: id.clone(),
        });
    }
    Ok(known
        .iter()
        .map(|&k| mine.get(ids[k].as_str()).copied().unwrap_or(0.0))
        .collect())
}
