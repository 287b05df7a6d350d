use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::train::pairs_mse;
use super::{PipelineError, Result, Session};
use crate::metrics::{
    calinski_harabasz, concordance_index, davies_bouldin, mse, pearson, r_m_squared, silhouette,
    MetricError, MetricSummary, RegressionMetrics,
};
use crate::split::Pair;

/// Test-set predictions and their metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub pairs: Vec<Pair>,
    pub truths: Vec<f64>,
    pub predictions: Vec<f64>,
    pub metrics: RegressionMetrics,
}

pub fn predict_pairs(session: &Session, pairs: &[Pair]) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    Ok(session.run(pairs)?.0)
}

fn truth(session: &Session, (d, t): Pair) -> Result<f64> {
    session.bundle.affinity.get(d, t).ok_or_else(|| {
        PipelineError::Config(format!(
            "no affinity for ({}, {})",
            session.bundle.drug_ids[d], session.bundle.target_ids[t]
        ))
    })
}

pub fn evaluate(session: &Session, pairs: &[Pair]) -> Result<Evaluation> {
    let truths = pairs
        .iter()
        .map(|&p| truth(session, p))
        .collect::<Result<Vec<_>>>()?;
    let predictions = predict_pairs(session, pairs)?;
    // A metric that is undefined for these values (e.g. correlation with
    // constant predictions) is reported as NaN rather than failing the run.
    let defined = |r: std::result::Result<f64, MetricError>| match r {
        Err(MetricError::Undefined(_)) => Ok(f64::NAN),
        other => other,
    };
    let metrics = RegressionMetrics {
        mse: mse(&truths, &predictions)?,
        ci: defined(concordance_index(&truths, &predictions))?,
        rm2: defined(r_m_squared(&truths, &predictions))?,
        pearson: defined(pearson(&truths, &predictions))?,
    };
    Ok(Evaluation {
        pairs: pairs.to_vec(),
        truths,
        predictions,
        metrics,
    })
}

/// Predicted affinity of one pair given by ids.
pub fn infer_pair(session: &Session, drug: &str, target: &str) -> Result<f64> {
    let b = &session.bundle;
    let unknown = |kind: &'static str, id: &str| PipelineError::UnknownId {
        path: "query".into(),
        line: 0,
        kind,
        id: id.to_string(),
    };
    let d = b.drug_index(drug).ok_or_else(|| unknown("drug", drug))?;
    let t = b
        .target_index(target)
        .ok_or_else(|| unknown("target", target))?;
    Ok(predict_pairs(session, &[(d, t)])?[0])
}

/// MSE over `pairs` in evaluation mode.
pub fn session_mse(session: &Session, pairs: &[Pair]) -> Result<f64> {
    pairs_mse(session, pairs)
}

/// Per-run metric rows followed by mean and sample standard deviation rows.
pub fn metrics_tsv(scenario: &str, runs: &[RegressionMetrics]) -> String {
    let mut out = String::from("scenario\trun\tmse\tci\trm2\tpearson\n");
    for (i, r) in runs.iter().enumerate() {
        writeln!(
            out,
            "{scenario}\t{i}\t{}\t{}\t{}\t{}",
            r.mse, r.ci, r.rm2, r.pearson
        )
        .expect("writing to a String");
    }
    let col = |f: fn(&RegressionMetrics) -> f64| {
        MetricSummary::of(&runs.iter().map(f).collect::<Vec<_>>())
    };
    let cols = [
        col(|r| r.mse),
        col(|r| r.ci),
        col(|r| r.rm2),
        col(|r| r.pearson),
    ];
    if !runs.is_empty() {
        let mean: Vec<String> = cols.iter().map(|s| s.mean.to_string()).collect();
        let std: Vec<String> = cols.iter().map(|s| s.std.to_string()).collect();
        writeln!(out, "{scenario}\tmean\t{}", mean.join("\t")).expect("writing to a String");
        writeln!(out, "{scenario}\tstd\t{}", std.join("\t")).expect("writing to a String");
    }
    out
}

/// A labelled pair embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub drug: String,
    pub target: String,
    pub affinity: f64,
    pub strong: bool,
    pub embedding: Vec<f64>,
}

/// Pair embeddings of `pairs`, labelled strong when the measured affinity
/// is at least `threshold`.
pub fn export_embeddings(
    session: &Session,
    pairs: &[Pair],
    threshold: f64,
) -> Result<Vec<EmbeddingRow>> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let (_, embeddings) = session.run(pairs)?;
    let b = &session.bundle;
    pairs
        .iter()
        .zip(embeddings)
        .map(|(&(d, t), embedding)| {
            let affinity = truth(session, (d, t))?;
            Ok(EmbeddingRow {
                drug: b.drug_ids[d].clone(),
                target: b.target_ids[t].clone(),
                affinity,
                strong: affinity >= threshold,
                embedding,
            })
        })
        .collect()
}

/// `drug target affinity label e0 e1 ...` rows.
pub fn embeddings_tsv(rows: &[EmbeddingRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let label = if r.strong { "strong" } else { "weak" };
        write!(out, "{}\t{}\t{}\t{label}", r.drug, r.target, r.affinity)
            .expect("writing to a String");
        for v in &r.embedding {
            write!(out, "\t{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

/// Cluster separation of strong versus weak pairs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterScores {
    pub silhouette: f64,
    pub calinski_harabasz: f64,
    pub davies_bouldin: f64,
}

pub fn cluster_scores(rows: &[EmbeddingRow]) -> Result<ClusterScores> {
    let points: Vec<Vec<f64>> = rows.iter().map(|r| r.embedding.clone()).collect();
    let labels: Vec<usize> = rows.iter().map(|r| usize::from(r.strong)).collect();
    Ok(ClusterScores {
        silhouette: silhouette(&points, &labels)?,
        calinski_harabasz: calinski_harabasz(&points, &labels)?,
        davies_bouldin: davies_bouldin(&points, &labels)?,
    })
}
