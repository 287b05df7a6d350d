//! Regression and clustering metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} truths vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("{0} is undefined for this input")]
    Undefined(&'static str),
    #[error("labels length {labels} does not match {points} points")]
    LabelCount { labels: usize, points: usize },
    #[error("points have inconsistent dimensions")]
    Ragged,
}

pub type Result<T> = std::result::Result<T, MetricError>;

fn check_pair(truths: &[f64], preds: &[f64], needed: usize) -> Result<()> {
    if truths.len() != preds.len() {
        return Err(MetricError::LengthMismatch(truths.len(), preds.len()));
    }
    if truths.len() < needed {
        return Err(MetricError::TooFew {
            needed,
            got: truths.len(),
        });
    }
    Ok(())
}

pub fn mse(truths: &[f64], preds: &[f64]) -> Result<f64> {
    check_pair(truths, preds, 1)?;
    Ok(truths
        .iter()
        .zip(preds)
        .map(|(y, p)| (y - p) * (y - p))
        .sum::<f64>()
        / truths.len() as f64)
}

/// Fraction of truth-ordered pairs (`y_i > y_j`) whose predictions keep the
/// order; prediction ties count one half. Pairs with tied truths are skipped.
pub fn concordance_index(truths: &[f64], preds: &[f64]) -> Result<f64> {
    check_pair(truths, preds, 2)?;
    // Sort by truth; for each element count predictions among strictly
    // smaller truths, using a sorted list of those predictions.
    let mut order: Vec<usize> = (0..truths.len()).collect();
    order.sort_by(|&a, &b| truths[a].total_cmp(&truths[b]));
    let mut seen: Vec<f64> = Vec::with_capacity(truths.len());
    let mut pairs = 0u64;
    let mut score2 = 0u64; // twice the concordance score, kept integral
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && truths[order[j]] == truths[order[i]] {
            j += 1;
        }
        for &k in &order[i..j] {
            let p = preds[k];
            let below = seen.partition_point(|&x| x < p) as u64;
            let not_above = seen.partition_point(|&x| x <= p) as u64;
            score2 += 2 * below + (not_above - below);
            pairs += seen.len() as u64;
        }
        for &k in &order[i..j] {
            let pos = seen.partition_point(|&x| x < preds[k]);
            seen.insert(pos, preds[k]);
        }
        i = j;
    }
    if pairs == 0 {
        return Err(MetricError::Undefined(
            "concordance index (all truths equal)",
        ));
    }
    Ok(score2 as f64 / (2 * pairs) as f64)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Centered cross and auto sums of squares.
fn moments(truths: &[f64], preds: &[f64]) -> Result<(f64, f64, f64)> {
    check_pair(truths, preds, 2)?;
    let (my, mp) = (mean(truths), mean(preds));
    let mut cov = 0.0;
    let mut vy = 0.0;
    let mut vp = 0.0;
    for (y, p) in truths.iter().zip(preds) {
        cov += (y - my) * (p - mp);
        vy += (y - my) * (y - my);
        vp += (p - mp) * (p - mp);
    }
    if vy == 0.0 || vp == 0.0 {
        return Err(MetricError::Undefined("pearson (constant vector)"));
    }
    Ok((cov, vy, vp))
}

/// Population Pearson correlation.
pub fn pearson(truths: &[f64], preds: &[f64]) -> Result<f64> {
    let (cov, vy, vp) = moments(truths, preds)?;
    Ok((cov / (vy.sqrt() * vp.sqrt())).clamp(-1.0, 1.0))
}

/// Through-origin coefficient of determination of truths regressed on
/// predictions.
pub fn r0_squared(truths: &[f64], preds: &[f64]) -> Result<f64> {
    check_pair(truths, preds, 2)?;
    let spp: f64 = preds.iter().map(|p| p * p).sum();
    if spp == 0.0 {
        return Err(MetricError::Undefined("r0 squared (all-zero predictions)"));
    }
    let k = truths.iter().zip(preds).map(|(y, p)| y * p).sum::<f64>() / spp;
    let my = mean(truths);
    let ss_tot: f64 = truths.iter().map(|y| (y - my) * (y - my)).sum();
    if ss_tot == 0.0 {
        return Err(MetricError::Undefined("r0 squared (constant truths)"));
    }
    let ss_res: f64 = truths
        .iter()
        .zip(preds)
        .map(|(y, p)| (y - k * p) * (y - k * p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn r_m_squared(truths: &[f64], preds: &[f64]) -> Result<f64> {
    // Squared correlation from the sums directly, so identical vectors give
    // exactly 1.
    let (cov, vy, vp) = moments(truths, preds)?;
    let r2 = (cov * cov / (vy * vp)).min(1.0);
    let r02 = r0_squared(truths, preds)?;
    Ok(r2 * (1.0 - (r2 - r02).max(0.0).sqrt()))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Points grouped by label, labels relabeled to `0..k` in first-seen order.
fn clusters(points: &[Vec<f64>], labels: &[usize]) -> Result<Vec<Vec<usize>>> {
    if labels.len() != points.len() {
        return Err(MetricError::LabelCount {
            labels: labels.len(),
            points: points.len(),
        });
    }
    if let Some(first) = points.first() {
        if points.iter().any(|p| p.len() != first.len()) {
            return Err(MetricError::Ragged);
        }
    }
    let mut ids: Vec<usize> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match ids.iter().position(|&x| x == l) {
            Some(k) => groups[k].push(i),
            None => {
                ids.push(l);
                groups.push(vec![i]);
            }
        }
    }
    if groups.len() < 2 {
        return Err(MetricError::Undefined(
            "cluster metric (fewer than two clusters)",
        ));
    }
    Ok(groups)
}

fn centroid(points: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; points[members[0]].len()];
    for &i in members {
        for (s, x) in c.iter_mut().zip(&points[i]) {
            *s += x;
        }
    }
    c.iter_mut().for_each(|s| *s /= members.len() as f64);
    c
}

/// Mean silhouette; a point alone in its cluster has `a(i) = 0`.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let groups = clusters(points, labels)?;
    let mut label_of = vec![0; points.len()];
    for (k, g) in groups.iter().enumerate() {
        for &i in g {
            label_of[i] = k;
        }
    }
    let mut total = 0.0;
    for i in 0..points.len() {
        let own = &groups[label_of[i]];
        let a = if own.len() > 1 {
            own.iter()
                .filter(|&&j| j != i)
                .map(|&j| dist(&points[i], &points[j]))
                .sum::<f64>()
                / (own.len() - 1) as f64
        } else {
            0.0
        };
        let b = groups
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != label_of[i])
            .map(|(_, g)| {
                g.iter().map(|&j| dist(&points[i], &points[j])).sum::<f64>() / g.len() as f64
            })
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    Ok(total / points.len() as f64)
}

/// Between/within dispersion ratio scaled by `(n - k) / (k - 1)`. Zero within
/// dispersion yields 1.0.
pub fn calinski_harabasz(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let groups = clusters(points, labels)?;
    let (n, k) = (points.len(), groups.len());
    if n == k {
        return Err(MetricError::Undefined(
            "calinski-harabasz (every point its own cluster)",
        ));
    }
    let all: Vec<usize> = (0..n).collect();
    let overall = centroid(points, &all);
    let mut between = 0.0;
    let mut within = 0.0;
    for g in &groups {
        let c = centroid(points, g);
        between += g.len() as f64 * dist(&c, &overall).powi(2);
        within += g.iter().map(|&i| dist(&points[i], &c).powi(2)).sum::<f64>();
    }
    if within == 0.0 {
        return Ok(1.0);
    }
    Ok(between * (n - k) as f64 / (within * (k - 1) as f64))
}

/// Mean over clusters of the worst `(s_i + s_j) / d(c_i, c_j)`; coincident
/// centroids give infinity.
pub fn davies_bouldin(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let groups = clusters(points, labels)?;
    let cents: Vec<Vec<f64>> = groups.iter().map(|g| centroid(points, g)).collect();
    let scatter: Vec<f64> = groups
        .iter()
        .zip(&cents)
        .map(|(g, c)| g.iter().map(|&i| dist(&points[i], c)).sum::<f64>() / g.len() as f64)
        .collect();
    let mut total = 0.0;
    for i in 0..groups.len() {
        let mut worst: f64 = 0.0;
        for j in 0..groups.len() {
            if i == j {
                continue;
            }
            let d = dist(&cents[i], &cents[j]);
            let r = if d == 0.0 {
                f64::INFINITY
            } else {
                (scatter[i] + scatter[j]) / d
            };
            worst = worst.max(r);
        }
        total += worst;
    }
    Ok(total / groups.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        let m = mean(values);
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        Self { mean: m, std }
    }
}

/// Metrics of a single run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mse: f64,
    pub ci: f64,
    pub rm2: f64,
    pub pearson: f64,
}

impl RegressionMetrics {
    pub fn compute(truths: &[f64], preds: &[f64]) -> Result<Self> {
        Ok(Self {
            mse: mse(truths, preds)?,
            ci: concordance_index(truths, preds)?,
            rm2: r_m_squared(truths, preds)?,
            pearson: pearson(truths, preds)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scenario: String,
    pub runs: usize,
    pub mse: MetricSummary,
    pub ci: MetricSummary,
    pub rm2: MetricSummary,
    pub pearson: MetricSummary,
}

impl EvaluationReport {
    pub fn from_runs(scenario: &str, runs: &[RegressionMetrics]) -> Result<Self> {
        if runs.is_empty() {
            return Err(MetricError::TooFew { needed: 1, got: 0 });
        }
        let pick = |f: fn(&RegressionMetrics) -> f64| {
            MetricSummary::of(&runs.iter().map(f).collect::<Vec<_>>())
        };
        Ok(Self {
            scenario: scenario.to_string(),
            runs: runs.len(),
            mse: pick(|r| r.mse),
            ci: pick(|r| r.ci),
            rm2: pick(|r| r.rm2),
            pearson: pick(|r| r.pearson),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ci_bruteforce(y: &[f64], p: &[f64]) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..y.len() {
            for j in 0..y.len() {
                if y[i] > y[j] {
                    den += 1.0;
                    if p[i] > p[j] {
                        num += 1.0;
                    } else if p[i] == p[j] {
                        num += 0.5;
                    }
                }
            }
        }
        (den > 0.0).then(|| num / den)
    }

    #[test]
    fn ci_examples() {
        assert_eq!(
            concordance_index(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap(),
            2.0 / 3.0
        );
        assert_eq!(
            concordance_index(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            0.0
        );
        assert_eq!(
            concordance_index(&[1.0, 2.0, 3.0], &[0.0, 5.0, 9.0]).unwrap(),
            1.0
        );
        assert_eq!(concordance_index(&[1.0, 2.0], &[4.0, 4.0]).unwrap(), 0.5);
        assert!(matches!(
            concordance_index(&[2.0, 2.0], &[1.0, 0.0]),
            Err(MetricError::Undefined(_))
        ));
    }

    #[test]
    fn pearson_examples() {
        let y = [1.0, 2.0, 3.0];
        assert!((pearson(&y, &[3.0, 5.0, 7.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&y, &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
        // cov = 3, var_y = 2, var_p = 14/3 (sums of squares)
        let expected = 3.0 / (2.0f64.sqrt() * (14.0f64 / 3.0).sqrt());
        assert!((pearson(&y, &[1.0, 2.0, 4.0]).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.982).abs() < 1e-3);
        assert!(pearson(&y, &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn rm2_examples() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(r_m_squared(&y, &y).unwrap(), 1.0);
        let shifted = [11.0, 12.0, 13.0];
        let v = r_m_squared(&y, &shifted).unwrap();
        let r02 = r0_squared(&y, &shifted).unwrap();
        assert!(r02 < 1.0);
        assert!(v < 1.0);
        // k = 74/434; direct evaluation of the definition
        let k = 74.0 / 434.0;
        let ss_res: f64 = y
            .iter()
            .zip(&shifted)
            .map(|(a, b)| (a - k * b) * (a - k * b))
            .sum();
        assert!((r02 - (1.0 - ss_res / 2.0)).abs() < 1e-12);
        assert!((v - (1.0 - (1.0 - r02).sqrt())).abs() < 1e-12);
    }

    #[test]
    fn separated_singletons() {
        let pts = vec![vec![0.0, 0.0], vec![100.0, 0.0]];
        assert_eq!(silhouette(&pts, &[0, 1]).unwrap(), 1.0);
        assert_eq!(davies_bouldin(&pts, &[0, 1]).unwrap(), 0.0);
        assert!(calinski_harabasz(&pts, &[0, 1]).is_err());
        assert!(silhouette(&pts, &[3, 3]).is_err());
    }

    #[test]
    fn four_point_instance() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![5.0, 0.0],
            vec![5.0, 1.0],
        ];
        let labels = [0, 0, 1, 1];
        // a = 1, b = (5 + sqrt 26) / 2 for every point
        let b = (5.0 + 26f64.sqrt()) / 2.0;
        assert!((silhouette(&pts, &labels).unwrap() - (b - 1.0) / b).abs() < 1e-12);
        // between = 4 * 2.5^2 = 25, within = 4 * 0.25 = 1, (n-k)/(k-1) = 2
        assert!((calinski_harabasz(&pts, &labels).unwrap() - 50.0).abs() < 1e-12);
        // scatter 0.5 each, centroid distance 5
        assert!((davies_bouldin(&pts, &labels).unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn coincident_clusters() {
        let pts = vec![vec![0.0], vec![1.0], vec![0.0], vec![1.0]];
        assert_eq!(davies_bouldin(&pts, &[0, 0, 1, 1]).unwrap(), f64::INFINITY);
        assert_eq!(calinski_harabasz(&pts, &[0, 0, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn summary_std_is_sample() {
        let s = MetricSummary::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(MetricSummary::of(&[4.0]).std, 0.0);
    }

    proptest! {
        #[test]
        fn ci_matches_pair_enumeration(
            pairs in prop::collection::vec((0u8..8, 0u8..8), 2..40)
        ) {
            let y: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let p: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            match ci_bruteforce(&y, &p) {
                Some(v) => prop_assert_eq!(concordance_index(&y, &p).unwrap(), v),
                None => prop_assert!(concordance_index(&y, &p).is_err()),
            }
        }

        #[test]
        fn ci_invariant_under_monotone_transform(
            y in prop::collection::vec(-5.0f64..5.0, 3..30),
            p in prop::collection::vec(-5.0f64..5.0, 30)
        ) {
            let p = &p[..y.len()];
            let q: Vec<f64> = p.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            if let (Ok(a), Ok(b)) = (concordance_index(&y, p), concordance_index(&y, &q)) {
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn cluster_metrics_translation_invariant(
            pts in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 6..12),
            shift in -10.0f64..10.0,
            scale in 0.1f64..10.0
        ) {
            let points: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0, p.1]).collect();
            let labels: Vec<usize> = (0..points.len()).map(|i| i % 3).collect();
            let moved: Vec<Vec<f64>> = points.iter().map(|p| p.iter().map(|x| x + shift).collect()).collect();
            let scaled: Vec<Vec<f64>> = points.iter().map(|p| p.iter().map(|x| x * scale).collect()).collect();
            let sc = silhouette(&points, &labels).unwrap();
            prop_assert!((sc - silhouette(&moved, &labels).unwrap()).abs() < 1e-9);
            prop_assert!((sc - silhouette(&scaled, &labels).unwrap()).abs() < 1e-9);
            let ch = calinski_harabasz(&points, &labels).unwrap();
            prop_assert!((ch - calinski_harabasz(&moved, &labels).unwrap()).abs() < 1e-6 * ch.max(1.0));
            let db = davies_bouldin(&points, &labels).unwrap();
            prop_assert!((db - davies_bouldin(&moved, &labels).unwrap()).abs() < 1e-9 * db.max(1.0));
            prop_assert!((db - davies_bouldin(&scaled, &labels).unwrap()).abs() < 1e-9 * db.max(1.0));
        }

        #[test]
        fn rm2_bounded_by_r2(
            y in prop::collection::vec(-5.0f64..5.0, 3..20),
            noise in prop::collection::vec(-1.0f64..1.0, 20)
        ) {
            let p: Vec<f64> = y.iter().zip(&noise).map(|(a, b)| a + b).collect();
            if let (Ok(r), Ok(v)) = (pearson(&y, &p), r_m_squared(&y, &p)) {
                prop_assert!(v <= r * r + 1e-15);
            }
        }
    }
}
