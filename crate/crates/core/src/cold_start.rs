//! Similarity measures and embedding inference for entities that are absent
//! from the training affinity graph.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::smiles::{BondOrder, DrugMolecule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ColdStartError {
    #[error("simK must be at least 1")]
    ZeroK,
    #[error("simK = {k} exceeds the {known} known entities")]
    TooFewKnown { k: usize, known: usize },
    #[error("similarity row has {found} entries for {expected} known entities")]
    RowLength { expected: usize, found: usize },
    #[error("similarity {value} at column {column} outside [0, 1]")]
    OutOfRange { column: usize, value: f64 },
    #[error("known embeddings have inconsistent widths")]
    Ragged,
    #[error("fingerprint lengths differ: {0} vs {1}")]
    FingerprintLength(usize, usize),
    #[error("empty sequence")]
    EmptySequence,
    #[error("line {line}: {message}")]
    SimilarityFile { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, ColdStartError>;

pub const FINGERPRINT_BITS: usize = 1024;
pub const MAX_PATH_ATOMS: usize = 7;

/// Folded bit set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fingerprint {
    bits: Vec<bool>,
}

impl Fingerprint {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_set(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn atom_label(mol: &DrugMolecule, i: usize) -> String {
    let a = &mol.atoms[i];
    if a.aromatic {
        a.element.to_ascii_lowercase()
    } else {
        a.element.clone()
    }
}

/// Canonical label of a linear path: the smaller of its forward and reverse
/// spellings, so each undirected path hashes once.
pub fn path_label(atoms: &[String], bonds: &[BondOrder]) -> String {
    let spell = |rev: bool| {
        let mut s = String::new();
        let n = atoms.len();
        for k in 0..n {
            let ai = if rev { n - 1 - k } else { k };
            if k > 0 {
                let bi = if rev { n - 1 - k } else { k - 1 };
                s.push(bonds[bi].symbol());
            }
            s.push_str(&atoms[ai]);
        }
        s
    };
    let (f, r) = (spell(false), spell(true));
    if r < f {
        r
    } else {
        f
    }
}

/// Canonical labels of all simple paths of 1 to [`MAX_PATH_ATOMS`] atoms.
pub fn linear_paths(mol: &DrugMolecule) -> BTreeSet<String> {
    let labels: Vec<String> = (0..mol.atoms.len()).map(|i| atom_label(mol, i)).collect();
    let adjacency: Vec<Vec<(usize, BondOrder)>> = (0..mol.atoms.len())
        .map(|i| mol.neighbors(i).collect())
        .collect();
    let mut out = BTreeSet::new();
    let mut path = Vec::new();
    let mut bonds = Vec::new();
    fn walk(
        at: usize,
        adjacency: &[Vec<(usize, BondOrder)>],
        labels: &[String],
        path: &mut Vec<usize>,
        bonds: &mut Vec<BondOrder>,
        out: &mut BTreeSet<String>,
    ) {
        path.push(at);
        let atoms: Vec<String> = path.iter().map(|&i| labels[i].clone()).collect();
        out.insert(path_label(&atoms, bonds));
        if path.len() < MAX_PATH_ATOMS {
            for &(next, order) in &adjacency[at] {
                if !path.contains(&next) {
                    bonds.push(order);
                    walk(next, adjacency, labels, path, bonds, out);
                    bonds.pop();
                }
            }
        }
        path.pop();
    }
    for start in 0..mol.atoms.len() {
        walk(start, &adjacency, &labels, &mut path, &mut bonds, &mut out);
    }
    out
}

/// Hashed linear-path fingerprint folded to [`FINGERPRINT_BITS`] bits.
pub fn fingerprint(mol: &DrugMolecule) -> Fingerprint {
    let mut bits = vec![false; FINGERPRINT_BITS];
    for label in linear_paths(mol) {
        bits[(fnv1a(label.as_bytes()) % FINGERPRINT_BITS as u64) as usize] = true;
    }
    Fingerprint { bits }
}

/// `|a ∩ b| / |a ∪ b|`, with two empty sets scoring 0.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    if a.len() != b.len() {
        return Err(ColdStartError::FingerprintLength(a.len(), b.len()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SwScoring {
    pub match_score: i64,
    pub mismatch: i64,
    pub gap: i64,
}

impl Default for SwScoring {
    fn default() -> Self {
        Self {
            match_score: 2,
            mismatch: -1,
            gap: -1,
        }
    }
}

/// Best local-alignment score with linear gaps.
pub fn smith_waterman_score(a: &[u8], b: &[u8], scoring: &SwScoring) -> i64 {
    let mut prev = vec![0i64; b.len() + 1];
    let mut cur = vec![0i64; b.len() + 1];
    let mut best = 0;
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            let sub = if x == y {
                scoring.match_score
            } else {
                scoring.mismatch
            };
            let v = (prev[j] + sub)
                .max(prev[j + 1] + scoring.gap)
                .max(cur[j] + scoring.gap)
                .max(0);
            cur[j + 1] = v;
            best = best.max(v);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// `SW(a, b) / sqrt(SW(a, a) * SW(b, b))`.
pub fn smith_waterman_similarity(a: &str, b: &str, scoring: &SwScoring) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(ColdStartError::EmptySequence);
    }
    let (a, b) = (a.as_bytes(), b.as_bytes());
    let ab = smith_waterman_score(a, b, scoring) as f64;
    let aa = smith_waterman_score(a, a, scoring) as f64;
    let bb = smith_waterman_score(b, b, scoring) as f64;
    if aa == 0.0 || bb == 0.0 {
        return Ok(0.0);
    }
    // Integer scores keep aa * bb exact, so self-similarity is exactly 1.
    Ok((ab / (aa * bb).sqrt()).min(1.0))
}

/// Indices of the `k` most similar known entities, ties broken by lower index.
pub fn top_k(similarities: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..similarities.len()).collect();
    order.sort_by(|&i, &j| similarities[j].total_cmp(&similarities[i]).then(i.cmp(&j)));
    order.truncate(k);
    order
}

fn check_row(similarities: &[f64], known: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Err(ColdStartError::ZeroK);
    }
    if similarities.len() != known {
        return Err(ColdStartError::RowLength {
            expected: known,
            found: similarities.len(),
        });
    }
    if k > known {
        return Err(ColdStartError::TooFewKnown { k, known });
    }
    if let Some((column, &value)) = similarities
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(ColdStartError::OutOfRange { column, value });
    }
    Ok(())
}

/// The `k` nearest known entities with their similarities renormalized to
/// sum to 1. If every selected similarity is zero the weights are uniform.
pub fn neighbor_weights(similarities: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
    check_row(similarities, similarities.len(), k)?;
    let picked = top_k(similarities, k);
    let total: f64 = picked.iter().map(|&i| similarities[i]).sum();
    Ok(picked
        .into_iter()
        .map(|i| {
            let w = if total > 0.0 {
                similarities[i] / total
            } else {
                1.0 / k as f64
            };
            (i, w)
        })
        .collect())
}

/// Similarity-weighted mean of the `k` nearest known embeddings.
pub fn infer_unseen_embedding(
    similarities: &[f64],
    known: &[Vec<f64>],
    k: usize,
) -> Result<Vec<f64>> {
    check_row(similarities, known.len(), k)?;
    let width = known[0].len();
    if known.iter().any(|e| e.len() != width) {
        return Err(ColdStartError::Ragged);
    }
    let mut out = vec![0.0; width];
    for (i, w) in neighbor_weights(similarities, k)? {
        for (o, x) in out.iter_mut().zip(&known[i]) {
            *o += w * x;
        }
    }
    Ok(out)
}

/// Parses `unseen_id known_id value` rows (tab or space separated; blank
/// lines and `#` comments skipped).
pub fn parse_similarity_file(text: &str) -> Result<Vec<(String, String, f64)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |message: String| ColdStartError::SimilarityFile {
            line: i + 1,
            message,
        };
        let cells: Vec<&str> = line.split_whitespace().collect();
        if cells.len() != 3 {
            return Err(fail(format!("expected 3 columns, found {}", cells.len())));
        }
        let v: f64 = cells[2]
            .parse()
            .map_err(|_| fail(format!("non-numeric value {:?}", cells[2])))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(fail(format!("similarity {v} outside [0, 1]")));
        }
        out.push((cells[0].to_string(), cells[1].to_string(), v));
    }
    Ok(out)
}
