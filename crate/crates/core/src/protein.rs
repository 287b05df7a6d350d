//! Target molecular graphs from sequences and residue contact maps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::molgraph::MolecularGraph;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ProteinError {
    #[error("empty protein sequence")]
    EmptySequence,
    #[error("invalid residue {residue:?} at position {position}")]
    InvalidResidue { residue: char, position: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: non-numeric cell {cell:?}")]
    NonNumeric {
        path: String,
        line: usize,
        cell: String,
    },
    #[error("{path}: expected {expected}x{expected} matrix, found row {line} with {found} cells")]
    RowLength {
        path: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: expected {expected} rows, found {found}")]
    RowCount {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("contact map is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("contact score {value} at ({row}, {col}) outside [0, 1]")]
    OutOfRange { row: usize, col: usize, value: f64 },
    #[error("contact threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("contact density {0} outside [0, 1]")]
    InvalidDensity(f64),
    #[error("PSSM has {found} rows for a sequence of length {expected}")]
    PssmRows { expected: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, ProteinError>;

/// Canonical residue letters followed by `X` (unknown).
pub const RESIDUES: [char; 21] = [
    'A', 'R', 'N', 'D', 'C', 'Q', 'E', 'G', 'H', 'I', 'L', 'K', 'M', 'F', 'P', 'S', 'T', 'W', 'Y',
    'V', 'X',
];

const ALIPHATIC: &[char] = &['A', 'I', 'L', 'V'];
const AROMATIC: &[char] = &['F', 'W', 'Y'];
const POLAR_NEUTRAL: &[char] = &['C', 'N', 'Q', 'S', 'T'];
const ACIDIC: &[char] = &['D', 'E'];
const BASIC: &[char] = &['H', 'K', 'R'];
const HYDROPHOBIC: &[char] = &['A', 'C', 'F', 'I', 'L', 'M', 'P', 'V', 'W'];

pub const RESIDUE_FLAG_COUNT: usize = 6;
pub const PSSM_COLUMNS: usize = 20;
/// Width of alignment-free residue features.
pub const RESIDUE_FEATURE_DIM: usize = RESIDUES.len() + RESIDUE_FLAG_COUNT;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProteinSequence(String);

impl ProteinSequence {
    pub fn new(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Err(ProteinError::EmptySequence);
        }
        if let Some((position, residue)) =
            s.chars().enumerate().find(|(_, c)| !RESIDUES.contains(c))
        {
            return Err(ProteinError::InvalidResidue { residue, position });
        }
        Ok(Self(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn residue(&self, position: usize) -> char {
        self.0.as_bytes()[position] as char
    }
}

/// Symmetric residue-residue score matrix with entries in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ContactMap {
    n: usize,
    scores: Vec<f64>,
}

impl ContactMap {
    pub fn new(n: usize, scores: Vec<f64>) -> Result<Self> {
        assert_eq!(scores.len(), n * n, "contact map data length");
        for r in 0..n {
            for c in 0..n {
                let v = scores[r * n + c];
                if !(0.0..=1.0).contains(&v) {
                    return Err(ProteinError::OutOfRange {
                        row: r,
                        col: c,
                        value: v,
                    });
                }
                if c > r && v != scores[c * n + r] {
                    return Err(ProteinError::NotSymmetric(r, c));
                }
            }
        }
        Ok(Self { n, scores })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.scores[r * self.n + c]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in 0..self.n {
            let row: Vec<String> = (0..self.n)
                .map(|c| format!("{:?}", self.get(r, c)))
                .collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn parse(text: &str, expected: usize, source: &str) -> Result<Self> {
        let rows = parse_matrix(text, source, Some(expected))?;
        if rows.len() != expected {
            return Err(ProteinError::RowCount {
                path: source.to_string(),
                expected,
                found: rows.len(),
            });
        }
        Self::new(expected, rows.into_iter().flatten().collect())
    }
}

fn parse_matrix(text: &str, source: &str, width: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|cell| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ProteinError::NonNumeric {
                        path: source.to_string(),
                        line: i + 1,
                        cell: cell.to_string(),
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(w) = width {
            if row.len() != w {
                return Err(ProteinError::RowLength {
                    path: source.to_string(),
                    line: i + 1,
                    expected: w,
                    found: row.len(),
                });
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| ProteinError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_contact_map(path: &Path, expected_len: usize) -> Result<ContactMap> {
    ContactMap::parse(&read(path)?, expected_len, &path.display().to_string())
}

pub fn write_contact_map(path: &Path, map: &ContactMap) -> Result<()> {
    fs::write(path, map.to_text()).map_err(|source| ProteinError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `n_r x 20` position-specific scoring rows.
pub fn load_pssm(path: &Path, expected_len: usize) -> Result<Vec<Vec<f64>>> {
    let source = path.display().to_string();
    let rows = parse_matrix(&read(path)?, &source, Some(PSSM_COLUMNS))?;
    if rows.len() != expected_len {
        return Err(ProteinError::PssmRows {
            expected: expected_len,
            found: rows.len(),
        });
    }
    Ok(rows)
}

/// Contacts with score ≥ `threshold` plus the backbone chain, as `(p, q)` with
/// `p < q`, sorted.
pub fn contact_edges(map: &ContactMap, threshold: f64) -> Result<Vec<(usize, usize)>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ProteinError::InvalidThreshold(threshold));
    }
    let mut edges = Vec::new();
    for p in 0..map.len() {
        for q in p + 1..map.len() {
            if q == p + 1 || map.get(p, q) >= threshold {
                edges.push((p, q));
            }
        }
    }
    Ok(edges)
}

pub fn residue_features(seq: &ProteinSequence, position: usize) -> Vec<f64> {
    let r = seq.residue(position);
    let mut v = vec![0.0; RESIDUE_FEATURE_DIM];
    let slot = RESIDUES
        .iter()
        .position(|&c| c == r)
        .unwrap_or(RESIDUES.len() - 1);
    v[slot] = 1.0;
    for (k, class) in [
        ALIPHATIC,
        AROMATIC,
        POLAR_NEUTRAL,
        ACIDIC,
        BASIC,
        HYDROPHOBIC,
    ]
    .iter()
    .enumerate()
    {
        if class.contains(&r) {
            v[RESIDUES.len() + k] = 1.0;
        }
    }
    v
}

/// Residue graph; `pssm`, when given, appends its row to every residue.
pub fn target_molecular_graph(
    seq: &ProteinSequence,
    map: &ContactMap,
    threshold: f64,
    pssm: Option<&[Vec<f64>]>,
) -> Result<MolecularGraph> {
    if map.len() != seq.len() {
        return Err(ProteinError::RowCount {
            path: "contact map".into(),
            expected: seq.len(),
            found: map.len(),
        });
    }
    if let Some(p) = pssm {
        if p.len() != seq.len() {
            return Err(ProteinError::PssmRows {
                expected: seq.len(),
                found: p.len(),
            });
        }
    }
    let rows: Vec<Vec<f64>> = (0..seq.len())
        .map(|i| {
            let mut f = residue_features(seq, i);
            if let Some(p) = pssm {
                f.extend_from_slice(&p[i]);
            }
            f
        })
        .collect();
    let features = Tensor::from_rows(&rows).expect("uniform residue feature width");
    let edges = contact_edges(map, threshold)?;
    Ok(MolecularGraph::new(seq.len(), edges, features)
        .expect("sequence is non-empty and edges are in range"))
}

/// Seeded stand-in for a predicted contact map: 1 on the diagonal and the
/// backbone band, and each long-range pair (`|p - q| ≥ 2`) is a contact with
/// probability `density`, scored uniformly in [0.5, 1].
pub fn synthesize_contact_map(len: usize, density: f64, seed: u64) -> Result<ContactMap> {
    if !(0.0..=1.0).contains(&density) {
        return Err(ProteinError::InvalidDensity(density));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = vec![0.0; len * len];
    for p in 0..len {
        scores[p * len + p] = 1.0;
        for q in p + 1..len {
            let v = if q == p + 1 {
                1.0
            } else if rng.gen::<f64>() < density {
                rng.gen_range(0.5..=1.0)
            } else {
                0.0
            };
            scores[p * len + q] = v;
            scores[q * len + p] = v;
        }
    }
    ContactMap::new(len, scores)
}
