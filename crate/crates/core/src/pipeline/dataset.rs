use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{io_err, PipelineError, Result};
use crate::cold_start::parse_similarity_file;
use crate::graph::AffinityMatrix;
use crate::protein::{
    load_contact_map, load_pssm, synthesize_contact_map, ContactMap, ProteinSequence,
};
use crate::smiles::{parse_smiles, DrugMolecule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetKind {
    /// Raw values are K_d in nM, converted to pK_d.
    DavisLike,
    /// Raw values are used as given; the affinity graph is topK-pruned.
    KibaLike,
    Synthetic,
}

impl FromStr for DatasetKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "davis" | "davis-like" => Ok(DatasetKind::DavisLike),
            "kiba" | "kiba-like" => Ok(DatasetKind::KibaLike),
            "synthetic" => Ok(DatasetKind::Synthetic),
            _ => Err(PipelineError::Config(format!(
                "unknown dataset kind {s:?} (expected davis, kiba or synthetic)"
            ))),
        }
    }
}

impl DatasetKind {
    /// Boundary between weak and strong affinities.
    pub fn strong_threshold(self) -> f64 {
        match self {
            DatasetKind::DavisLike | DatasetKind::Synthetic => 7.0,
            DatasetKind::KibaLike => 12.1,
        }
    }

    /// Converts a raw affinity value into the modelled scale.
    pub fn transform(self, raw: f64) -> Option<f64> {
        match self {
            // pK_d = -log10(K_d / 1e9), written so that powers of ten stay exact.
            DatasetKind::DavisLike => (raw > 0.0).then(|| 9.0 - raw.log10()),
            DatasetKind::KibaLike | DatasetKind::Synthetic => Some(raw),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetBundle {
    pub root: PathBuf,
    pub kind: DatasetKind,
    pub drug_ids: Vec<String>,
    pub smiles: Vec<String>,
    pub molecules: Vec<DrugMolecule>,
    pub target_ids: Vec<String>,
    pub sequences: Vec<ProteinSequence>,
    pub contact_maps: Vec<ContactMap>,
    /// Per-target PSSM rows, present for all targets or for none.
    pub pssm: Option<Vec<Vec<Vec<f64>>>>,
    /// Affinities after the kind's transform.
    pub affinity: AffinityMatrix,
    pub sim_drugs: Option<Vec<(String, String, f64)>>,
    pub sim_targets: Option<Vec<(String, String, f64)>>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Non-blank lines split on tabs, with 1-based line numbers.
fn tsv_rows(path: &Path, columns: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let text = read(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<String> = line.split('\t').map(|c| c.trim().to_string()).collect();
        if cells.len() != columns {
            return Err(PipelineError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: format!(
                    "expected {columns} tab-separated columns, found {}",
                    cells.len()
                ),
            });
        }
        rows.push((i + 1, cells));
    }
    Ok(rows)
}

fn index_ids(path: &Path, rows: &[(usize, Vec<String>)]) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::new();
    for (k, (line, cells)) in rows.iter().enumerate() {
        if index.insert(cells[0].clone(), k).is_some() {
            return Err(PipelineError::Parse {
                path: path.display().to_string(),
                line: *line,
                message: format!("duplicate id {:?}", cells[0]),
            });
        }
    }
    Ok(index)
}

/// Reads `drugs.tsv`, `targets.tsv`, `affinities.tsv`, `contact_maps/` and
/// the optional `pssm/`, `sim_drugs.tsv` and `sim_targets.tsv` under `root`.
/// With `synthesize_density` set, targets without a map file get a seeded
/// synthetic map of that long-range contact density.
pub fn load_dataset(
    root: &Path,
    kind: DatasetKind,
    synthesize_density: Option<f64>,
) -> Result<DatasetBundle> {
    let drugs_path = root.join("drugs.tsv");
    let drug_rows = tsv_rows(&drugs_path, 2)?;
    let drug_index = index_ids(&drugs_path, &drug_rows)?;
    let mut molecules = Vec::with_capacity(drug_rows.len());
    for (line, cells) in &drug_rows {
        let mol = parse_smiles(&cells[1]).map_err(|e| PipelineError::Parse {
            path: drugs_path.display().to_string(),
            line: *line,
            message: format!("column {}: {}", e.position + 1, e.kind),
        })?;
        molecules.push(mol);
    }

    let targets_path = root.join("targets.tsv");
    let target_rows = tsv_rows(&targets_path, 2)?;
    let target_index = index_ids(&targets_path, &target_rows)?;
    let mut sequences = Vec::with_capacity(target_rows.len());
    for (line, cells) in &target_rows {
        let seq = ProteinSequence::new(&cells[1]).map_err(|e| PipelineError::Parse {
            path: targets_path.display().to_string(),
            line: *line,
            message: e.to_string(),
        })?;
        sequences.push(seq);
    }
    let target_ids: Vec<String> = target_rows.iter().map(|(_, c)| c[0].clone()).collect();

    let aff_path = root.join("affinities.tsv");
    let mut affinity = AffinityMatrix::new(drug_rows.len(), target_rows.len());
    for (line, cells) in tsv_rows(&aff_path, 3)? {
        let path = aff_path.display().to_string();
        let d = *drug_index
            .get(&cells[0])
            .ok_or_else(|| PipelineError::UnknownId {
                path: path.clone(),
                line,
                kind: "drug",
                id: cells[0].clone(),
            })?;
        let t = *target_index
            .get(&cells[1])
            .ok_or_else(|| PipelineError::UnknownId {
                path: path.clone(),
                line,
                kind: "target",
                id: cells[1].clone(),
            })?;
        let parse_err = |message: String| PipelineError::Parse {
            path: path.clone(),
            line,
            message,
        };
        let raw: f64 = cells[2]
            .parse()
            .map_err(|_| parse_err(format!("non-numeric affinity {:?}", cells[2])))?;
        let v = kind
            .transform(raw)
            .filter(|v| v.is_finite())
            .ok_or_else(|| parse_err(format!("affinity {raw} is invalid for this dataset kind")))?;
        affinity
            .insert(d, t, v)
            .map_err(|e| parse_err(e.to_string()))?;
    }

    let maps_dir = root.join("contact_maps");
    let mut contact_maps = Vec::with_capacity(target_ids.len());
    for (j, (id, seq)) in target_ids.iter().zip(&sequences).enumerate() {
        let path = maps_dir.join(format!("{id}.txt"));
        let map = match (path.exists(), synthesize_density) {
            (true, _) => load_contact_map(&path, seq.len())?,
            (false, Some(density)) => {
                synthesize_contact_map(seq.len(), density, 0x5eed_0000 + j as u64)?
            }
            (false, None) => {
                return Err(PipelineError::Io {
                    path,
                    source: std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        "missing contact map",
                    ),
                })
            }
        };
        contact_maps.push(map);
    }

    let pssm_dir = root.join("pssm");
    let pssm = if pssm_dir.is_dir() {
        let rows = target_ids
            .iter()
            .zip(&sequences)
            .map(|(id, seq)| load_pssm(&pssm_dir.join(format!("{id}.txt")), seq.len()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Some(rows)
    } else {
        None
    };

    let sim = |name: &str| -> Result<Option<Vec<(String, String, f64)>>> {
        let path = root.join(name);
        if !path.exists() {
            return Ok(None);
        }
        parse_similarity_file(&read(&path)?)
            .map(Some)
            .map_err(|e| PipelineError::Parse {
                path: path.display().to_string(),
                line: 0,
                message: e.to_string(),
            })
    };

    Ok(DatasetBundle {
        root: root.to_path_buf(),
        kind,
        drug_ids: drug_rows.iter().map(|(_, c)| c[0].clone()).collect(),
        smiles: drug_rows.iter().map(|(_, c)| c[1].clone()).collect(),
        molecules,
        target_ids,
        sequences,
        contact_maps,
        pssm,
        affinity,
        sim_drugs: sim("sim_drugs.tsv")?,
        sim_targets: sim("sim_targets.tsv")?,
    })
}

impl DatasetBundle {
    pub fn n_drugs(&self) -> usize {
        self.drug_ids.len()
    }

    pub fn n_targets(&self) -> usize {
        self.target_ids.len()
    }

    pub fn drug_index(&self, id: &str) -> Option<usize> {
        self.drug_ids.iter().position(|d| d == id)
    }

    pub fn target_index(&self, id: &str) -> Option<usize> {
        self.target_ids.iter().position(|t| t == id)
    }
}
