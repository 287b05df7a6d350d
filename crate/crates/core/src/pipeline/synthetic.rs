use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{io_err, PipelineError, Result};
use crate::protein::{synthesize_contact_map, write_contact_map};

const DRUG_POOL: [&str; 12] = [
    "CCO",
    "CC(=O)Oc1ccccc1C(=O)O",
    "c1ccccc1O",
    "CN1C=NC2=C1C(=O)N(C(=O)N2C)C",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "C1CCNCC1",
    "OC(=O)c1ccncc1",
    "Nc1ccc(cc1)S(=O)(=O)N",
    "CC(=O)Nc1ccc(O)cc1",
    "C1=CC=C(C=C1)C=O",
    "ClC(Cl)Cl",
    "CCN(CC)CC",
];

const AMINO_ACIDS: &[u8] = b"ACDEFGHIKLMNPQRSTVWY";

/// Shape of a planted dataset: every pair gets `7 + u_d · v_t` with random
/// low-rank factors, so the signal is learnable from the entity identities.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedSpec {
    pub n_drugs: usize,
    pub n_targets: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub rank: usize,
    pub contact_density: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            n_drugs: 8,
            n_targets: 6,
            min_len: 40,
            max_len: 60,
            rank: 2,
            contact_density: 0.05,
            seed: 0,
        }
    }
}

/// Writes a dense planted dataset in the standard directory layout.
pub fn write_planted_dataset(dir: &Path, spec: &PlantedSpec) -> Result<()> {
    if spec.n_drugs == 0 || spec.n_drugs > DRUG_POOL.len() {
        return Err(PipelineError::Config(format!(
            "n_drugs must lie in 1..={}",
            DRUG_POOL.len()
        )));
    }
    if spec.n_targets == 0 || spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(PipelineError::Config(
            "need at least one target and 0 < min_len <= max_len".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let maps = dir.join("contact_maps");
    fs::create_dir_all(&maps).map_err(io_err(&maps))?;

    let mut drugs = String::new();
    for (i, smiles) in DRUG_POOL.iter().take(spec.n_drugs).enumerate() {
        writeln!(drugs, "D{i}\t{smiles}").expect("writing to a String");
    }
    let mut targets = String::new();
    for j in 0..spec.n_targets {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let seq: String = (0..len)
            .map(|_| AMINO_ACIDS[rng.gen_range(0..AMINO_ACIDS.len())] as char)
            .collect();
        writeln!(targets, "T{j}\t{seq}").expect("writing to a String");
        let map = synthesize_contact_map(len, spec.contact_density, rng.gen())?;
        write_contact_map(&maps.join(format!("T{j}.txt")), &map)?;
    }

    let mut factor = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..spec.rank).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    };
    let u = factor(spec.n_drugs);
    let v = factor(spec.n_targets);
    let mut affinities = String::new();
    for (i, ui) in u.iter().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            let y = 7.0 + ui.iter().zip(vj).map(|(a, b)| a * b).sum::<f64>();
            writeln!(affinities, "D{i}\tT{j}\t{y}").expect("writing to a String");
        }
    }

    for (name, text) in [
        ("drugs.tsv", drugs),
        ("targets.tsv", targets),
        ("affinities.tsv", affinities),
    ] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{load_dataset, DatasetKind};

    #[test]
    fn planted_dataset_loads() {
        let dir = tempfile::tempdir().unwrap();
        write_planted_dataset(dir.path(), &PlantedSpec::default()).unwrap();
        let b = load_dataset(dir.path(), DatasetKind::Synthetic, None).unwrap();
        assert_eq!((b.n_drugs(), b.n_targets()), (8, 6));
        assert_eq!(b.affinity.len(), 48);
        assert!(b.sequences.iter().all(|s| (40..=60).contains(&s.len())));
    }
}
