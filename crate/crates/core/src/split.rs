//! Train/test partitions for the four evaluation scenarios.
//!
//! S1 samples known entries, S2 samples drugs, S3 samples targets and S4
//! samples both a drug subset and a target subset. For S2–S4 the test fraction
//! applies to the entity count.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::AffinityMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("test fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
    #[error("{scenario} needs at least 2 {unit}, found {found}")]
    TooSmall {
        scenario: Scenario,
        unit: &'static str,
        found: usize,
    },
    #[error("unknown scenario {0:?} (expected S1, S2, S3 or S4)")]
    UnknownScenario(String),
    #[error("cross-validation needs 2 <= k <= {units} folds, got {k}")]
    InvalidFolds { k: usize, units: usize },
}

pub type Result<T> = std::result::Result<T, SplitError>;

pub const DEFAULT_TEST_FRACTION: f64 = 1.0 / 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    S1,
    S2,
    S3,
    S4,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4];

    /// Whether test drugs are absent from training.
    pub fn unseen_drugs(self) -> bool {
        matches!(self, Scenario::S2 | Scenario::S4)
    }

    /// Whether test targets are absent from training.
    pub fn unseen_targets(self) -> bool {
        matches!(self, Scenario::S3 | Scenario::S4)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scenario::S1 => "S1",
            Scenario::S2 => "S2",
            Scenario::S3 => "S3",
            Scenario::S4 => "S4",
        };
        f.write_str(s)
    }
}

impl FromStr for Scenario {
    type Err = SplitError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "S1" => Ok(Scenario::S1),
            "S2" => Ok(Scenario::S2),
            "S3" => Ok(Scenario::S3),
            "S4" => Ok(Scenario::S4),
            _ => Err(SplitError::UnknownScenario(s.to_string())),
        }
    }
}

pub type Pair = (usize, usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioSplit {
    pub scenario: Scenario,
    pub seed: u64,
    pub train: BTreeSet<Pair>,
    pub test: BTreeSet<Pair>,
    /// S4 only: pairs mixing a test entity with a training entity.
    pub excluded: BTreeSet<Pair>,
    pub test_drugs: BTreeSet<usize>,
    pub test_targets: BTreeSet<usize>,
}

/// Number of units assigned to the test side: `round(n * fraction)` kept
/// within `[1, n - 1]`.
pub fn test_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

fn sample(units: &[usize], fraction: f64, rng: &mut ChaCha8Rng) -> BTreeSet<usize> {
    let mut shuffled = units.to_vec();
    shuffled.shuffle(rng);
    shuffled.truncate(test_count(units.len(), fraction));
    shuffled.into_iter().collect()
}

fn require(scenario: Scenario, unit: &'static str, found: usize) -> Result<()> {
    if found < 2 {
        return Err(SplitError::TooSmall {
            scenario,
            unit,
            found,
        });
    }
    Ok(())
}

/// Splits the known entries of `aff` (masked entries included).
pub fn split(
    aff: &AffinityMatrix,
    scenario: Scenario,
    test_fraction: f64,
    seed: u64,
) -> Result<ScenarioSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(SplitError::InvalidFraction(test_fraction));
    }
    let pairs: Vec<Pair> = aff.entries().map(|(d, t, _)| (d, t)).collect();
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
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ScenarioSplit {
        scenario,
        seed,
        train: BTreeSet::new(),
        test: BTreeSet::new(),
        excluded: BTreeSet::new(),
        test_drugs: BTreeSet::new(),
        test_targets: BTreeSet::new(),
    };
    match scenario {
        Scenario::S1 => {
            require(scenario, "known entries", pairs.len())?;
            let idx: Vec<usize> = (0..pairs.len()).collect();
            let picked = sample(&idx, test_fraction, &mut rng);
            for (i, &p) in pairs.iter().enumerate() {
                if picked.contains(&i) {
                    out.test.insert(p);
                } else {
                    out.train.insert(p);
                }
            }
        }
        Scenario::S2 | Scenario::S3 | Scenario::S4 => {
            if scenario.unseen_drugs() {
                require(scenario, "drugs", drugs.len())?;
                out.test_drugs = sample(&drugs, test_fraction, &mut rng);
            }
            if scenario.unseen_targets() {
                require(scenario, "targets", targets.len())?;
                out.test_targets = sample(&targets, test_fraction, &mut rng);
            }
            for &(d, t) in &pairs {
                let td = out.test_drugs.contains(&d);
                let tt = out.test_targets.contains(&t);
                let bucket = match scenario {
                    Scenario::S2 => {
                        if td {
                            &mut out.test
                        } else {
                            &mut out.train
                        }
                    }
                    Scenario::S3 => {
                        if tt {
                            &mut out.test
                        } else {
                            &mut out.train
                        }
                    }
                    _ => match (td, tt) {
                        (true, true) => &mut out.test,
                        (false, false) => &mut out.train,
                        _ => &mut out.excluded,
                    },
                };
                bucket.insert((d, t));
            }
        }
    }
    Ok(out)
}

impl ScenarioSplit {
    pub fn role(&self, pair: Pair) -> Option<&'static str> {
        if self.train.contains(&pair) {
            Some("train")
        } else if self.test.contains(&pair) {
            Some("test")
        } else if self.excluded.contains(&pair) {
            Some("excluded")
        } else {
            None
        }
    }

    /// One `drug<TAB>target<TAB>role` line per pair, in (drug, target) index
    /// order.
    pub fn manifest(&self, drug_ids: &[String], target_ids: &[String]) -> String {
        let all: BTreeSet<Pair> = self
            .train
            .iter()
            .chain(&self.test)
            .chain(&self.excluded)
            .copied()
            .collect();
        let mut out = String::new();
        for p in all {
            let role = self.role(p).expect("pair drawn from the split");
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                drug_ids[p.0], target_ids[p.1], role
            ));
        }
        out
    }

    /// Hex SHA-256 of the manifest, identifying the training partition.
    pub fn digest(&self, drug_ids: &[String], target_ids: &[String]) -> String {
        let hash = Sha256::digest(self.manifest(drug_ids, target_ids).as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn train_drugs(&self) -> BTreeSet<usize> {
        self.train.iter().map(|p| p.0).collect()
    }

    pub fn train_targets(&self) -> BTreeSet<usize> {
        self.train.iter().map(|p| p.1).collect()
    }
}

/// Partitions the training pairs into `k` folds, each returned as
/// `(fit, validation)`. Folds are formed over the same units the scenario
/// samples (entries for S1, drugs for S2 and S4, targets for S3).
pub fn cross_validation_folds(
    split: &ScenarioSplit,
    k: usize,
    seed: u64,
) -> Result<Vec<(BTreeSet<Pair>, BTreeSet<Pair>)>> {
    let unit_of = |p: &Pair| match split.scenario {
        Scenario::S1 => *p,
        Scenario::S2 | Scenario::S4 => (p.0, 0),
        Scenario::S3 => (0, p.1),
    };
    let units: Vec<Pair> = split
        .train
        .iter()
        .map(unit_of)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if k < 2 || k > units.len() {
        return Err(SplitError::InvalidFolds {
            k,
            units: units.len(),
        });
    }
    let mut shuffled = units;
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: std::collections::BTreeMap<Pair, usize> = shuffled
        .iter()
        .enumerate()
        .map(|(i, &u)| (u, i % k))
        .collect();
    let mut folds = vec![(BTreeSet::new(), BTreeSet::new()); k];
    for p in &split.train {
        let f = fold_of[&unit_of(p)];
        for (i, fold) in folds.iter_mut().enumerate() {
            if i == f {
                fold.1.insert(*p);
            } else {
                fold.0.insert(*p);
            }
        }
    }
    Ok(folds)
}
