//! Family-level dataset split. A family is every contract sharing a
//! skeleton hash (bytecode with PUSH immediates zeroed).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bytecode::CodeHash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assignment {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySplit {
    /// Family (skeleton hash) → split.
    pub families: BTreeMap<CodeHash, Assignment>,
    /// Canonical hash → family.
    pub members: BTreeMap<CodeHash, CodeHash>,
}

impl FamilySplit {
    pub fn assignment(&self, hash: &CodeHash) -> Option<Assignment> {
        self.members.get(hash).and_then(|f| self.families.get(f)).copied()
    }

    pub fn family_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for a in self.families.values() {
            c[*a as usize] += 1;
        }
        c
    }
}

/// Shuffle families with `seed` and hand out the first
/// `round(F·r_train/Σr)` to train, the next `round(F·r_val/Σr)` to
/// validation and the rest to test.
pub fn family_split(items: &[(CodeHash, CodeHash)], ratios: [u32; 3], seed: u64) -> FamilySplit {
    let members: BTreeMap<CodeHash, CodeHash> = items.iter().copied().collect();
    let mut fams: Vec<CodeHash> = members.values().copied().collect();
    fams.sort();
    fams.dedup();
    fams.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let f = fams.len();
    let total: u32 = ratios.iter().sum::<u32>().max(1);
    let n_train = ((f as f64 * ratios[0] as f64 / total as f64).round() as usize).min(f);
    let n_val = ((f as f64 * ratios[1] as f64 / total as f64).round() as usize).min(f - n_train);
    let families = fams
        .into_iter()
        .enumerate()
        .map(|(i, fam)| {
            let a = if i < n_train {
                Assignment::Train
            } else if i < n_train + n_val {
                Assignment::Val
            } else {
                Assignment::Test
            };
            (fam, a)
        })
        .collect();
    FamilySplit { families, members }
}
