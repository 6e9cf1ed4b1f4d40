use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = MppError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(MppError::Unknown {
                kind: "split",
                name: other.to_string(),
            }),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Shuffles each system's trajectory ids independently (stream `i` of the
/// seeded generator for the `i`-th system) and assigns contiguous
/// train/val/test blocks of sizes `round(f_train n)`, `round(f_val n)`, rest.
pub fn assign_splits(per_system: &[Vec<usize>], fractions: [f64; 3], seed: u64) -> Result<BTreeMap<usize, Split>> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (total - 1.0).abs() > 1e-9 {
        return Err(MppError::config(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let mut out = BTreeMap::new();
    for (sys, ids) in per_system.iter().enumerate() {
        let n = ids.len();
        if n < 3 {
            return Err(MppError::config(format!(
                "system #{sys} has {n} trajectories, fewer than the 3 split classes"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(sys as u64);
        let mut shuffled = ids.clone();
        shuffled.shuffle(&mut rng);
        let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
        let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
        for (i, id) in shuffled.into_iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            if out.insert(id, split).is_some() {
                return Err(MppError::config(format!("trajectory {id} listed twice")));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(map: &BTreeMap<usize, Split>, ids: &[usize]) -> [usize; 3] {
        let mut c = [0; 3];
        for id in ids {
            c[map[id] as usize] += 1;
        }
        c
    }

    #[test]
    fn sizes_follow_fractions() {
        let ids: Vec<usize> = (0..10).collect();
        let map = assign_splits(std::slice::from_ref(&ids), [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!(counts(&map, &ids), [8, 1, 1]);
        let ids: Vec<usize> = (0..1000).collect();
        let map = assign_splits(std::slice::from_ref(&ids), [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!(counts(&map, &ids), [800, 100, 100]);
    }

    #[test]
    fn deterministic_and_per_system() {
        let a: Vec<usize> = (0..20).collect();
        let b: Vec<usize> = (20..50).collect();
        let m1 = assign_splits(&[a.clone(), b.clone()], [0.8, 0.1, 0.1], 9).unwrap();
        let m2 = assign_splits(&[a.clone(), b.clone()], [0.8, 0.1, 0.1], 9).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(counts(&m1, &a), [16, 2, 2]);
        assert_eq!(counts(&m1, &b), [24, 3, 3]);
    }

    #[test]
    fn errors() {
        assert!(assign_splits(&[vec![0, 1]], [0.8, 0.1, 0.1], 0).is_err());
        assert!(assign_splits(&[(0..10).collect()], [0.8, 0.1, 0.2], 0).is_err());
    }
}
