use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

/// Stratified `k`-fold partition of `(id, label)` pairs.
///
/// Each class is shuffled with the seed and dealt round-robin across folds,
/// continuing the deal from one class to the next so fold sizes stay
/// balanced. Ids keep their input order within each split.
pub fn kfold_split(items: &[(String, u8)], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, (_, label)) in items.iter().enumerate() {
        if *label > 1 {
            return Err(Error::InvalidConfig(format!("non-binary label {label}")));
        }
        by_class[usize::from(*label)].push(i);
    }
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < k {
            return Err(Error::TooFewSamples(format!(
                "class {class} has {} bags, fewer than {k} folds",
                members.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; items.len()];
    let mut dealt = 0usize;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            fold_of[i] = dealt % k;
            dealt += 1;
        }
    }

    Ok((0..k)
        .map(|fold| {
            let (val, train): (Vec<usize>, Vec<usize>) = (0..items.len()).partition(|&i| fold_of[i] == fold);
            FoldSplit {
                fold_index: fold,
                train_ids: train.into_iter().map(|i| items[i].0.clone()).collect(),
                val_ids: val.into_iter().map(|i| items[i].0.clone()).collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn items(pos: usize, neg: usize) -> Vec<(String, u8)> {
        (0..pos + neg).map(|i| (format!("b{i}"), u8::from(i < pos))).collect()
    }

    #[test]
    fn perfect_stratification() {
        let data = items(5, 5);
        let folds = kfold_split(&data, 5, 1).unwrap();
        for f in &folds {
            let pos = f.val_ids.iter().filter(|id| data.iter().any(|(i, l)| i == *id && *l == 1)).count();
            assert_eq!((f.val_ids.len(), pos), (2, 1));
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let data = items(13, 22);
        assert_eq!(kfold_split(&data, 5, 3).unwrap(), kfold_split(&data, 5, 3).unwrap());
        assert_ne!(kfold_split(&data, 5, 3).unwrap(), kfold_split(&data, 5, 4).unwrap());
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(kfold_split(&items(3, 10), 5, 0), Err(Error::TooFewSamples(_))));
        assert!(kfold_split(&items(3, 10), 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn partition_and_stratification(pos in 2usize..30, neg in 2usize..30, k in 2usize..6, seed in any::<u64>()) {
            prop_assume!(k <= pos && k <= neg);
            let data = items(pos, neg);
            let folds = kfold_split(&data, k, seed).unwrap();
            prop_assert_eq!(folds.len(), k);
            let mut seen = HashSet::new();
            for f in &folds {
                let val: HashSet<&String> = f.val_ids.iter().collect();
                prop_assert!(f.train_ids.iter().all(|id| !val.contains(id)));
                prop_assert_eq!(f.train_ids.len() + f.val_ids.len(), data.len());
                for id in &f.val_ids {
                    prop_assert!(seen.insert(id.clone()));
                }
                let p = f.val_ids.iter().filter(|id| id[1..].parse::<usize>().unwrap() < pos).count();
                let n = f.val_ids.len() - p;
                prop_assert!((p as f64 - pos as f64 / k as f64).abs() <= 1.0);
                prop_assert!((n as f64 - neg as f64 / k as f64).abs() <= 1.0);
            }
            prop_assert_eq!(seen.len(), data.len());
        }
    }
}
