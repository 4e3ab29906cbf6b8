use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Manifest;
use crate::error::{Error, Result};

/// Excerpt-level train/validation partition for one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: BTreeSet<String>,
    pub val_ids: BTreeSet<String>,
}

/// Shuffles the distinct ids with `seed` and cuts them into `k` contiguous
/// blocks; the first `len % k` blocks take one extra id.
pub fn split_ids(ids: &[String], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    let unique: BTreeSet<&String> = ids.iter().collect();
    if k < 2 {
        return Err(Error::Argument(format!("need at least 2 folds, got {k}")));
    }
    if unique.len() < k {
        return Err(Error::Argument(format!(
            "{} distinct excerpts cannot fill {k} folds",
            unique.len()
        )));
    }
    let mut order: Vec<String> = unique.into_iter().cloned().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (order.len() / k, order.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for fold_index in 0..k {
        let size = base + usize::from(fold_index < extra);
        let val_ids: BTreeSet<String> = order[start..start + size].iter().cloned().collect();
        let train_ids = order
            .iter()
            .filter(|id| !val_ids.contains(*id))
            .cloned()
            .collect();
        folds.push(FoldSplit {
            fold_index,
            train_ids,
            val_ids,
        });
        start += size;
    }
    Ok(folds)
}

/// k-fold split over the manifest's excerpt ids.
pub fn split_folds(manifest: &Manifest, k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    split_ids(&manifest.excerpt_ids(), k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("ex{i:03}")).collect()
    }

    #[test]
    fn sizes_and_coverage() {
        let folds = split_ids(&ids(100), 5, 1).unwrap();
        assert!(folds
            .iter()
            .all(|f| f.val_ids.len() == 20 && f.train_ids.len() == 80));
        let sizes: Vec<usize> = split_ids(&ids(101), 5, 1)
            .unwrap()
            .iter()
            .map(|f| f.val_ids.len())
            .collect();
        assert_eq!(sizes, vec![21, 20, 20, 20, 20]);
        let union: BTreeSet<String> = folds
            .iter()
            .flat_map(|f| f.val_ids.iter().cloned())
            .collect();
        assert_eq!(union.len(), 100);
        for f in &folds {
            assert!(f.train_ids.is_disjoint(&f.val_ids));
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        assert_eq!(
            split_ids(&ids(30), 5, 7).unwrap(),
            split_ids(&ids(30), 5, 7).unwrap()
        );
        assert_ne!(
            split_ids(&ids(30), 5, 7).unwrap(),
            split_ids(&ids(30), 5, 8).unwrap()
        );
    }

    #[test]
    fn too_few_excerpts() {
        assert!(split_ids(&ids(4), 5, 0).is_err());
        let dup = vec!["a".to_string(); 10];
        assert!(split_ids(&dup, 5, 0).is_err());
    }
}
