//! Deterministic dataset splitting: the stratified train/test split and
//! k-fold partitioning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::DatasetManifest;
use crate::error::{Error, Result};

/// Stratified train/test split at `ratio_train : ratio_test`.
///
/// Per class, `round(n_class * ratio_test / (ratio_train + ratio_test))`
/// samples go to the test side after a seeded shuffle, so the split is
/// disjoint, exhaustive, and preserves class proportions within one sample
/// per class. Returns (train ids, test ids).
pub fn split_dataset(
    manifest: &DatasetManifest,
    ratio_train: u32,
    ratio_test: u32,
    seed: u64,
) -> Result<(Vec<u32>, Vec<u32>)> {
    if ratio_train == 0 || ratio_test == 0 {
        return Err(Error::Config("split ratios must be positive".into()));
    }
    let needed = (ratio_train + ratio_test) as usize;
    if manifest.len() < needed {
        return Err(Error::Data(format!(
            "cannot split {} samples at ratio {ratio_train}/{ratio_test}: need at least {needed}",
            manifest.len()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let test_share = ratio_test as f64 / (ratio_train + ratio_test) as f64;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [0u8, 1u8] {
        let mut ids: Vec<u32> = manifest
            .rows()
            .iter()
            .filter(|r| r.label == class)
            .map(|r| r.id)
            .collect();
        ids.shuffle(&mut rng);
        let n_test = (ids.len() as f64 * test_share).round() as usize;
        test.extend_from_slice(&ids[..n_test]);
        train.extend_from_slice(&ids[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Seeded k-fold partition: every id lands in exactly one validation fold,
/// fold sizes are balanced within one. Returns k (train, validation) pairs.
pub fn kfold(ids: &[u32], k: usize, seed: u64) -> Result<Vec<(Vec<u32>, Vec<u32>)>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if k > ids.len() {
        return Err(Error::Data(format!(
            "cannot make {k} folds from {} samples",
            ids.len()
        )));
    }
    let mut shuffled = ids.to_vec();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, &id) in shuffled.iter().enumerate() {
            if i % k == fold {
                val.push(id);
            } else {
                train.push(id);
            }
        }
        train.sort_unstable();
        val.sort_unstable();
        folds.push((train, val));
    }
    Ok(folds)
}

/// Seeded stratified subset of (id, label) items at `fraction`, rounded per
/// class.
pub fn stratified_subset(
    items: &[(u32, u8)],
    fraction: f64,
    seed: u64,
) -> Result<Vec<(u32, u8)>> {
    if !(0.0..=1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::Config(format!(
            "subset fraction must be in (0, 1], got {fraction}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut subset = Vec::new();
    for class in [0u8, 1u8] {
        let mut ids: Vec<(u32, u8)> = items.iter().copied().filter(|&(_, l)| l == class).collect();
        ids.shuffle(&mut rng);
        let n = (ids.len() as f64 * fraction).round() as usize;
        subset.extend_from_slice(&ids[..n.min(ids.len())]);
    }
    subset.sort_unstable();
    Ok(subset)
}
