use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LabeledDataset;
use crate::error::{Error, Result};

/// Sorted, disjoint train and test index sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn apply(&self, ds: &LabeledDataset) -> Result<(LabeledDataset, LabeledDataset)> {
        Ok((ds.subset(&self.train)?, ds.subset(&self.test)?))
    }
}

fn by_class(ds: &LabeledDataset) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); ds.num_classes()];
    for (i, &l) in ds.labels.iter().enumerate() {
        groups[l].push(i);
    }
    groups
}

/// Per class, `round(f · n)` samples go to train, clamped so both sides
/// keep at least one.
pub fn stratified_split(ds: &LabeledDataset, train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid("stratified_split", format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut idx) in by_class(ds).into_iter().enumerate() {
        let n = idx.len();
        if n == 0 {
            continue;
        }
        if n < 2 {
            return Err(Error::invalid(
                "stratified_split",
                format!("class {class} ({}) has a single sample", ds.class_names[class]),
            ));
        }
        let k = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Per class, `max(1, round(f · n))` indices drawn without replacement;
/// returned sorted.
pub fn subsample_indices(ds: &LabeledDataset, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("subsample_fraction", format!("fraction {fraction} outside (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for mut idx in by_class(ds) {
        if idx.is_empty() {
            continue;
        }
        let k = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len());
        idx.shuffle(&mut rng);
        keep.extend_from_slice(&idx[..k]);
    }
    keep.sort_unstable();
    Ok(keep)
}

pub fn subsample_fraction(ds: &LabeledDataset, fraction: f64, seed: u64) -> Result<LabeledDataset> {
    ds.subset(&subsample_indices(ds, fraction, seed)?)
}

/// `index<TAB>train|test` lines in index order.
pub fn split_manifest(split: &Split) -> String {
    let mut rows: Vec<(usize, &str)> =
        split.train.iter().map(|&i| (i, "train")).chain(split.test.iter().map(|&i| (i, "test"))).collect();
    rows.sort_unstable();
    rows.iter().map(|(i, s)| format!("{i}\t{s}\n")).collect()
}
