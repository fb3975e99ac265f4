use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Dataset, GroupBy};
use crate::error::Result;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
}

/// Halves the dataset so that each (item, stratum) cell differs by at most one
/// rating between train and test. Records are shuffled within the cell and
/// dealt alternately, starting on a random side.
pub fn stratified_split(ds: &Dataset, stratum: Option<GroupBy>, seed: u64) -> Result<SplitPair> {
    let mut cells: BTreeMap<(&str, String), Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.records().iter().enumerate() {
        let key = stratum.and_then(|s| r.group_label(s)).unwrap_or_default();
        cells.entry((&r.item_id, key)).or_default().push(i);
    }
    let mut g = rng::substream(seed, rng::SPLIT);
    let mut to_train = vec![false; ds.len()];
    for idx in cells.values_mut() {
        idx.shuffle(&mut g);
        let first_train = g.random_bool(0.5);
        for (k, &i) in idx.iter().enumerate() {
            to_train[i] = (k % 2 == 0) == first_train;
        }
    }
    let to_test: Vec<bool> = to_train.iter().map(|t| !t).collect();
    Ok(SplitPair {
        train: ds.subset(&to_train),
        test: ds.subset(&to_test),
    })
}
