//! Rating datasets (real or simulated), the two regression designs, the
//! stratified split and the descriptive tables.

mod descriptive;
mod design;
mod split;

pub use descriptive::{
    descriptive_suite, user_weighted_mean, variance_by_group, BeforeAfterRow, DescriptiveSuite,
    FractionRow, GroupVariance, HistogramBin, MonthCorrelation, PersonalizedRow, RetentionRow,
    SongFracRow, HISTOGRAM_BINS,
};
pub use design::{
    build_mean_consistency_design, build_single_rating_design, leave_one_out_means, DesignOutput,
    Exclusion,
};
pub use split::{stratified_split, SplitPair};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::env::{OrdinalRating, Treatment};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    PreTimers,
    PostTimers,
}

impl Period {
    pub fn as_str(self) -> &'static str {
        match self {
            Period::PreTimers => "pre_timers",
            Period::PostTimers => "post_timers",
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Period {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre_timers" => Ok(Period::PreTimers),
            "post_timers" => Ok(Period::PostTimers),
            other => Err(Error::Data(format!("unknown period {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecommenderClass {
    Personalized,
    Random,
}

impl RecommenderClass {
    pub fn as_str(self) -> &'static str {
        match self {
            RecommenderClass::Personalized => "personalized",
            RecommenderClass::Random => "random",
        }
    }
}

impl fmt::Display for RecommenderClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecommenderClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "personalized" => Ok(RecommenderClass::Personalized),
            "random" => Ok(RecommenderClass::Random),
            other => Err(Error::Data(format!("unknown recommender class {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RatingRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: OrdinalRating,
    /// Epoch seconds.
    pub timestamp: i64,
    pub treatment: Option<Treatment>,
    pub period: Option<Period>,
    pub recommender_class: Option<RecommenderClass>,
}

impl RatingRecord {
    pub fn new(
        user_id: impl Into<String>,
        item_id: impl Into<String>,
        rating: OrdinalRating,
    ) -> Self {
        Self {
            user_id: user_id.into(),
            item_id: item_id.into(),
            rating,
            timestamp: 0,
            treatment: None,
            period: None,
            recommender_class: None,
        }
    }

    pub fn group_label(&self, by: GroupBy) -> Option<String> {
        match by {
            GroupBy::Period => self.period.map(|p| p.to_string()),
            GroupBy::Treatment => self.treatment.map(|t| t.to_string()),
        }
    }
}

/// Which optional field defines groups in designs and splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GroupBy {
    Period,
    Treatment,
}

impl GroupBy {
    pub fn field(self) -> &'static str {
        match self {
            GroupBy::Period => "period",
            GroupBy::Treatment => "treatment",
        }
    }

    /// Prefix used in coefficient names, e.g. `Pre_Post[post_timers]`.
    pub fn term_prefix(self) -> &'static str {
        match self {
            GroupBy::Period => "Pre_Post",
            GroupBy::Treatment => "treatment",
        }
    }
}

impl FromStr for GroupBy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "period" => Ok(GroupBy::Period),
            "treatment" => Ok(GroupBy::Treatment),
            other => Err(Error::Config(format!(
                "unknown grouping {other:?} (period|treatment)"
            ))),
        }
    }
}

/// Immutable record list with per-user and per-item indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    records: Vec<RatingRecord>,
    by_user: BTreeMap<String, Vec<usize>>,
    by_item: BTreeMap<String, Vec<usize>>,
}

impl Dataset {
    /// Fails if an optional field is set on some records but not on others.
    pub fn new(records: Vec<RatingRecord>) -> Result<Self> {
        if let Some(first) = records.first() {
            let shape = |r: &RatingRecord| {
                [
                    r.treatment.is_some(),
                    r.period.is_some(),
                    r.recommender_class.is_some(),
                ]
            };
            let expect = shape(first);
            for (i, r) in records.iter().enumerate() {
                let got = shape(r);
                if let Some(k) = (0..3).find(|&k| got[k] != expect[k]) {
                    let field = ["treatment", "period", "recommender_class"][k];
                    return Err(Error::Data(format!(
                        "field `{field}` is set on some records but not on record {i}"
                    )));
                }
            }
        }
        let mut by_user: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_item: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            by_user.entry(r.user_id.clone()).or_default().push(i);
            by_item.entry(r.item_id.clone()).or_default().push(i);
        }
        Ok(Self {
            records,
            by_user,
            by_item,
        })
    }

    pub fn records(&self) -> &[RatingRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<RatingRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record indices per user, users in sorted order.
    pub fn by_user(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.by_user
    }

    pub fn by_item(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.by_item
    }

    pub fn has_treatment(&self) -> bool {
        self.records.first().is_some_and(|r| r.treatment.is_some())
    }

    pub fn has_period(&self) -> bool {
        self.records.first().is_some_and(|r| r.period.is_some())
    }

    pub fn has_recommender_class(&self) -> bool {
        self.records
            .first()
            .is_some_and(|r| r.recommender_class.is_some())
    }

    pub fn has_group(&self, by: GroupBy) -> bool {
        match by {
            GroupBy::Period => self.has_period(),
            GroupBy::Treatment => self.has_treatment(),
        }
    }

    /// Default stratum: period when recorded, else treatment.
    pub fn default_grouping(&self) -> Option<GroupBy> {
        if self.has_period() {
            Some(GroupBy::Period)
        } else if self.has_treatment() {
            Some(GroupBy::Treatment)
        } else {
            None
        }
    }

    /// Simulated ratings as records: ids `u{n}` / `i{n}`, the iteration as
    /// timestamp, and the treatment label if given.
    pub fn from_trace(
        trace: &crate::sim::SimulationTrace,
        treatment: Option<Treatment>,
    ) -> Dataset {
        let records = trace
            .records
            .iter()
            .map(|r| RatingRecord {
                user_id: format!("u{}", r.user),
                item_id: format!("i{}", r.item),
                rating: r.rating,
                timestamp: r.iteration as i64,
                treatment,
                period: None,
                recommender_class: None,
            })
            .collect();
        Dataset::new(records).expect("uniform optional fields")
    }

    /// Records whose flag is set, in original order.
    pub fn subset(&self, keep: &[bool]) -> Dataset {
        let records = self
            .records
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(r, _)| r.clone())
            .collect();
        Dataset::new(records).expect("a subset of a consistent dataset is consistent")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub dataset: Dataset,
    pub removed_users: usize,
    pub removed_items: usize,
    pub removed_records: usize,
    /// Set when nothing survived.
    pub empty: bool,
}

/// Drops users and items with fewer than `k` ratings, repeating until every
/// survivor has at least `k`.
pub fn filter_min_ratings(ds: &Dataset, k: usize) -> Result<FilterOutcome> {
    if k == 0 {
        return Err(Error::Config("min ratings must be >= 1".into()));
    }
    let recs = ds.records();
    let mut alive = vec![true; recs.len()];
    let mut user_n: HashMap<&str, usize> = ds
        .by_user
        .iter()
        .map(|(u, v)| (u.as_str(), v.len()))
        .collect();
    let mut item_n: HashMap<&str, usize> = ds
        .by_item
        .iter()
        .map(|(i, v)| (i.as_str(), v.len()))
        .collect();
    loop {
        let mut changed = false;
        for (i, r) in recs.iter().enumerate() {
            if alive[i] && (user_n[r.user_id.as_str()] < k || item_n[r.item_id.as_str()] < k) {
                alive[i] = false;
                changed = true;
                *user_n.get_mut(r.user_id.as_str()).unwrap() -= 1;
                *item_n.get_mut(r.item_id.as_str()).unwrap() -= 1;
            }
        }
        if !changed {
            break;
        }
    }
    let dataset = ds.subset(&alive);
    Ok(FilterOutcome {
        removed_users: ds.by_user.len() - dataset.by_user.len(),
        removed_items: ds.by_item.len() - dataset.by_item.len(),
        removed_records: ds.len() - dataset.len(),
        empty: dataset.is_empty(),
        dataset,
    })
}

/// Random subsample so that no user and no item has more than `cap` ratings.
///
/// Alternates a user pass and an item pass until neither removes anything.
pub fn cap_ratings(ds: &Dataset, cap: usize, seed: u64) -> Result<Dataset> {
    if cap == 0 {
        return Err(Error::Config("cap must be >= 1".into()));
    }
    let mut g = rng::substream(seed, rng::CAP);
    let mut alive = vec![true; ds.len()];
    loop {
        let mut changed = false;
        for index_map in [&ds.by_user, &ds.by_item] {
            for idx in index_map.values() {
                let live: Vec<usize> = idx.iter().copied().filter(|&i| alive[i]).collect();
                if live.len() > cap {
                    changed = true;
                    let mut keep = vec![false; live.len()];
                    for j in index::sample(&mut g, live.len(), cap) {
                        keep[j] = true;
                    }
                    for (j, &i) in live.iter().enumerate() {
                        alive[i] = keep[j];
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(ds.subset(&alive))
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub fn rec(user: &str, item: &str, rating: u8) -> RatingRecord {
        RatingRecord::new(user, item, OrdinalRating::try_from(rating).unwrap())
    }

    pub fn ds(triples: &[(&str, &str, u8)]) -> Dataset {
        Dataset::new(triples.iter().map(|&(u, i, r)| rec(u, i, r)).collect()).unwrap()
    }
}
