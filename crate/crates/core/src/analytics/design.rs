use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use super::{Dataset, GroupBy, RecommenderClass, SplitPair};
use crate::error::{Error, Result};
use crate::stats::{mean, standardize_named, DesignMatrix};

/// A row left out of a design, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Exclusion {
    pub key: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOutput {
    pub design: DesignMatrix,
    pub exclusions: Vec<Exclusion>,
    /// Candidate rows before exclusions.
    pub candidate_rows: usize,
}

/// Leave-one-out (user, item) mean for every record: the mean of the same
/// user's (item's) other ratings, or `None` when there are no others.
pub fn leave_one_out_means(ds: &Dataset) -> Vec<(Option<f64>, Option<f64>)> {
    let totals = |index: &BTreeMap<String, Vec<usize>>| {
        let mut out = vec![(0.0, 0usize); ds.len()];
        for idx in index.values() {
            let sum: f64 = idx
                .iter()
                .map(|&i| ds.records()[i].rating.value() as f64)
                .sum();
            for &i in idx {
                out[i] = (sum, idx.len());
            }
        }
        out
    };
    let loo = |(sum, n): (f64, usize), r: f64| (n > 1).then(|| (sum - r) / (n - 1) as f64);
    let users = totals(ds.by_user());
    let items = totals(ds.by_item());
    ds.records()
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let r = rec.rating.value() as f64;
            (loo(users[i], r), loo(items[i], r))
        })
        .collect()
}

struct Columns {
    names: Vec<String>,
    cols: Vec<Vec<f64>>,
}

impl Columns {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            cols: Vec::new(),
        }
    }

    fn push(&mut self, name: impl Into<String>, col: Vec<f64>) {
        self.names.push(name.into());
        self.cols.push(col);
    }

    fn interaction(&mut self, a: &str, b: &str, x: &[f64], y: &[f64]) {
        self.push(
            format!("{a}:{b}"),
            x.iter().zip(y).map(|(p, q)| p * q).collect(),
        );
    }

    fn finish(self, response_name: &str, response: Vec<f64>) -> Result<DesignMatrix> {
        DesignMatrix::from_columns(self.names, self.cols, response_name, response)
    }
}

/// Group labels per row, sorted levels, and the first level as reference.
fn group_levels(labels: &[String]) -> Vec<String> {
    labels
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn push_group_dummies(
    cols: &mut Columns,
    by: Option<GroupBy>,
    labels: &[String],
    levels: &[String],
) {
    match by {
        None => cols.push("Intercept", vec![1.0; labels.len()]),
        Some(by) => {
            for level in levels {
                let d = labels.iter().map(|l| (l == level) as u8 as f64).collect();
                cols.push(format!("{}[{level}]", by.term_prefix()), d);
            }
        }
    }
}

/// `x` crossed with every non-reference group dummy.
fn push_group_interactions(
    cols: &mut Columns,
    by: Option<GroupBy>,
    name: &str,
    x: &[f64],
    labels: &[String],
    levels: &[String],
) {
    let Some(by) = by else { return };
    for level in levels.iter().skip(1) {
        let d: Vec<f64> = labels.iter().map(|l| (l == level) as u8 as f64).collect();
        cols.interaction(name, &format!("{}[T.{level}]", by.term_prefix()), x, &d);
    }
}

fn check_grouping(ds: &Dataset, by: Option<GroupBy>, analysis: &'static str) -> Result<()> {
    match by {
        Some(GroupBy::Period) if !ds.has_period() => Err(Error::MissingField {
            field: "period",
            analysis,
        }),
        Some(GroupBy::Treatment) if !ds.has_treatment() => Err(Error::MissingField {
            field: "treatment",
            analysis,
        }),
        _ => Ok(()),
    }
}

fn label(by: Option<GroupBy>, rec: &super::RatingRecord) -> String {
    by.and_then(|b| rec.group_label(b))
        .unwrap_or_else(|| "all".into())
}

/// One row per rating; response is the raw rating.
///
/// Group constants replace a global intercept. Means and counts are
/// standardized over the rows that survive; interactions are products of the
/// standardized columns. A `personalized` 0/1 column is added when the class
/// is recorded and varies.
pub fn build_single_rating_design(ds: &Dataset, group_by: Option<GroupBy>) -> Result<DesignOutput> {
    const ANALYSIS: &str = "single-rating-regression";
    check_grouping(ds, group_by, ANALYSIS)?;
    if ds.is_empty() {
        return Err(Error::EmptyInput(
            "no ratings for the single-rating design".into(),
        ));
    }
    let loo = leave_one_out_means(ds);
    let mut exclusions = Vec::new();
    let mut rows = Vec::new();
    for (i, (rec, (u, s))) in ds.records().iter().zip(&loo).enumerate() {
        match (u, s) {
            (Some(u), Some(s)) => rows.push((i, *u, *s)),
            _ => exclusions.push(Exclusion {
                key: format!("{}/{}", rec.user_id, rec.item_id),
                reason: if u.is_none() {
                    "user has no other ratings".into()
                } else {
                    "item has no other ratings".into()
                },
            }),
        }
    }
    let recs = ds.records();
    let user_n = |i: usize| ds.by_user()[&recs[i].user_id].len() as f64;
    let item_n = |i: usize| ds.by_item()[&recs[i].item_id].len() as f64;

    let labels: Vec<String> = rows
        .iter()
        .map(|&(i, ..)| label(group_by, &recs[i]))
        .collect();
    let levels = group_levels(&labels);
    let mu = standardize_named(
        &rows.iter().map(|r| r.1).collect::<Vec<_>>(),
        "mean_user_rating_others",
    )?;
    let ms = standardize_named(
        &rows.iter().map(|r| r.2).collect::<Vec<_>>(),
        "mean_song_rating_others",
    )?;
    let uc = standardize_named(
        &rows.iter().map(|r| user_n(r.0)).collect::<Vec<_>>(),
        "user_ratings_count",
    )?;
    let sc = standardize_named(
        &rows.iter().map(|r| item_n(r.0)).collect::<Vec<_>>(),
        "song_ratings_count",
    )?;

    let mut cols = Columns::new();
    push_group_dummies(&mut cols, group_by, &labels, &levels);
    if ds.has_recommender_class() {
        let p: Vec<f64> = rows
            .iter()
            .map(|&(i, ..)| {
                (recs[i].recommender_class == Some(RecommenderClass::Personalized)) as u8 as f64
            })
            .collect();
        if p.iter().any(|&v| v != p[0]) {
            cols.push("personalized", p);
        }
    }
    cols.push("mean_user_rating_others", mu.clone());
    push_group_interactions(
        &mut cols,
        group_by,
        "mean_user_rating_others",
        &mu,
        &labels,
        &levels,
    );
    cols.push("mean_song_rating_others", ms.clone());
    push_group_interactions(
        &mut cols,
        group_by,
        "mean_song_rating_others",
        &ms,
        &labels,
        &levels,
    );
    cols.push("user_ratings_count", uc.clone());
    cols.interaction("mean_user_rating_others", "user_ratings_count", &mu, &uc);
    cols.push("song_ratings_count", sc.clone());
    cols.interaction("mean_song_rating_others", "song_ratings_count", &ms, &sc);

    let response = rows
        .iter()
        .map(|&(i, ..)| recs[i].rating.value() as f64)
        .collect();
    Ok(DesignOutput {
        design: cols.finish("user_song_rating", response)?,
        exclusions,
        candidate_rows: ds.len(),
    })
}

/// Pre-standardization values for one (song, group) row.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConsistencyRow {
    pub item_id: String,
    pub group: String,
    pub mean_song_rating_test: f64,
    pub mean_user_rating_train: f64,
    pub mean_song_rating_train: f64,
    pub count_song_ratings_train: f64,
    pub count_user_ratings_train: f64,
    pub frac_personalized_test: f64,
}

/// Rows in (item, group) order, exclusions, and the number of candidates.
pub(crate) fn mean_consistency_rows(
    split: &SplitPair,
    group_by: Option<GroupBy>,
) -> (Vec<ConsistencyRow>, Vec<Exclusion>, usize) {
    let mut user_train: HashMap<&str, (f64, usize)> = HashMap::new();
    let mut song_train: HashMap<(&str, String), (f64, usize)> = HashMap::new();
    for r in split.train.records() {
        let v = r.rating.value() as f64;
        let e = user_train.entry(&r.user_id).or_default();
        e.0 += v;
        e.1 += 1;
        let e = song_train
            .entry((&r.item_id, label(group_by, r)))
            .or_default();
        e.0 += v;
        e.1 += 1;
    }

    #[derive(Default)]
    struct TestCell<'a> {
        sum: f64,
        n: usize,
        personalized: usize,
        raters: BTreeSet<&'a str>,
    }
    let mut test: BTreeMap<(&str, String), TestCell> = BTreeMap::new();
    for r in split.test.records() {
        let cell = test.entry((&r.item_id, label(group_by, r))).or_default();
        cell.sum += r.rating.value() as f64;
        cell.n += 1;
        cell.personalized += (r.recommender_class == Some(RecommenderClass::Personalized)) as usize;
        cell.raters.insert(&r.user_id);
    }

    let mut rows = Vec::new();
    let mut exclusions = Vec::new();
    for ((item, group), cell) in &test {
        let key = format!("{item}/{group}");
        let Some(&(song_sum, song_n)) = song_train.get(&(*item, group.clone())) else {
            exclusions.push(Exclusion {
                key,
                reason: "song has no train ratings in this group".into(),
            });
            continue;
        };
        let rater_stats: Vec<(f64, usize)> = cell
            .raters
            .iter()
            .filter_map(|u| user_train.get(u).map(|&(s, n)| (s / n as f64, n)))
            .collect();
        if rater_stats.is_empty() {
            exclusions.push(Exclusion {
                key,
                reason: "no test rater has train ratings".into(),
            });
            continue;
        }
        rows.push(ConsistencyRow {
            item_id: item.to_string(),
            group: group.clone(),
            mean_song_rating_test: cell.sum / cell.n as f64,
            mean_user_rating_train: mean(&rater_stats.iter().map(|s| s.0).collect::<Vec<_>>()),
            mean_song_rating_train: song_sum / song_n as f64,
            count_song_ratings_train: song_n as f64,
            count_user_ratings_train: mean(
                &rater_stats.iter().map(|s| s.1 as f64).collect::<Vec<_>>(),
            ),
            frac_personalized_test: cell.personalized as f64 / cell.n as f64,
        });
    }
    (rows, exclusions, test.len())
}

/// One row per (song, group) that appears in both halves of the split.
///
/// `mean_user_rating_train` is the mean, over the song's distinct test raters
/// who have train ratings, of each rater's mean train rating;
/// `count_user_ratings_train` is the mean of those raters' train counts.
/// The response `mean_song_rating_test` and every covariate except the group
/// dummies are standardized.
pub fn build_mean_consistency_design(
    split: &SplitPair,
    group_by: Option<GroupBy>,
    with_frac_personalized: bool,
) -> Result<DesignOutput> {
    const ANALYSIS: &str = "mean-consistency";
    check_grouping(&split.train, group_by, ANALYSIS)?;
    check_grouping(&split.test, group_by, ANALYSIS)?;
    if with_frac_personalized && !split.test.has_recommender_class() {
        return Err(Error::MissingField {
            field: "recommender_class",
            analysis: ANALYSIS,
        });
    }
    let (rows, exclusions, candidate_rows) = mean_consistency_rows(split, group_by);
    if rows.is_empty() {
        return Err(Error::InsufficientData(
            "no song appears in both halves of the split".into(),
        ));
    }
    let take = |f: fn(&ConsistencyRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let labels: Vec<String> = rows.iter().map(|r| r.group.clone()).collect();
    let levels = group_levels(&labels);
    let mu = standardize_named(
        &take(|r| r.mean_user_rating_train),
        "mean_user_rating_train",
    )?;
    let ms = standardize_named(
        &take(|r| r.mean_song_rating_train),
        "mean_song_rating_train",
    )?;
    let sc = standardize_named(
        &take(|r| r.count_song_ratings_train),
        "count_song_ratings_train",
    )?;
    let uc = standardize_named(
        &take(|r| r.count_user_ratings_train),
        "count_user_ratings_train",
    )?;

    let mut cols = Columns::new();
    push_group_dummies(&mut cols, group_by, &labels, &levels);
    if with_frac_personalized {
        let frac = take(|r| r.frac_personalized_test);
        cols.push(
            "frac_personalized_test",
            standardize_named(&frac, "frac_personalized_test")?,
        );
    }
    cols.push("mean_user_rating_train", mu.clone());
    push_group_interactions(
        &mut cols,
        group_by,
        "mean_user_rating_train",
        &mu,
        &labels,
        &levels,
    );
    cols.push("mean_song_rating_train", ms.clone());
    push_group_interactions(
        &mut cols,
        group_by,
        "mean_song_rating_train",
        &ms,
        &labels,
        &levels,
    );
    cols.push("count_song_ratings_train", sc.clone());
    cols.interaction(
        "mean_song_rating_train",
        "count_song_ratings_train",
        &ms,
        &sc,
    );
    cols.push("count_user_ratings_train", uc.clone());
    cols.interaction(
        "mean_user_rating_train",
        "count_user_ratings_train",
        &mu,
        &uc,
    );

    let response = standardize_named(&take(|r| r.mean_song_rating_test), "mean_song_rating_test")?;
    Ok(DesignOutput {
        design: cols.finish("mean_song_rating_test", response)?,
        exclusions,
        candidate_rows,
    })
}
