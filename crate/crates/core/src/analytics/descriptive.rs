use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike};
use serde::Serialize;

use super::{Dataset, GroupBy, Period, RatingRecord, RecommenderClass};
use crate::env::OrdinalRating;
use crate::error::{Error, Result};
use crate::sim::ratings_distribution;
use crate::stats::{mean, pearson_correlation, user_bootstrap_variance};

pub const HISTOGRAM_BINS: usize = 20;
const HISTOGRAM_MAX: f64 = 2.0;
/// Songs need strictly more than this many ratings of each class.
const MIN_PER_CLASS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionRow {
    pub grouping: String,
    pub group: String,
    pub option: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub users: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersonalizedRow {
    pub item_id: String,
    pub mean_personalized: f64,
    pub mean_random: f64,
    pub n_personalized: usize,
    pub n_random: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SongFracRow {
    pub item_id: String,
    pub frac_personalized: f64,
    pub mean_rating: f64,
    pub n_ratings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetentionRow {
    pub rating_count: usize,
    pub users: usize,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonthCorrelation {
    pub month: String,
    pub next_month: String,
    pub users: usize,
    /// Empty when fewer than two users or a constant side.
    pub correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeforeAfterRow {
    pub treatment: String,
    pub recommender_class: String,
    pub users: usize,
    pub correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DescriptiveSuite {
    pub fractions: Vec<FractionRow>,
    pub user_mean_histogram: Vec<HistogramBin>,
    pub personalized_vs_random: Option<Vec<PersonalizedRow>>,
    pub frac_personalized: Option<Vec<SongFracRow>>,
    pub retention: Vec<RetentionRow>,
    pub month_correlation: Vec<MonthCorrelation>,
    pub before_after: Option<Vec<BeforeAfterRow>>,
    /// (analysis, reason) for each table that could not be produced.
    pub skipped: Vec<(String, String)>,
}

fn write_table<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

impl DescriptiveSuite {
    /// Writes one `descriptives_*.csv` per produced table; returns the paths.
    pub fn write_csvs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let mut emit = |name: &str, f: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
            let p = dir.join(format!("descriptives_{name}.csv"));
            f(&p)?;
            written.push(p);
            Ok(())
        };
        emit("fractions", &|p| {
            write_table(
                p,
                &self.fractions,
                &["grouping", "group", "option", "fraction"],
            )
        })?;
        emit("user_mean_hist", &|p| {
            write_table(
                p,
                &self.user_mean_histogram,
                &["bin_low", "bin_high", "users", "fraction"],
            )
        })?;
        if let Some(rows) = &self.personalized_vs_random {
            emit("personalized_vs_random", &|p| {
                write_table(
                    p,
                    rows,
                    &[
                        "item_id",
                        "mean_personalized",
                        "mean_random",
                        "n_personalized",
                        "n_random",
                    ],
                )
            })?;
        }
        if let Some(rows) = &self.frac_personalized {
            emit("frac_personalized", &|p| {
                write_table(
                    p,
                    rows,
                    &["item_id", "frac_personalized", "mean_rating", "n_ratings"],
                )
            })?;
        }
        emit("retention", &|p| {
            write_table(p, &self.retention, &["rating_count", "users", "share"])
        })?;
        emit("month_correlation", &|p| {
            write_table(
                p,
                &self.month_correlation,
                &["month", "next_month", "users", "correlation"],
            )
        })?;
        if let Some(rows) = &self.before_after {
            emit("before_after", &|p| {
                write_table(
                    p,
                    rows,
                    &["treatment", "recommender_class", "users", "correlation"],
                )
            })?;
        }
        Ok(written)
    }
}

/// All descriptive tables. Tables whose fields are missing are skipped and
/// listed in `skipped`.
pub fn descriptive_suite(ds: &Dataset, bins: usize) -> Result<DescriptiveSuite> {
    if ds.is_empty() {
        return Err(Error::EmptyInput("no ratings for descriptives".into()));
    }
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let mut out = DescriptiveSuite {
        fractions: fractions(ds)?,
        user_mean_histogram: histogram(ds, bins),
        retention: retention(ds),
        month_correlation: month_correlation(ds)?,
        ..Default::default()
    };
    if ds.has_recommender_class() {
        out.personalized_vs_random = Some(personalized_vs_random(ds));
        out.frac_personalized = Some(frac_personalized(ds));
    } else {
        for name in ["personalized_vs_random", "frac_personalized"] {
            out.skipped
                .push((name.into(), "missing field recommender_class".into()));
        }
    }
    let mut missing = Vec::new();
    for (present, field) in [
        (ds.has_treatment(), "treatment"),
        (ds.has_period(), "period"),
        (ds.has_recommender_class(), "recommender_class"),
    ] {
        if !present {
            missing.push(field);
        }
    }
    if missing.is_empty() {
        out.before_after = Some(before_after(ds)?);
    } else {
        out.skipped.push((
            "before_after".into(),
            format!("missing field {}", missing.join(", ")),
        ));
    }
    Ok(out)
}

fn fractions(ds: &Dataset) -> Result<Vec<FractionRow>> {
    let mut groups: Vec<(String, String, Vec<&RatingRecord>)> =
        vec![("all".into(), "all".into(), ds.records().iter().collect())];
    for by in [GroupBy::Treatment, GroupBy::Period] {
        if ds.has_group(by) {
            let mut m: BTreeMap<String, Vec<&RatingRecord>> = BTreeMap::new();
            for r in ds.records() {
                m.entry(r.group_label(by).unwrap()).or_default().push(r);
            }
            groups.extend(m.into_iter().map(|(g, v)| (by.field().to_string(), g, v)));
        }
    }
    let mut rows = Vec::new();
    for (grouping, group, recs) in groups {
        let f = ratings_distribution(recs.iter().map(|r| (r.user_id.as_str(), r.rating)))?;
        for (opt, frac) in OrdinalRating::ALL.iter().zip(f.as_array()) {
            rows.push(FractionRow {
                grouping: grouping.clone(),
                group: group.clone(),
                option: opt.name().to_string(),
                fraction: frac,
            });
        }
    }
    Ok(rows)
}

fn user_means<'a>(recs: impl Iterator<Item = &'a RatingRecord>) -> BTreeMap<&'a str, f64> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in recs {
        let e = acc.entry(r.user_id.as_str()).or_default();
        e.0 += r.rating.value() as f64;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(u, (s, n))| (u, s / n as f64))
        .collect()
}

fn histogram(ds: &Dataset, bins: usize) -> Vec<HistogramBin> {
    let means = user_means(ds.records().iter());
    let mut counts = vec![0usize; bins];
    for &m in means.values() {
        // the top edge belongs to the last bin
        let b = ((m * bins as f64 / HISTOGRAM_MAX).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    let total = means.len() as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(b, users)| HistogramBin {
            bin_low: HISTOGRAM_MAX * b as f64 / bins as f64,
            bin_high: HISTOGRAM_MAX * (b + 1) as f64 / bins as f64,
            users,
            fraction: users as f64 / total,
        })
        .collect()
}

fn class_counts(ds: &Dataset) -> BTreeMap<&str, [(f64, usize); 2]> {
    let mut m: BTreeMap<&str, [(f64, usize); 2]> = BTreeMap::new();
    for r in ds.records() {
        let k = match r.recommender_class {
            Some(RecommenderClass::Personalized) => 0,
            Some(RecommenderClass::Random) => 1,
            None => continue,
        };
        let e = &mut m.entry(r.item_id.as_str()).or_default()[k];
        e.0 += r.rating.value() as f64;
        e.1 += 1;
    }
    m
}

fn personalized_vs_random(ds: &Dataset) -> Vec<PersonalizedRow> {
    class_counts(ds)
        .into_iter()
        .filter(|(_, c)| c[0].1 > MIN_PER_CLASS && c[1].1 > MIN_PER_CLASS)
        .map(|(item, [(sp, np), (sr, nr)])| PersonalizedRow {
            item_id: item.to_string(),
            mean_personalized: sp / np as f64,
            mean_random: sr / nr as f64,
            n_personalized: np,
            n_random: nr,
        })
        .collect()
}

fn frac_personalized(ds: &Dataset) -> Vec<SongFracRow> {
    class_counts(ds)
        .into_iter()
        .map(|(item, [(sp, np), (sr, nr)])| SongFracRow {
            item_id: item.to_string(),
            frac_personalized: np as f64 / (np + nr) as f64,
            mean_rating: (sp + sr) / (np + nr) as f64,
            n_ratings: np + nr,
        })
        .collect()
}

fn retention(ds: &Dataset) -> Vec<RetentionRow> {
    let mut by_count: BTreeMap<usize, usize> = BTreeMap::new();
    for idx in ds.by_user().values() {
        *by_count.entry(idx.len()).or_default() += 1;
    }
    let total = ds.by_user().len() as f64;
    by_count
        .into_iter()
        .map(|(rating_count, users)| RetentionRow {
            rating_count,
            users,
            share: users as f64 / total,
        })
        .collect()
}

/// Months since year 0, UTC.
fn month_index(ts: i64) -> Result<i64> {
    let dt = DateTime::from_timestamp(ts, 0)
        .ok_or_else(|| Error::Data(format!("timestamp {ts} out of range")))?;
    Ok(dt.year() as i64 * 12 + dt.month0() as i64)
}

fn month_label(idx: i64) -> String {
    format!("{:04}-{:02}", idx.div_euclid(12), idx.rem_euclid(12) + 1)
}

fn correlate_pairs(a: &BTreeMap<&str, f64>, b: &BTreeMap<&str, f64>) -> (usize, Option<f64>) {
    let (x, y): (Vec<f64>, Vec<f64>) = a
        .iter()
        .filter_map(|(u, va)| b.get(u).map(|vb| (*va, *vb)))
        .unzip();
    (x.len(), pearson_correlation(&x, &y).ok())
}

fn month_correlation(ds: &Dataset) -> Result<Vec<MonthCorrelation>> {
    let mut by_month: BTreeMap<i64, Vec<&RatingRecord>> = BTreeMap::new();
    for r in ds.records() {
        by_month
            .entry(month_index(r.timestamp)?)
            .or_default()
            .push(r);
    }
    let means: BTreeMap<i64, BTreeMap<&str, f64>> = by_month
        .iter()
        .map(|(m, recs)| (*m, user_means(recs.iter().copied())))
        .collect();
    let mut rows = Vec::new();
    for (m, cur) in &means {
        if let Some(next) = means.get(&(m + 1)) {
            let (users, correlation) = correlate_pairs(cur, next);
            rows.push(MonthCorrelation {
                month: month_label(*m),
                next_month: month_label(m + 1),
                users,
                correlation,
            });
        }
    }
    Ok(rows)
}

fn before_after(ds: &Dataset) -> Result<Vec<BeforeAfterRow>> {
    let mut cells: BTreeMap<(String, RecommenderClass), [Vec<&RatingRecord>; 2]> = BTreeMap::new();
    for r in ds.records() {
        let (Some(t), Some(p), Some(c)) = (r.treatment, r.period, r.recommender_class) else {
            return Err(Error::Data(
                "record lacks treatment, period or class".into(),
            ));
        };
        let side = (p == Period::PostTimers) as usize;
        cells.entry((t.to_string(), c)).or_default()[side].push(r);
    }
    Ok(cells
        .into_iter()
        .map(|((treatment, class), [pre, post])| {
            let (users, correlation) =
                correlate_pairs(&user_means(pre.into_iter()), &user_means(post.into_iter()));
            BeforeAfterRow {
                treatment,
                recommender_class: class.to_string(),
                users,
                correlation,
            }
        })
        .collect())
}

/// Variance of per-user mean ratings with a bootstrap CI, per group and per
/// recommender class subset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupVariance {
    pub group: String,
    pub subset: String,
    pub users: usize,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Subsets with fewer than two users are left out.
pub fn variance_by_group(
    ds: &Dataset,
    group_by: Option<GroupBy>,
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<Vec<GroupVariance>> {
    if let Some(by) = group_by {
        if !ds.has_group(by) {
            return Err(Error::MissingField {
                field: by.field(),
                analysis: "variance-ci",
            });
        }
    }
    let mut groups: BTreeMap<String, Vec<&RatingRecord>> = BTreeMap::new();
    for r in ds.records() {
        let g = group_by
            .and_then(|b| r.group_label(b))
            .unwrap_or_else(|| "all".into());
        groups.entry(g).or_default().push(r);
    }
    let mut subsets: Vec<(&str, Option<RecommenderClass>)> = vec![("all", None)];
    if ds.has_recommender_class() {
        subsets.push(("personalized", Some(RecommenderClass::Personalized)));
        subsets.push(("random", Some(RecommenderClass::Random)));
    }
    let mut rows = Vec::new();
    for (group, recs) in &groups {
        for &(name, class) in &subsets {
            let means: Vec<f64> = user_means(
                recs.iter()
                    .copied()
                    .filter(|r| class.is_none() || r.recommender_class == class),
            )
            .into_values()
            .collect();
            if means.len() < 2 {
                continue;
            }
            let ci = user_bootstrap_variance(&means, n_resamples, level, seed)?;
            rows.push(GroupVariance {
                group: group.clone(),
                subset: name.to_string(),
                users: means.len(),
                variance: ci.point,
                ci_low: ci.ci_low,
                ci_high: ci.ci_high,
            });
        }
    }
    Ok(rows)
}

/// Mean of per-user means; the user-weighted average rating.
pub fn user_weighted_mean(ds: &Dataset) -> f64 {
    mean(
        &user_means(ds.records().iter())
            .into_values()
            .collect::<Vec<_>>(),
    )
}
