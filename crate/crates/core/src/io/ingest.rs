use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::analytics::{Dataset, Period, RatingRecord, RecommenderClass};
use crate::env::{OrdinalRating, Treatment};
use crate::error::{Error, Result};

/// Source column names for each record field. Optional fields left unset are
/// absent from the resulting dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Columns {
    pub user_id: Option<String>,
    pub item_id: Option<String>,
    pub rating: Option<String>,
    pub timestamp: Option<String>,
    #[serde(default)]
    pub treatment: Option<String>,
    #[serde(default)]
    pub period: Option<String>,
    #[serde(default)]
    pub recommender_class: Option<String>,
}

/// How a foreign CSV maps onto [`RatingRecord`].
///
/// ```toml
/// timestamp_format = "%Y-%m-%d %H:%M:%S"
/// [columns]
/// user_id = "user_id"
/// item_id = "song_id"
/// rating = "liked"
/// timestamp = "timestamp"
/// period = "Pre_Post"
/// [ratings]
/// "-1" = 0
/// "1" = 1
/// "2" = 2
/// [periods]
/// "0" = "pre_timers"
/// "1" = "post_timers"
/// ```
///
/// `treatments`, `periods` and `classes` translate raw cell values; values
/// not listed are parsed as the canonical names (`a`, `pre_timers`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMapping {
    pub columns: Columns,
    pub ratings: BTreeMap<String, u8>,
    /// `unix` for epoch seconds, otherwise a chrono format string read as UTC.
    #[serde(default = "unix")]
    pub timestamp_format: String,
    #[serde(default)]
    pub treatments: BTreeMap<String, Treatment>,
    #[serde(default)]
    pub periods: BTreeMap<String, Period>,
    #[serde(default)]
    pub classes: BTreeMap<String, RecommenderClass>,
}

fn unix() -> String {
    "unix".into()
}

impl Default for ColumnMapping {
    /// The layout written by [`export_csv`].
    fn default() -> Self {
        Self {
            columns: Columns {
                user_id: Some("user_id".into()),
                item_id: Some("item_id".into()),
                rating: Some("rating".into()),
                timestamp: Some("timestamp".into()),
                treatment: Some("treatment".into()),
                period: Some("period".into()),
                recommender_class: Some("recommender_class".into()),
            },
            ratings: OrdinalRating::ALL
                .iter()
                .map(|r| (r.value().to_string(), r.value()))
                .collect(),
            timestamp_format: unix(),
            treatments: BTreeMap::new(),
            periods: BTreeMap::new(),
            classes: BTreeMap::new(),
        }
    }
}

impl ColumnMapping {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = toml::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.columns;
        for (field, col) in [
            ("user_id", &c.user_id),
            ("item_id", &c.item_id),
            ("rating", &c.rating),
            ("timestamp", &c.timestamp),
        ] {
            if col.as_deref().is_none_or(str::is_empty) {
                return Err(Error::Config(format!(
                    "mandatory field `{field}` is not mapped"
                )));
            }
        }
        if self.ratings.is_empty() {
            return Err(Error::Config("rating recoding table is empty".into()));
        }
        for (raw, v) in &self.ratings {
            OrdinalRating::try_from(*v).map_err(|_| {
                Error::Config(format!("rating {raw:?} recodes to {v}, outside 0..=2"))
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reject {
    /// 1-based line number in the source file, header is line 1.
    pub line: u64,
    pub reason: String,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub dataset: Dataset,
    pub rows_read: usize,
    pub rejects: Vec<Reject>,
}

impl IngestReport {
    /// Header `line,reason,raw`.
    pub fn write_rejects<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rejects {
            w.serialize(r)?;
        }
        if self.rejects.is_empty() {
            w.write_record(["line", "reason", "raw"])?;
        }
        w.flush().map_err(|e| Error::io("<rejects csv>", e))?;
        Ok(())
    }
}

pub fn ingest_csv(path: &Path, mapping: &ColumnMapping) -> Result<IngestReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, mapping)
}

struct Positions {
    user: usize,
    item: usize,
    rating: usize,
    timestamp: usize,
    treatment: Option<usize>,
    period: Option<usize>,
    class: Option<usize>,
}

fn parse_timestamp(raw: &str, format: &str) -> Option<i64> {
    if format == "unix" {
        raw.parse::<i64>().ok().or_else(|| {
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(|v| v.floor() as i64)
        })
    } else {
        NaiveDateTime::parse_from_str(raw, format)
            .ok()
            .map(|t| t.and_utc().timestamp())
    }
}

fn recode<T: Copy + std::str::FromStr>(table: &BTreeMap<String, T>, raw: &str) -> Option<T> {
    table.get(raw).copied().or_else(|| raw.parse().ok())
}

/// Streaming parse. Rows that cannot be turned into a record are collected
/// with a reason instead of aborting.
pub fn ingest_reader<R: Read>(input: R, mapping: &ColumnMapping) -> Result<IngestReport> {
    mapping.validate()?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = rdr.headers()?.clone();
    let find = |name: &Option<String>, field: &str| -> Result<Option<usize>> {
        match name {
            None => Ok(None),
            Some(col) => header
                .iter()
                .position(|h| h == col)
                .map(Some)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "column {col:?} mapped to `{field}` is not in the header"
                    ))
                }),
        }
    };
    let c = &mapping.columns;
    let pos = Positions {
        user: find(&c.user_id, "user_id")?.unwrap(),
        item: find(&c.item_id, "item_id")?.unwrap(),
        rating: find(&c.rating, "rating")?.unwrap(),
        timestamp: find(&c.timestamp, "timestamp")?.unwrap(),
        treatment: find(&c.treatment, "treatment")?,
        period: find(&c.period, "period")?,
        class: find(&c.recommender_class, "recommender_class")?,
    };

    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut rows_read = 0;
    for row in rdr.records() {
        let row = row?;
        rows_read += 1;
        let line = row.position().map_or(0, |p| p.line());
        let mut reject = |reason: &str| {
            rejects.push(Reject {
                line,
                reason: reason.to_string(),
                raw: row.iter().collect::<Vec<_>>().join(","),
            })
        };
        if row.len() != header.len() {
            reject("wrong number of fields");
            continue;
        }
        let (user, item) = (row[pos.user].trim(), row[pos.item].trim());
        if user.is_empty() || item.is_empty() {
            reject("empty user or item id");
            continue;
        }
        let Some(rating) = mapping
            .ratings
            .get(row[pos.rating].trim())
            .and_then(|&v| OrdinalRating::try_from(v).ok())
        else {
            reject("unmapped rating value");
            continue;
        };
        let Some(timestamp) = parse_timestamp(row[pos.timestamp].trim(), &mapping.timestamp_format)
        else {
            reject("unparseable timestamp");
            continue;
        };
        let mut rec = RatingRecord::new(user, item, rating);
        rec.timestamp = timestamp;
        if let Some(i) = pos.treatment {
            match recode(&mapping.treatments, row[i].trim()) {
                Some(t) => rec.treatment = Some(t),
                None => {
                    reject("unmapped treatment value");
                    continue;
                }
            }
        }
        if let Some(i) = pos.period {
            match recode(&mapping.periods, row[i].trim()) {
                Some(p) => rec.period = Some(p),
                None => {
                    reject("unmapped period value");
                    continue;
                }
            }
        }
        if let Some(i) = pos.class {
            match recode(&mapping.classes, row[i].trim()) {
                Some(k) => rec.recommender_class = Some(k),
                None => {
                    reject("unmapped recommender class value");
                    continue;
                }
            }
        }
        records.push(rec);
    }
    Ok(IngestReport {
        dataset: Dataset::new(records)?,
        rows_read,
        rejects,
    })
}

/// Writes the canonical layout read back by `ColumnMapping::default()`.
/// Optional columns appear only when the dataset carries them.
pub fn export_csv<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["user_id", "item_id", "rating", "timestamp"];
    let (t, p, c) = (
        ds.has_treatment(),
        ds.has_period(),
        ds.has_recommender_class(),
    );
    if t {
        header.push("treatment");
    }
    if p {
        header.push("period");
    }
    if c {
        header.push("recommender_class");
    }
    w.write_record(&header)?;
    for r in ds.records() {
        let mut row = vec![
            r.user_id.clone(),
            r.item_id.clone(),
            r.rating.value().to_string(),
            r.timestamp.to_string(),
        ];
        row.extend(r.treatment.map(|v| v.to_string()));
        row.extend(r.period.map(|v| v.to_string()));
        row.extend(r.recommender_class.map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<export csv>", e))?;
    Ok(())
}

/// The default mapping with optional columns dropped when a header lacks them.
pub fn canonical_mapping_for(header_line: &str) -> ColumnMapping {
    let cols: Vec<&str> = header_line.trim().split(',').collect();
    let mut m = ColumnMapping::default();
    let keep = |c: &mut Option<String>| {
        if c.as_deref().is_some_and(|name| !cols.contains(&name)) {
            *c = None;
        }
    };
    keep(&mut m.columns.treatment);
    keep(&mut m.columns.period);
    keep(&mut m.columns.recommender_class);
    m
}
