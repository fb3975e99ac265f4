use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{Cutoffs, Suite, ThresholdSpec, Treatment};
use crate::error::{Error, Result};
use crate::recommender::RecommenderKind;
use crate::sim::{write_utility_series, Cell, SimulationTrace};

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes `{stem}_trace.csv`, `{stem}_utility.csv` and `{stem}_fractions.csv`.
pub fn write_cell_outputs(
    dir: &Path,
    cell: &Cell,
    trace: &SimulationTrace,
    window: usize,
) -> Result<Vec<PathBuf>> {
    let stem = cell.stem();
    let paths: Vec<PathBuf> = ["trace", "utility", "fractions"]
        .iter()
        .map(|k| dir.join(format!("{stem}_{k}.csv")))
        .collect();
    trace.write_trace_csv(create(&paths[0])?)?;
    trace.write_utility_csv(create(&paths[1])?, window)?;
    trace.write_fractions_csv(create(&paths[2])?)?;
    Ok(paths)
}

/// Seed-averaged utility, written as `{suite}_{treatment}_{recommender}_mean_utility.csv`.
pub fn write_seed_mean_utility(
    dir: &Path,
    suite: Suite,
    treatment: Treatment,
    recommender: RecommenderKind,
    series: &[f64],
    window: usize,
) -> Result<PathBuf> {
    let path = dir.join(format!(
        "{suite}_{treatment}_{recommender}_mean_utility.csv"
    ));
    write_utility_series(create(&path)?, series, window)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffRow {
    pub suite: String,
    pub treatment: String,
    pub mode: String,
    pub t1: f64,
    pub t2: f64,
    pub c1: f64,
    pub c2: f64,
}

impl CutoffRow {
    pub fn new(spec: &ThresholdSpec, cutoffs: Cutoffs) -> Self {
        Self {
            suite: spec.suite.to_string(),
            treatment: spec.label.to_string(),
            mode: format!("{:?}", spec.mode).to_lowercase(),
            t1: spec.t1,
            t2: spec.t2,
            c1: cutoffs.c1,
            c2: cutoffs.c2,
        }
    }
}

/// Header `suite,treatment,mode,t1,t2,c1,c2`.
pub fn write_cutoffs_csv<W: Write>(out: W, rows: &[CutoffRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<cutoffs csv>", e))?;
    Ok(())
}

/// Splits `{suite}_{treatment}_{recommender}_{seed}` into its parts.
pub fn parse_stem(stem: &str) -> Option<(Suite, Treatment, RecommenderKind, String)> {
    let suite = Suite::ALL
        .into_iter()
        .find(|s| stem.starts_with(&format!("{s}_")))?;
    let rest = &stem[suite.as_str().len() + 1..];
    let (treatment, rest) = rest.split_once('_')?;
    let (recommender, seed) = rest.rsplit_once('_')?;
    Some((
        treatment.parse().ok()?,
        recommender.parse().ok()?,
        seed.to_string(),
    ))
    .map(|(t, r, s)| (suite, t, r, s))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct FractionSummary {
    suite: String,
    treatment: String,
    recommender: String,
    seed: String,
    dislike: f64,
    like: f64,
    superlike: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct UtilitySummary {
    suite: String,
    treatment: String,
    recommender: String,
    seed: String,
    iterations: usize,
    mean_utility: f64,
    final_quarter_utility: f64,
}

fn csv_files(dir: &Path, suffix: &str) -> Result<Vec<(PathBuf, String)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(stem) = name.strip_suffix(suffix) {
            out.push((path.clone(), stem.to_string()));
        }
    }
    out.sort();
    Ok(out)
}

/// Mean of the last quarter of a series (at least one point).
pub fn final_quarter_mean(series: &[f64]) -> f64 {
    let k = (series.len() / 4).max(1).min(series.len());
    let tail = &series[series.len() - k..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Merges every fractions and utility CSV in `dir` into
/// `summary_fractions.csv` and `summary_utility.csv`. Returns the two paths.
pub fn report(dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut fr = Vec::new();
    for (path, stem) in csv_files(dir, "_fractions.csv")? {
        let Some((suite, t, r, seed)) = parse_stem(&stem) else {
            continue;
        };
        let mut vals = [0.0; 3];
        let mut rdr = csv::Reader::from_path(&path)?;
        for (k, row) in rdr.records().enumerate() {
            let row = row?;
            if k < 3 {
                vals[k] = row[1].parse().map_err(|_| {
                    Error::Data(format!("{}: bad fraction {:?}", path.display(), &row[1]))
                })?;
            }
        }
        fr.push(FractionSummary {
            suite: suite.to_string(),
            treatment: t.to_string(),
            recommender: r.to_string(),
            seed,
            dislike: vals[0],
            like: vals[1],
            superlike: vals[2],
        });
    }
    let mut ut = Vec::new();
    for (path, stem) in csv_files(dir, "_utility.csv")? {
        let Some((suite, t, r, seed)) = parse_stem(&stem) else {
            continue;
        };
        let mut series = Vec::new();
        let mut rdr = csv::Reader::from_path(&path)?;
        for row in rdr.records() {
            let row = row?;
            series.push(row[1].parse::<f64>().map_err(|_| {
                Error::Data(format!("{}: bad utility {:?}", path.display(), &row[1]))
            })?);
        }
        if series.is_empty() {
            return Err(Error::EmptyInput(format!("{} has no rows", path.display())));
        }
        ut.push(UtilitySummary {
            suite: suite.to_string(),
            treatment: t.to_string(),
            recommender: r.to_string(),
            seed,
            iterations: series.len(),
            mean_utility: series.iter().sum::<f64>() / series.len() as f64,
            final_quarter_utility: final_quarter_mean(&series),
        });
    }
    if fr.is_empty() && ut.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no simulation CSVs in {}",
            dir.display()
        )));
    }
    let paths = vec![
        out_dir.join("summary_fractions.csv"),
        out_dir.join("summary_utility.csv"),
    ];
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(create(&paths[0])?);
    w.write_record([
        "suite",
        "treatment",
        "recommender",
        "seed",
        "dislike",
        "like",
        "superlike",
    ])?;
    for row in &fr {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&paths[0], e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(create(&paths[1])?);
    w.write_record([
        "suite",
        "treatment",
        "recommender",
        "seed",
        "iterations",
        "mean_utility",
        "final_quarter_utility",
    ])?;
    for row in &ut {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&paths[1], e))?;
    Ok(paths)
}
