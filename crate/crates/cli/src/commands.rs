use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use ratelab_core::analytics::{
    build_mean_consistency_design, build_single_rating_design, cap_ratings, descriptive_suite,
    filter_min_ratings, stratified_split, variance_by_group, Dataset, DesignOutput, GroupBy,
};
use ratelab_core::io::{
    canonical_mapping_for, export_csv, ingest_csv, write_cell_outputs, write_cutoffs_csv,
    write_seed_mean_utility, ColumnMapping, CutoffRow, FileConfig, Manifest,
};
use ratelab_core::recommender::RecommenderKind;
use ratelab_core::sim::{self, grid, mean_series, SimConfig};
use ratelab_core::stats::ols;
use ratelab_core::{Error, Result, Suite, Treatment};

use crate::{Analysis, AnalyzeArgs, CalibrateArgs, GroupArg, ReportArgs, SimulateArgs};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct SimulateView<'a> {
    suite: Suite,
    treatments: &'a [Treatment],
    recommenders: &'a [RecommenderKind],
    window: usize,
    base: &'a SimConfig,
}

pub fn simulate(file: &FileConfig, a: SimulateArgs) -> Result<()> {
    if a.jobs == 0 {
        return Err(Error::Config("--jobs must be >= 1".into()));
    }
    let mut base = file.sim_base();
    if let Some(m) = a.threshold_mode {
        base.thresholds = base.thresholds.with_mode(m.into());
    }
    if let Some(n) = a.n_iter {
        base.n_iter = n;
    }
    if let Some(n) = a.num_users {
        base.env.num_users = n;
    }
    if let Some(n) = a.num_items {
        base.env.num_items = n;
    }
    if let Some(n) = a.mc_samples {
        base.mc_samples = n;
    }
    base.validate()?;
    let window = a.window.unwrap_or(file.sim.smoothing_window);
    let suite: Suite = a.suite.into();
    let treatments = a.treatments.resolve();
    let mut recommenders: Vec<RecommenderKind> = a.recommender.iter().map(|&r| r.into()).collect();
    recommenders.dedup();
    let mut seeds = a.seed.clone();
    seeds.dedup();
    ensure_dir(&a.out)?;

    let cells = grid(&[suite], &treatments, &recommenders, &seeds);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<(sim::Cell, usize, Vec<f64>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let trace = sim::run(&cell.config(&base))?;
                write_cell_outputs(&a.out, cell, &trace, window)?;
                Ok((*cell, trace.records.len(), trace.utility))
            })
            .collect::<Result<_>>()
    })?;

    let mut manifest = Manifest::new(
        "simulate",
        seeds.clone(),
        &SimulateView {
            suite,
            treatments: &treatments,
            recommenders: &recommenders,
            window,
            base: &base,
        },
    )?;
    for (cell, rows, _) in &results {
        manifest
            .row_counts
            .insert(format!("{}_trace", cell.stem()), *rows);
        for k in ["trace", "utility", "fractions"] {
            manifest.add_output(&a.out.join(format!("{}_{k}.csv", cell.stem())));
        }
    }
    if seeds.len() > 1 {
        for &t in &treatments {
            for &r in &recommenders {
                let series: Vec<&[f64]> = results
                    .iter()
                    .filter(|(c, ..)| c.treatment == t && c.recommender == r)
                    .map(|(.., u)| u.as_slice())
                    .collect();
                let p =
                    write_seed_mean_utility(&a.out, suite, t, r, &mean_series(&series), window)?;
                manifest.add_output(&p);
            }
        }
    }
    manifest.write(&a.out.join(format!("manifest_simulate_{suite}.json")))?;
    eprintln!("wrote {} cells to {}", results.len(), a.out.display());
    Ok(())
}

pub fn calibrate(file: &FileConfig, a: CalibrateArgs) -> Result<()> {
    let mut base = file.sim_base();
    if let Some(m) = a.threshold_mode {
        base.thresholds = base.thresholds.with_mode(m.into());
    }
    if let Some(n) = a.mc_samples {
        base.mc_samples = n;
    }
    if let Some(n) = a.num_users {
        base.env.num_users = n;
    }
    if let Some(n) = a.num_items {
        base.env.num_items = n;
    }
    let suite: Suite = a.suite.into();
    let mut rows = Vec::new();
    for cell in grid(
        &[suite],
        &a.treatments.resolve(),
        &[RecommenderKind::Random],
        &[a.seed],
    ) {
        let cfg = cell.config(&base);
        rows.push(CutoffRow::new(&cfg.thresholds, sim::calibrate(&cfg)?));
    }
    write_cutoffs_csv(std::io::stdout().lock(), &rows)?;
    if let Some(dir) = &a.out {
        ensure_dir(dir)?;
        let path = dir.join(format!("{suite}_cutoffs.csv"));
        write_cutoffs_csv(create(&path)?, &rows)?;
        let mut manifest = Manifest::new("calibrate", vec![a.seed], &base)?;
        manifest.add_output(&path);
        manifest.write(&dir.join(format!("manifest_calibrate_{suite}.json")))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AnalyzeView {
    analysis: String,
    mapping: ColumnMapping,
    min_ratings: usize,
    cap: usize,
    level: f64,
    resamples: usize,
    bins: usize,
    group_by: Option<&'static str>,
    with_frac_personalized: bool,
}

fn analysis_name(a: Analysis) -> &'static str {
    match a {
        Analysis::SingleRatingRegression => "single-rating-regression",
        Analysis::MeanConsistency => "mean-consistency",
        Analysis::VarianceCi => "variance-ci",
        Analysis::Descriptives => "descriptives",
        Analysis::Split => "split",
    }
}

pub fn analyze(file: &FileConfig, a: AnalyzeArgs) -> Result<()> {
    let settings = &file.analysis;
    let min_ratings = a.min_ratings.unwrap_or(settings.min_ratings);
    let cap = a.cap.unwrap_or(settings.cap);
    let level = a.level.unwrap_or(settings.level);
    let resamples = a.resamples.unwrap_or(settings.resamples);
    let bins = a.bins.unwrap_or(settings.histogram_bins);
    let mapping = match &a.mapping {
        Some(p) => ColumnMapping::load(p)?,
        None => {
            let text = fs::read_to_string(&a.input).map_err(|e| Error::io(&a.input, e))?;
            canonical_mapping_for(text.lines().next().unwrap_or(""))
        }
    };
    let name = analysis_name(a.analysis);
    ensure_dir(&a.out)?;

    let ingest = ingest_csv(&a.input, &mapping)?;
    let ds = &ingest.dataset;
    let group_by = match a.group_by {
        Some(GroupArg::Period) => Some(GroupBy::Period),
        Some(GroupArg::Treatment) => Some(GroupBy::Treatment),
        None => ds.default_grouping(),
    };

    let mut manifest = Manifest::new(
        name,
        vec![a.seed],
        &AnalyzeView {
            analysis: name.into(),
            mapping: mapping.clone(),
            min_ratings,
            cap,
            level,
            resamples,
            bins,
            group_by: group_by.map(GroupBy::field),
            with_frac_personalized: a.with_frac_personalized,
        },
    )?;
    manifest.add_input(&a.input)?;
    manifest
        .row_counts
        .insert("rows_read".into(), ingest.rows_read);
    manifest.row_counts.insert("rows_ingested".into(), ds.len());
    manifest
        .row_counts
        .insert("rows_rejected".into(), ingest.rejects.len());
    let rejects = a.out.join("rejects.csv");
    ingest.write_rejects(create(&rejects)?)?;
    manifest.add_output(&rejects);

    // filter and cap feed the regression designs only
    let prepared = |manifest: &mut Manifest| -> Result<Dataset> {
        let filtered = filter_min_ratings(ds, min_ratings)?;
        if filtered.empty {
            manifest
                .notes
                .push(format!("no ratings survive min_ratings = {min_ratings}"));
        }
        manifest
            .row_counts
            .insert("rows_after_filter".into(), filtered.dataset.len());
        let capped = cap_ratings(&filtered.dataset, cap, a.seed)?;
        manifest
            .row_counts
            .insert("rows_after_cap".into(), capped.len());
        manifest
            .notes
            .push("covariates standardized after filtering and capping".into());
        Ok(capped)
    };
    let fit = |out: DesignOutput, stem: &str, manifest: &mut Manifest| -> Result<()> {
        manifest
            .row_counts
            .insert("design_rows".into(), out.design.n_rows());
        manifest
            .row_counts
            .insert("design_candidates".into(), out.candidate_rows);
        manifest.exclusions = out.exclusions;
        let res = ols(&out.design, level)?;
        let csv_path = a.out.join(format!("{stem}.csv"));
        res.write_csv(create(&csv_path)?)?;
        let txt_path = a.out.join(format!("{stem}.txt"));
        fs::write(&txt_path, res.to_table()).map_err(|e| Error::io(&txt_path, e))?;
        manifest.add_output(&csv_path);
        manifest.add_output(&txt_path);
        print!("{}", res.to_table());
        Ok(())
    };

    match a.analysis {
        Analysis::SingleRatingRegression => {
            let data = prepared(&mut manifest)?;
            let out = build_single_rating_design(&data, group_by)?;
            fit(out, "single_rating_regression", &mut manifest)?;
        }
        Analysis::MeanConsistency => {
            let data = prepared(&mut manifest)?;
            let split = stratified_split(&data, group_by, a.seed)?;
            manifest
                .row_counts
                .insert("train_rows".into(), split.train.len());
            manifest
                .row_counts
                .insert("test_rows".into(), split.test.len());
            let out = build_mean_consistency_design(&split, group_by, a.with_frac_personalized)?;
            let stem = if a.with_frac_personalized {
                "mean_consistency_frac_personalized"
            } else {
                "mean_consistency"
            };
            fit(out, stem, &mut manifest)?;
        }
        Analysis::VarianceCi => {
            let rows = variance_by_group(ds, group_by, resamples, level, a.seed)?;
            let path = a.out.join("variance_ci.csv");
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(create(&path)?);
            w.write_record(["group", "subset", "users", "variance", "ci_low", "ci_high"])?;
            for r in &rows {
                w.serialize(r)?;
                println!(
                    "{}\t{}\t{:.4} [{:.4}, {:.4}]",
                    r.group, r.subset, r.variance, r.ci_low, r.ci_high
                );
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            manifest.add_output(&path);
        }
        Analysis::Descriptives => {
            let suite = descriptive_suite(ds, bins)?;
            for p in suite.write_csvs(&a.out)? {
                manifest.add_output(&p);
            }
            for (what, why) in &suite.skipped {
                eprintln!("skipped {what}: {why}");
                manifest.notes.push(format!("skipped {what}: {why}"));
            }
        }
        Analysis::Split => {
            let split = stratified_split(ds, group_by, a.seed)?;
            for (part, data) in [("train", &split.train), ("test", &split.test)] {
                let path = a.out.join(format!("split_{part}.csv"));
                export_csv(data, create(&path)?)?;
                manifest
                    .row_counts
                    .insert(format!("{part}_rows"), data.len());
                manifest.add_output(&path);
            }
        }
    }
    let counts: BTreeMap<_, _> = manifest.row_counts.clone();
    manifest.write(
        &a.out
            .join(format!("manifest_{}.json", name.replace('-', "_"))),
    )?;
    eprintln!("{name}: {counts:?}");
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<()> {
    let out = a.out.unwrap_or_else(|| a.input.clone());
    ensure_dir(&out)?;
    for p in ratelab_core::io::report(&a.input, &out)? {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}
