use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ratelab_core::io::FileConfig;
use ratelab_core::recommender::RecommenderKind;
use ratelab_core::{ErrorKind, Suite, ThresholdMode, Treatment};

mod commands;

/// Simulate recommender feedback loops under different rating interfaces and
/// analyze explicit-rating logs.
///
/// Settings come from built-in defaults, then `--config`, then command-line
/// flags; later sources win.
#[derive(Debug, Parser)]
#[command(name = "ratelab", version)]
struct Cli {
    /// TOML file with [env], [thresholds], [recommender], [sim] and [analysis] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the suite × treatment × recommender × seed grid and write CSVs.
    Simulate(SimulateArgs),
    /// Print and write the resolved rating cutoffs.
    Calibrate(CalibrateArgs),
    /// Run one analysis over a ratings CSV.
    Analyze(AnalyzeArgs),
    /// Merge simulation fractions and utility CSVs into summaries.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct TreatmentSel {
    /// Treatment(s) to run.
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        conflicts_with = "all_treatments"
    )]
    treatment: Vec<TreatmentArg>,

    /// Run treatments a, b and c.
    #[arg(long)]
    all_treatments: bool,
}

impl TreatmentSel {
    fn resolve(&self) -> Vec<Treatment> {
        if self.all_treatments || self.treatment.is_empty() {
            Treatment::ALL.to_vec()
        } else {
            let mut t: Vec<Treatment> = self.treatment.iter().map(|t| t.0).collect();
            t.dedup();
            t
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    suite: SuiteArg,

    #[command(flatten)]
    treatments: TreatmentSel,

    /// Recommender(s): random, toppop, latent_factor.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "random")]
    recommender: Vec<RecommenderArg>,

    /// Root seed(s); one grid cell per seed.
    #[arg(long, value_delimiter = ',', env = "RATELAB_SEED", default_value = "0")]
    seed: Vec<u64>,

    #[arg(long, default_value = ".")]
    out: PathBuf,

    /// Grid cells run in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,

    #[arg(long, value_enum)]
    threshold_mode: Option<ModeArg>,

    #[arg(long)]
    n_iter: Option<usize>,

    #[arg(long)]
    num_users: Option<usize>,

    #[arg(long)]
    num_items: Option<usize>,

    #[arg(long)]
    mc_samples: Option<usize>,

    /// Trailing window for the smoothed utility column.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long, value_enum)]
    suite: SuiteArg,

    #[command(flatten)]
    treatments: TreatmentSel,

    #[arg(long, env = "RATELAB_SEED", default_value_t = 0)]
    seed: u64,

    #[arg(long, value_enum)]
    threshold_mode: Option<ModeArg>,

    #[arg(long)]
    mc_samples: Option<usize>,

    #[arg(long)]
    num_users: Option<usize>,

    #[arg(long)]
    num_items: Option<usize>,

    /// Directory for `{suite}_cutoffs.csv`; stdout only when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Analysis {
    SingleRatingRegression,
    MeanConsistency,
    VarianceCi,
    Descriptives,
    Split,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Ratings CSV.
    input: PathBuf,

    #[arg(long, value_enum)]
    analysis: Analysis,

    /// Column mapping TOML; the canonical export layout when omitted.
    #[arg(long)]
    mapping: Option<PathBuf>,

    /// Per-user and per-item cap after filtering (regressions only).
    #[arg(long)]
    cap: Option<usize>,

    /// Minimum ratings per user and item (regressions only).
    #[arg(long)]
    min_ratings: Option<usize>,

    #[arg(long, env = "RATELAB_SEED", default_value_t = 0)]
    seed: u64,

    /// Confidence level for intervals.
    #[arg(long)]
    level: Option<f64>,

    /// Bootstrap resamples for variance-ci.
    #[arg(long)]
    resamples: Option<usize>,

    /// Histogram bins for descriptives.
    #[arg(long)]
    bins: Option<usize>,

    /// Grouping field; period when present, else treatment.
    #[arg(long, value_enum)]
    group_by: Option<GroupArg>,

    /// Add frac_personalized_test to the mean-consistency design.
    #[arg(long)]
    with_frac_personalized: bool,

    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory holding simulation CSVs.
    #[arg(long = "in", default_value = ".")]
    input: PathBuf,

    /// Where to write the summaries; defaults to the input directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum SuiteArg {
    SimExp,
    SimCtld,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::SimExp => Suite::SimExp,
            SuiteArg::SimCtld => Suite::SimCtld,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct TreatmentArg(Treatment);

impl ValueEnum for TreatmentArg {
    fn value_variants<'a>() -> &'a [Self] {
        &[
            TreatmentArg(Treatment::A),
            TreatmentArg(Treatment::B),
            TreatmentArg(Treatment::C),
        ]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.0.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum RecommenderArg {
    Random,
    Toppop,
    #[value(alias = "libfm", alias = "mf")]
    LatentFactor,
}

impl From<RecommenderArg> for RecommenderKind {
    fn from(r: RecommenderArg) -> Self {
        match r {
            RecommenderArg::Random => RecommenderKind::Random,
            RecommenderArg::Toppop => RecommenderKind::TopPop,
            RecommenderArg::LatentFactor => RecommenderKind::LatentFactor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Quantile,
    Raw,
}

impl From<ModeArg> for ThresholdMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Quantile => ThresholdMode::Quantile,
            ModeArg::Raw => ThresholdMode::Raw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GroupArg {
    Period,
    Treatment,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Runtime => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let file = match &cli.config {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::default()),
    };
    let result = file.and_then(|file| match cli.command {
        Command::Simulate(a) => commands::simulate(&file, a),
        Command::Calibrate(a) => commands::calibrate(&file, a),
        Command::Analyze(a) => commands::analyze(&file, a),
        Command::Report(a) => commands::report(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ratelab: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
