//! The recommend → rate → update loop and its two metrics: rating fractions
//! (aggregated within each user first) and ground-truth utility over time.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::env::{
    observe_rating, resolve_cutoffs, Cutoffs, EnvConfig, Environment, OrdinalRating, Suite,
    ThresholdSpec, Treatment,
};
use crate::error::{Error, Result};
use crate::recommender::{
    Interaction, ItemSet, LatentFactorParams, Policy, Recommender, RecommenderKind,
};
use crate::rng;

pub const DEFAULT_MC_SAMPLES: usize = 200_000;
pub const DEFAULT_SMOOTHING_WINDOW: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub env: EnvConfig,
    pub thresholds: ThresholdSpec,
    pub recommender: RecommenderKind,
    pub latent_factor: LatentFactorParams,
    pub n_iter: usize,
    /// Fraction of users asked for one rating per iteration.
    pub rating_frequency: f64,
    /// Fraction of all user × item pairs rated before the loop starts.
    pub ratio_init_ratings: f64,
    /// Monte Carlo sample size for quantile thresholds.
    pub mc_samples: usize,
    /// Root seed; overrides `env.seed` and `latent_factor.seed`.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            thresholds: ThresholdSpec::preset(Suite::SimExp, Treatment::A),
            recommender: RecommenderKind::Random,
            latent_factor: LatentFactorParams::default(),
            n_iter: 1000,
            rating_frequency: 0.1,
            ratio_init_ratings: 0.01,
            mc_samples: DEFAULT_MC_SAMPLES,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.thresholds.validate()?;
        self.latent_factor.validate()?;
        if self.n_iter == 0 {
            return Err(Error::Config("n_iter must be >= 1".into()));
        }
        if !(self.rating_frequency > 0.0 && self.rating_frequency <= 1.0) {
            return Err(Error::Config(format!(
                "rating_frequency must lie in (0, 1] (got {})",
                self.rating_frequency
            )));
        }
        if !(self.ratio_init_ratings >= 0.0 && self.ratio_init_ratings < 1.0) {
            return Err(Error::Config(format!(
                "ratio_init_ratings must lie in [0, 1) (got {})",
                self.ratio_init_ratings
            )));
        }
        Ok(())
    }

    /// Users asked per iteration: ⌈rating_frequency · num_users⌉.
    pub fn users_per_iteration(&self) -> usize {
        let x = self.rating_frequency * self.env.num_users as f64;
        // 0.1 * 100 is 10.000000000000002 in binary floating point
        ((x - 1e-9).ceil() as usize).clamp(1, self.env.num_users)
    }

    pub fn init_rating_count(&self) -> usize {
        let pairs = self.env.num_users * self.env.num_items;
        (self.ratio_init_ratings * pairs as f64).round() as usize
    }

    fn env_config(&self) -> EnvConfig {
        EnvConfig {
            seed: self.seed,
            ..self.env.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Loop,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Init => "init",
            Phase::Loop => "loop",
        })
    }
}

/// One rating event. Init-phase records carry iteration 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub user: usize,
    pub item: usize,
    pub true_pref: f64,
    pub rating: OrdinalRating,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub records: Vec<TraceRecord>,
    /// Mean ground-truth preference of the items recommended at each loop iteration.
    pub utility: Vec<f64>,
    pub init_count: usize,
    pub cutoffs: Cutoffs,
}

impl SimulationTrace {
    pub fn loop_records(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| r.phase == Phase::Loop)
    }

    /// Header: `iteration,user_id,item_id,true_pref,rating,phase`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "iteration",
            "user_id",
            "item_id",
            "true_pref",
            "rating",
            "phase",
        ])?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                r.user.to_string(),
                r.item.to_string(),
                r.true_pref.to_string(),
                r.rating.value().to_string(),
                r.phase.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<trace csv>", e))?;
        Ok(())
    }

    /// Header: `iteration,mean_utility,smoothed_utility`.
    pub fn write_utility_csv<W: Write>(&self, out: W, window: usize) -> Result<()> {
        write_utility_series(out, &self.utility, window)
    }

    /// Loop-phase fractions; header `option,fraction`.
    pub fn write_fractions_csv<W: Write>(&self, out: W) -> Result<()> {
        let fr = ratings_distribution(self.loop_records().map(|r| (r.user, r.rating)))?;
        fr.write_csv(out)
    }
}

pub fn write_utility_series<W: Write>(out: W, series: &[f64], window: usize) -> Result<()> {
    let smooth = smooth_trailing(series, window);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "mean_utility", "smoothed_utility"])?;
    for (i, (raw, sm)) in series.iter().zip(&smooth).enumerate() {
        w.write_record([i.to_string(), raw.to_string(), sm.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<utility csv>", e))?;
    Ok(())
}

/// Cutoffs exactly as [`run`] resolves them for this config.
pub fn calibrate(config: &SimConfig) -> Result<Cutoffs> {
    config.validate()?;
    let env = Environment::generate(&config.env_config())?;
    resolve_for(config, &env)
}

fn resolve_for(config: &SimConfig, env: &Environment) -> Result<Cutoffs> {
    resolve_cutoffs(
        &config.thresholds,
        env,
        env.config().noise_sigma,
        config.mc_samples,
        &mut rng::substream(config.seed, rng::CUTOFFS),
    )
}

/// Runs one simulation with the recommender named in the config.
pub fn run(config: &SimConfig) -> Result<SimulationTrace> {
    config.validate()?;
    let env = Environment::generate(&config.env_config())?;
    let params = LatentFactorParams {
        seed: config.seed,
        ..config.latent_factor.clone()
    };
    let mut policy = Recommender::init(
        config.recommender,
        env.num_users(),
        env.num_items(),
        &params,
    )?;
    run_with_policy(config, &env, &mut policy)
}

/// Runs the loop against an explicit environment and policy.
pub fn run_with_policy<P: Policy + ?Sized>(
    config: &SimConfig,
    env: &Environment,
    policy: &mut P,
) -> Result<SimulationTrace> {
    config.validate()?;
    let (num_users, num_items) = (env.num_users(), env.num_items());
    let sigma = env.config().noise_sigma;
    let seed = config.seed;

    let cutoffs = resolve_for(config, env)?;
    let mut noise = rng::substream(seed, rng::NOISE);
    let mut user_rng = rng::substream(seed, rng::USERS);
    let mut rec_rng = rng::substream(seed, rng::RECOMMENDER);

    let mut rated: Vec<ItemSet> = (0..num_users).map(|_| ItemSet::new(num_items)).collect();
    let mut records = Vec::new();
    let score = |r: OrdinalRating| env.config().score(r);

    let init_count = config.init_rating_count();
    let mut pairs = index::sample(
        &mut rng::substream(seed, rng::INIT),
        num_users * num_items,
        init_count,
    )
    .into_vec();
    pairs.sort_unstable();
    let mut batch = Vec::with_capacity(init_count);
    for p in pairs {
        let (user, item) = (p / num_items, p % num_items);
        let pref = env.true_preference(user, item)?;
        let rating = observe_rating(pref, sigma, &cutoffs, &mut noise);
        rated[user].insert(item);
        records.push(TraceRecord {
            iteration: 0,
            user,
            item,
            true_pref: pref,
            rating,
            phase: Phase::Init,
        });
        batch.push(Interaction {
            user,
            item,
            score: score(rating),
        });
    }
    if !batch.is_empty() {
        policy.update(&batch)?;
    }

    let per_iter = config.users_per_iteration();
    let mut utility = Vec::with_capacity(config.n_iter);
    for iteration in 0..config.n_iter {
        let mut users = index::sample(&mut user_rng, num_users, per_iter).into_vec();
        users.sort_unstable();
        batch.clear();
        let mut pref_sum = 0.0;
        for &user in &users {
            if rated[user].is_full() {
                return Err(Error::Exhausted { iteration, user });
            }
            let item = policy.recommend(user, &rated[user], &mut rec_rng)?;
            if !rated[user].insert(item) {
                return Err(Error::Data(format!(
                    "policy recommended already-rated item {item} to user {user}"
                )));
            }
            let pref = env.true_preference(user, item)?;
            let rating = observe_rating(pref, sigma, &cutoffs, &mut noise);
            pref_sum += pref;
            records.push(TraceRecord {
                iteration,
                user,
                item,
                true_pref: pref,
                rating,
                phase: Phase::Loop,
            });
            batch.push(Interaction {
                user,
                item,
                score: score(rating),
            });
        }
        utility.push(pref_sum / users.len() as f64);
        policy.update(&batch)?;
    }

    Ok(SimulationTrace {
        records,
        utility,
        init_count,
        cutoffs,
    })
}

/// Share of dislike / like / superlike answers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatingFractions {
    pub dislike: f64,
    pub like: f64,
    pub superlike: f64,
}

impl RatingFractions {
    pub fn as_array(&self) -> [f64; 3] {
        [self.dislike, self.like, self.superlike]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["option", "fraction"])?;
        for (r, f) in OrdinalRating::ALL.iter().zip(self.as_array()) {
            w.write_record([r.name().to_string(), f.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<fractions csv>", e))?;
        Ok(())
    }
}

/// Per-user option fractions, then the unweighted mean across users.
pub fn ratings_distribution<K, I>(ratings: I) -> Result<RatingFractions>
where
    K: Ord,
    I: IntoIterator<Item = (K, OrdinalRating)>,
{
    let mut per_user: BTreeMap<K, [u64; 3]> = BTreeMap::new();
    for (user, rating) in ratings {
        per_user.entry(user).or_default()[rating.index()] += 1;
    }
    if per_user.is_empty() {
        return Err(Error::EmptyInput("no ratings to aggregate".into()));
    }
    let mut acc = [0.0f64; 3];
    for counts in per_user.values() {
        let total = counts.iter().sum::<u64>() as f64;
        for (a, c) in acc.iter_mut().zip(counts) {
            *a += *c as f64 / total;
        }
    }
    let users = per_user.len() as f64;
    Ok(RatingFractions {
        dislike: acc[0] / users,
        like: acc[1] / users,
        superlike: acc[2] / users,
    })
}

/// Trailing moving average; `window <= 1` returns the input.
pub fn smooth_trailing(series: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 {
        return series.to_vec();
    }
    let mut out = Vec::with_capacity(series.len());
    for i in 0..series.len() {
        let start = (i + 1).saturating_sub(window);
        let span = &series[start..=i];
        out.push(span.iter().sum::<f64>() / span.len() as f64);
    }
    out
}

/// Per-iteration mean utility, smoothed over a trailing window.
pub fn utility_over_time(trace: &SimulationTrace, window: usize) -> Vec<f64> {
    smooth_trailing(&trace.utility, window)
}

/// One point of a simulation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub suite: Suite,
    pub treatment: Treatment,
    pub recommender: RecommenderKind,
    pub seed: u64,
}

impl Cell {
    /// `{suite}_{treatment}_{recommender}_{seed}`
    pub fn stem(&self) -> String {
        format!(
            "{}_{}_{}_{}",
            self.suite, self.treatment, self.recommender, self.seed
        )
    }

    /// The base config specialised to this cell. Threshold mode is kept from the base.
    pub fn config(&self, base: &SimConfig) -> SimConfig {
        let preset = ThresholdSpec::preset(self.suite, self.treatment);
        SimConfig {
            thresholds: preset.with_mode(base.thresholds.mode),
            recommender: self.recommender,
            seed: self.seed,
            ..base.clone()
        }
    }
}

/// Every combination, in suite/treatment/recommender/seed order.
pub fn grid(
    suites: &[Suite],
    treatments: &[Treatment],
    recommenders: &[RecommenderKind],
    seeds: &[u64],
) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &suite in suites {
        for &treatment in treatments {
            for &recommender in recommenders {
                for &seed in seeds {
                    cells.push(Cell {
                        suite,
                        treatment,
                        recommender,
                        seed,
                    });
                }
            }
        }
    }
    cells
}

/// Element-wise mean of equally long series.
pub fn mean_series(series: &[&[f64]]) -> Vec<f64> {
    let Some(first) = series.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|i| series.iter().map(|s| s[i]).sum::<f64>() / series.len() as f64)
        .collect()
}
