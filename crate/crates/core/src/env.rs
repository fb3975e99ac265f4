//! Simulated population and the latent-preference to ordinal-rating model.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};
use crate::stats;

/// One of the three ordinal answers a user can give.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum OrdinalRating {
    Dislike = 0,
    Like = 1,
    Superlike = 2,
}

impl OrdinalRating {
    pub const ALL: [OrdinalRating; 3] = [Self::Dislike, Self::Like, Self::Superlike];

    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Dislike => "dislike",
            Self::Like => "like",
            Self::Superlike => "superlike",
        }
    }
}

impl TryFrom<u8> for OrdinalRating {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Self::Dislike),
            1 => Ok(Self::Like),
            2 => Ok(Self::Superlike),
            other => Err(format!("rating {other} is not in {{0, 1, 2}}")),
        }
    }
}

impl From<OrdinalRating> for u8 {
    fn from(r: OrdinalRating) -> u8 {
        r.value()
    }
}

/// Treatment arm label shared by simulated interfaces and RCT data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Treatment {
    A,
    B,
    C,
}

impl Treatment {
    pub const ALL: [Treatment; 3] = [Self::A, Self::B, Self::C];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::A => "a",
            Self::B => "b",
            Self::C => "c",
        }
    }
}

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Treatment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(Self::A),
            "b" => Ok(Self::B),
            "c" => Ok(Self::C),
            other => Err(Error::Config(format!("unknown treatment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    SimExp,
    SimCtld,
}

impl Suite {
    pub const ALL: [Suite; 2] = [Self::SimExp, Self::SimCtld];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SimExp => "sim_exp",
            Self::SimCtld => "sim_ctld",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim_exp" => Ok(Self::SimExp),
            "sim_ctld" => Ok(Self::SimCtld),
            other => Err(Error::Config(format!("unknown suite `{other}`"))),
        }
    }
}

/// Shape, noise and seed of a simulated population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub latent_dim: usize,
    pub noise_sigma: f64,
    /// Numeric score of dislike, like and superlike, in that order.
    pub rating_weights: [f64; 3],
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            num_users: 100,
            num_items: 5000,
            latent_dim: 8,
            noise_sigma: 0.5,
            rating_weights: [0.0, 1.0, 2.0],
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 || self.num_items == 0 || self.latent_dim == 0 {
            return Err(Error::Config(format!(
                "num_users, num_items and latent_dim must be >= 1 (got {}, {}, {})",
                self.num_users, self.num_items, self.latent_dim
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma must be finite and >= 0 (got {})",
                self.noise_sigma
            )));
        }
        let w = self.rating_weights;
        if !(w[0] < w[1] && w[1] < w[2]) {
            return Err(Error::Config(format!(
                "rating_weights must be strictly increasing (got {w:?})"
            )));
        }
        Ok(())
    }

    /// Numeric score used for training on a given rating.
    pub fn score(&self, rating: OrdinalRating) -> f64 {
        self.rating_weights[rating.index()]
    }
}

/// Latent user and item factors; user factors ~ U[0,1], item factors ~ Gamma(2, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
    config: EnvConfig,
}

impl Environment {
    pub fn generate(config: &EnvConfig) -> Result<Self> {
        config.validate()?;
        let k = config.latent_dim;
        let mut rng = rng::substream(config.seed, rng::ENVIRONMENT);
        let user_factors = (0..config.num_users * k)
            .map(|_| rng.random::<f64>())
            .collect();
        let gamma = Gamma::new(2.0, 1.0).expect("valid gamma parameters");
        let item_factors = (0..config.num_items * k)
            .map(|_| gamma.sample(&mut rng))
            .collect();
        Ok(Self {
            user_factors,
            item_factors,
            config: config.clone(),
        })
    }

    /// Builds an environment from explicit row-major factor matrices.
    pub fn from_factors(
        config: &EnvConfig,
        user_factors: Vec<f64>,
        item_factors: Vec<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let k = config.latent_dim;
        if user_factors.len() != config.num_users * k || item_factors.len() != config.num_items * k
        {
            return Err(Error::Config("factor matrix shape mismatch".into()));
        }
        Ok(Self {
            user_factors,
            item_factors,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn num_users(&self) -> usize {
        self.config.num_users
    }

    pub fn num_items(&self) -> usize {
        self.config.num_items
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn user_factors(&self) -> &[f64] {
        &self.user_factors
    }

    pub fn item_factors(&self) -> &[f64] {
        &self.item_factors
    }

    pub fn user_row(&self, user: usize) -> Result<&[f64]> {
        let k = self.latent_dim();
        if user >= self.num_users() {
            return Err(Error::Index {
                what: "user",
                index: user,
                len: self.num_users(),
            });
        }
        Ok(&self.user_factors[user * k..(user + 1) * k])
    }

    pub fn item_row(&self, item: usize) -> Result<&[f64]> {
        let k = self.latent_dim();
        if item >= self.num_items() {
            return Err(Error::Index {
                what: "item",
                index: item,
                len: self.num_items(),
            });
        }
        Ok(&self.item_factors[item * k..(item + 1) * k])
    }

    /// Ground-truth preference: inner product of the user and item factor rows.
    pub fn true_preference(&self, user: usize, item: usize) -> Result<f64> {
        let u = self.user_row(user)?;
        let v = self.item_row(item)?;
        Ok(u.iter().zip(v).map(|(a, b)| a * b).sum())
    }

    /// Noisy preferences of `n` uniformly random (user, item) pairs.
    pub fn sample_noisy_preferences(
        &self,
        n: usize,
        noise_sigma: f64,
        rng: &mut SimRng,
    ) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u = rng.random_range(0..self.num_users());
                let i = rng.random_range(0..self.num_items());
                let eps: f64 = rng.sample(StandardNormal);
                self.true_preference(u, i).expect("sampled in range") + noise_sigma * eps
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Thresholds are quantiles of the noisy-preference distribution.
    Quantile,
    /// Thresholds are cutpoints on the noisy-preference scale itself.
    Raw,
}

impl FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantile" => Ok(Self::Quantile),
            "raw" => Ok(Self::Raw),
            other => Err(Error::Config(format!("unknown threshold mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub mode: ThresholdMode,
    pub t1: f64,
    pub t2: f64,
    pub label: Treatment,
    pub suite: Suite,
}

impl ThresholdSpec {
    /// Built-in threshold pair for a suite and treatment, in quantile mode.
    pub fn preset(suite: Suite, label: Treatment) -> Self {
        let (t1, t2) = match (suite, label) {
            (Suite::SimExp, Treatment::A) => (0.4028, 0.8845),
            (Suite::SimExp, Treatment::B) => (0.4276, 0.8508),
            (Suite::SimExp, Treatment::C) => (0.4240, 0.8270),
            (Suite::SimCtld, Treatment::A) => (0.33, 0.66),
            (Suite::SimCtld, Treatment::B) => (0.25, 0.5),
            (Suite::SimCtld, Treatment::C) => (0.5, 0.75),
        };
        Self {
            mode: ThresholdMode::Quantile,
            t1,
            t2,
            label,
            suite,
        }
    }

    pub fn with_mode(mut self, mode: ThresholdMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1 < self.t2) {
            return Err(Error::Config(format!(
                "threshold t1 = {} must be below t2 = {}",
                self.t1, self.t2
            )));
        }
        if self.mode == ThresholdMode::Quantile && !(self.t1 >= 0.0 && self.t2 <= 1.0) {
            return Err(Error::Config(format!(
                "quantile thresholds must lie in [0, 1] (got {}, {})",
                self.t1, self.t2
            )));
        }
        Ok(())
    }
}

/// Cutpoints on the noisy-preference scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoffs {
    pub c1: f64,
    pub c2: f64,
}

impl Cutoffs {
    pub fn new(c1: f64, c2: f64) -> Result<Self> {
        if !(c1 < c2) {
            return Err(Error::DegenerateThreshold { c1, c2 });
        }
        Ok(Self { c1, c2 })
    }

    /// Maps a noisy preference to a rating; intervals are closed on the left.
    pub fn classify(&self, noisy: f64) -> OrdinalRating {
        if noisy < self.c1 {
            OrdinalRating::Dislike
        } else if noisy < self.c2 {
            OrdinalRating::Like
        } else {
            OrdinalRating::Superlike
        }
    }
}

pub const MIN_QUANTILE_SAMPLES: usize = 10_000;

/// Materializes a threshold spec as cutoffs on the noisy-preference scale.
///
/// Quantile specs are resolved against `mc_samples` noisy preferences of
/// uniformly random (user, item) pairs, drawn from `rng`.
pub fn resolve_cutoffs(
    spec: &ThresholdSpec,
    env: &Environment,
    noise_sigma: f64,
    mc_samples: usize,
    rng: &mut SimRng,
) -> Result<Cutoffs> {
    spec.validate()?;
    match spec.mode {
        ThresholdMode::Raw => Cutoffs::new(spec.t1, spec.t2),
        ThresholdMode::Quantile => {
            if mc_samples < MIN_QUANTILE_SAMPLES {
                return Err(Error::Config(format!(
                    "quantile resolution needs at least {MIN_QUANTILE_SAMPLES} samples (got {mc_samples})"
                )));
            }
            let mut sample = env.sample_noisy_preferences(mc_samples, noise_sigma, rng);
            let c1 = stats::quantile_select(&mut sample, spec.t1);
            let c2 = stats::quantile_select(&mut sample, spec.t2);
            Cutoffs::new(c1, c2)
        }
    }
}

/// Draws Gaussian noise and thresholds the noisy preference.
///
/// One standard-normal draw is consumed per call even when `noise_sigma` is 0.
pub fn observe_rating(
    preference: f64,
    noise_sigma: f64,
    cutoffs: &Cutoffs,
    rng: &mut SimRng,
) -> OrdinalRating {
    let eps: f64 = rng.sample(StandardNormal);
    cutoffs.classify(preference + noise_sigma * eps)
}
