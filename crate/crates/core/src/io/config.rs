use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, ThresholdMode};
use crate::error::{Error, Result};
use crate::recommender::LatentFactorParams;
use crate::sim::{SimConfig, DEFAULT_MC_SAMPLES, DEFAULT_SMOOTHING_WINDOW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSection {
    pub mode: ThresholdMode,
    pub mc_samples: usize,
}

impl Default for ThresholdSection {
    fn default() -> Self {
        Self {
            mode: ThresholdMode::Quantile,
            mc_samples: DEFAULT_MC_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub n_iter: usize,
    pub rating_frequency: f64,
    pub ratio_init_ratings: f64,
    pub smoothing_window: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            n_iter: d.n_iter,
            rating_frequency: d.rating_frequency,
            ratio_init_ratings: d.ratio_init_ratings,
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub min_ratings: usize,
    pub cap: usize,
    pub level: f64,
    pub resamples: usize,
    pub histogram_bins: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            min_ratings: 10,
            cap: 100,
            level: 0.95,
            resamples: 2000,
            histogram_bins: crate::analytics::HISTOGRAM_BINS,
        }
    }
}

/// Contents of a `--config` TOML file. Every section and key is optional.
///
/// ```toml
/// [env]
/// num_users = 100
/// num_items = 5000
/// [thresholds]
/// mode = "quantile"
/// [recommender]
/// dim = 8
/// [sim]
/// n_iter = 1000
/// [analysis]
/// cap = 100
/// ```
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub env: EnvConfig,
    pub thresholds: ThresholdSection,
    pub recommender: LatentFactorParams,
    pub sim: SimSection,
    pub analysis: AnalysisSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Simulation settings; suite, treatment, recommender and seed are filled
    /// in per grid cell.
    pub fn sim_base(&self) -> SimConfig {
        let mut base = SimConfig {
            env: self.env.clone(),
            latent_factor: self.recommender.clone(),
            n_iter: self.sim.n_iter,
            rating_frequency: self.sim.rating_frequency,
            ratio_init_ratings: self.sim.ratio_init_ratings,
            mc_samples: self.thresholds.mc_samples,
            ..SimConfig::default()
        };
        base.thresholds = base.thresholds.with_mode(self.thresholds.mode);
        base
    }
}
