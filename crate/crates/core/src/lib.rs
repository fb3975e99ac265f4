//! Recommender feedback-loop simulation and explicit-rating analytics.
//!
//! The simulator ([`sim`]) draws a latent-factor population ([`env`]), turns
//! preferences into dislike/like/superlike answers through an interface
//! threshold model, and lets one of three recommenders ([`recommender`])
//! learn from those answers. The analytics side ([`analytics`], [`stats`])
//! works on the same [`analytics::RatingRecord`] type, so simulated traces
//! and real rating logs go through identical regressions and summaries.

pub mod analytics;
pub mod env;
pub mod error;
pub mod io;
pub mod recommender;
pub mod rng;
pub mod sim;
pub mod stats;

pub use env::{
    observe_rating, resolve_cutoffs, Cutoffs, EnvConfig, Environment, OrdinalRating, Suite,
    ThresholdMode, ThresholdSpec, Treatment,
};
pub use error::{Error, ErrorKind, Result};
