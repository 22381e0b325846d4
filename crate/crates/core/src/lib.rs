//! Personalised carpooling recommendations learned online from
//! accept/reject feedback, with a synthetic-user simulator to evaluate them.
//!
//! Modules, bottom-up:
//! - [`geo`]: distances, timed routes, grid index
//! - [`trips`]: ride database, synthetic data, commuter queries
//! - [`matching`]: candidate-ride retrieval
//! - [`ranking`]: features, per-user ranker, epsilon-greedy lists, pairwise SGD
//! - [`choice`]: ground-truth user utility and acceptance
//! - [`sim`]: experiment loop and metrics
//! - [`config`], [`cli`]: configuration files and command implementations

pub mod choice;
pub mod cli;
pub mod config;
pub mod error;
pub mod geo;
pub mod ids;
pub mod matching;
pub mod ranking;
pub mod rng;
pub mod sim;
pub mod trips;

pub use error::{Error, Result};
