//! Sortation-line staffing: a causal flow simulator, a factorized reallocation
//! policy trained offline, simulator-scored preference data for language-model
//! fine-tuning, and an evaluation harness with bootstrap confidence intervals.
//!
//! The crate is organised bottom-up:
//!
//! - [`sim`]: configuration, state, actions, the per-tick dynamics and episode runner.
//! - [`agents`]: the [`agents::Policy`] trait and the non-learned policies.
//! - [`learn`]: position features, the factorized policy, value baseline and trainers.
//! - [`prefgen`]: canonical state text, action parsing and preference-pair generation.
//! - [`eval`]: replay, improvement statistics, WAPE/R² and calibration search.
//! - [`corpus`]: synthetic historical corpora from the scripted manager.

pub mod agents;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod learn;
pub mod prefgen;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
