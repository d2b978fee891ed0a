//! Offline model-based optimization with co-taught proxy ensembles.
//!
//! Given only a fixed dataset of (design, score) pairs, the goal is to
//! produce designs that score higher than anything in the dataset under the
//! true objective, which may only be queried for final evaluation. The crate
//! provides:
//!
//! - [`proxy`]: small MLP regressors with exact parameter/input gradients
//!   and plain/adam steps;
//! - [`tasks`]: synthetic continuous and exhaustively enumerable discrete
//!   benchmark oracles, dataset construction with elite truncation, and CSV
//!   persistence;
//! - [`engine`]: the importance-aware co-teaching loop — a rotating
//!   pseudo-labeler, small-loss sample exchange between the two remaining
//!   proxies, meta-learned sample reweighting, and mean-ensemble ascent;
//! - [`baselines`]: plain gradient ascent and mean/min ensembles;
//! - [`harness`]: seeded multi-trial experiments, sweeps, rank tables, and
//!   JSON/CSV/markdown emission;
//! - [`selftest`]: finite-difference and brute-force verification checks.

pub mod baselines;
pub mod engine;
pub mod error;
pub mod harness;
pub mod proxy;
pub mod seeding;
pub mod selftest;
pub mod tasks;

pub use error::{Error, Result};
