//! Offline reinforcement learning with Bellman-consistent pessimism.
//!
//! The crate provides:
//!
//! * exact tabular oracles ([`mdp`]) and seeded environments ([`envs`]),
//! * feature maps ([`features`]) and offline datasets ([`data`]),
//! * the empirical Bellman-error estimator and its linear moment form ([`bellman`]),
//! * version-space and regularized pessimistic evaluation ([`pessimism`]),
//! * pessimistic soft policy iteration ([`pspi`]) and the comparison baselines ([`baselines`]),
//! * a reproducible experiment harness ([`experiment`]) driven by the `bcpo` binary.

pub mod baselines;
pub mod bellman;
pub mod data;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod features;
pub mod linalg;
pub mod mdp;
pub mod pessimism;
pub mod pspi;
pub mod state;

mod serde_mat;

pub use error::{Error, Result};
pub use state::{Policy, State};
