//! Scoring-aware multi-reward reinforcement learning for autoregressive
//! multi-trait essay scoring.

pub mod corpus;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod policy;
pub mod ppo;
pub mod vocab;

pub use error::{Error, Result};
