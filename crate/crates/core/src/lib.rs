//! Closed-loop control of sampled plants through hashed delay embeddings.
//!
//! A scalar sensor stream is delay-embedded ([`embedding`]), discretized by
//! locality-sensitive hashing ([`hashing`]) and fed to an online MDP learner
//! ([`mdp`]). [`runner`] ties these to a [`plants::Plant`] for calibration,
//! learning, rollouts and evaluation; [`persist`] stores the result.

pub mod cli;
pub mod config;
pub mod embedding;
pub mod error;
pub mod hashing;
pub mod mdp;
pub mod persist;
pub mod plants;
pub mod runner;

pub use error::{Error, Result};
