//! Data-free knowledge distillation: compress a trained teacher classifier
//! into a smaller student using only synthetic inputs from a jointly trained
//! generator, with a fixed-capacity replay buffer of past synthetic batches
//! guarding the student against forgetting as the generator's output drifts.

pub mod bank;
pub mod config;
pub mod data;
pub mod error;
pub mod distill;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod persist;
pub mod plot;
pub mod rng;
pub mod toy2d;
pub mod types;

pub use error::{Error, Result};
