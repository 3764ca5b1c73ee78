//! Supervised failure prediction for conversational recommendation.
//!
//! Given multi-turn retrieval runs (one ranked list of embedded items per
//! turn), predict whether the target item will have been retrieved within a
//! rank cutoff by the next turn.

pub mod autoencoder;
pub mod classifiers;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod io;
pub mod linalg;
pub mod model;
pub mod scenario;

pub use error::{Error, Result};
