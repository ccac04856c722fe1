//! Multi-task one-shot imitation: a demonstration-conditioned policy with
//! masked spatio-temporal attention, a temporal contrastive objective and a
//! discretized logistic mixture action head, trained and evaluated on a
//! deterministic 2D tabletop benchmark.

pub mod error;
pub mod evalharness;
pub mod contrastive;
pub mod datagen;
pub mod exec;
pub mod model;
pub mod simworld;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
