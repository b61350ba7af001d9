//! Multi-objective evolutionary conditional GAN for tabular data synthesis.
//!
//! A population of conditional tabular generators is trained against one
//! shared discriminator. Each generator's loss is picked by a small Q-learning
//! policy, survivors are chosen by NSGA-II over utility and disclosure risk,
//! and the released model is chosen by an Improvement Score that trades
//! utility against risk.

pub mod error;
pub mod evolution;
pub mod gan;
pub mod metrics;
pub mod nn;
pub mod schema;
pub mod smart_variation;
pub mod toy;
pub mod trainer;
pub mod transform;
pub mod vgm;

pub use error::{Error, Result};
