//! Near-field holographic MIMO channel simulation and score-based channel estimation.

pub mod channel;
pub mod correlation;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod metrics;
pub mod noise_pca;
pub mod score;

pub use error::{Error, Result};
