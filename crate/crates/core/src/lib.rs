pub mod counterfactual;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod losses;
pub mod metrics;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
