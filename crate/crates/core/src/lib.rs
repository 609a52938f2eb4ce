mod container;
pub mod analysis;
pub mod bench;
pub mod annotation;
pub mod classifier;
pub mod corpus;
pub mod embedding;
pub mod sampling;
pub mod synth;
pub mod error;
pub mod pipeline;
pub mod textproc;

pub use error::{Error, Result};
