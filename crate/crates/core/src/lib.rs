pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod generator;
pub mod interpreter;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tape, Tensor, Var};
