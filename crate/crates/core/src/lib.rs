pub mod autodiff;
pub mod chain;
pub mod cli;
mod codec;
pub mod error;
pub mod metrics;
pub mod models;
mod rng;
pub mod world;

pub use error::{Error, Result};
