pub mod annealing;
pub mod error;
pub mod flows;
pub mod graph;
pub mod inference;
pub mod models;
pub mod optim;
pub mod params;
pub mod rng;
pub mod snapshot;
pub mod surrogate;
pub mod transforms;

pub use error::{Error, Result};
