pub mod error;
pub mod experiments;
pub mod io;
pub mod matcher;
pub mod reliability;
pub mod rng;
pub mod stats;
pub mod synthgen;

pub use error::{Error, Result};
