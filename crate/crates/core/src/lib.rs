pub mod config;
pub mod ddon;
pub mod decomposition;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod ilgfn;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
