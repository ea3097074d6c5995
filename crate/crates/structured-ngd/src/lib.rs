pub mod cli;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod matgroup;
pub mod oracles;
pub mod optimizer;
pub mod problems;
pub mod special;

pub use error::{Error, Result};
