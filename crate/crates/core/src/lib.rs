pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod model;
pub mod objective;
pub mod synth;
pub mod theorylab;
pub mod trainer;

pub use error::{Error, Result};
