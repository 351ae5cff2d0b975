pub mod cf;
pub mod checkpoint;
pub mod coldstart;
pub mod dataset;
pub mod distribution;
pub mod encoder;
pub mod error;
pub mod eval_bench;
pub mod numeric;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
