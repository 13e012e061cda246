pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod encoder;
pub mod error;
pub mod finetune;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod pretrain;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
