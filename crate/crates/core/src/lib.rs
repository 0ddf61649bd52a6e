//! Procedural block-tower tasks, a small image-conditioned token policy and
//! RL / SFT post-training on top of it.

pub mod analyze;
pub mod cli;
pub mod env;
pub mod error;
pub mod policy;
pub mod render;
pub mod seed;
pub mod tasks;
pub mod train;
pub mod world;

pub use error::{Error, Result};
