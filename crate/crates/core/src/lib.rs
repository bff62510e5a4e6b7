mod error;

pub mod augmentor;
pub mod cli;
pub mod config;
pub mod data;
pub mod evaluator;
pub mod recommender;
pub mod pipeline;
pub mod rng;
pub mod simulator;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
