pub mod autodiff;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod text;
pub mod training;

pub use error::{Error, Result};
