pub mod dataset_io;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod gmm;
pub mod moment_builder;
pub mod normal;
pub mod numfmt;
pub mod panel_sim;
pub mod quadrature;
pub mod rng;
pub mod trunc_moments;

pub use error::{Error, Result};
