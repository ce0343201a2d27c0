pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod enkf;
pub mod error;
pub mod eval;
pub mod flows;
pub mod gp;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod runner;
pub mod systems;
pub mod training;

pub use autodiff::{Tape, Tensor, Var};
pub use error::{Error, Result};
