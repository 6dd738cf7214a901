//! Joint estimation of multiple undirected graphical models from
//! multi-condition data via noise-augmented GLM fitting.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod noise;
pub mod rng;
pub mod state;

pub use dataset::{Family, MultiGraphDataset, StandardizeMode};
pub use error::{Error, Result};
pub use estimators::{Backend, Convergence, EstimatorConfig, JointEstimate};
pub use noise::{E1Kind, E2Kind, NoiseSpec};
pub use state::{CoefLayout, ParameterState};
