//! Bayesian drug–protein interaction prediction.
//!
//! Drugs are parsed from SMILES into molecular graphs and encoded with an
//! edge-then-node message-passing network; proteins arrive as embeddings that
//! are pooled and smoothed by a small 1-D CNN. The concatenated pair goes
//! through a fully-connected head, and MC-dropout sampling yields a
//! predictive mean together with an epistemic/aleatoric variance split.

pub mod autodiff;
pub mod bayes;
pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod featurize;
pub mod gradcheck;
pub mod graphnet;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod protein;
pub mod smiles;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
