//! Variational Bayesian inference over the DAG structure of linear-Gaussian
//! structural causal models.
//!
//! A distribution over adjacency matrices (an LSTM-driven autoregressive
//! Bernoulli model, or a factorized baseline) is fitted to the posterior over
//! graphs by maximizing the evidence lower bound with score-function gradients.
//! The likelihood is the closed-form BGe marginal likelihood and the prior is
//! a Gibbs distribution penalizing cycles and edges. For up to four nodes the
//! exact posterior is available by enumeration, for validation.

pub mod bge;
pub mod cli;
pub mod error;
pub mod eval;
pub mod family;
pub mod graph;
mod io;
pub mod prior;
pub mod scm;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::AdjacencyMatrix;
