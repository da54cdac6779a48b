//! Model-free terminal-hitting stochastic reachability.
//!
//! Safety probabilities of a Markov control process are estimated purely from
//! sampled transitions: a kernel conditional distribution embedding turns every
//! expectation in the reach-avoid backward recursion into a weighted sum over
//! the sampled successors.
//!
//! - [`kernel`]: Gaussian RBF kernels and Gram matrices.
//! - [`embedding`]: the fitted embedding estimator and its weight vectors.
//! - [`reach`]: approximate value recursion, fixed-policy and maximal.
//! - [`systems`]: benchmark dynamics (integrator chains, CWH rendezvous) and samplers.
//! - [`oracle`]: grid dynamic programming and Monte Carlo ground truth.
//! - [`io`], [`config`], [`cli`]: file formats, run configuration and the command line.

pub mod error;
pub mod points;
pub mod kernel;
pub mod embedding;
pub mod reach;
pub mod systems;
pub mod oracle;
pub mod io;
pub mod config;
pub mod cli;

pub use error::{ReachError, Result};
pub use points::Points;
