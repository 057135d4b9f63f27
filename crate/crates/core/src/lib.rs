//! Tile-streaming entropic optimal transport.
//!
//! Sinkhorn potentials, transport products, gradients and Hessian-vector products
//! are computed over row and column blocks with a running log-sum-exp, so no
//! `n × m` matrix is ever stored.
//!
//! Runnable examples (`cargo run --release --example <name>`):
//!
//! - `solve`: alternating and symmetric solves with annealing
//! - `dense_parity`: streaming versus materialised solver, dense memory budget
//! - `tiling`: tiling invariance and measured versus closed-form IO
//! - `gradient_flow`: descend the debiased divergence with streamed gradients
//! - `hessian`: matrix-free HVP against the dense Hessian, Lanczos
//! - `dataset_distance`: labeled dataset distance and its gradient flow
//! - `shuffled_regression`: Adam/Newton optimisation of a shuffled linear model
//! - `memory_scaling`: peak heap of both backends across a size ladder
//! - `point_cloud_io`: binary and CSV round trips

pub mod alloc_track;
pub mod autodiff;
pub mod bench;
pub mod cli;
pub mod config;
pub mod demo;
pub mod dense;
pub mod error;
pub mod hvp;
pub mod io;
pub mod linalg;
pub mod measure;
pub mod otdd;
pub mod parity;
pub mod potentials;
pub mod rng;
pub mod solver;
pub mod stream;

pub use error::{Error, Result};
