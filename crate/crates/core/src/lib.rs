//! Training-free architecture scoring via the gradient Gram matrix, top-k
//! search over a cell-based space, and empirical convergence-bound checks.
//!
//! The crate is organized around the pipeline: [`graph`] supplies a small
//! reverse-mode autodiff engine, [`arch`] the discrete cell/topology space,
//! [`netbuild`] lowers blueprints to initialized graphs, [`gram`] computes
//! Gram-matrix scores, [`flow`] simulates gradient flow against the
//! convergence bound, [`trainer`] runs the short-training selector, and
//! [`search`] ties it all together. [`data`], [`stats`], and [`report`]
//! cover datasets, rank statistics, and persistence.

pub mod arch;
pub mod data;
pub mod eigen;
pub mod error;
pub mod flow;
pub mod gram;
pub mod graph;
pub mod netbuild;
pub mod report;
pub mod search;
pub mod seed;
pub mod stats;
pub mod trainer;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, GraphBuilder, GradientMap, NodeId, OpKind, ParamId, Pass, Src};
pub use tensor::Tensor;
