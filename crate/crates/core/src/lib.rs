//! Hierarchical functional-thread discovery over timestamped embedding
//! sequences.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`], [`eigen`], [`kmeans`]: dense numeric kernels
//! * [`io`]: feature, narration, taxonomy and annotation files
//! * [`graph`], [`partition`]: temporal video graphs and spectral partitioning
//! * [`model`]: TDGC encoder/decoder with value and reverse-mode backends
//! * [`training`]: alignment and thread losses, gradient checks, toy trainer
//! * [`tasks`]: zero-shot procedure learning, grounding, localization, MCQ
//! * [`eval`]: matching-based metrics
//! * [`synth`]: planted-structure corpora
//!
//! With the default `parallel` feature, per-video and per-row work is
//! spread over rayon; without it the same code runs sequentially and
//! produces bit-identical results.

pub mod config;
pub mod eigen;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod kmeans;
pub mod linalg;
pub mod model;
pub mod par;
pub mod partition;
pub mod synth;
pub mod tasks;
pub mod training;

pub use error::{HieroError, Result};
pub use linalg::DenseMatrix;
