//! Sub-center margin-head metric learning with class-size-dependent
//! margins, plus the retrieval pipeline around it: exact cosine kNN,
//! power-law score postprocessing, GAP/accuracy evaluation, multi-model
//! ensembling, and a deterministic synthetic-data training harness.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); `f64` is
//! the reference precision used by all gradient and metric oracles.

pub mod arcface;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod margins;
pub mod metrics;
pub mod numerics;
pub mod postprocess;
pub mod retrieval;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

/// Concrete single-precision aliases.
pub type Mat32 = numerics::DenseMatrix<f32>;
pub type Head32 = arcface::ArcFaceHead<f32>;
pub type Gallery32 = retrieval::Gallery<f32>;
pub type Schedule32 = margins::MarginSchedule<f32>;

/// Concrete double-precision aliases (the default throughout the CLI).
pub type Mat64 = numerics::DenseMatrix<f64>;
pub type Head64 = arcface::ArcFaceHead<f64>;
pub type Gallery64 = retrieval::Gallery<f64>;
pub type Schedule64 = margins::MarginSchedule<f64>;
