//! Self-supervised pseudo-labeling over multiple embedding backbones.
//!
//! The crate turns unlabeled embedding sets produced by several feature
//! extractors into training signal:
//!
//! * [`features`] loads, generates and normalizes embedding matrices.
//! * [`metricspace`] computes pairwise distances, refines them with
//!   k-reciprocal re-ranking and averages them across backbones.
//! * [`clustering`] runs DBSCAN on a precomputed matrix and combines runs at
//!   increasing radii while keeping early outliers out.
//! * [`training`] holds the loop pieces: warmup schedule, proxy selection,
//!   PK batches, proxy and hard-triplet losses, SGD and the EMA teacher.
//! * [`evaluation`] ranks galleries and computes mAP and CMC.
//! * [`orchestrator`] wires everything into the iterative pipeline with
//!   checkpoints, resume and inspection.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iterators otherwise.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod clustering;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod metricspace;
pub mod orchestrator;
pub mod par;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use par::Execution;
