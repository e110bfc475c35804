//! Auto-pooling: learning soft, non-negative clusterings of features from
//! temporally adjacent frame pairs.
//!
//! A pooling matrix `P` maps a non-negative feature vector `y` to a pooled
//! representation `z = P·y`. Training minimizes `J = λ·J1 + J2`, where `J1`
//! pulls the pooled representations of consecutive frames together and `J2`
//! keeps `Pᵀ·P·y` close to `y` so pooling does not discard information. The
//! crate also ships the fixed spatial-pooling baseline (a 0/1 special case of
//! `P`), a sparse-autoencoder feature learner, an invariance score for
//! comparing raw and pooled features, and a linear one-vs-rest classifier
//! for downstream evaluation.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod linalg;
pub mod parallel;
pub mod pnm;
pub mod pooling;

pub use error::{Error, Result};
