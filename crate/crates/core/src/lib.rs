//! Core library of the `se-kge` toolkit.
//!
//! Implements the full numeric and graph substrate for semantic-evidence
//! analysis of knowledge-graph embedding models and for the SE-GNN
//! encoder–decoder:
//!
//! - [`kg`]: triple store, vocabularies, neighbor indices, query sets.
//! - [`se`]: the three semantic-evidence metrics and evidence bucketing.
//! - [`autodiff`]: dense tensors, a reverse-mode tape, and Adam.
//! - [`encoder`]: multi-layer attention aggregation over the augmented graph.
//! - [`decoder`]: ConvE-style query scoring against all entities.
//! - [`training`]: 1-N training with leakage-preventing edge removal.
//! - [`eval`]: filtered tie-averaged ranking and stratified reports.
//!
//! The crate is `no_std`-compatible (requires `alloc`); file formats, IO
//! and the command-line front end live in the companion `se-kge` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

#[cfg(feature = "std")]
extern crate std;

pub mod autodiff;
pub mod decoder;
pub mod encoder;
pub mod eval;
pub mod kg;
pub mod model;
#[cfg(feature = "oracles")]
pub mod oracle;
pub mod scalar;
pub mod se;
pub mod training;

pub use scalar::{Dtype, Scalar};
