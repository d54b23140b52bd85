//! Semantic change detection over co-registered image pairs.
//!
//! The crate is `no_std` (with `alloc`) and contains no I/O: raster and
//! label types, class nomenclatures, confusion-matrix metrics, tiling and
//! stitching, a small convolutional network engine with the change
//! detection topologies, losses, optimisers, the training strategies,
//! inference decoding, unsupervised baselines and a synthetic data
//! generator. File formats and the command line live in the `semcd` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod baselines;
pub mod change;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod inference;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod nomenclature;
pub mod optim;
pub mod raster;
pub mod synth;
pub mod tiling;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
