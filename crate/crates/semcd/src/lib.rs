//! File formats, the on-disk dataset layout and the `semcd` command line
//! on top of `semcd-core`.
//!
//! Rasters are PNG or uncompressed TIFF: images 8 or 16 bit with any of 1
//! to 4 channels, label maps single-channel 8-bit class codes. A dataset is
//! a root directory with a tab-separated manifest, see [`layout`].

pub mod cli;
pub mod error;
pub mod files;
pub mod layout;
pub mod raster_io;
pub mod report;

pub use error::{Error, Result};
