//! Deterministic benchmark harness for Gaussian color-image denoising.
//!
//! The pipeline is: clean image, crop to a multiple of 8, synthesize
//! `x = y + n` with a per-image seeded stream, restore through a pluggable
//! backend (optionally tiled and/or wrapped in the dihedral self-ensemble),
//! then score with PSNR/SSIM while timing the forward pass.
//!
//! Data-parallel inner loops (images, tiles, ensemble members, filter rows)
//! go through [`par`], which uses rayon when the `parallel` feature is on and
//! plain iterators otherwise. Results never depend on the worker count.

pub mod config;
pub mod dataprep;
pub mod degradation;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod image;
pub mod inference;
pub mod metrics;
pub mod par;
pub mod report;

pub use error::{Error, Result};
pub use image::{Image, Rect};
