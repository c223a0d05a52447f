//! Generative modeling toolkit for magnetic field images (MFIs).
//!
//! The crate covers the full desk-scale workflow:
//!
//! * [`fieldsim`] — Biot-Savart simulation of Bz scan maps above IC power-short
//!   defect scenes (the dataset's ground truth),
//! * [`pipeline`] — normalization, blue-white-red colormap encode/decode,
//!   augmentations, and dataset file formats,
//! * [`physics`] — divergence (Gauss's law) and boundary-decay losses on
//!   image-adapted 2-D vector fields,
//! * [`tensor`] — a minimal dense-tensor reverse-mode autodiff engine with the
//!   ops needed by the models,
//! * [`models`] — DDPM and VAE training/sampling with optional physics
//!   regularization,
//! * [`enhance`] — saturation/brightness/contrast post-processing,
//! * [`metrics`] — PSNR, SSIM, Fréchet distance, Fourier score, and the
//!   divergence score, plus set-level evaluation.

pub mod enhance;
pub mod error;
pub mod fieldsim;
pub mod grid;
pub mod metrics;
pub mod models;
pub mod physics;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
