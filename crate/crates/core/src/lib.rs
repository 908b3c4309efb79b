//! Astronomical image deconvolution.
//!
//! The crate covers the whole restoration pipeline for single-channel
//! astronomical images:
//!
//! * [`psf`]: Airy point spread functions calibrated by their FWHM.
//! * [`degrade`] and [`convolve`]: the forward model (circular blur plus
//!   Gaussian noise) and the convolution engines behind it.
//! * [`classical`]: Wiener, Richardson-Lucy and total-variation baselines.
//! * [`cnn`]: a small fully convolutional network trained from scratch with
//!   Nesterov SGD, plus its single-layer linear counterpart.
//! * [`dataset`]: synthesis of (degraded, clean) patch pairs from clean images.
//! * [`predict`]: tiled whole-image inference and feature-map extraction.
//! * [`bench`]: per-image, per-method PSNR and timing reports.

pub mod bench;
pub mod classical;
pub mod cnn;
pub mod convolve;
pub mod dataset;
pub mod degrade;
pub mod error;
pub mod fft;
pub mod image;
pub mod io;
pub mod predict;
pub mod psf;
pub mod seeds;
pub mod synth;

pub use bench::{run_benchmark, BenchReport, BenchRow, Method, ModelSet};
pub use classical::{richardson_lucy, tv_deconvolve, wiener_deconvolve, RlParams, TvParams, WienerParams};
pub use cnn::{load_model, save_model, train, Architecture, CnnModel, TrainConfig};
pub use convolve::{convolve_full_image, valid_convolve, Boundary};
pub use dataset::{build_dataset, CorpusImage, Dataset, DatasetSpec, PatchPair};
pub use degrade::{add_gaussian_noise, degrade, NoiseSpec};
pub use error::{Error, Result};
pub use image::{mse, psnr, psnr_unit, Image};
pub use io::{read_image, write_image};
pub use predict::{extract_feature_maps, predict_image};
pub use psf::{bessel_j1, Psf};
