//! Multi-emitter spectrum occupancy mapping toolkit.
//!
//! Builds binary occupancy maps of a region from a small number of
//! distributed power sensors:
//!
//! 1. [`terrain`] / [`propagation`] synthesize terrain and multi-emitter
//!    linear-power fields (log-distance path loss, knife-edge diffraction,
//!    optional shadowing).
//! 2. [`grid`] partitions the region and derives occupancy ground truth
//!    from sub-region mean power against a dBm threshold.
//! 3. [`sensing`] places sensors and produces ideal, noisy, or one-bit
//!    power measurements.
//! 4. [`llr`] converts measurements into approximate log-likelihood ratios
//!    and pools them into a fixed-resolution image with natural zeros where
//!    no sensors exist.
//! 5. [`nn`] is a self-contained encoder-decoder CNN (dense blocks,
//!    batchnorm, ADAM, plateau scheduler, exact gradients) that inpaints
//!    those images into decision maps.
//! 6. [`baselines`] provides IDW, K-NN, RBF, and ordinary-kriging
//!    interpolators for comparison; [`metrics`] and [`sweeps`] compute
//!    error rates, ROC curves, and robustness sweeps over threshold,
//!    sensor count, noise, TNR, and one-bit sensing.
//! 7. [`dataset`], [`config`], [`plot`], and [`cli`] tie everything into
//!    reproducible file-backed experiments.
//!
//! Everything is deterministic for fixed seeds, including training. See the
//! crate examples for runnable walkthroughs of each capability.

pub mod baselines;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod grid;
mod io_util;
pub mod llr;
pub mod metrics;
pub mod nn;
pub mod plot;
pub mod propagation;
pub mod seed;
pub mod sensing;
pub mod sweeps;
pub mod terrain;
pub mod units;

pub use error::{Error, Result};
