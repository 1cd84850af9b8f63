//! Learning linear SPDEs with additive Q-Wiener forcing through a spectral
//! Galerkin reduction and a first-order Wiener chaos expansion.
//!
//! The numerical core is generic over the scalar type (`f32` or `f64`) via
//! [`Scalar`]; the `*64` aliases at the crate root fix it to `f64`, which is
//! what the file formats and the command-line driver use.
//!
//! Module map:
//! - [`spectral`]: eigenbases, spectra, grids, quadrature, projection/synthesis.
//! - [`stochastics`]: noise spectrum, time basis, chaos index set and sampling.
//! - [`simulator`]: ground-truth mode-wise integration and dataset assembly.
//! - [`propagator`]: latent layout, propagator vector field, RK4, reconstruction.
//! - [`diffengine`]: reverse-mode tape over dense arrays, Adam and schedules.
//! - [`vlm`]: encoder, ELBO, training loop, generation, checkpoints.
//! - [`metrics`]: trajectory and law-level diagnostics, CSV reports.
//! - [`io`]: the binary dataset container.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffengine;
pub mod error;
pub mod io;
pub mod metrics;
pub mod propagator;
pub mod scalar;
pub mod simulator;
pub mod spectral;
pub mod stochastics;
pub mod vlm;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use propagator::{DynamicsParams, LatentLayout};
pub use simulator::{Dataset, Scheme, SimConfig};
pub use spectral::{QuadratureRule, Regime, SpatialBasis, SpatialGrid};
pub use stochastics::{ChaosIndexSet, ChaosSample, NoiseSpectrum, TimeBasis};
pub use vlm::{ModelParams, TrainConfig, Trainer};

pub type SpatialBasis64 = SpatialBasis<f64>;
pub type SpatialGrid64 = SpatialGrid<f64>;
pub type TimeBasis64 = TimeBasis<f64>;
pub type NoiseSpectrum64 = NoiseSpectrum<f64>;
pub type SimConfig64 = SimConfig<f64>;
pub type Dataset64 = Dataset<f64>;
pub type DynamicsParams64 = DynamicsParams<f64>;
pub type ModelParams64 = ModelParams<f64>;
pub type TrainConfig64 = TrainConfig<f64>;

pub type SpatialBasis32 = SpatialBasis<f32>;
pub type TimeBasis32 = TimeBasis<f32>;
pub type Dataset32 = Dataset<f32>;
