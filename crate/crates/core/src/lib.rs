//! Hyperspectral phase retrieval from broadband coded diffraction patterns.
//!
//! A thin transparent object is illuminated by a broadband beam, modulated
//! by `T` random phase masks and propagated to a sensor that records only
//! the total intensity summed over `K` wavelengths. [`solver`] recovers the
//! complex transmittance at every wavelength with an ADMM scheme whose
//! sensor-plane step is the closed-form spectral proximity operator in
//! [`spo`], regularized by the cube filter in [`denoise`].
//!
//! ```no_run
//! use hsphr::scenario::{Scenario, ScenarioSpec};
//! use hsphr::sensing::NoiseKind;
//! use hsphr::solver::run;
//!
//! let scenario = Scenario::build(ScenarioSpec::new(2, 6, 64).with_noise(NoiseKind::Gaussian, 54.0))?;
//! let config = scenario.solver_config()?;
//! let out = run(&config, &scenario.operator, &scenario.observations.images, Some(scenario.truth_ref()))?;
//! println!("final error {:?}", out.trace.and_then(|t| t.final_mean()));
//! # Ok::<(), hsphr::Error>(())
//! ```

// NaN has to fail range checks, so `!(x > 0.0)` is used on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod denoise;
pub mod error;
pub mod hscube;
pub mod io;
pub mod masks;
pub mod metrics;
pub mod optics;
pub mod phantoms;
pub mod scenario;
pub mod sensing;
pub mod solver;
pub mod spo;

pub use num_complex::Complex64;

pub use denoise::{CubeFilter, FilterKind, FilterSpec, RankChoice};
pub use error::{Error, Result};
pub use hscube::{ComplexCube, RealImage, SpectralGrid};
pub use masks::MaskSet;
pub use metrics::{ErrorTrace, PhaseAlignment};
pub use optics::{DispersionModel, Propagator, TransferFunctionSet};
pub use sensing::{ImagingOperator, NoiseKind, NoiseLevel, NoiseSpec, ObservationSet};
pub use solver::{DualUpdate, GammaInit, Schedule, SolverConfig, SolverOutput, SolverState};
pub use spo::NoiseModel;
