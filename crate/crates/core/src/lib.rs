//! Kernel spectral filter regression with data-driven early stopping.
//!
//! The pipeline is: build a [`KernelMatrix`] on a [`Design`], decompose it
//! once into a [`SpectralDecomposition`], pair it with a [`Regularizer`] as a
//! [`SpectralEstimator`], and query risks, effective dimensions and stopping
//! times from the resulting spectral coordinates. [`simulation`] wraps this
//! into seeded Monte Carlo experiments.
//!
//! ```
//! use earlystop::{Design, Kernel, KernelMatrix, Regularizer, SpectralDecomposition,
//!     SpectralEstimator, StoppingConfig, tau_dp};
//!
//! let design = Design::fixed(50)?;
//! let k = KernelMatrix::new(&Kernel::Sobolev, &design)?;
//! let decomp = SpectralDecomposition::new(&k)?;
//! let est = SpectralEstimator::new(&decomp, Regularizer::landweber(2.4)?)?;
//!
//! let y: Vec<f64> = design.points().iter().map(|x| (6.0 * x).sin()).collect();
//! let zy = decomp.coords(&y)?;
//! let stop = tau_dp(&est, &zy, &StoppingConfig::grid(0.01, 500.0, 500))?;
//! assert!(stop.time <= 500.0);
//! # Ok::<(), earlystop::Error>(())
//! ```

// `!(x > 0.0)` style guards are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod error;
pub mod filters;
pub mod kernels;
pub mod report;
pub mod simulation;
pub mod spectral;
pub mod stopping;

pub use error::{Error, Result};
pub use filters::Regularizer;
pub use kernels::{kernel_matrix, Design, Kernel, KernelMatrix};
pub use simulation::{
    estimate_deviation, run_experiment, DeviationEstimate, DeviationTargets, ExperimentConfig,
    ExperimentResult, Preset, SignalSpec,
};
pub use spectral::{
    decompose, EmpiricalCoords, RiskCurve, SpectralDecomposition, SpectralEstimator,
};
pub use stopping::{
    balancing_time, data_driven_emergency_stop, oracle_time, smoothed_balancing_time, tau_dp,
    tau_sdp, SearchMode, StoppingConfig, StoppingOutcome, StoppingRule,
};
