//! Penalized smoothing-spline estimation of the mean function of a random
//! process observed at discrete, noisy sampling points, plus the simulation
//! and sweep machinery used to study its convergence rate.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`). Bernoulli
//! polynomial coefficients are derived in exact rational arithmetic. The
//! aliases below fix the scalar type to `f64`, which the harness and CLI use.

pub mod cli;
pub mod data;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod metrics;
pub mod scalar;
pub mod simulation;

pub use data::{Curve, DesignKind, FitMode, FunctionalDataset, Truth};
pub use error::{Error, Result};
pub use estimator::{
    fit, log_grid, select_lambda_gcv, select_lambda_oracle, Selection, fit_common, fit_independent, smooth_curve, two_stage, FitWarning, SolveOptions,
    SplineEstimate,
};
pub use kernel::{bernoulli_eval, gram_matrix, kernel_eval, BernoulliEvaluator, SobolevKernelConfig};
pub use metrics::{fit_rate_slope, harmonic_mean, ise, IseRecord, RatePredictor, SlopeFit};
pub use scalar::Scalar;
pub use simulation::{generate, generate_replicate, DesignSpec, FrequencyRule, ProcessSpec};

pub type Dataset = FunctionalDataset<f64>;
pub type Estimate = SplineEstimate<f64>;
pub type KernelConfig = SobolevKernelConfig<f64>;
pub type Options = SolveOptions<f64>;
pub type Dataset32 = FunctionalDataset<f32>;
pub type Estimate32 = SplineEstimate<f32>;
pub type KernelConfig32 = SobolevKernelConfig<f32>;
