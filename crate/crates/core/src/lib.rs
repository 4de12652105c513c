//! Hadamard fractional Brownian motion: exact synthesis, wavelet-based
//! estimation of scaling exponents, closed-form estimator covariances and a
//! fractal-connectivity test.

pub mod dwt;
pub mod estimate;
pub mod fctest;
pub mod io;
pub mod mc;
pub mod model;
mod special;
pub mod synth;
pub mod varmodel;

pub use model::{delta_of, validate_model, DeltaMatrix, HfBmModel, ModelError, Regularization, SquareMatrix};
pub use synth::{synthesize, CmeSynthesizer, MultiPath, SynthError, SynthOptions};
