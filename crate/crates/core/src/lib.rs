//! Sharpness-aware minimization for small models, with the diagnostics to
//! study it: dual-norm perturbations, first- and second-order updates,
//! m-sharpness, Lanczos Hessian spectra and a PAC-Bayes bound.

pub mod analysis;
pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod optim;
pub mod tensor;

pub use error::{Error, Location, Result};
