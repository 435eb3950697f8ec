//! Exact simulation of pairwise-interacting particle systems and numerical
//! checks of their mean-field limit and Gaussian fluctuations.
//!
//! * [`measure`]: type spaces, empirical measures, test functions.
//! * [`model`]: rate/kernel specifications and the built-in example models.
//! * [`engine`]: exact thinning simulator and a discrete-time oracle.
//! * [`limit`]: the deterministic limit equations.
//! * [`fluctuation`]: drift and diffusion matrices, covariance ODE, limit SDE,
//!   martingale residuals.
//! * [`diagnostics`]: statistical verdicts.

pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod fluctuation;
pub mod limit;
pub mod measure;
pub mod model;
pub mod rng;

pub use error::{Error, Result};
