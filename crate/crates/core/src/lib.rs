//! Entry-wise clipping operators for matrix-valued stochastic gradients, the
//! localization-ratio diagnostic, a Bayes posterior-mean oracle for the
//! contaminated scalar channel, clipped optimizer updates with their
//! threshold rules, and a random-feature regression harness.

pub mod bayes;
pub mod clip;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod localization;
pub mod matrix;
pub mod noise;
pub mod optim;
pub mod quadrature;
pub mod verify;

pub use error::{Error, Result};
pub use matrix::Matrix;
