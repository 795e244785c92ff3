//! Networked nonlinear recurrent operators with a guaranteed incremental L2
//! gain, numerical certificates for the guarantee, and the training and
//! benchmark machinery around them.

pub mod certificates;
pub mod error;
pub mod identification;
pub mod network;
pub mod operators;
pub mod parametrization;
pub mod persistence;
pub mod plant;
pub mod topology;

pub use error::{Error, Result};
