//! Recovery of the local strength of a micro-locally isotropic random source from
//! far-field passive scattering data.

pub mod diagnostics;
pub mod error;
pub mod farfield;
pub mod fft;
pub mod grid;
pub mod io;
pub mod quad;
pub mod recovery;
pub mod rng;
pub mod solver;
pub mod source;

pub use error::{Error, Result};
