//! Renormalization-group computation of resonance and ground-state energies
//! of an N-level atom coupled to a discretized photon field.

pub mod atommodel;
pub mod error;
pub mod exec;
pub mod feshbach;
pub mod fockspace;
pub mod kernels;
pub mod linalg;
pub mod oracle;
pub mod resonance;
pub mod rgflow;
pub mod sector;

pub use error::{Error, Result};
pub use linalg::C64;
