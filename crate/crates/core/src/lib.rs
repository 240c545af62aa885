//! Emulation and dual adaptive training of photonic neural networks.

pub mod cgraph;
pub mod data;
pub mod error;
pub mod errors;
pub mod experiment;
pub mod mesh;
pub mod optics;
pub mod sepn;
pub mod training;

pub use error::{Error, Result};
