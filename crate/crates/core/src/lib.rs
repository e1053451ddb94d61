//! Concept erasure in text-conditioning embeddings by suppressing a
//! low-rank semantic subspace.

pub mod cli;
pub mod concept;
pub mod error;
pub mod io;
pub mod linalg;
pub mod optimizer;
pub mod oracle;
pub mod perturbation;
pub mod suppression;
pub mod synthetic;
pub mod verify;

pub use error::{Error, Result};
