//! Symmetric eigensolvers backing the spectral module.

mod dense;
mod lanczos;

pub use dense::{symmetric_eigen, SymmetricEigen};
pub use lanczos::{largest_eigenpairs, LanczosOptions, LanczosResult, LanczosStats};
