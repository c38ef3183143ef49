//! Spectral statistics of the collective decay matrix of a Gaussian atomic
//! cloud: sampling, matrix construction, eigendecomposition, level-spacing
//! and eigenvector statistics, and ensemble orchestration.

pub mod cloud;
pub mod eigvec;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod matrix;
pub mod moments;
pub mod nnsd;
pub mod quadrature;
pub mod seed;
pub mod spectrum;
pub mod stats;
pub mod surmise;
pub mod unfold;

pub use cloud::{sample_cloud, CloudSample, Point};
pub use error::{Error, Result};
pub use matrix::{build_centered_matrix, build_decay_matrix, CenteredMatrix, DecayMatrix, MatrixKind, SymmetricMatrix};
pub use spectrum::{eigendecompose, SpectrumResult};
