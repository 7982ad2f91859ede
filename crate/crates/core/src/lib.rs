//! Multi-scale submanifold networks (MSNet) for SPD matrix data.
//!
//! Spectral SPD layers (BiMap, ReEig, LogEig), windowed principal-submatrix
//! selection over an implicit grid, log-domain fusion, and a Stiefel-manifold
//! SGD optimizer. Every gradient is written out by hand and checked against
//! finite differences in [`verify`].

// `!(x > 0.0)` is used on purpose so that NaN lands on the error path.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod dataio;
pub mod error;
pub mod layers;
pub mod linalg;
pub mod network;
pub mod optim;
pub mod rng;
pub mod spdcore;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::Mat;
