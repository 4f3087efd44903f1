//! Measures how close a latent encoding of a dataset generated by a product
//! of cyclic factors comes to a linearly disentangled representation.
//!
//! The score is an upper bound obtained by fitting, per factor, a 2-D
//! block-rotation action on a PCA projection of the encodings and taking the
//! dispersion of the un-rotated points, minimized over an integer grid of
//! rotation frequencies. A score near zero means the encoder maps each cyclic
//! factor onto its own invariant plane, acting there by rotation.
//!
//! Pipeline: [`metric::evaluate`] = per-factor centering → standardize + top-2
//! PCA + 1/√2 scale → block rotations → dispersion loss → frequency search.
//! [`data_gen`] provides synthetic datasets and encoders for end-to-end runs
//! without any model training; [`io`] the on-disk formats used by the CLI.

pub mod data_gen;
pub mod group;
pub mod inner_product;
pub mod io;
mod linalg;
pub mod metric;

/// Errors reported by the library (the CLI maps these to exit codes:
/// I/O failures exit 1, everything else exits 2).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("factor {0} carries no variance")]
    NoVariance(usize),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
