//! Identification of periodic lattices, atom positions and vacancies in noisy
//! two-dimensional images.
//!
//! An image is modelled as a sparse sum of separable Gaussian spots placed on
//! integer pixel sites, `Y = U A Vᵀ + E`. Atom sites are assumed to lie on a
//! single integer lattice, so the pixel grid is partitioned into lattice
//! groups (one per offset) and the support of `A` is recovered in two levels:
//! a greedy group selection driven by the loss reduction per unit of
//! structural sparsity cost, followed by marginal regression and a projection
//! based hard threshold inside the selected groups.
//!
//! Pipeline stages:
//!
//! 1. [`spectral`] estimates the lattice basis and spot width from the double
//!    Fourier transform of the image.
//! 2. [`lattice`] enumerates every lattice group for that basis.
//! 3. [`solver`] runs group OMP with thresholding over the catalog.
//! 4. [`simgen`] and [`eval`] produce synthetic benchmarks and score results.
//!
//! Pixel sites are 1-based `(m, n)` pairs: `m` indexes rows, `n` columns.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod lattice;
pub mod linalg;
pub mod pipeline;
pub mod simgen;
pub mod solver;
pub mod spectral;
pub mod sweep;

pub use error::{Error, Result};
pub use image::{AtomMap, DesignVectors, Image, Psf, Site};
pub use lattice::{GroupCatalog, LatticeBasis, LatticeGroup};
pub use solver::{DetectionResult, SolverConfig};

/// Artifact version recorded in manifests and result files.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
