//! Moran eigenvector spatially varying coefficient (M-SVC) regression.
//!
//! The estimator expresses each regression coefficient as a constant plus a
//! shrunken combination of Moran eigenvectors, and fits the per-coefficient
//! shrinkage parameters by restricted maximum likelihood. Three devices keep
//! the cost manageable for large samples:
//!
//! * rank reduction: the eigenbasis is approximated from k-means knots by a
//!   Nyström extension ([`eigenbasis::nystrom_basis`]);
//! * pre-compression: the design is reduced once to inner products whose size
//!   depends only on the number of coefficients and the rank
//!   ([`compression::compress`]), so every likelihood evaluation afterwards is
//!   free of the sample size;
//! * sequential maximization: coefficients are updated one at a time, and the
//!   block inverse/determinant identities in [`sequential`] cut each
//!   evaluation to an `L x L` problem.
//!
//! The crate is `no_std` and only needs `alloc`. IO, timing and the command
//! line live in the companion `msvc` crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod compression;
pub mod eigenbasis;
pub mod error;
pub mod geometry;
pub mod gwr;
pub mod likelihood;
pub(crate) mod linalg;
pub mod model;
pub mod optim;
pub mod sequential;
pub mod simulation;

pub use compression::{compress, CompressedMoments, SvcDesign};
pub use eigenbasis::{basis_at, exact_basis, moran_coefficient, nystrom_basis, BasisKind, EigenBasis};
pub use error::{Error, Result};
pub use geometry::{kmeans_knots, mst_max_edge, pairwise_distances, proximity, CoordinateSet, DiagonalPolicy, KnotSet, ProximityMatrix};
pub use gwr::{gwr_cv_score, gwr_fit_at, gwr_select_bandwidth, BandwidthGrid, GwrFit};
pub use likelihood::{compressed_restricted_loglik, direct_restricted_loglik, v_diag, LikelihoodResult, ShrinkageParams};
pub use model::{build_basis, fit, fit_observed, reconstruct_svc, residual_variance, BasisChoice, FitOptions, SpatialDataset, Stage, SvcFit};
pub use sequential::{
    build_cache, fast_loglik, fit_sequential, optimize_k, FitTrace, PerKCache, QInverseBlocks, SequentialOptions, StepResult, StopReason,
};
pub use simulation::{bias, corr, gen_large, gen_small, generate, rmse, Generator, SimConfig, SimInstance};
