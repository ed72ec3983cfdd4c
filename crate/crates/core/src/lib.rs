//! Eigenvalue-based inference on the number of latent factors in panels
//! with many cross-sectional units and a short, fixed time dimension.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: symmetric eigendecomposition with ordering and sign
//!   conventions, complement bases, Kronecker and commutation matrices.
//! - [`perturbation`]: first- and second-order expansions of the eigenvalues
//!   of a reduced-rank symmetric matrix under a small symmetric perturbation.
//! - [`stats`]: panel containers, PCA and instrument-based factor fits, and
//!   the test statistics `T(k)`, `S(k)`, `S*(k)` and the weak-factor gap `Δ_k`.
//! - [`nulldist`]: feasible estimators of the limiting variance structure,
//!   simulated null laws, p-values and subsampling critical values.
//! - [`densities`]: closed-form GOE spacing densities and local power curves.
//! - [`dgp`]: the simulation designs used for size and power experiments.
//! - [`pipeline`], [`montecarlo`], [`io`], [`config`]: the p-value sweep over
//!   `k`, Monte Carlo tables, CSV ingestion and plot-ready output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod densities;
pub mod dgp;
pub mod error;
pub mod io;
pub mod ks;
pub mod linalg;
pub mod montecarlo;
pub mod nulldist;
pub mod perturbation;
pub mod pipeline;
pub mod quad;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
