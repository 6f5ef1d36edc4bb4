//! Entanglement verification with mismatched threshold detectors.
//!
//! The crate compiles observed click statistics and a characterized
//! detector-efficiency model into an expectation-values-matrix (EVM)
//! feasibility problem and decides it with a built-in primal-dual
//! interior-point SDP solver. Everything here is `no_std` with `alloc`;
//! file formats, the CLI and parallel scans live in the `evmix` crate.
//!
//! Module map:
//!
//! - [`fockspace`]: truncated multimode Fock basis and Hermitian operators.
//! - [`detectors`]: scheme topology, efficiency tables, renormalization.
//! - [`povm`]: active and passive threshold-detector POVMs.
//! - [`idealops`]: ideal-operator dictionaries and their algebra.
//! - [`photon_bounds`]: double-click, effective-error and cross-click bounds.
//! - [`evm`]: constraint compiler, partial transpose, EVM of a state.
//! - [`verifier`]: robust feasibility verdicts on top of [`sdp`].
//! - [`channel`]: exact toy-channel statistics and the squashing baseline.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod channel;
pub mod detectors;
pub mod error;
pub mod evm;
pub mod fockspace;
pub mod idealops;
pub mod linalg;
pub mod photon_bounds;
pub mod povm;
pub mod sdp;
pub mod verifier;

pub use error::{Error, Result};
