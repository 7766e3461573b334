//! Rank one and rank two false theta functions: exact q-series, constant terms of
//! meromorphic Jacobi forms, iterated Eichler integrals and plumbed 3-manifold invariants.

pub mod error;
pub mod qseries;
pub mod special;
pub mod lattice;
pub mod jacobi_ct;
pub mod invariants;
pub mod eichler;
pub mod cli;

pub use error::{Error, Result};
pub use qseries::{Exp, QExpansion};
