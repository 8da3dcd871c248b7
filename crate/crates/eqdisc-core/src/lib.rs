//! eqdisc recovers closed-form laws from tabular measurements.
//!
//! The engine factors a candidate law into two stages: power-product latent
//! variables `z_i = prod_j x_j^{w_ij}` built from the raw inputs, and a
//! polynomial expression layer fitted over the latents. Exponent matrices are
//! searched on a coarse-to-fine rational lattice, pruned by constraints
//! derived from the data (signs, zeros), from unit bookkeeping (the latent
//! must carry the output's unit, or units are assigned to constants after the
//! fact), and from structure identified in the measurements themselves.

pub mod attribution;
pub mod benchgen;
pub mod dataset;
pub mod datasets;
pub mod dimension;
pub mod expr;
pub mod pipeline;
pub mod polyfit;
pub mod rat;
pub mod report;
pub mod search;
pub mod simplify;
pub mod sparsereg;
pub mod structure;
pub mod units;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
