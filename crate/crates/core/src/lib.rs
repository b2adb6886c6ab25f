//! Sensitivity estimation for differentially private counting queries over
//! multi-way equi-joins.
//!
//! The crate computes or estimates the sensitivity of `COUNT(*)` over a join
//! in four ways and releases noised answers:
//!
//! - [`smoothbounds::elastic_sensitivity`] from per-relation maximum frequencies,
//! - [`smoothbounds::residual_sensitivity`] from exact maximum boundaries of
//!   residual queries,
//! - [`samplingse::sampling_se`], which estimates the maximum boundaries with
//!   random walks and confidence-interval group pruning,
//! - [`sketchse::sketching_sensitivity`], which bounds local sensitivity from
//!   AGMS sketch products.
//!
//! [`exact`] holds ground-truth oracles for desk-scale instances and
//! [`dprelease`] the Laplace and General Cauchy mechanisms. The [`harness`]
//! module backs the `joinsens` command line tool.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dprelease;
pub mod error;
pub mod exact;
pub mod harness;
pub mod querymodel;
pub mod relstore;
pub mod samplingse;
pub mod sketchse;
pub mod smoothbounds;

mod seeds;

pub use error::{Error, Result};
pub use querymodel::{Col, JoinQuery, QuerySpec, RelSet};
pub use relstore::{Database, Relation, Value};
