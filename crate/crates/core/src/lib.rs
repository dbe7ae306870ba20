//! Latent sparse-dynamics discovery for spatiotemporal fields.
//!
//! A stacked GRU encodes lag windows of sparse sensor readings into a small
//! latent state, a shallow decoder maps that state back to the full field,
//! and an ensemble of SINDy cells (or a single linear Koopman map) regularizes
//! the latent trajectory so that it follows a parsimonious ODE. The learned
//! ODE is then integrated forward to forecast the field.

// Parameter checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diff;
pub mod eval;
pub mod nets;
pub mod rng;
pub mod shred;
pub mod sindy;
