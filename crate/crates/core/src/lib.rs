//! Normalization-layer laboratory.
//!
//! Implements L2BN (per-sample l2 normalization followed by batch
//! normalization) next to BN, LN, IN, PN, GN and the LNBN/INBN/PNBN
//! composites; angle-based discriminability metrics; an iterated-dynamics
//! simulator for normalization maps over class centers; and small MLP/CNN
//! classifiers for desk-scale training comparisons.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod geomsim;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod norm;
pub mod par;
pub mod param;
pub mod tensor;

pub use error::{Error, Result};
pub use norm::{Mode, NormKind, NormLayer, NormSpec, NormState};
pub use param::Param;
pub use tensor::{Rng, Tensor};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
