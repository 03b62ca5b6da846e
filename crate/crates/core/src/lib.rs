//! Dual-view contrastive sentence embeddings.
//!
//! Every sentence gets two vectors in one shared space: `r` for its literal
//! (explicit) meaning and `u` for its pragmatic (implicit) meaning. The crate
//! covers the whole pipeline:
//!
//! * [`corpus`]: entailment data with four hypotheses per premise, pairwise
//!   implicitness data, and a seeded synthetic corpus with known structure.
//! * [`encoder`]: a small transformer backbone used either as one
//!   view-conditioned encoder (`cross`) or as two towers (`bi`), CLS pooling.
//! * [`objective`]: the five-term dual contrastive loss, its ablations, the
//!   analytic gradient and an independent scalar oracle.
//! * [`trainer`]: the optimization loop, checkpoints and the grid search.
//! * [`evaluation`]: entailment recognition with a tuned threshold and
//!   pairwise implicitness estimation.
//! * [`retrieval`]: exact top-k search against either view of a query.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod fingerprint;
pub mod objective;
pub mod retrieval;
pub mod trainer;

pub use error::{Error, Result};
