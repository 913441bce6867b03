//! Review-property recommendation: corpus preparation, review property
//! scoring, review embeddings, the recommender and its ablations, training
//! and ranking evaluation.

pub mod config;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod error;
pub mod learn;
pub mod model;
pub mod numerics;
pub mod props;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
