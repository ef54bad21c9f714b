//! Conversational passage retrieval with query resolution by term
//! classification.
//!
//! The pipeline: normalize text ([`preproc`]), derive per-term labels from
//! rewrites or relevant passages ([`supervision`]), train a bidirectional
//! term classifier ([`resolver`]), retrieve with Dirichlet-smoothed query
//! likelihood ([`retrieval`]), rerank and fuse with reciprocal rank fusion
//! ([`fusion`]) and score the result ([`evaluation`]).

pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod io_util;
pub mod pipeline;
pub mod preproc;
pub mod query;
pub mod resolver;
pub mod retrieval;
pub mod run;
pub mod supervision;

pub use error::{Error, Result};
