//! Active disambiguation of candidate SQL programs through output-selection
//! questions.
//!
//! A pool of candidate programs for one utterance is clustered into
//! execution-equivalence classes with a prior weight each. The engine then
//! synthesizes small databases on which the likely candidates disagree, asks
//! annotators which output is correct, and updates a posterior over the
//! clusters until one dominates.

pub mod annotator_em;
pub mod infogain;
pub mod relational;
pub mod response_model;
pub mod seeding;

#[cfg(feature = "engine")]
pub mod candidates;
#[cfg(feature = "engine")]
pub mod corpus;
#[cfg(feature = "engine")]
pub mod evalsim;
#[cfg(feature = "engine")]
pub mod interaction;
#[cfg(feature = "engine")]
pub mod synth;

pub use relational::{Database, Denotation, Schema, Value};
