//! Multi-task non-negative PU learning for time-indexed survey text.
//!
//! The pipeline ingests pre-tokenized survey answers, treats answers about
//! current conditions as positives and answers about future conditions as
//! unlabeled, and trains a shared-trunk network with one head per period
//! under the non-negative PU risk. Scores of the unlabeled answers are then
//! split into near-future and distant-future groups, compared with Welch
//! t-tests, and characterized with tf-idf / Jaccard co-occurrence networks.

pub mod analysis;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod multitask;
pub mod net;
pub mod pipeline;
pub mod purisk;
pub mod stats;
pub mod synth;
pub mod textmine;

pub use error::{Error, Result};
