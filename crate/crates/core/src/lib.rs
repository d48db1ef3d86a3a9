//! Sub-event detection in social media post streams.
//!
//! Posts are grouped into fixed-width time bins, each bin is encoded into a
//! vector by one of several word- or tweet-level encoders, and the bin
//! sequence is tagged with BIO sub-event labels, optionally through a
//! left-to-right LSTM running over the bins.

pub mod autodiff;
pub mod config;
pub mod encoders;
mod error;
pub mod evalkit;
pub mod ingest;
pub mod labeler;
pub mod synth;

pub use error::{Error, Result};
