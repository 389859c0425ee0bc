//! Bug-report mining for developer chat rooms: disentangle chat logs into
//! dialogs, flag the dialogs that report bugs, and turn them into structured
//! reports.

pub mod augmentor;
pub mod bri_model;
pub mod brs_model;
pub mod config;
pub mod corpus;
pub mod dialog_graph;
pub mod disentangler;
pub mod encoder;
pub mod error;
pub mod eval_harness;
pub mod io;
pub mod nn;
pub mod pipeline;

pub use error::{Error, Result};
