//! Discovering zones of different urban functions from transit smart-card
//! flows, POI service-area profiles and traffic-analysis-zone aggregation.

// Positivity checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod em;
pub mod error;
pub mod features;
pub mod geo;
pub mod ingest;
pub mod metrics;
pub mod poi;

pub use error::{Error, Result};
pub mod config;
pub mod labeler;
pub mod pipeline;
pub mod synth;
pub mod taz;
