//! Marker internal confidence: how much confidence a language model's
//! epistemic markers ("I think", "probably", ...) actually carry, and how
//! stable that is across datasets.

pub mod annotate;
pub mod config;
pub mod corpus;
pub mod judge;
pub mod metrics;
pub mod mic;
pub mod pipeline;
pub mod report;
pub mod segmenter;
pub mod stats;
