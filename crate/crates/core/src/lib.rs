//! Ensemble predicate decoding for long-tailed relation classification.

pub mod datamodel;
pub mod encoders;
pub mod epd;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod train;
