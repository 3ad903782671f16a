//! Evaluation toolkit for instance-segmentation predictions.
//!
//! Masks are column-major run-length encoded ([`mask`], [`codec`]); polygon
//! outlines are rasterized by pixel-center sampling ([`polygon`]). Detections
//! are paired with ground truth greedily by score ([`matching`]) and the
//! outcomes feed scalar metrics and AP/AR ([`metrics`]), extended confusion
//! matrices ([`confusion`]) and score-threshold analysis ([`calibration`]).
//! [`synth`] builds scenes with known outcomes for testing and [`cli`] drives
//! it all from the `cytoeval` binary.

pub mod calibration;
pub mod cli;
pub mod codec;
pub mod confusion;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod mask;
pub mod matching;
pub mod metrics;
pub mod polygon;
pub mod synth;

pub use error::{Error, Result};
