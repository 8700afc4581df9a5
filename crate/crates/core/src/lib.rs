//! Builds 3D embodied instruction-tuning datasets from recorded robot episodes.
//!
//! The crate is split along the data flow:
//!
//! * [`model`] holds the shared value types (cameras, depth maps, boxes, actions, samples).
//! * [`geom3d`] lifts RGB-D frames to point clouds, aligns depth scales, extracts boxes
//!   and picks the manipulated object.
//! * [`tokens`] owns the interaction-token vocabulary, the quantizers and the sequence grammar.
//! * [`annotate`] turns an annotated episode into prompt/answer samples.
//! * [`pipeline`] reads episodes from disk, runs everything per episode and writes datasets.

pub mod annotate;
pub mod config;
pub mod geom3d;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod tokens;

pub use model::*;
