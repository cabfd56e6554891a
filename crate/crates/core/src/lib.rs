//! Sparse visual odometry on long-term probabilistic point tracks.
//!
//! Every new frame contributes gradient-sampled keypoints that are tracked
//! bidirectionally across a multi-frame window. Each track carries a
//! multivariate Cauchy model of its trajectory, a visibility series and a
//! motion-consistency score; tracks that are occluded, dynamic, uncertain or
//! too short are masked before a sliding-window bundle adjustment recovers
//! the camera poses.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ba;
pub mod dynfilter;
pub mod eval;
pub mod geometry;
pub mod pipeline;
pub mod probmodel;
pub mod raster;
pub mod sampling;
pub mod synth;
pub mod tracker;
