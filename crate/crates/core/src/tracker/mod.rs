//! Point trackers and the window chaining that extends them.
//!
//! A tracker follows query pixels through a window of at most `S`
//! consecutive frames, in both temporal directions from each query frame,
//! and attaches a per-frame visibility and a Cauchy trajectory distribution.

mod chain;
mod correlation;
mod oracle;

pub use chain::{chain_windows, window_starts};
pub use correlation::{
    build_cost_volume, ncc, refine_step, CorrelationConfig, CorrelationTracker, CostVolume, FeaturePyramid,
    ImageDir, ImageSource, RenderedScene, PATCH_RADIUS,
};
pub use oracle::{OracleConfig, OracleTracker};

use crate::geometry::Intrinsics;
use crate::probmodel::TrackDistribution;
use crate::sampling::{Query, QuerySet};
use nalgebra::{DMatrix, Vector2};
use thiserror::Error;

/// Default model window length.
pub const DEFAULT_WINDOW: usize = 8;

/// Default chained tracking window length.
pub const DEFAULT_CHAIN_WINDOW: usize = 12;

/// Default number of refinement iterations.
pub const DEFAULT_ITERATIONS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("window of {len} frames starting at {start} is invalid: {reason}")]
    WindowMismatch { start: usize, len: usize, reason: String },
    #[error("query at frame {frame} ({x:.2}, {y:.2}) matches no scene point")]
    QueryUnmatched { frame: usize, x: f64, y: f64 },
    #[error("image {width}x{height} is smaller than 32x32")]
    ImageTooSmall { width: usize, height: usize },
    #[error("frame {0}: {1}")]
    Source(usize, String),
}

/// One query followed through a window.
#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub query: Query,
    /// Pixel position in every window frame.
    pub positions: Vec<Vector2<f64>>,
    /// Visibility score in `[0, 1]` per frame.
    pub visibility: Vec<f64>,
    /// Per-frame feature rows (`S × D`).
    pub features: DMatrix<f64>,
    pub dist: TrackDistribution,
    /// Dynamic score in `[0, 1]`; 0 until scored.
    pub dyn_score: f64,
    /// Ground-truth dynamic label when the tracker knows it.
    pub gt_dynamic: Option<bool>,
}

impl Track {
    /// Point uncertainty per frame.
    pub fn uncertainty(&self) -> Vec<f64> {
        self.dist.uncertainty()
    }
}

/// Tracks over the frames `start .. start + len`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackSet {
    pub start: usize,
    pub len: usize,
    pub tracks: Vec<Track>,
}

impl TrackSet {
    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn n_tracks(&self) -> usize {
        self.tracks.len()
    }

    /// Window-relative index of an absolute frame.
    pub fn local(&self, frame: usize) -> Option<usize> {
        (frame >= self.start && frame < self.start + self.len).then(|| frame - self.start)
    }

    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// A front end that follows query points through a frame window.
pub trait PointTracker {
    /// Largest window a single `track` call accepts.
    fn window(&self) -> usize;

    /// Number of frames in the underlying sequence.
    fn n_frames(&self) -> usize;

    fn intrinsics(&self) -> Intrinsics;

    /// Image size `(width, height)`.
    fn image_size(&self) -> (usize, usize);

    /// Keypoints to start tracks from in `frame`.
    fn keypoints(&mut self, frame: usize, n: usize, grid: usize) -> Result<QuerySet, TrackerError>;

    /// Tracks every query through frames `start .. start + len`.
    fn track(&mut self, start: usize, len: usize, queries: &[Query]) -> Result<TrackSet, TrackerError>;

    /// Hint that frames before `frame` will not be requested again.
    fn release_before(&mut self, _frame: usize) {}
}

/// Checks the window bounds and that every query lies inside it.
pub fn check_window(window: usize, n_frames: usize, start: usize, len: usize, queries: &[Query]) -> Result<(), TrackerError> {
    let fail = |reason: String| Err(TrackerError::WindowMismatch { start, len, reason });
    if len == 0 || len > window {
        return fail(format!("length must be in 1..={window}"));
    }
    if start + len > n_frames {
        return fail(format!("sequence has {n_frames} frames"));
    }
    if let Some(q) = queries.iter().find(|q| q.frame < start || q.frame >= start + len) {
        return fail(format!("query frame {} outside the window", q.frame));
    }
    Ok(())
}

/// SplitMix64 finalizer, used for seeded per-item randomness.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn hash_of(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5851_F42D_4C95_7F2D, |h, &p| mix64(h ^ p))
}

pub(crate) fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
