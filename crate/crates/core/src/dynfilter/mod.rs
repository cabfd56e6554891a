//! Motion-consistency scoring of tracks and the track filter that decides
//! which observations reach bundle adjustment.

mod fundamental;

pub use fundamental::{fit_dominant_motion, fundamental_from_poses, sampson_distance, IRLS_ROUNDS, IRLS_SCALE};

use crate::tracker::{logistic, TrackSet};
use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fewest visible anchors for a frame pair to be fitted.
pub const MIN_ANCHORS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynError {
    #[error("correspondences do not determine a fundamental matrix")]
    DegenerateConfiguration,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
}

/// Thresholds of the track filter and the dynamic-score squashing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Minimum visibility of a usable observation.
    pub gamma_v: f64,
    /// Tracks scoring at or above this are dynamic.
    pub gamma_d: f64,
    /// Uncertainty quantile kept.
    pub gamma_u: f64,
    /// Tracks with fewer valid observations are dropped.
    pub gamma_track: usize,
    /// Logistic center of the dynamic score, pixels.
    pub tau_d: f64,
    /// Logistic width of the dynamic score, pixels.
    pub sigma_d: f64,
    /// Scale kept weights by `1/(1+Φ)` instead of leaving them at 1.
    pub confidence_weighting: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            gamma_v: 0.9,
            gamma_d: 0.9,
            gamma_u: 0.8,
            gamma_track: 3,
            tau_d: 2.0,
            sigma_d: 0.5,
            confidence_weighting: false,
        }
    }
}

impl FilterConfig {
    /// Every filter switched off.
    pub fn disabled() -> Self {
        Self {
            gamma_v: 0.0,
            gamma_d: 1.01,
            gamma_u: 1.0,
            gamma_track: 0,
            ..Self::default()
        }
    }

    /// Thresholds above 1 (never met) and `gamma_track = 0` are allowed so
    /// that single criteria can be switched off.
    pub fn validate(&self) -> Result<(), DynError> {
        let bad = |m: String| Err(DynError::InvalidConfig(m));
        for (name, v) in [("gamma_v", self.gamma_v), ("gamma_d", self.gamma_d)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} = {v} must be a non-negative number"));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma_u) {
            return bad(format!("gamma_u = {} must lie in [0, 1]", self.gamma_u));
        }
        if !(self.tau_d.is_finite() && self.sigma_d > 0.0 && self.sigma_d.is_finite()) {
            return bad("tau_d must be finite and sigma_d positive".into());
        }
        Ok(())
    }
}

/// Per-track dynamic scores.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicScores {
    pub scores: Vec<f64>,
    /// Mean Sampson distance per track (`None` when never measured).
    pub mean_distance: Vec<Option<f64>>,
    /// No frame pair had enough visible anchors; every score is 0.5.
    pub insufficient_anchors: bool,
}

/// Scores each track by its mean Sampson distance to the dominant motion
/// between its query frame and every other frame.
///
/// The motion is fitted per frame pair on the union of visible anchors and
/// queries; only frames where the track is visible enter its average.
pub fn dynamic_score(tracks: &TrackSet, anchors: &TrackSet, config: &FilterConfig) -> Result<DynamicScores, DynError> {
    if (tracks.start, tracks.len) != (anchors.start, anchors.len) && !anchors.is_empty() {
        return Err(DynError::Shape(format!(
            "tracks cover {:?}, anchors cover {:?}",
            tracks.frames(),
            anchors.frames()
        )));
    }
    let n = tracks.n_tracks();
    let visible = |v: f64| v >= config.gamma_v;

    let mut ref_frames: Vec<usize> = tracks.tracks.iter().map(|t| t.query.frame - tracks.start).collect();
    ref_frames.sort_unstable();
    ref_frames.dedup();
    let pairs: Vec<(usize, usize)> = ref_frames
        .iter()
        .flat_map(|&r| (0..tracks.len).filter(move |&s| s != r).map(move |s| (r, s)))
        .collect();

    // (pair, per-track distances) for every pair with enough anchors
    let fitted: Vec<Option<Vec<Option<f64>>>> = pairs
        .par_iter()
        .map(|&(r, s)| {
            let anchor_pts: Vec<(Vector2<f64>, Vector2<f64>)> = anchors
                .tracks
                .iter()
                .filter(|a| visible(a.visibility[r]) && visible(a.visibility[s]))
                .map(|a| (a.positions[r], a.positions[s]))
                .collect();
            if anchor_pts.len() < MIN_ANCHORS {
                return None;
            }
            let members: Vec<usize> = (0..n)
                .filter(|&i| {
                    let t = &tracks.tracks[i];
                    t.query.frame - tracks.start == r && visible(t.visibility[r]) && visible(t.visibility[s])
                })
                .collect();
            let (x1, x2): (Vec<_>, Vec<_>) = anchor_pts
                .into_iter()
                .chain(members.iter().map(|&i| (tracks.tracks[i].positions[r], tracks.tracks[i].positions[s])))
                .unzip();
            let f = fit_dominant_motion(&x1, &x2).ok()?;
            let mut d = vec![None; n];
            for &i in &members {
                let t = &tracks.tracks[i];
                d[i] = Some(sampson_distance(&f, &t.positions[r], &t.positions[s]));
            }
            Some(d)
        })
        .collect();

    if fitted.iter().all(Option::is_none) {
        return Ok(DynamicScores {
            scores: vec![0.5; n],
            mean_distance: vec![None; n],
            insufficient_anchors: true,
        });
    }
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for d in fitted.iter().flatten() {
        for (i, v) in d.iter().enumerate() {
            if let Some(v) = v {
                sum[i] += v;
                count[i] += 1;
            }
        }
    }
    let mean_distance: Vec<Option<f64>> = (0..n).map(|i| (count[i] > 0).then(|| sum[i] / count[i] as f64)).collect();
    let scores = mean_distance
        .iter()
        .map(|d| d.map_or(0.5, |d| logistic((d - config.tau_d) / config.sigma_d)))
        .collect();
    Ok(DynamicScores {
        scores,
        mean_distance,
        insufficient_anchors: false,
    })
}

/// Writes scores into the tracks.
pub fn apply_scores(tracks: &mut TrackSet, scores: &DynamicScores) {
    for (t, &s) in tracks.tracks.iter_mut().zip(&scores.scores) {
        t.dyn_score = s;
    }
}

/// Per-observation weights and per-track survival.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidityMask {
    /// `[track][frame]` weight, 0 wherever a criterion fails.
    pub weights: Vec<Vec<f64>>,
    pub alive: Vec<bool>,
}

impl ValidityMask {
    pub fn kept_points(&self) -> usize {
        self.weights.iter().flatten().filter(|&&w| w > 0.0).count()
    }

    pub fn alive_tracks(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }
}

/// Linear-interpolation quantile of `values` (sorted ascending in place).
pub fn empirical_quantile(values: &mut [f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(values[lo] + (values[hi] - values[lo]) * (pos - lo as f64))
}

/// Applies the visibility, dynamics, uncertainty and track-length criteria.
///
/// The uncertainty cut is the `gamma_u` quantile of Φ over the observations
/// that passed the visibility and dynamics tests in this window; values at
/// the cut are kept.
pub fn filter_tracks(tracks: &TrackSet, config: &FilterConfig) -> ValidityMask {
    let phi: Vec<Vec<f64>> = tracks.tracks.iter().map(|t| t.uncertainty()).collect();
    let mut weights: Vec<Vec<f64>> = tracks
        .tracks
        .iter()
        .map(|t| {
            let static_ok = t.dyn_score < config.gamma_d;
            t.visibility
                .iter()
                .map(|&v| if static_ok && v >= config.gamma_v { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();

    let mut surviving: Vec<f64> = weights
        .iter()
        .zip(&phi)
        .flat_map(|(w, p)| w.iter().zip(p).filter(|(w, _)| **w > 0.0).map(|(_, p)| *p))
        .collect();
    if let Some(cut) = empirical_quantile(&mut surviving, config.gamma_u) {
        for (w, p) in weights.iter_mut().zip(&phi) {
            for (wi, pi) in w.iter_mut().zip(p) {
                if *pi > cut {
                    *wi = 0.0;
                } else if *wi > 0.0 && config.confidence_weighting {
                    *wi = 1.0 / (1.0 + pi);
                }
            }
        }
    }

    let alive = weights
        .iter_mut()
        .map(|w| {
            let valid = w.iter().filter(|&&x| x > 0.0).count();
            if valid < config.gamma_track || valid == 0 {
                w.iter_mut().for_each(|x| *x = 0.0);
                false
            } else {
                true
            }
        })
        .collect();
    ValidityMask { weights, alive }
}
