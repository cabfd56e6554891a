//! Per-frame visual odometry loop: keypoint extraction, chained tracking
//! over the recent frames, track filtering and sliding-window bundle
//! adjustment.

use crate::ba::{ba_optimize, BaConfig, BaProblem, Landmark, Observation};
use crate::dynfilter::{apply_scores, dynamic_score, filter_tracks, DynError, FilterConfig};
use crate::eval::{EvalError, Trajectory};
use crate::geometry::{Intrinsics, Pose};
use crate::sampling::QuerySet;
use crate::tracker::{chain_windows, Track, TrackSet, TrackerError, PointTracker};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("the frame source is empty")]
    SourceEmpty,
    #[error("no camera intrinsics were provided")]
    IntrinsicsMissing,
    #[error("need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frames must be ingested in order: expected {expected}, got {got}")]
    OutOfOrder { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Filter(#[from] DynError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Keypoints extracted per frame.
    pub n_queries: usize,
    /// Sampling grid cells per side.
    pub grid: usize,
    /// Frames whose keypoints are re-tracked at every step.
    pub s_lp: usize,
    /// Frames optimized by bundle adjustment.
    pub s_ba: usize,
    pub filter: FilterConfig,
    pub ba: BaConfig,
    /// Depth given to the first frame's keypoints.
    pub initial_depth: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_queries: 256,
            grid: 8,
            s_lp: 12,
            s_ba: 15,
            filter: FilterConfig::default(),
            ba: BaConfig::default(),
            initial_depth: 1.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.into()));
        if self.n_queries == 0 || self.grid == 0 {
            return bad("n_queries and grid must be positive");
        }
        if self.s_lp == 0 {
            return bad("s_lp must be at least 1");
        }
        if self.s_ba < 2 {
            return bad("s_ba must be at least 2");
        }
        if !(self.initial_depth > 0.0) {
            return bad("initial_depth must be positive");
        }
        if self.ba.iterations == 0 || !(self.ba.huber_delta > 0.0) || !(self.ba.damping > 0.0) {
            return bad("ba needs positive iterations, huber_delta and damping");
        }
        self.filter.validate()?;
        Ok(())
    }
}

/// Diagnostics of one ingested frame; times in seconds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameStats {
    pub frame: usize,
    pub keypoints: usize,
    pub active_tracks: usize,
    pub kept_tracks: usize,
    pub dropped_tracks: usize,
    pub ba_observations: usize,
    pub ba_initial_cost: f64,
    pub ba_final_cost: f64,
    pub ba_failed: bool,
    pub t_track: f64,
    pub t_filter: f64,
    pub t_ba: f64,
    pub t_total: f64,
}

/// Final state of one track, recorded when its host frame retires.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrackSummary {
    pub host: usize,
    pub index: usize,
    pub point: Option<usize>,
    pub dyn_score: f64,
    pub mean_uncertainty: f64,
    pub kept: bool,
    pub depth: f64,
    pub gt_dynamic: Option<bool>,
}

/// Latest tracks of one host frame with their filter outcome.
#[derive(Clone, Debug)]
struct HostTracks {
    start: usize,
    tracks: Vec<Track>,
    weights: Vec<Vec<f64>>,
    alive: Vec<bool>,
    depths: Vec<f64>,
}

/// Sliding-window state driving the per-frame loop.
#[derive(Debug)]
pub struct Pipeline {
    config: PipelineConfig,
    intrinsics: Intrinsics,
    poses: Vec<Pose>,
    keypoints: BTreeMap<usize, QuerySet>,
    hosts: BTreeMap<usize, HostTracks>,
    retired: Vec<TrackSummary>,
    stats: Vec<FrameStats>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, intrinsics: Intrinsics) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            config,
            intrinsics,
            poses: Vec::new(),
            keypoints: BTreeMap::new(),
            hosts: BTreeMap::new(),
            retired: Vec::new(),
            stats: Vec::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Pose estimates of every ingested frame.
    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn stats(&self) -> &[FrameStats] {
        &self.stats
    }

    /// Number of tracks currently re-tracked or held for adjustment.
    pub fn active_tracks(&self) -> usize {
        self.hosts.values().map(|h| h.tracks.len()).sum()
    }

    /// Frames currently held for adjustment.
    pub fn buffered_frames(&self) -> Vec<usize> {
        self.hosts.keys().copied().collect()
    }

    fn lp_start(&self, frame: usize) -> usize {
        (frame + 1).saturating_sub(self.config.s_lp)
    }

    fn ba_start(&self, frame: usize) -> usize {
        (frame + 1).saturating_sub(self.config.s_ba)
    }

    fn init_pose(&self) -> Pose {
        match self.poses.len() {
            0 => Pose::identity(),
            1 => self.poses[0],
            n => {
                let (a, b) = (&self.poses[n - 2], &self.poses[n - 1]);
                b.compose(&a.inverse().compose(b))
            }
        }
    }

    fn init_depth(&self) -> f64 {
        let mut d: Vec<f64> = self.hosts.values().flat_map(|h| h.depths.iter().copied()).collect();
        if d.is_empty() {
            return self.config.initial_depth;
        }
        d.sort_by(f64::total_cmp);
        d[d.len() / 2]
    }

    /// Processes the next frame of `tracker`'s sequence.
    pub fn ingest_frame(&mut self, tracker: &mut dyn PointTracker, frame: usize) -> Result<&FrameStats, PipelineError> {
        if frame != self.poses.len() {
            return Err(PipelineError::OutOfOrder {
                expected: self.poses.len(),
                got: frame,
            });
        }
        let t0 = Instant::now();
        let pose = self.init_pose();
        self.poses.push(pose);

        let queries = tracker.keypoints(frame, self.config.n_queries, self.config.grid)?;
        let n_keypoints = queries.len();
        let depth = self.init_depth();
        self.keypoints.insert(frame, queries);
        self.hosts.insert(
            frame,
            HostTracks {
                start: frame,
                tracks: Vec::new(),
                weights: Vec::new(),
                alive: Vec::new(),
                depths: vec![depth; n_keypoints],
            },
        );

        // track every keypoint hosted in the recent frames across them
        let lp = self.lp_start(frame);
        let live_hosts: Vec<usize> = self.keypoints.range(lp..).map(|(&h, _)| h).collect();
        let all: QuerySet = live_hosts.iter().flat_map(|h| self.keypoints[h].iter().cloned()).collect();
        let mut set = chain_windows(tracker, lp, frame + 1 - lp, &all)?;
        let t_track = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        // a window shorter than the minimum track length would drop all
        let filter = FilterConfig {
            gamma_track: self.config.filter.gamma_track.min(set.len),
            ..self.config.filter.clone()
        };
        let scores = dynamic_score(&set, &set, &filter)?;
        apply_scores(&mut set, &scores);
        let mask = filter_tracks(&set, &filter);
        let active = set.n_tracks();
        let kept = mask.alive_tracks();
        self.store(set, mask.weights, mask.alive);
        let t_filter = t1.elapsed().as_secs_f64();

        let t2 = Instant::now();
        let (obs, initial, final_cost, failed) = if frame == 0 { (0, 0.0, 0.0, false) } else { self.adjust(frame) };
        let t_ba = t2.elapsed().as_secs_f64();

        self.retire(frame, tracker);
        self.stats.push(FrameStats {
            frame,
            keypoints: n_keypoints,
            active_tracks: active,
            kept_tracks: kept,
            dropped_tracks: active - kept,
            ba_observations: obs,
            ba_initial_cost: initial,
            ba_final_cost: final_cost,
            ba_failed: failed,
            t_track,
            t_filter,
            t_ba,
            t_total: t0.elapsed().as_secs_f64(),
        });
        Ok(self.stats.last().expect("just pushed"))
    }

    /// Splits a window's tracks back to their host frames.
    fn store(&mut self, set: TrackSet, weights: Vec<Vec<f64>>, alive: Vec<bool>) {
        for h in self.hosts.range_mut(set.start..) {
            h.1.start = set.start;
            h.1.tracks.clear();
            h.1.weights.clear();
            h.1.alive.clear();
        }
        for ((t, w), a) in set.tracks.into_iter().zip(weights).zip(alive) {
            let h = self.hosts.get_mut(&t.query.frame).expect("host of a live track");
            h.tracks.push(t);
            h.weights.push(w);
            h.alive.push(a);
        }
    }

    /// Bundle adjustment over the last `s_ba` frames; returns observation
    /// count, initial and final cost, and whether the solve failed.
    fn adjust(&mut self, frame: usize) -> (usize, f64, f64, bool) {
        let ws = self.ba_start(frame);
        let n = frame + 1 - ws;
        // frame 0 anchors the gauge while in the window; afterwards the two
        // oldest frames, already settled, fix both pose and scale
        let fixed: Vec<bool> = (ws..=frame).map(|f| if ws == 0 { f == 0 } else { f < ws + 2 }).collect();
        let mut problem = BaProblem {
            intrinsics: self.intrinsics,
            poses: self.poses[ws..].to_vec(),
            fixed,
            landmarks: Vec::new(),
            observations: Vec::new(),
        };
        let mut owners = Vec::new();
        for (&host, h) in self.hosts.range(ws..) {
            for (i, t) in h.tracks.iter().enumerate() {
                let li = problem.landmarks.len();
                problem.landmarks.push(Landmark {
                    host: host - ws,
                    pixel: t.query.pixel,
                    depth: h.depths[i],
                });
                owners.push((host, i));
                for (local, (p, &w)) in t.positions.iter().zip(&h.weights[i]).enumerate() {
                    let f = h.start + local;
                    if f >= ws && f != host && w > 0.0 {
                        problem.observations.push(Observation {
                            landmark: li,
                            target: f - ws,
                            measured: *p,
                            weight: w,
                        });
                    }
                }
            }
        }
        let n_obs = problem.observations.len();
        match ba_optimize(&mut problem, &self.config.ba) {
            Ok(report) => {
                self.poses[ws..ws + n].copy_from_slice(&problem.poses);
                for (l, (host, i)) in problem.landmarks.iter().zip(owners) {
                    self.hosts.get_mut(&host).expect("landmark host").depths[i] = l.depth;
                }
                (n_obs, report.initial_cost, report.final_cost, false)
            }
            Err(_) => (n_obs, f64::NAN, f64::NAN, true),
        }
    }

    /// Drops hosts that left both windows and keypoints no longer tracked.
    fn retire(&mut self, frame: usize, tracker: &mut dyn PointTracker) {
        let next_lp = self.lp_start(frame + 1);
        let next_ba = self.ba_start(frame + 1);
        self.keypoints.retain(|&h, _| h >= next_lp);
        let old: Vec<usize> = self.hosts.range(..next_ba).map(|(&h, _)| h).collect();
        for h in old {
            let host = self.hosts.remove(&h).expect("listed host");
            self.retired.extend(summaries(h, &host));
        }
        tracker.release_before(next_lp.min(next_ba));
    }

    /// Summaries of retired tracks followed by those still held.
    pub fn track_summaries(&self) -> Vec<TrackSummary> {
        let mut out = self.retired.clone();
        for (&h, host) in &self.hosts {
            out.extend(summaries(h, host));
        }
        out
    }
}

fn summaries(h: usize, host: &HostTracks) -> Vec<TrackSummary> {
    host.tracks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let phi = t.uncertainty();
            TrackSummary {
                host: h,
                index: i,
                point: t.query.point,
                dyn_score: t.dyn_score,
                mean_uncertainty: phi.iter().sum::<f64>() / phi.len().max(1) as f64,
                kept: host.alive[i],
                depth: host.depths[i],
                gt_dynamic: t.gt_dynamic,
            }
        })
        .collect()
}

/// Output of a whole sequence.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub frames: Vec<FrameStats>,
    pub tracks: Vec<TrackSummary>,
}

/// Runs the pipeline over every frame of `tracker`; `timestamps` label the
/// output poses and default to the frame index at 30 fps.
pub fn run_sequence(
    tracker: &mut dyn PointTracker,
    timestamps: Option<&[f64]>,
    config: &PipelineConfig,
) -> Result<RunOutput, PipelineError> {
    let n = tracker.n_frames();
    if n == 0 {
        return Err(PipelineError::SourceEmpty);
    }
    if n < 2 {
        return Err(PipelineError::TooFewFrames(n));
    }
    if let Some(ts) = timestamps {
        if ts.len() != n {
            return Err(PipelineError::Config(format!("{} timestamps for {n} frames", ts.len())));
        }
    }
    let mut pipeline = Pipeline::new(config.clone(), tracker.intrinsics())?;
    for f in 0..n {
        pipeline.ingest_frame(tracker, f)?;
    }
    let entries = pipeline
        .poses()
        .iter()
        .enumerate()
        .map(|(f, p)| (timestamps.map_or(f as f64 / 30.0, |ts| ts[f]), *p))
        .collect();
    Ok(RunOutput {
        trajectory: Trajectory::new(entries)?,
        frames: pipeline.stats().to_vec(),
        tracks: pipeline.track_summaries(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::ate_rmse;
    use crate::synth::{generate_scene, SceneConfig};
    use crate::tracker::{OracleConfig, OracleTracker};

    fn scene(frames: usize, seed: u64) -> crate::synth::SceneSpec {
        let config = SceneConfig {
            n_frames: frames,
            ..SceneConfig::default()
        };
        generate_scene(&config, seed).unwrap()
    }

    fn run(scene: &crate::synth::SceneSpec, config: &PipelineConfig) -> RunOutput {
        let mut tracker = OracleTracker::new(scene.clone(), OracleConfig::default());
        let ts: Vec<f64> = (0..scene.n_frames()).map(|f| scene.timestamp(f)).collect();
        run_sequence(&mut tracker, Some(&ts), config).unwrap()
    }

    #[test]
    fn first_frame_boots_at_identity() {
        let s = scene(3, 1);
        let mut tracker = OracleTracker::new(s.clone(), OracleConfig::default());
        let mut p = Pipeline::new(PipelineConfig::default(), s.intrinsics).unwrap();
        let stats = p.ingest_frame(&mut tracker, 0).unwrap().clone();
        assert_eq!(p.poses(), &[Pose::identity()]);
        assert!(stats.keypoints > 200 && stats.keypoints <= 256);
        assert_eq!(stats.ba_observations, 0);
        assert!(matches!(
            p.ingest_frame(&mut tracker, 2),
            Err(PipelineError::OutOfOrder { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn two_frames_give_two_poses() {
        let s = scene(2, 2);
        let out = run(&s, &PipelineConfig::default());
        assert_eq!(out.trajectory.len(), 2);
        let moved = out.trajectory.entries()[1].1.translation.norm();
        assert!(moved > 0.0 && moved.is_finite());
    }

    #[test]
    fn static_oracle_scene_is_recovered() {
        let s = scene(30, 3);
        let out = run(&s, &PipelineConfig::default());
        let ate = ate_rmse(&out.trajectory, &s.trajectory()).unwrap();
        assert!(ate < 1e-4, "ATE {ate}");
        assert!(out.frames.iter().all(|f| !f.ba_failed));
    }

    #[test]
    fn runs_are_bit_identical() {
        let s = scene(12, 4);
        let a = run(&s, &PipelineConfig::default());
        let b = run(&s, &PipelineConfig::default());
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.tracks, b.tracks);
    }

    #[test]
    fn window_bounds_hold_and_old_poses_freeze() {
        let s = scene(24, 5);
        let config = PipelineConfig {
            n_queries: 64,
            ..PipelineConfig::default()
        };
        let mut tracker = OracleTracker::new(s.clone(), OracleConfig::default());
        let mut p = Pipeline::new(config.clone(), s.intrinsics).unwrap();
        let mut history: Vec<Vec<Pose>> = Vec::new();
        for f in 0..s.n_frames() {
            p.ingest_frame(&mut tracker, f).unwrap();
            assert!(p.active_tracks() <= config.n_queries * config.s_ba);
            assert!(p.stats()[f].active_tracks <= config.n_queries * config.s_lp);
            assert!(p.buffered_frames().len() <= config.s_lp.max(config.s_ba));
            history.push(p.poses().to_vec());
        }
        // a pose is final once the adjustment window has passed it
        for f in 0..s.n_frames() {
            let last_touch = (f + config.s_ba - 1).min(s.n_frames() - 1);
            let settled = history[last_touch][f];
            for h in &history[last_touch..] {
                assert_eq!(h[f], settled);
            }
        }
    }

    #[test]
    fn disabled_filter_never_errors() {
        let s = scene(14, 6);
        let config = PipelineConfig {
            filter: FilterConfig::disabled(),
            ..PipelineConfig::default()
        };
        let out = run(&s, &config);
        assert!(out.frames.iter().all(|f| f.dropped_tracks == 0));
    }

    #[test]
    fn invalid_config_rejected() {
        let config = PipelineConfig {
            s_ba: 1,
            ..PipelineConfig::default()
        };
        assert!(matches!(config.validate(), Err(PipelineError::Config(_))));
    }
}
