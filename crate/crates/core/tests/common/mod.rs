//! Helpers shared by the integration and acceptance tests.
#![allow(dead_code)]

use trackvo::dynfilter::{dynamic_score, FilterConfig};
use trackvo::synth::{generate_scene, SceneConfig, SceneSpec};
use trackvo::tracker::{chain_windows, OracleConfig, OracleTracker, PointTracker, TrackSet};

/// Scene where 30% of the points move independently.
pub fn dynamic_scene(seed: u64, frames: usize) -> SceneSpec {
    let config = SceneConfig {
        n_frames: frames,
        n_static: 420,
        n_dynamic: 180,
        dynamic_speed: 0.05,
        ..SceneConfig::default()
    };
    generate_scene(&config, seed).unwrap()
}

pub fn static_scene(seed: u64, frames: usize) -> SceneSpec {
    let config = SceneConfig {
        n_frames: frames,
        ..SceneConfig::default()
    };
    generate_scene(&config, seed).unwrap()
}

/// Mean image displacement per frame caused by the point's own motion,
/// measured with the camera held at each frame.
pub fn independent_motion(scene: &SceneSpec, id: usize) -> f64 {
    let n = scene.n_frames();
    let mut total = 0.0;
    for f in 0..n - 1 {
        let inv = scene.poses[f].inverse();
        let a = scene.intrinsics.project(&inv.transform_point(&scene.point_at(id, f)));
        let b = scene.intrinsics.project(&inv.transform_point(&scene.point_at(id, f + 1)));
        total += (b - a).norm();
    }
    total / (n - 1) as f64
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn add(&mut self, other: Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn precision(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fp).max(1) as f64
    }

    pub fn recall(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_).max(1) as f64
    }
}

/// Scores oracle tracks of keypoints hosted mid-window over a 12-frame
/// chained window and counts how the 0.9 threshold labels them.
pub fn classify_scene(scene: &SceneSpec, seed: u64, sigma_px: f64) -> (Confusion, TrackSet) {
    let mut tracker = OracleTracker::new(
        scene.clone(),
        OracleConfig {
            sigma_px,
            seed,
            ..OracleConfig::default()
        },
    );
    let len = scene.n_frames().min(12);
    let queries = tracker.keypoints(len / 3, 256, 8).unwrap();
    let mut tracks = chain_windows(&mut tracker, 0, len, &queries).unwrap();
    let config = FilterConfig::default();
    let scores = dynamic_score(&tracks, &tracks, &config).unwrap();
    let mut c = Confusion::default();
    for (t, &s) in tracks.tracks.iter_mut().zip(&scores.scores) {
        t.dyn_score = s;
        match (t.gt_dynamic.unwrap(), s >= config.gamma_d) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    (c, tracks)
}
