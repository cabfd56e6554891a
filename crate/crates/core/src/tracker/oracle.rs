//! Ground-truth tracker for synthetic scenes.

use super::{check_window, hash_of, PointTracker, Track, TrackSet, TrackerError};
use crate::geometry::Intrinsics;
use crate::probmodel::{TrackDistribution, DEFAULT_SIGMA};
use crate::sampling::{grid_bounds, Query, QuerySet};
use crate::synth::{render_tracks, GroundTruthTracks, SceneSpec};
use nalgebra::{DMatrix, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Feature width of oracle tracks; frame `f` uses column `f mod 16`.
const FEATURE_DIM: usize = 16;

/// Largest distance between a query pixel and the point it is matched to.
const MATCH_RADIUS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Pixel noise on clean tracks.
    pub sigma_px: f64,
    /// Pixel noise on contaminated tracks.
    pub sigma_bad: f64,
    /// Fraction of tracks per call that get `sigma_bad` noise.
    pub p_bad: f64,
    /// When false, points hidden by occluders still count as visible.
    pub respect_occlusion: bool,
    pub seed: u64,
    pub window: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            sigma_px: 0.0,
            sigma_bad: 4.0,
            p_bad: 0.0,
            respect_occlusion: true,
            seed: 0,
            window: super::DEFAULT_WINDOW,
        }
    }
}

/// Tracks are noisy ground-truth projections; scale matrices are diagonal
/// with the injected noise variance.
pub struct OracleTracker {
    scene: SceneSpec,
    gt: GroundTruthTracks,
    config: OracleConfig,
}

impl OracleTracker {
    pub fn new(scene: SceneSpec, config: OracleConfig) -> Self {
        let gt = render_tracks(&scene);
        Self { scene, gt, config }
    }

    pub fn scene(&self) -> &SceneSpec {
        &self.scene
    }

    pub fn ground_truth(&self) -> &GroundTruthTracks {
        &self.gt
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    fn visible(&self, id: usize, frame: usize) -> bool {
        if self.config.respect_occlusion {
            return self.gt.visibility[id][frame];
        }
        let p = self.gt.projections[id][frame];
        let (w, h) = ((self.scene.width - 1) as f64, (self.scene.height - 1) as f64);
        self.gt.depth[id][frame] > 0.0 && p.x >= 0.0 && p.y >= 0.0 && p.x <= w && p.y <= h
    }

    fn match_query(&self, q: &Query) -> Result<usize, TrackerError> {
        if let Some(id) = q.point.filter(|&id| id < self.gt.n_points()) {
            return Ok(id);
        }
        let mut best: Option<(f64, usize)> = None;
        for id in 0..self.gt.n_points() {
            if self.gt.depth[id][q.frame] <= 0.0 {
                continue;
            }
            let d = (self.gt.projections[id][q.frame] - q.pixel).norm();
            if d <= MATCH_RADIUS && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, id));
            }
        }
        best.map(|(_, id)| id).ok_or(TrackerError::QueryUnmatched {
            frame: q.frame,
            x: q.pixel.x,
            y: q.pixel.y,
        })
    }

    fn noise(&self, id: usize, frame: usize) -> Vector2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(hash_of(&[self.config.seed, id as u64, frame as u64]));
        Vector2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
    }

    /// Marks the `⌈p_bad·Q⌉` queries whose points rank first by seeded hash.
    fn contaminated(&self, ids: &[usize]) -> Vec<bool> {
        let n_bad = (self.config.p_bad.clamp(0.0, 1.0) * ids.len() as f64).ceil() as usize;
        let mut order: Vec<(u64, usize)> = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (hash_of(&[self.config.seed ^ 0xBAD, id as u64]), i))
            .collect();
        order.sort_unstable();
        let mut bad = vec![false; ids.len()];
        for &(_, i) in order.iter().take(n_bad) {
            bad[i] = true;
        }
        bad
    }
}

impl PointTracker for OracleTracker {
    fn window(&self) -> usize {
        self.config.window
    }

    fn n_frames(&self) -> usize {
        self.scene.n_frames()
    }

    fn intrinsics(&self) -> Intrinsics {
        self.scene.intrinsics
    }

    fn image_size(&self) -> (usize, usize) {
        (self.scene.width, self.scene.height)
    }

    /// Exact projections of visible points, at most `n/k²` per grid cell,
    /// chosen by seeded hash rank so static and dynamic points are sampled
    /// alike.
    fn keypoints(&mut self, frame: usize, n: usize, grid: usize) -> Result<QuerySet, TrackerError> {
        if grid == 0 || n == 0 || !n.is_multiple_of(grid * grid) {
            return Err(TrackerError::Source(
                frame,
                format!("{n} keypoints cannot be split over a {grid}x{grid} grid"),
            ));
        }
        if frame >= self.n_frames() {
            return Err(TrackerError::Source(frame, "frame out of range".into()));
        }
        let per_cell = n / (grid * grid);
        let mut cells: Vec<Vec<(u64, usize)>> = vec![Vec::new(); grid * grid];
        for id in 0..self.gt.n_points() {
            if !self.visible(id, frame) {
                continue;
            }
            let p = self.gt.projections[id][frame];
            let (xi, yi) = (p.x.floor() as usize, p.y.floor() as usize);
            let gx = (0..grid).find(|&c| xi < grid_bounds(self.scene.width, grid, c).1);
            let gy = (0..grid).find(|&c| yi < grid_bounds(self.scene.height, grid, c).1);
            if let (Some(gx), Some(gy)) = (gx, gy) {
                let rank = hash_of(&[self.config.seed, frame as u64, id as u64]);
                cells[gy * grid + gx].push((rank, id));
            }
        }
        let mut out = Vec::with_capacity(n);
        for cell in &mut cells {
            cell.sort_unstable();
            out.extend(cell.iter().take(per_cell).map(|&(_, id)| Query {
                frame,
                pixel: self.gt.projections[id][frame],
                point: Some(id),
            }));
        }
        Ok(out)
    }

    fn track(&mut self, start: usize, len: usize, queries: &[Query]) -> Result<TrackSet, TrackerError> {
        check_window(self.window(), self.n_frames(), start, len, queries)?;
        let ids = queries
            .iter()
            .map(|q| self.match_query(q))
            .collect::<Result<Vec<_>, _>>()?;
        let bad = self.contaminated(&ids);
        let tracks = queries
            .iter()
            .zip(&ids)
            .zip(&bad)
            .map(|((q, &id), &is_bad)| {
                let level = if is_bad { self.config.sigma_bad } else { self.config.sigma_px };
                let mut positions = Vec::with_capacity(len);
                let mut visibility = Vec::with_capacity(len);
                let mut features = DMatrix::zeros(len, FEATURE_DIM);
                for s in 0..len {
                    let f = start + s;
                    positions.push(if f == q.frame {
                        q.pixel
                    } else {
                        self.gt.projections[id][f] + self.noise(id, f) * level
                    });
                    visibility.push(if self.visible(id, f) { 1.0 } else { 0.0 });
                    features[(s, f % FEATURE_DIM)] = level;
                }
                let dist = TrackDistribution::from_features(&positions, &features, &features, DEFAULT_SIGMA);
                Track {
                    query: Query { point: Some(id), ..*q },
                    positions,
                    visibility,
                    features,
                    dist,
                    dyn_score: 0.0,
                    gt_dynamic: Some(self.gt.dynamic[id]),
                }
            })
            .collect();
        Ok(TrackSet { start, len, tracks })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, CameraPath, Occluder, SceneConfig};
    use nalgebra::Vector3;

    fn scene(path: CameraPath) -> SceneSpec {
        let config = SceneConfig {
            n_frames: 12,
            n_static: 200,
            n_dynamic: 20,
            path,
            ..SceneConfig::default()
        };
        generate_scene(&config, 3).unwrap()
    }

    fn queries_at(tracker: &mut OracleTracker, frame: usize) -> QuerySet {
        tracker.keypoints(frame, 64, 4).unwrap()
    }

    #[test]
    fn noise_free_tracks_are_exact_projections() {
        let mut t = OracleTracker::new(scene(CameraPath::Lissajous), OracleConfig::default());
        let q = queries_at(&mut t, 2);
        // sparse cells contribute what they have
        assert!(q.len() <= 64 && q.len() > 48, "{}", q.len());
        let ts = t.track(0, 8, &q).unwrap();
        for tr in &ts.tracks {
            let id = tr.query.point.unwrap();
            for s in 0..8 {
                assert_eq!(tr.positions[s], t.gt.projections[id][s]);
                assert_eq!(tr.visibility[s], if t.gt.visibility[id][s] { 1.0 } else { 0.0 });
            }
            assert_eq!(tr.gt_dynamic, Some(id >= 200));
            assert_eq!(tr.dist.location(), tr.positions);
        }
    }

    #[test]
    fn static_camera_static_points_are_constant() {
        let sc = generate_scene(
            &SceneConfig {
                n_frames: 8,
                n_static: 100,
                path: CameraPath::Static,
                ..SceneConfig::default()
            },
            1,
        )
        .unwrap();
        let mut t = OracleTracker::new(sc, OracleConfig::default());
        let q = queries_at(&mut t, 0);
        for tr in t.track(0, 8, &q).unwrap().tracks {
            assert!(tr.positions.iter().all(|p| *p == tr.positions[0]));
            assert!(tr.visibility.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn noise_has_requested_scale_and_query_is_pinned() {
        let config = OracleConfig {
            sigma_px: 0.5,
            ..OracleConfig::default()
        };
        let mut t = OracleTracker::new(scene(CameraPath::Lissajous), config);
        let q = t.keypoints(4, 256, 8).unwrap();
        let ts = t.track(0, 8, &q).unwrap();
        let (mut sum, mut n) = (0.0, 0);
        for tr in &ts.tracks {
            assert_eq!(tr.positions[4], tr.query.pixel);
            let id = tr.query.point.unwrap();
            for s in (0..8).filter(|&s| s != 4) {
                sum += (tr.positions[s] - t.gt.projections[id][s]).norm_squared();
                n += 2;
            }
        }
        let rms = (sum / n as f64).sqrt();
        assert!((rms - 0.5).abs() < 0.05, "{rms}");
        // deterministic
        assert_eq!(t.track(0, 8, &q).unwrap(), ts);
    }

    #[test]
    fn occluded_frames_are_invisible() {
        let mut sc = generate_scene(
            &SceneConfig {
                n_frames: 8,
                n_static: 10,
                path: CameraPath::Sideways,
                path_scale: 0.35,
                ..SceneConfig::default()
            },
            0,
        )
        .unwrap();
        // camera x = 0.1·f; at z = 4 the sight line to the point sits at
        // x = (x_cam + 0.4)/2, so the plate hides it iff |x_cam − 0.4| ≤ 0.12
        sc.static_points[0] = Vector3::new(0.4, 0.0, 8.0);
        sc.occluders.push(Occluder {
            center: Vector3::new(0.4, 0.0, 4.0),
            half_u: Vector3::new(0.06, 0.0, 0.0),
            half_v: Vector3::new(0.0, 1.0, 0.0),
        });
        let mut t = OracleTracker::new(sc, OracleConfig::default());
        let q = Query {
            frame: 0,
            pixel: t.gt.projections[0][0],
            point: None,
        };
        let tr = &t.track(0, 8, &[q]).unwrap().tracks[0];
        assert_eq!(tr.query.point, Some(0));
        assert_eq!(tr.visibility, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn contaminated_tracks_have_largest_uncertainty() {
        let config = OracleConfig {
            sigma_px: 0.3,
            sigma_bad: 3.0,
            p_bad: 0.2,
            ..OracleConfig::default()
        };
        let mut t = OracleTracker::new(scene(CameraPath::Lissajous), config);
        let q = t.keypoints(0, 144, 4).unwrap();
        let ts = t.track(0, 8, &q).unwrap();
        let phi: Vec<f64> = ts.tracks.iter().map(|tr| tr.uncertainty()[0]).collect();
        let clean = 2.0 * (0.3 * 0.3 + DEFAULT_SIGMA);
        let bad = 2.0 * (3.0 * 3.0 + DEFAULT_SIGMA);
        assert!(phi.iter().all(|&p| (p - clean).abs() < 1e-12 || (p - bad).abs() < 1e-12));
        let above = phi.iter().filter(|&&p| p > clean + 1e-9).count();
        assert_eq!(above, (0.2 * q.len() as f64).ceil() as usize);
    }

    #[test]
    fn more_noise_never_lowers_uncertainty() {
        let sc = scene(CameraPath::Lissajous);
        let mut prev = 0.0;
        for sigma in [0.0, 0.1, 0.5, 1.0, 2.0] {
            let mut t = OracleTracker::new(
                sc.clone(),
                OracleConfig {
                    sigma_px: sigma,
                    ..OracleConfig::default()
                },
            );
            let q = queries_at(&mut t, 0);
            let ts = t.track(0, 8, &q).unwrap();
            let mean: f64 = ts.tracks.iter().flat_map(|tr| tr.uncertainty()).sum::<f64>() / (8 * q.len()) as f64;
            assert!(mean >= prev);
            prev = mean;
        }
    }

    #[test]
    fn bad_queries_and_windows_rejected() {
        let mut t = OracleTracker::new(scene(CameraPath::Lissajous), OracleConfig::default());
        let far = Query::new(0, Vector2::new(-50.0, -50.0));
        assert!(matches!(t.track(0, 8, &[far]), Err(TrackerError::QueryUnmatched { .. })));
        let q = queries_at(&mut t, 9);
        assert!(matches!(t.track(0, 8, &q), Err(TrackerError::WindowMismatch { .. })));
        assert!(matches!(t.track(0, 9, &[]), Err(TrackerError::WindowMismatch { .. })));
        assert!(matches!(t.track(8, 5, &[]), Err(TrackerError::WindowMismatch { .. })));
    }

    #[test]
    fn keypoints_fill_the_grid() {
        let mut t = OracleTracker::new(scene(CameraPath::Lissajous), OracleConfig::default());
        let q = t.keypoints(0, 16, 4).unwrap();
        let mut cells = std::collections::HashSet::new();
        for k in &q {
            cells.insert(((k.pixel.x / 160.0) as usize, (k.pixel.y / 120.0) as usize));
        }
        assert_eq!(cells.len(), q.len());
        assert!(t.keypoints(0, 10, 4).is_err());
    }
}
