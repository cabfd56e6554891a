//! Synthetic scenes with exact ground truth.
//!
//! A scene is a smooth camera path looking down +Z, static points in a box,
//! independently moving points and rectangular occluders. Ground-truth
//! tracks are exact pinhole projections; images are optional and only feed
//! the correlation tracker.

use crate::geometry::{so3_exp, Intrinsics, Pose};
use crate::raster::Image;
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

/// Minimum depth of a static point in front of every camera.
pub const MIN_CLEARANCE: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("infeasible scene: {0}")]
    InfeasibleScene(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraPath {
    /// Figure-eight sway while moving forward, with gentle rotation.
    Lissajous,
    /// Straight sideways motion, no rotation.
    Sideways,
    /// Rotation about the optical center only.
    PureRotation,
    /// Camera never moves.
    Static,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Linear,
    Sinusoidal,
    Mixed,
}

/// World-space motion of one dynamic point, in meters per frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PointMotion {
    Linear {
        velocity: Vector3<f64>,
    },
    Sinusoidal {
        amplitude: Vector3<f64>,
        period: f64,
        phase: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicPoint {
    pub origin: Vector3<f64>,
    pub motion: PointMotion,
}

impl DynamicPoint {
    pub fn position(&self, frame: usize) -> Vector3<f64> {
        let f = frame as f64;
        match self.motion {
            PointMotion::Linear { velocity } => self.origin + velocity * f,
            PointMotion::Sinusoidal {
                amplitude,
                period,
                phase,
            } => self.origin + amplitude * (TAU * f / period + phase).sin(),
        }
    }
}

/// Finite rectangle `center + a·half_u + b·half_v`, `|a|, |b| ≤ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub center: Vector3<f64>,
    pub half_u: Vector3<f64>,
    pub half_v: Vector3<f64>,
}

impl Occluder {
    /// Ray parameter `t` of the hit on `origin + t·dir`, if any.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let n = self.half_u.cross(&self.half_v);
        let denom = n.dot(dir);
        if denom.abs() < 1e-15 {
            return None;
        }
        let t = n.dot(&(self.center - origin)) / denom;
        let local = origin + dir * t - self.center;
        let a = local.dot(&self.half_u) / self.half_u.norm_squared();
        let b = local.dot(&self.half_v) / self.half_v.norm_squared();
        (a.abs() <= 1.0 && b.abs() <= 1.0).then_some(t)
    }

    /// Whether the segment from `origin` to `point` crosses the rectangle.
    pub fn blocks(&self, origin: &Vector3<f64>, point: &Vector3<f64>) -> bool {
        matches!(self.intersect(origin, &(point - origin)), Some(t) if t > 1e-9 && t < 1.0 - 1e-9)
    }
}

fn default_intrinsics() -> Intrinsics {
    Intrinsics {
        fx: 500.0,
        fy: 500.0,
        cx: 319.5,
        cy: 239.5,
    }
}

/// Everything needed to regenerate a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_frames: usize,
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub path: CameraPath,
    /// Peak sideways excursion of the camera path, meters.
    pub path_scale: f64,
    pub n_static: usize,
    pub n_dynamic: usize,
    /// Dynamic speed, meters per frame.
    pub dynamic_speed: f64,
    pub dynamic_motion: MotionKind,
    /// `[x, y, z]` half-extents of the static point box around `(0, 0, z_mid)`.
    pub box_half: [f64; 3],
    pub box_z_mid: f64,
    /// Depth range of dynamic points at their mid-sequence position.
    pub dynamic_depth: [f64; 2],
    pub occluders: Vec<Occluder>,
    pub fps: f64,
    pub texture_seed: u64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_frames: 30,
            width: 640,
            height: 480,
            intrinsics: default_intrinsics(),
            path: CameraPath::Lissajous,
            path_scale: 0.6,
            n_static: 600,
            n_dynamic: 0,
            dynamic_speed: 0.05,
            dynamic_motion: MotionKind::Linear,
            box_half: [5.0, 3.75, 4.0],
            box_z_mid: 8.0,
            dynamic_depth: [4.0, 8.0],
            occluders: Vec::new(),
            fps: 10.0,
            texture_seed: 0,
            seed: 0,
        }
    }
}

/// A fully instantiated synthetic world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    pub fps: f64,
    /// Camera-to-world ground-truth poses, one per frame.
    pub poses: Vec<Pose>,
    pub static_points: Vec<Vector3<f64>>,
    pub dynamic_points: Vec<DynamicPoint>,
    pub occluders: Vec<Occluder>,
    pub texture_seed: u64,
}

impl SceneSpec {
    pub fn n_frames(&self) -> usize {
        self.poses.len()
    }

    pub fn n_points(&self) -> usize {
        self.static_points.len() + self.dynamic_points.len()
    }

    /// Point ids are static points first, then dynamic points.
    pub fn is_dynamic(&self, id: usize) -> bool {
        id >= self.static_points.len()
    }

    pub fn point_at(&self, id: usize, frame: usize) -> Vector3<f64> {
        match id.checked_sub(self.static_points.len()) {
            None => self.static_points[id],
            Some(d) => self.dynamic_points[d].position(frame),
        }
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 / self.fps
    }

    /// Ground-truth trajectory with timestamps `frame / fps`.
    pub fn trajectory(&self) -> crate::eval::Trajectory {
        crate::eval::Trajectory::new(
            self.poses
                .iter()
                .enumerate()
                .map(|(i, p)| (self.timestamp(i), *p))
                .collect(),
        )
        .expect("scene timestamps are increasing")
    }
}

fn camera_pose(path: CameraPath, scale: f64, u: f64) -> Pose {
    match path {
        CameraPath::Lissajous => {
            let t = Vector3::new(
                scale * (TAU * u).sin(),
                0.5 * scale * (2.0 * TAU * u).sin(),
                1.2 * scale * u,
            );
            let w = Vector3::new(
                0.04 * (TAU * u).sin(),
                0.06 * (TAU * u + 1.0).sin(),
                0.03 * (2.0 * TAU * u).sin(),
            );
            Pose::new(so3_exp(&w), t)
        }
        CameraPath::Sideways => Pose::from_translation(Vector3::new(2.0 * scale * u, 0.0, 0.0)),
        CameraPath::PureRotation => {
            let w = Vector3::new(0.05 * (TAU * u).sin(), 0.15 * u, 0.02 * u);
            Pose::new(so3_exp(&w), Vector3::zeros())
        }
        CameraPath::Static => Pose::identity(),
    }
}

/// Builds a reproducible scene from `config` and `seed`.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<SceneSpec, SynthError> {
    config
        .intrinsics
        .validate()
        .map_err(|e| SynthError::InfeasibleScene(e.to_string()))?;
    if config.n_frames == 0 || config.width < 8 || config.height < 8 {
        return Err(SynthError::InfeasibleScene("empty sequence or image".into()));
    }
    if config.n_static < 8 {
        return Err(SynthError::InfeasibleScene("at least 8 static points required".into()));
    }
    let [hx, hy, hz] = config.box_half;
    if config.box_z_mid - hz <= MIN_CLEARANCE || hx <= 0.0 || hy <= 0.0 || hz < 0.0 {
        return Err(SynthError::InfeasibleScene("static box is not in front of the camera".into()));
    }
    if config.n_dynamic > 0 && config.dynamic_depth[0] <= MIN_CLEARANCE {
        return Err(SynthError::InfeasibleScene("dynamic depth range behind the camera".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let denom = (config.n_frames.max(2) - 1) as f64;
    let poses: Vec<Pose> = (0..config.n_frames)
        .map(|i| camera_pose(config.path, config.path_scale, i as f64 / denom))
        .collect();
    let inverses: Vec<Pose> = poses.iter().map(Pose::inverse).collect();
    let clear_of_all = |p: &Vector3<f64>| {
        inverses
            .iter()
            .all(|inv| inv.transform_point(p).z >= MIN_CLEARANCE)
    };

    let mut static_points = Vec::with_capacity(config.n_static);
    for _ in 0..config.n_static {
        let mut tries = 0;
        loop {
            let p = Vector3::new(
                rng.random_range(-hx..=hx),
                rng.random_range(-hy..=hy),
                config.box_z_mid + rng.random_range(-hz..=hz),
            );
            if clear_of_all(&p) {
                static_points.push(p);
                break;
            }
            tries += 1;
            if tries > 1000 {
                return Err(SynthError::InfeasibleScene(
                    "static box intersects the camera path".into(),
                ));
            }
        }
    }

    // dynamic points cross the view around mid-sequence
    let mid = config.n_frames / 2;
    let mid_pose = poses[mid];
    let k = config.intrinsics;
    let mut dynamic_points = Vec::with_capacity(config.n_dynamic);
    for i in 0..config.n_dynamic {
        let depth = rng.random_range(config.dynamic_depth[0]..=config.dynamic_depth[1]);
        let px = Vector2::new(
            rng.random_range(0.2..0.8) * config.width as f64,
            rng.random_range(0.2..0.8) * config.height as f64,
        );
        let at_mid = mid_pose.transform_point(&(k.unproject(&px) * depth));
        let angle = rng.random_range(0.0..TAU);
        // mostly in the image plane so the motion is visible
        let dir = mid_pose.rotation * Vector3::new(angle.cos(), angle.sin(), rng.random_range(-0.2..0.2)).normalize();
        let sinusoidal = match config.dynamic_motion {
            MotionKind::Linear => false,
            MotionKind::Sinusoidal => true,
            MotionKind::Mixed => i % 2 == 1,
        };
        let motion = if sinusoidal {
            let period = rng.random_range(16.0..32.0);
            // peak speed equals the configured speed
            PointMotion::Sinusoidal {
                amplitude: dir * (config.dynamic_speed * period / TAU),
                period,
                phase: rng.random_range(0.0..TAU),
            }
        } else {
            PointMotion::Linear {
                velocity: dir * config.dynamic_speed,
            }
        };
        let mut dp = DynamicPoint {
            origin: at_mid,
            motion,
        };
        dp.origin += at_mid - dp.position(mid);
        dynamic_points.push(dp);
    }

    Ok(SceneSpec {
        width: config.width,
        height: config.height,
        intrinsics: config.intrinsics,
        fps: config.fps,
        poses,
        static_points,
        dynamic_points,
        occluders: config.occluders.clone(),
        texture_seed: config.texture_seed,
    })
}

/// Exact projections and visibility of every scene point in every frame.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthTracks {
    /// `[point][frame]` pixel positions.
    pub projections: Vec<Vec<Vector2<f64>>>,
    pub visibility: Vec<Vec<bool>>,
    /// Depth in each camera; non-positive when behind it.
    pub depth: Vec<Vec<f64>>,
    pub dynamic: Vec<bool>,
}

impl GroundTruthTracks {
    pub fn n_points(&self) -> usize {
        self.projections.len()
    }
}

pub fn render_tracks(scene: &SceneSpec) -> GroundTruthTracks {
    let n = scene.n_points();
    let s = scene.n_frames();
    let k = scene.intrinsics;
    let (w, h) = ((scene.width - 1) as f64, (scene.height - 1) as f64);
    let mut gt = GroundTruthTracks {
        projections: vec![Vec::with_capacity(s); n],
        visibility: vec![Vec::with_capacity(s); n],
        depth: vec![Vec::with_capacity(s); n],
        dynamic: (0..n).map(|i| scene.is_dynamic(i)).collect(),
    };
    for (f, pose) in scene.poses.iter().enumerate() {
        let inv = pose.inverse();
        let center = pose.translation;
        for id in 0..n {
            let pw = scene.point_at(id, f);
            let pc = inv.transform_point(&pw);
            let in_front = pc.z > MIN_CLEARANCE * 0.5;
            let px = if pc.z.abs() > 1e-12 {
                k.project(&pc)
            } else {
                Vector2::new(k.cx, k.cy)
            };
            let in_image = in_front && px.x >= 0.0 && px.y >= 0.0 && px.x <= w && px.y <= h;
            let visible = in_image && !scene.occluders.iter().any(|o| o.blocks(&center, &pw));
            gt.projections[id].push(px);
            gt.visibility[id].push(visible);
            gt.depth[id].push(pc.z);
        }
    }
    gt
}

fn hash2(seed: u64, x: i64, y: i64) -> f64 {
    let mut h = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((x as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F))
        .wrapping_add((y as u64).wrapping_mul(0x1656_67B1_9E37_79F9));
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated lattice noise in `[0, 1]`.
pub fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (tx, ty) = (smooth(x - x0), smooth(y - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = hash2(seed, ix, iy);
    let b = hash2(seed, ix + 1, iy);
    let c = hash2(seed, ix, iy + 1);
    let d = hash2(seed, ix + 1, iy + 1);
    (1.0 - ty) * ((1.0 - tx) * a + tx * b) + ty * ((1.0 - tx) * c + tx * d)
}

/// Three-octave noise with the coarsest wavelength `wavelength`.
pub fn fractal_noise(seed: u64, x: f64, y: f64, wavelength: f64) -> f64 {
    let mut sum = 0.0;
    let mut amp = 0.5;
    let mut freq = 1.0 / wavelength;
    let mut norm = 0.0;
    for octave in 0..3u64 {
        sum += amp * value_noise(seed.wrapping_add(octave * 7919), x * freq, y * freq);
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

/// Noise texture shifted by `offset` pixels: `I(x, y) = N(x − ox, y − oy)`.
pub fn noise_image(width: usize, height: usize, offset: Vector2<f64>, seed: u64, wavelength: f64) -> Image {
    Image::from_fn(width, height, |x, y| {
        fractal_noise(seed, x as f64 - offset.x, y as f64 - offset.y, wavelength)
    })
}

/// Depth of the textured background plane along world +Z.
const BACKGROUND_Z: f64 = 16.0;
const SPLAT_SIGMA: f64 = 1.5;

/// Renders every frame: textured background plane, painted occluders and a
/// Gaussian splat at each visible point.
pub fn render_images(scene: &SceneSpec) -> Vec<Image> {
    let gt = render_tracks(scene);
    (0..scene.n_frames())
        .map(|f| render_frame(scene, &gt, f))
        .collect()
}

pub fn render_frame(scene: &SceneSpec, gt: &GroundTruthTracks, frame: usize) -> Image {
    let pose = scene.poses[frame];
    let k = scene.intrinsics;
    let seed = scene.texture_seed;
    let center = pose.translation;
    let mut img = Image::from_fn(scene.width, scene.height, |x, y| {
        let dir = pose.rotation * k.unproject(&Vector2::new(x as f64, y as f64));
        let mut best = if dir.z > 1e-9 {
            let t = (BACKGROUND_Z - center.z) / dir.z;
            let p = center + dir * t;
            (t, 0.15 + 0.7 * fractal_noise(seed, p.x, p.y, 0.6))
        } else {
            (f64::INFINITY, 0.5)
        };
        for (i, o) in scene.occluders.iter().enumerate() {
            if let Some(t) = o.intersect(&center, &dir) {
                if t > 0.0 && t < best.0 {
                    let local = center + dir * t - o.center;
                    let u = local.dot(&o.half_u) / o.half_u.norm();
                    let v = local.dot(&o.half_v) / o.half_v.norm();
                    best = (t, 0.1 + 0.3 * fractal_noise(seed ^ (0xA5A5 + i as u64), u, v, 0.3));
                }
            }
        }
        best.1
    });
    let radius = (4.0 * SPLAT_SIGMA).ceil() as isize;
    for id in 0..gt.n_points() {
        if !gt.visibility[id][frame] {
            continue;
        }
        let p = gt.projections[id][frame];
        let amp = if hash2(seed ^ 0x5EED, id as i64, 0) < 0.5 { 0.45 } else { -0.45 };
        let (cx, cy) = (p.x.round() as isize, p.y.round() as isize);
        for y in (cy - radius).max(0)..=(cy + radius).min(scene.height as isize - 1) {
            for x in (cx - radius).max(0)..=(cx + radius).min(scene.width as isize - 1) {
                let d2 = (x as f64 - p.x).powi(2) + (y as f64 - p.y).powi(2);
                let v = img.get(x as usize, y as usize)
                    + amp * (-0.5 * d2 / (SPLAT_SIGMA * SPLAT_SIGMA)).exp();
                img.set(x as usize, y as usize, v);
            }
        }
    }
    img.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::reproject;

    fn small_config() -> SceneConfig {
        SceneConfig {
            n_frames: 10,
            n_static: 80,
            n_dynamic: 20,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let c = small_config();
        assert_eq!(generate_scene(&c, 5).unwrap(), generate_scene(&c, 5).unwrap());
        assert_ne!(generate_scene(&c, 5).unwrap(), generate_scene(&c, 6).unwrap());
    }

    #[test]
    fn requested_counts() {
        let c = SceneConfig {
            n_static: 100,
            n_dynamic: 30,
            ..SceneConfig::default()
        };
        let s = generate_scene(&c, 1).unwrap();
        assert_eq!((s.static_points.len(), s.dynamic_points.len()), (100, 30));
        let gt = render_tracks(&s);
        assert_eq!(gt.dynamic.iter().filter(|&&d| d).count(), 30);

        let none = generate_scene(&SceneConfig { n_dynamic: 0, ..c }, 1).unwrap();
        assert!(render_tracks(&none).dynamic.iter().all(|&d| !d));
    }

    #[test]
    fn static_points_clear_every_camera() {
        let s = generate_scene(&small_config(), 3).unwrap();
        for p in &s.static_points {
            for pose in &s.poses {
                assert!(pose.inverse().transform_point(p).z >= MIN_CLEARANCE);
            }
        }
    }

    #[test]
    fn infeasible_box() {
        let c = SceneConfig {
            box_z_mid: 1.0,
            box_half: [1.0, 1.0, 2.0],
            ..SceneConfig::default()
        };
        assert!(matches!(generate_scene(&c, 0), Err(SynthError::InfeasibleScene(_))));
        let few = SceneConfig {
            n_static: 3,
            ..SceneConfig::default()
        };
        assert!(generate_scene(&few, 0).is_err());
    }

    #[test]
    fn optical_axis_point_projects_to_principal_point() {
        let mut s = generate_scene(&small_config(), 0).unwrap();
        s.poses = vec![Pose::identity()];
        s.static_points = vec![Vector3::new(0.0, 0.0, 7.0)];
        s.dynamic_points.clear();
        let gt = render_tracks(&s);
        assert_eq!(gt.projections[0][0], Vector2::new(s.intrinsics.cx, s.intrinsics.cy));
        assert!(gt.visibility[0][0]);
    }

    #[test]
    fn occluder_hides_frames_three_to_five() {
        // camera slides along +X at 0.1 m/frame toward a plate halfway to the point
        let mut s = generate_scene(&small_config(), 0).unwrap();
        s.poses = (0..8)
            .map(|i| Pose::from_translation(Vector3::new(0.1 * i as f64, 0.0, 0.0)))
            .collect();
        s.static_points = vec![Vector3::new(0.4, 0.0, 6.0)];
        s.dynamic_points.clear();
        s.occluders = vec![Occluder {
            center: Vector3::new(0.4, 0.0, 3.0),
            half_u: Vector3::new(0.06, 0.0, 0.0),
            half_v: Vector3::new(0.0, 0.5, 0.0),
        }];
        // at z=3 the sight line sits at x = (x_cam + 0.4)/2; hidden iff |x_cam − 0.4| ≤ 0.12
        let gt = render_tracks(&s);
        let vis: Vec<bool> = gt.visibility[0].clone();
        assert_eq!(vis, vec![true, true, true, false, false, false, true, true]);
    }

    #[test]
    fn projections_agree_with_reprojection() {
        let s = generate_scene(&small_config(), 2).unwrap();
        let gt = render_tracks(&s);
        for id in 0..s.static_points.len() {
            for i in 0..s.n_frames() {
                if !gt.visibility[id][i] {
                    continue;
                }
                for j in 0..s.n_frames() {
                    if !gt.visibility[id][j] {
                        continue;
                    }
                    let r = reproject(&s.poses[i], &s.poses[j], &s.intrinsics, &gt.projections[id][i], gt.depth[id][i])
                        .unwrap();
                    assert!((r.pixel - gt.projections[id][j]).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn images_are_deterministic_and_static_camera_repeats() {
        let c = SceneConfig {
            n_frames: 3,
            width: 96,
            height: 64,
            intrinsics: Intrinsics {
                fx: 80.0,
                fy: 80.0,
                cx: 47.5,
                cy: 31.5,
            },
            path: CameraPath::Static,
            n_static: 30,
            ..SceneConfig::default()
        };
        let s = generate_scene(&c, 1).unwrap();
        let a = render_images(&s);
        assert_eq!(a, render_images(&s));
        assert_eq!(a[0], a[1]);
        assert_eq!(a[1], a[2]);
        assert!(a[0].data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn scene_json_round_trip() {
        let s = generate_scene(&small_config(), 4).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: SceneSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back.n_points(), s.n_points());
        assert_eq!(back.poses.len(), s.poses.len());
        let cfg: SceneConfig = serde_json::from_str(r#"{"n_frames": 12, "path": "sideways"}"#).unwrap();
        assert_eq!(cfg.n_frames, 12);
        assert_eq!(cfg.path, CameraPath::Sideways);
    }
}
