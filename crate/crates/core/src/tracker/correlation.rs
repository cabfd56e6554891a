//! Training-free tracker: normalized cross-correlation over a three-level
//! pyramid, refined by soft-argmax steps on local cost volumes.

use super::{check_window, logistic, PointTracker, Track, TrackSet, TrackerError};
use crate::geometry::Intrinsics;
use crate::probmodel::{TrackDistribution, DEFAULT_SIGMA};
use crate::raster::Image;
use crate::sampling::{sample_keypoints, Query, QuerySet};
use crate::synth::{render_tracks, GroundTruthTracks, SceneSpec};
use nalgebra::{DMatrix, Matrix4, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Descriptor patches are `(2·3+1)²` = 49 samples.
pub const PATCH_RADIUS: usize = 3;
const PATCH: usize = 2 * PATCH_RADIUS + 1;
const DESC_LEN: usize = PATCH * PATCH;

/// Pyramid depth (scales 1, ½, ¼).
pub const LEVELS: usize = 3;

const MIN_IMAGE: usize = 32;

/// Width of the projected uncertainty features.
const UNCERTAINTY_DIM: usize = 8;

/// Pixel scale of the uncertainty features.
const UNCERTAINTY_SCALE: f64 = 2.0;

/// Pixels the polish may move a point away from the refined estimate.
const POLISH_LIMIT: f64 = 1.0;

pub type Descriptor = Vec<f64>;

/// Grayscale frames addressed by index.
pub trait ImageSource: Send + Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn size(&self) -> (usize, usize);
    fn frame(&self, index: usize) -> Result<Image, String>;
}

impl ImageSource for Vec<Image> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }
    fn size(&self) -> (usize, usize) {
        self.first().map_or((0, 0), |i| (i.width, i.height))
    }
    fn frame(&self, index: usize) -> Result<Image, String> {
        self.get(index).cloned().ok_or_else(|| "no such frame".to_string())
    }
}

/// PNG frames of a directory, in file-name order.
pub struct ImageDir {
    paths: Vec<PathBuf>,
    size: (usize, usize),
}

impl ImageDir {
    pub fn open(dir: &Path) -> Result<Self, String> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| format!("{}: {e}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
            })
            .collect();
        paths.sort();
        let size = match paths.first() {
            Some(p) => {
                let img = Image::load(p).map_err(|e| e.to_string())?;
                (img.width, img.height)
            }
            None => (0, 0),
        };
        Ok(Self { paths, size })
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }
}

impl ImageSource for ImageDir {
    fn len(&self) -> usize {
        self.paths.len()
    }
    fn size(&self) -> (usize, usize) {
        self.size
    }
    fn frame(&self, index: usize) -> Result<Image, String> {
        let path = self.paths.get(index).ok_or("no such frame")?;
        let img = Image::load(path).map_err(|e| e.to_string())?;
        if (img.width, img.height) != self.size {
            return Err(format!("{} has a different size", path.display()));
        }
        Ok(img)
    }
}

/// Frames rendered on demand from a synthetic scene.
pub struct RenderedScene {
    scene: SceneSpec,
    gt: GroundTruthTracks,
}

impl RenderedScene {
    pub fn new(scene: SceneSpec) -> Self {
        let gt = render_tracks(&scene);
        Self { scene, gt }
    }
}

impl ImageSource for RenderedScene {
    fn len(&self) -> usize {
        self.scene.n_frames()
    }
    fn size(&self) -> (usize, usize) {
        (self.scene.width, self.scene.height)
    }
    fn frame(&self, index: usize) -> Result<Image, String> {
        if index >= self.len() {
            return Err("no such frame".into());
        }
        Ok(crate::synth::render_frame(&self.scene, &self.gt, index))
    }
}

/// Scale-space stack; level `l` is `2^l` times coarser.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub levels: Vec<Image>,
}

impl FeaturePyramid {
    pub fn new(image: &Image) -> Result<Self, TrackerError> {
        if image.width < MIN_IMAGE || image.height < MIN_IMAGE {
            return Err(TrackerError::ImageTooSmall {
                width: image.width,
                height: image.height,
            });
        }
        let mut levels = vec![image.clone()];
        for l in 1..LEVELS {
            levels.push(levels[l - 1].half());
        }
        Ok(Self { levels })
    }

    /// Full-resolution pixel to level-`l` coordinates (pixel centers align).
    pub fn to_level(p: &Vector2<f64>, level: usize) -> Vector2<f64> {
        let s = (1u32 << level) as f64;
        p.map(|v| (v + 0.5) / s - 0.5)
    }

    /// Mean-normalized patch centered on `p` (level coordinates).
    pub fn descriptor(&self, level: usize, p: &Vector2<f64>) -> Descriptor {
        let img = &self.levels[level];
        let r = PATCH_RADIUS as f64;
        let mut d = Vec::with_capacity(DESC_LEN);
        for dy in 0..PATCH {
            for dx in 0..PATCH {
                d.push(img.sample(p.x + dx as f64 - r, p.y + dy as f64 - r));
            }
        }
        mean_normalize(&mut d);
        d
    }

    /// Descriptors at every level for a full-resolution pixel.
    pub fn descriptors(&self, p: &Vector2<f64>) -> Vec<Descriptor> {
        (0..LEVELS)
            .map(|l| self.descriptor(l, &Self::to_level(p, l)))
            .collect()
    }
}

fn mean_normalize(d: &mut [f64]) {
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.iter_mut().for_each(|v| *v -= mean);
}

/// Normalized cross-correlation of two mean-normalized descriptors; 0 when
/// either is flat.
pub fn ncc(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    let denom = (aa * bb).sqrt();
    if denom < 1e-12 {
        0.0
    } else {
        ab / denom
    }
}

/// `(2r+1)²` NCC scores per level, row-major over offsets `(dx, dy)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume {
    pub radius: usize,
    pub scores: Vec<Vec<f64>>,
}

impl CostVolume {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn at(&self, level: usize, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        self.scores[level][((dy + r) * (2 * r + 1) + dx + r) as usize]
    }

    /// Offset of the best score at `level`.
    pub fn argmax(&self, level: usize) -> (isize, isize) {
        let side = self.side();
        let r = self.radius as isize;
        let (i, _) = self.scores[level]
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        ((i % side) as isize - r, (i / side) as isize - r)
    }
}

/// Scores `template` (one descriptor per level) against the descriptors at
/// integer offsets around `x`; offsets whose center leaves the image score −1.
pub fn build_cost_volume(pyr: &FeaturePyramid, template: &[Descriptor], x: &Vector2<f64>, radius: usize) -> CostVolume {
    let span = 2 * (radius + PATCH_RADIUS) + 1;
    let side = 2 * radius + 1;
    let mut scores = Vec::with_capacity(template.len());
    let mut window = vec![0.0; DESC_LEN];
    for (level, t) in template.iter().enumerate() {
        let img = &pyr.levels[level];
        let c = FeaturePyramid::to_level(x, level);
        let off = (radius + PATCH_RADIUS) as f64;
        // shared sample grid: every offset's patch is a sub-window of it
        let mut grid = Vec::with_capacity(span * span);
        for v in 0..span {
            for u in 0..span {
                grid.push(img.sample(c.x + u as f64 - off, c.y + v as f64 - off));
            }
        }
        let mut level_scores = Vec::with_capacity(side * side);
        for j in 0..side {
            for i in 0..side {
                let (cx, cy) = (c.x + i as f64 - radius as f64, c.y + j as f64 - radius as f64);
                if !img.contains(cx, cy) {
                    level_scores.push(-1.0);
                    continue;
                }
                for dy in 0..PATCH {
                    let row = (j + dy) * span + i;
                    window[dy * PATCH..(dy + 1) * PATCH].copy_from_slice(&grid[row..row + PATCH]);
                }
                mean_normalize(&mut window);
                level_scores.push(ncc(&window, t));
            }
        }
        scores.push(level_scores);
    }
    CostVolume { radius, scores }
}

/// Soft-argmax displacement, averaged over levels in full-resolution pixels.
pub fn soft_argmax(volume: &CostVolume, beta: f64) -> Vector2<f64> {
    let side = volume.side();
    let r = volume.radius as f64;
    let mut total = Vector2::zeros();
    for (level, scores) in volume.scores.iter().enumerate() {
        let peak = scores.iter().copied().fold(f64::MIN, f64::max);
        let mut acc = Vector2::zeros();
        let mut norm = 0.0;
        for (i, &c) in scores.iter().enumerate() {
            let w = (beta * (c - peak)).exp();
            acc += Vector2::new((i % side) as f64 - r, (i / side) as f64 - r) * w;
            norm += w;
        }
        total += acc / norm * (1u32 << level) as f64;
    }
    total / volume.scores.len() as f64
}

/// One additive update: `ΔX` from the volume, `ΔF` re-sampled at the moved
/// point minus the current feature.
pub fn refine_step(
    pyr: &FeaturePyramid,
    x: &Vector2<f64>,
    feature: &[f64],
    volume: &CostVolume,
    beta: f64,
) -> (Vector2<f64>, Descriptor) {
    let dx = soft_argmax(volume, beta);
    let moved = pyr.descriptor(0, &(x + dx));
    let df = moved.iter().zip(feature).map(|(a, b)| a - b).collect();
    (dx, df)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelationConfig {
    pub window: usize,
    pub iterations: usize,
    pub radius: usize,
    pub beta: f64,
    /// Gradient pooling factor for keypoint selection.
    pub pool: usize,
    /// Seed of the uncertainty projection matrices.
    pub seed: u64,
    /// Sub-pixel intensity alignment after the refinement steps.
    pub polish: bool,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            window: super::DEFAULT_WINDOW,
            iterations: super::DEFAULT_ITERATIONS,
            radius: 4,
            beta: 20.0,
            pool: 2,
            seed: 0,
            polish: true,
        }
    }
}

pub struct CorrelationTracker<S: ImageSource> {
    source: S,
    config: CorrelationConfig,
    intrinsics: Intrinsics,
    cache: BTreeMap<usize, Arc<FeaturePyramid>>,
    proj_a: DMatrix<f64>,
    proj_b: DMatrix<f64>,
}

/// Per-frame tracking result for one point.
struct Step {
    x: Vector2<f64>,
    feature: Descriptor,
    visibility: f64,
    stats: [f64; 3],
}

impl<S: ImageSource> CorrelationTracker<S> {
    pub fn new(source: S, intrinsics: Intrinsics, config: CorrelationConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut proj = || DMatrix::from_fn(UNCERTAINTY_DIM, 3, |_, _| rng.random_range(0.0..1.0) / 3f64.sqrt());
        let proj_a = proj();
        let proj_b = proj();
        Self {
            source,
            config,
            intrinsics,
            cache: BTreeMap::new(),
            proj_a,
            proj_b,
        }
    }

    pub fn config(&self) -> &CorrelationConfig {
        &self.config
    }

    fn pyramid(&mut self, frame: usize) -> Result<Arc<FeaturePyramid>, TrackerError> {
        if let Some(p) = self.cache.get(&frame) {
            return Ok(p.clone());
        }
        let img = self.source.frame(frame).map_err(|e| TrackerError::Source(frame, e))?;
        let pyr = Arc::new(FeaturePyramid::new(&img)?);
        self.cache.insert(frame, pyr.clone());
        Ok(pyr)
    }

    /// Template patch for the sub-pixel polish.
    fn raw_patch(img: &Image, p: &Vector2<f64>) -> Vec<f64> {
        let r = PATCH_RADIUS as f64;
        let mut out = Vec::with_capacity(DESC_LEN);
        for dy in 0..PATCH {
            for dx in 0..PATCH {
                out.push(img.sample(p.x + dx as f64 - r, p.y + dy as f64 - r));
            }
        }
        out
    }

    /// Gauss-Newton alignment of the raw template with gain and bias.
    fn polish(img: &Image, template: &[f64], start: Vector2<f64>) -> Vector2<f64> {
        let r = PATCH_RADIUS as f64;
        let mut p = Vector4::new(start.x, start.y, 1.0, 0.0);
        for _ in 0..20 {
            let mut h = Matrix4::zeros();
            let mut g = Vector4::zeros();
            for dy in 0..PATCH {
                for dx in 0..PATCH {
                    let t = template[dy * PATCH + dx];
                    let (v, gx, gy) = img.sample_with_gradient(p.x + dx as f64 - r, p.y + dy as f64 - r);
                    let res = v - p.z * t - p.w;
                    let j = Vector4::new(gx, gy, -t, -1.0);
                    h += j * j.transpose();
                    g += j * res;
                }
            }
            let Some(step) = h.lu().solve(&(-g)) else {
                return start;
            };
            if !step.iter().all(|v| v.is_finite()) {
                return start;
            }
            p += step;
            if (p.xy() - start).norm() > POLISH_LIMIT {
                return start;
            }
            if step.xy().norm() < 1e-12 {
                break;
            }
        }
        p.xy()
    }

    fn follow(&self, pyr: &FeaturePyramid, template: &[Descriptor], raw: &[f64], init: Vector2<f64>) -> Step {
        let beta = self.config.beta;
        let mut x = init;
        let mut feature = pyr.descriptor(0, &x);
        for _ in 0..self.config.iterations {
            let vol = build_cost_volume(pyr, template, &x, self.config.radius);
            let (dx, df) = refine_step(pyr, &x, &feature, &vol, beta);
            x += dx;
            feature.iter_mut().zip(&df).for_each(|(f, d)| *f += d);
        }
        if self.config.polish {
            x = Self::polish(&pyr.levels[0], raw, x);
            feature = pyr.descriptor(0, &x);
        }
        self.finish(pyr, template, x, feature)
    }

    fn finish(&self, pyr: &FeaturePyramid, template: &[Descriptor], x: Vector2<f64>, feature: Descriptor) -> Step {
        let vol = build_cost_volume(pyr, &template[..1], &x, 2);
        let peak = ncc(&feature, &template[0]);
        let (ax, ay) = vol.argmax(0);
        let best = vol.at(0, ax, ay);
        let mut second = -1.0f64;
        for dy in -2..=2isize {
            for dx in -2..=2isize {
                if (dx - ax).abs() > 1 || (dy - ay).abs() > 1 {
                    second = second.max(vol.at(0, dx, dy));
                }
            }
        }
        let ratio = if best > 1e-6 { (second / best).clamp(0.0, 1.0) } else { 1.0 };
        let curvature = (4.0 * vol.at(0, 0, 0) - vol.at(0, 1, 0) - vol.at(0, -1, 0) - vol.at(0, 0, 1) - vol.at(0, 0, -1)).max(0.0);
        Step {
            x,
            feature,
            visibility: logistic((peak - 0.5) / 0.1),
            stats: [(1.0 - peak).max(0.0), ratio, 1.0 / (1.0 + curvature)],
        }
    }

    fn track_one(&self, pyrs: &[Arc<FeaturePyramid>], start: usize, q: &Query) -> Track {
        let len = pyrs.len();
        let sq = q.frame - start;
        let qp = &pyrs[sq];
        let template = qp.descriptors(&q.pixel);
        let raw = Self::raw_patch(&qp.levels[0], &q.pixel);
        let mut steps: Vec<Option<Step>> = (0..len).map(|_| None).collect();
        steps[sq] = Some(self.finish(qp, &template, q.pixel, template[0].clone()));

        // outward from the query frame in both directions
        for dir in [1isize, -1] {
            let mut prev = q.pixel;
            let mut prev2: Option<Vector2<f64>> = None;
            let mut s = sq as isize + dir;
            while s >= 0 && (s as usize) < len {
                let init = prev2.map_or(prev, |p2| prev + (prev - p2));
                let step = self.follow(&pyrs[s as usize], &template, &raw, init);
                prev2 = Some(prev);
                prev = step.x;
                steps[s as usize] = Some(step);
                s += dir;
            }
        }

        let steps: Vec<Step> = steps.into_iter().map(|s| s.expect("every frame visited")).collect();
        let positions: Vec<Vector2<f64>> = steps.iter().map(|s| s.x).collect();
        let visibility = steps.iter().map(|s| s.visibility).collect();
        let features = DMatrix::from_fn(len, DESC_LEN, |s, d| steps[s].feature[d]);
        let stats = DMatrix::from_fn(len, 3, |s, k| steps[s].stats[k] * UNCERTAINTY_SCALE);
        let fa = &stats * self.proj_a.transpose();
        let fb = &stats * self.proj_b.transpose();
        Track {
            query: *q,
            dist: TrackDistribution::from_features(&positions, &fa, &fb, DEFAULT_SIGMA),
            positions,
            visibility,
            features,
            dyn_score: 0.0,
            gt_dynamic: None,
        }
    }
}

impl<S: ImageSource> PointTracker for CorrelationTracker<S> {
    fn window(&self) -> usize {
        self.config.window
    }

    fn n_frames(&self) -> usize {
        self.source.len()
    }

    fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
    }

    fn image_size(&self) -> (usize, usize) {
        self.source.size()
    }

    fn keypoints(&mut self, frame: usize, n: usize, grid: usize) -> Result<QuerySet, TrackerError> {
        let pyr = self.pyramid(frame)?;
        sample_keypoints(&pyr.levels[0], self.config.pool, grid, n, frame)
            .map_err(|e| TrackerError::Source(frame, e.to_string()))
    }

    fn track(&mut self, start: usize, len: usize, queries: &[Query]) -> Result<TrackSet, TrackerError> {
        check_window(self.window(), self.n_frames(), start, len, queries)?;
        let pyrs = (start..start + len)
            .map(|f| self.pyramid(f))
            .collect::<Result<Vec<_>, _>>()?;
        let this = &*self;
        let tracks = queries.par_iter().map(|q| this.track_one(&pyrs, start, q)).collect();
        Ok(TrackSet { start, len, tracks })
    }

    fn release_before(&mut self, frame: usize) {
        self.cache = self.cache.split_off(&frame);
    }
}
