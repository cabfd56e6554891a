//! Distributed keypoint selection from image gradient magnitude.
//!
//! The gradient map is split into a `k×k` grid and the strongest pixels of
//! every cell are taken, which keeps queries both trackable and spread over
//! the whole frame.

use crate::raster::Image;
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("image {width}x{height} is smaller than 3x3")]
    ImageTooSmall { width: usize, height: usize },
    #[error("invalid grid: {0}")]
    InvalidGridSpec(String),
}

/// A point to track: its host frame and pixel position there.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub frame: usize,
    pub pixel: Vector2<f64>,
    /// Scene point identity, when the query is known to come from one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<usize>,
}

impl Query {
    pub fn new(frame: usize, pixel: Vector2<f64>) -> Self {
        Self {
            frame,
            pixel,
            point: None,
        }
    }
}

pub type QuerySet = Vec<Query>;

/// Per-pixel gradient magnitude, possibly downscaled by `scale` relative to
/// a `src_width × src_height` source image.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMap {
    pub width: usize,
    pub height: usize,
    pub scale: usize,
    pub src_width: usize,
    pub src_height: usize,
    pub data: Vec<f64>,
}

impl GradientMap {
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            scale: 1,
            src_width: width,
            src_height: height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Full-resolution coordinate of the center of map cell `(x, y)`.
    pub fn to_source(&self, x: usize, y: usize) -> Vector2<f64> {
        let center = |c: usize, src: usize| {
            let start = c * self.scale;
            let size = self.scale.min(src - start);
            start as f64 + (size as f64 - 1.0) * 0.5
        };
        Vector2::new(center(x, self.src_width), center(y, self.src_height))
    }
}

/// Magnitude of the unnormalized 3×3 Sobel responses (cross-correlation
/// convention). Border pixels are zero.
pub fn sobel_gradient_map(image: &Image) -> Result<GradientMap, SamplingError> {
    let (w, h) = (image.width, image.height);
    if w < 3 || h < 3 {
        return Err(SamplingError::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let mut data = vec![0.0; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let p = |dx: isize, dy: isize| {
                image.get((x as isize + dx) as usize, (y as isize + dy) as usize)
            };
            let gx = (p(1, -1) - p(-1, -1)) + 2.0 * (p(1, 0) - p(-1, 0)) + (p(1, 1) - p(-1, 1));
            let gy = (p(-1, 1) - p(-1, -1)) + 2.0 * (p(0, 1) - p(0, -1)) + (p(1, 1) - p(1, -1));
            data[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    Ok(GradientMap::from_vec(w, h, data))
}

/// Non-overlapping `pool×pool` average. Trailing partial cells are averaged
/// over the pixels they actually cover.
pub fn pool_gradient(map: &GradientMap, pool: usize) -> GradientMap {
    let pool = pool.max(1);
    if pool == 1 {
        return map.clone();
    }
    let w = map.width.div_ceil(pool);
    let h = map.height.div_ceil(pool);
    let mut data = Vec::with_capacity(w * h);
    for cy in 0..h {
        for cx in 0..w {
            let (x0, y0) = (cx * pool, cy * pool);
            let (x1, y1) = ((x0 + pool).min(map.width), (y0 + pool).min(map.height));
            let mut sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += map.get(x, y);
                }
            }
            data.push(sum / ((x1 - x0) * (y1 - y0)) as f64);
        }
    }
    GradientMap {
        width: w,
        height: h,
        scale: map.scale * pool,
        src_width: map.src_width,
        src_height: map.src_height,
        data,
    }
}

/// Cell boundaries of a `k`-way split of `len`.
pub(crate) fn grid_bounds(len: usize, k: usize, cell: usize) -> (usize, usize) {
    (cell * len / k, (cell + 1) * len / k)
}

/// Takes the `n/k²` largest-magnitude pixels from each cell of a `k×k` grid.
///
/// Cells are visited row-major; inside a cell points come in decreasing
/// magnitude, ties broken by row-major pixel order.
pub fn grid_max_sample(
    map: &GradientMap,
    k: usize,
    n: usize,
    frame: usize,
) -> Result<QuerySet, SamplingError> {
    if k == 0 || n == 0 || !n.is_multiple_of(k * k) {
        return Err(SamplingError::InvalidGridSpec(format!(
            "{n} points cannot be split evenly over a {k}x{k} grid"
        )));
    }
    if k > map.width || k > map.height {
        return Err(SamplingError::InvalidGridSpec(format!(
            "{k}x{k} grid exceeds {}x{} map",
            map.width, map.height
        )));
    }
    let per_cell = n / (k * k);
    let mut out = Vec::with_capacity(n);
    let mut cell: Vec<(f64, usize, usize)> = Vec::new();
    for gy in 0..k {
        let (y0, y1) = grid_bounds(map.height, k, gy);
        for gx in 0..k {
            let (x0, x1) = grid_bounds(map.width, k, gx);
            if (x1 - x0) * (y1 - y0) < per_cell {
                return Err(SamplingError::InvalidGridSpec(format!(
                    "cell ({gx},{gy}) holds fewer than {per_cell} pixels"
                )));
            }
            cell.clear();
            for y in y0..y1 {
                for x in x0..x1 {
                    let v = map.get(x, y);
                    cell.push((if v.is_nan() { f64::NEG_INFINITY } else { v }, x, y));
                }
            }
            // stable sort keeps row-major order among equal magnitudes
            cell.sort_by(|a, b| b.0.total_cmp(&a.0));
            out.extend(
                cell.iter()
                    .take(per_cell)
                    .map(|&(_, x, y)| Query::new(frame, map.to_source(x, y))),
            );
        }
    }
    Ok(out)
}

/// Sobel → pool → grid selection in one call.
pub fn sample_keypoints(
    image: &Image,
    pool: usize,
    k: usize,
    n: usize,
    frame: usize,
) -> Result<QuerySet, SamplingError> {
    let grad = sobel_gradient_map(image)?;
    grid_max_sample(&pool_gradient(&grad, pool), k, n, frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // dyadic intensities: every Sobel sum and constant shift is exact in f64
    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |_, _| rng.random_range(0..256) as f64 / 256.0)
    }

    /// Direct 2-D cross-correlation with explicit kernels.
    fn sobel_oracle(img: &Image) -> Vec<f64> {
        let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
        let mut out = vec![0.0; img.width * img.height];
        for y in 1..img.height - 1 {
            for x in 1..img.width - 1 {
                let (mut gx, mut gy) = (0.0, 0.0);
                for (r, row) in kx.iter().enumerate() {
                    for (c, &kv) in row.iter().enumerate() {
                        gx += kv * img.get(x + c - 1, y + r - 1);
                        gy += kx[c][r] * img.get(x + c - 1, y + r - 1);
                    }
                }
                out[y * img.width + x] = (gx * gx + gy * gy).sqrt();
            }
        }
        out
    }

    #[test]
    fn constant_image_has_no_gradient() {
        let g = sobel_gradient_map(&Image::filled(6, 5, 0.7)).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn horizontal_ramp() {
        let g = sobel_gradient_map(&Image::from_fn(7, 6, |x, _| x as f64)).unwrap();
        for y in 0..6 {
            for x in 0..7 {
                let border = x == 0 || y == 0 || x == 6 || y == 5;
                assert_eq!(g.get(x, y), if border { 0.0 } else { 8.0 });
            }
        }
    }

    #[test]
    fn sobel_matches_convolution_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let img = random_image(&mut rng, 6, 6);
            assert_eq!(sobel_gradient_map(&img).unwrap().data, sobel_oracle(&img));
        }
    }

    #[test]
    fn tiny_image_rejected() {
        assert_eq!(
            sobel_gradient_map(&Image::new(2, 9)),
            Err(SamplingError::ImageTooSmall { width: 2, height: 9 })
        );
    }

    #[test]
    fn pooling() {
        let ones = GradientMap::from_vec(4, 4, vec![1.0; 16]);
        assert_eq!(pool_gradient(&ones, 1), ones);
        let p = pool_gradient(&ones, 2);
        assert_eq!((p.width, p.height, p.scale), (2, 2, 2));
        assert!(p.data.iter().all(|&v| v == 1.0));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..1.0)).collect();
        let m = GradientMap::from_vec(5, 5, data.clone());
        let p = pool_gradient(&m, 2);
        assert_eq!((p.width, p.height), (3, 3));
        for cy in 0..3 {
            for cx in 0..3 {
                let cells: Vec<f64> = (0..25)
                    .filter(|i| (i % 5) / 2 == cx && (i / 5) / 2 == cy)
                    .map(|i| data[i])
                    .collect();
                let mean = cells.iter().sum::<f64>() / cells.len() as f64;
                assert!((p.get(cx, cy) - mean).abs() < 1e-15);
            }
        }
        // pooled cells map back to their centers
        assert_eq!(p.to_source(0, 0), Vector2::new(0.5, 0.5));
        assert_eq!(p.to_source(2, 2), Vector2::new(4.0, 4.0));
    }

    #[test]
    fn one_point_per_cell_on_8x8_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..64 * 48).map(|_| rng.random_range(0.0..1.0)).collect();
        let m = GradientMap::from_vec(64, 48, data);
        let q = grid_max_sample(&m, 8, 64, 0).unwrap();
        assert_eq!(q.len(), 64);
        let mut counts = [0usize; 64];
        for p in &q {
            let cx = (p.pixel.x as usize) / 8;
            let cy = (p.pixel.y as usize) / 6;
            counts[cy * 8 + cx] += 1;
        }
        assert!(counts.iter().all(|&c| c == 1));
    }

    #[test]
    fn bright_pixel_per_cell_is_found() {
        let mut m = GradientMap::from_vec(16, 16, vec![0.0; 256]);
        let mut expected = Vec::new();
        for gy in 0..4 {
            for gx in 0..4 {
                let (x, y) = (gx * 4 + (gx + gy) % 4, gy * 4 + (3 * gx + gy) % 4);
                m.data[y * 16 + x] = 1.0;
                expected.push(Vector2::new(x as f64, y as f64));
            }
        }
        let q = grid_max_sample(&m, 4, 16, 2).unwrap();
        assert_eq!(q.iter().map(|p| p.pixel).collect::<Vec<_>>(), expected);
        assert!(q.iter().all(|p| p.frame == 2));
    }

    #[test]
    fn ties_broken_row_major() {
        let m = GradientMap::from_vec(4, 4, vec![1.0; 16]);
        let q = grid_max_sample(&m, 2, 8, 0).unwrap();
        let first: Vec<_> = q[..2].iter().map(|p| p.pixel).collect();
        assert_eq!(first, vec![Vector2::new(0.0, 0.0), Vector2::new(1.0, 0.0)]);
    }

    #[test]
    fn invalid_grids() {
        let m = GradientMap::from_vec(8, 8, vec![0.0; 64]);
        assert!(matches!(grid_max_sample(&m, 3, 10, 0), Err(SamplingError::InvalidGridSpec(_))));
        assert!(matches!(grid_max_sample(&m, 9, 81, 0), Err(SamplingError::InvalidGridSpec(_))));
        assert!(matches!(grid_max_sample(&m, 4, 0, 0), Err(SamplingError::InvalidGridSpec(_))));
    }

    #[test]
    fn adding_constant_does_not_move_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = random_image(&mut rng, 40, 32);
        let shifted = Image::from_fn(40, 32, |x, y| img.get(x, y) + 0.25);
        let a = sample_keypoints(&img, 2, 4, 32, 0).unwrap();
        let b = sample_keypoints(&shifted, 2, 4, 32, 0).unwrap();
        assert_eq!(a, b);
    }
}
