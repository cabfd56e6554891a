//! Grayscale `f64` raster shared by the sampler, tracker and renderer.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image data length {len} does not match {width}x{height}")]
    Shape { width: usize, height: usize, len: usize },
    #[error("image i/o: {0}")]
    Io(String),
}

/// Row-major grayscale image; intensities nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self, RasterError> {
        if data.len() != width * height {
            return Err(RasterError::Shape {
                width,
                height,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Luminance `0.299 R + 0.587 G + 0.114 B` of interleaved RGB values.
    pub fn from_rgb(width: usize, height: usize, rgb: &[f64]) -> Result<Self, RasterError> {
        if rgb.len() != 3 * width * height {
            return Err(RasterError::Shape {
                width,
                height,
                len: rgb.len() / 3,
            });
        }
        let data = rgb
            .chunks_exact(3)
            .map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel with coordinates clamped to the image.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    /// Bilinear interpolation with edge clamping; integer coordinates are exact.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.get_clamped(xi, yi);
        if fx == 0.0 && fy == 0.0 {
            return a;
        }
        let b = self.get_clamped(xi + 1, yi);
        let c = self.get_clamped(xi, yi + 1);
        let d = self.get_clamped(xi + 1, yi + 1);
        (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d)
    }

    /// Bilinear sample with the image gradient at the same location.
    pub fn sample_with_gradient(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.get_clamped(xi, yi);
        let b = self.get_clamped(xi + 1, yi);
        let c = self.get_clamped(xi, yi + 1);
        let d = self.get_clamped(xi + 1, yi + 1);
        let v = (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d);
        let gx = (1.0 - fy) * (b - a) + fy * (d - c);
        let gy = (1.0 - fx) * (c - a) + fx * (d - b);
        (v, gx, gy)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// 2×2 box downsample; odd trailing rows/columns are dropped.
    pub fn half(&self) -> Image {
        let w = self.width / 2;
        let h = self.height / 2;
        Image::from_fn(w, h, |x, y| {
            0.25 * (self.get(2 * x, 2 * y)
                + self.get(2 * x + 1, 2 * y)
                + self.get(2 * x, 2 * y + 1)
                + self.get(2 * x + 1, 2 * y + 1))
        })
    }

    /// Loads an 8- or 16-bit image, converting colour to luminance.
    pub fn load(path: &Path) -> Result<Image, RasterError> {
        let img = image::open(path).map_err(|e| RasterError::Io(format!("{}: {e}", path.display())))?;
        let rgb = img.to_rgb32f();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let vals: Vec<f64> = rgb.as_raw().iter().map(|&v| v as f64).collect();
        Image::from_rgb(w, h, &vals)
    }

    /// Writes an 8-bit PNG, clamping intensities to `[0, 1]`.
    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| RasterError::Io("buffer size mismatch".into()))?;
        buf.save(path)
            .map_err(|e| RasterError::Io(format!("{}: {e}", path.display())))
    }
}
