//! In-memory images and the sampling interface shared by the covariance
//! model, the estimator and the synthetic renderer.

use nalgebra::Vector2;

use crate::error::{invalid, Result};

/// Something that can be sampled at continuous pixel coordinates.
pub trait ImageSampler: Send + Sync {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    /// Intensity at `(u, v)`, `None` outside the sampleable region.
    fn intensity(&self, u: f64, v: f64) -> Option<f64>;
    /// Intensity gradient at `(u, v)`.
    fn gradient(&self, u: f64, v: f64) -> Option<Vector2<f64>>;
}

/// Row-major grayscale raster with `f64` intensities (8-bit scale).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return invalid(format!("{} samples for a {width}x{height} image", data.len()));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self { width, height, data }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Bilinear interpolation; defined on `[0, width-1] x [0, height-1]`.
    pub fn bilinear(&self, u: f64, v: f64) -> Option<f64> {
        let (x0, y0, fx, fy) = self.cell(u, v)?;
        let i = y0 * self.width + x0;
        let x1 = if fx > 0.0 { 1 } else { 0 };
        let y1 = if fy > 0.0 { self.width } else { 0 };
        let top = self.data[i] * (1.0 - fx) + self.data[i + x1] * fx;
        let bottom = self.data[i + y1] * (1.0 - fx) + self.data[i + y1 + x1] * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    fn cell(&self, u: f64, v: f64) -> Option<(usize, usize, f64, f64)> {
        if !(u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64) {
            return None;
        }
        let x0 = (u.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (v.floor() as usize).min(self.height.saturating_sub(2));
        Some((x0, y0, u - x0 as f64, v - y0 as f64))
    }
}

impl ImageSampler for GrayImage {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn intensity(&self, u: f64, v: f64) -> Option<f64> {
        self.bilinear(u, v)
    }

    /// Central differences (one pixel step) of the bilinear interpolant.
    fn gradient(&self, u: f64, v: f64) -> Option<Vector2<f64>> {
        let gx = (self.bilinear(u + 1.0, v)? - self.bilinear(u - 1.0, v)?) * 0.5;
        let gy = (self.bilinear(u, v + 1.0)? - self.bilinear(u, v - 1.0)?) * 0.5;
        Some(Vector2::new(gx, gy))
    }
}

/// Depth raster in meters along the optical axis; 0 marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return invalid(format!("{} samples for a {width}x{height} depth image", data.len()));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// The depth at `(x, y)` if it is valid (positive and finite).
    pub fn valid(&self, x: usize, y: usize) -> Option<f64> {
        let d = self.get(x, y);
        (d > 0.0 && d.is_finite()).then_some(d)
    }
}
