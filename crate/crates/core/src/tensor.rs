//! Image, mask and single-channel grid containers plus the resampling helpers
//! shared by the dataset, corruption and bridge layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHANNELS: usize = 3;
pub const MIN_IMAGE_SIDE: usize = 8;

/// Spatial extent of an image or mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// RGB image with values in `[0, 1]`, stored row-major as `[height][width][3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> ImageTensor<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height < MIN_IMAGE_SIDE || width < MIN_IMAGE_SIDE {
            return Err(Error::InvalidArgument(format!(
                "image sides must be at least {MIN_IMAGE_SIDE}, got {height}x{width}"
            )));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::shape(
                None,
                height * width * CHANNELS,
                data.len(),
            ));
        }
        if let Some(bad) = data.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::InvalidArgument(format!(
                "image value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            shape: Shape::new(height, width),
            data,
        })
    }

    /// Constant-valued image.
    pub fn filled(height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * CHANNELS])
    }

    /// Builds an image from a per-pixel colour function.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> [T; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    /// Internal constructor for values already known to be in range.
    pub(crate) fn from_raw(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), shape.pixels() * CHANNELS);
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [T; 3] {
        let i = (y * self.shape.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn convert<U: Scalar>(&self) -> ImageTensor<U> {
        ImageTensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    /// Bilinear resampling with half-pixel centres and edge clamping.
    pub fn resize_bilinear(&self, target: Shape) -> ImageTensor<T> {
        if target == self.shape {
            return self.clone();
        }
        let mut out = Vec::with_capacity(target.pixels() * CHANNELS);
        let ys = axis_weights(self.shape.height, target.height);
        let xs = axis_weights(self.shape.width, target.width);
        for &(y0, y1, wy) in &ys {
            for &(x0, x1, wx) in &xs {
                for c in 0..CHANNELS {
                    let at = |y: usize, x: usize| {
                        self.data[(y * self.shape.width + x) * CHANNELS + c].to_f64_lossy()
                    };
                    let top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
                    let bottom = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
                    let v = top * (1.0 - wy) + bottom * wy;
                    out.push(T::lit(v.clamp(0.0, 1.0)));
                }
            }
        }
        ImageTensor::from_raw(target, out)
    }

    /// Rounds every value onto the 8-bit grid (round half up).
    pub fn quantize_u8(&self) -> ImageTensor<T> {
        ImageTensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| T::lit(quantize_unit(v.to_f64_lossy()) as f64 / 255.0))
                .collect(),
        }
    }
}

/// Maps a `[0, 1]` value to a byte, rounding half up.
pub fn quantize_unit(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor().min(255.0) as u8
}

/// Per-output-index source neighbours and interpolation weight for one axis.
pub(crate) fn axis_weights(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            let w = if hi == lo { 0.0 } else { pos - lo as f64 };
            (lo, hi, w)
        })
        .collect()
}

/// Binary mask; `true` marks pixels belonging to the region.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    shape: Shape,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(None, height * width, data.len()));
        }
        Ok(Self {
            shape: Shape::new(height, width),
            data,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![false; shape.pixels()],
        }
    }

    pub fn ones(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![true; shape.pixels()],
        }
    }

    pub fn from_fn(shape: Shape, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(shape.pixels());
        for y in 0..shape.height {
            for x in 0..shape.width {
                data.push(f(y, x));
            }
        }
        Self { shape, data }
    }

    /// Thresholds 8-bit intensities: values `>= 128` become foreground.
    pub fn from_luma8(shape: Shape, bytes: &[u8]) -> Result<Self> {
        Self::new(
            shape.height,
            shape.width,
            bytes.iter().map(|&b| b >= 128).collect(),
        )
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.shape.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty_region(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            shape: self.shape,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    /// Nearest-neighbour resampling; keeps the mask strictly binary.
    pub fn resize_nearest(&self, target: Shape) -> BinaryMask {
        if target == self.shape {
            return self.clone();
        }
        let sy = self.shape.height as f64 / target.height as f64;
        let sx = self.shape.width as f64 / target.width as f64;
        BinaryMask::from_fn(target, |y, x| {
            let ys = (((y as f64 + 0.5) * sy).floor() as usize).min(self.shape.height - 1);
            let xs = (((x as f64 + 0.5) * sx).floor() as usize).min(self.shape.width - 1);
            self.get(ys, xs)
        })
    }

    /// Bilinear resampling of the 0/1 indicator followed by a 0.5 re-threshold.
    pub fn resize_rethreshold(&self, target: Shape) -> BinaryMask {
        if target == self.shape {
            return self.clone();
        }
        let grid = Grid::new(
            self.shape.height,
            self.shape.width,
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask grid shape");
        let resized = grid.resize_bilinear(target);
        BinaryMask::from_fn(target, |y, x| resized.get(y, x) >= 0.5)
    }

    pub fn to_luma8(&self) -> Vec<u8> {
        self.data.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }

    pub(crate) fn check_shape(&self, expected: Shape, context: &str) -> Result<()> {
        if self.shape != expected {
            return Err(Error::shape(Some(context.to_string()), expected, self.shape));
        }
        Ok(())
    }
}

/// Single-channel real-valued grid (raw saliency, activation cells).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Grid<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(Error::shape(None, height * width, data.len()));
        }
        Ok(Self {
            shape: Shape::new(height, width),
            data,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.pixels()],
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.shape.width + x]
    }

    pub fn resize_bilinear(&self, target: Shape) -> Grid<T> {
        if target == self.shape {
            return self.clone();
        }
        let ys = axis_weights(self.shape.height, target.height);
        let xs = axis_weights(self.shape.width, target.width);
        let mut out = Vec::with_capacity(target.pixels());
        for &(y0, y1, wy) in &ys {
            for &(x0, x1, wx) in &xs {
                let at = |y: usize, x: usize| self.get(y, x).to_f64_lossy();
                let top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
                let bottom = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
                out.push(T::lit(top * (1.0 - wy) + bottom * wy));
            }
        }
        Grid {
            shape: target,
            data: out,
        }
    }
}

/// Max-normalised saliency map in `[0, 1]`; the maximum is exactly 1 unless
/// the map is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap<T> {
    grid: Grid<T>,
}

impl<T: Scalar> SaliencyMap<T> {
    /// Rectifies negative and non-finite entries, then divides by the maximum.
    pub fn normalize(raw: Grid<T>) -> Self {
        let shape = raw.shape;
        let mut data = raw.data;
        for v in data.iter_mut() {
            if !v.is_finite() || *v < T::zero() {
                *v = T::zero();
            }
        }
        let max = data.iter().copied().fold(T::zero(), T::max);
        if max > T::zero() {
            // x / x is exactly 1 in IEEE arithmetic, so the argmax lands on 1.
            for v in data.iter_mut() {
                *v /= max;
            }
        }
        Self {
            grid: Grid { shape, data },
        }
    }

    /// Wraps values that are already normalised, checking the invariant.
    pub fn from_normalized(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        let grid = Grid::new(height, width, data)?;
        if grid
            .data
            .iter()
            .any(|v| !(*v >= T::zero() && *v <= T::one()))
        {
            return Err(Error::InvalidArgument(
                "saliency values must lie in [0, 1]".into(),
            ));
        }
        let max = grid.data.iter().copied().fold(T::zero(), T::max);
        if max != T::zero() && max != T::one() {
            return Err(Error::InvalidArgument(format!(
                "saliency map maximum must be 1 or the map all-zero, got {max}"
            )));
        }
        Ok(Self { grid })
    }

    pub fn shape(&self) -> Shape {
        self.grid.shape
    }

    pub fn data(&self) -> &[T] {
        &self.grid.data
    }

    pub fn get(&self, y: usize, x: usize) -> T {
        self.grid.get(y, x)
    }

    pub fn is_zero(&self) -> bool {
        self.grid.data.iter().all(|v| *v == T::zero())
    }

    pub fn resize_bilinear(&self, target: Shape) -> SaliencyMap<T> {
        SaliencyMap::normalize(self.grid.resize_bilinear(target))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range_and_small() {
        assert!(ImageTensor::<f32>::filled(8, 8, 1.5).is_err());
        assert!(ImageTensor::<f32>::filled(4, 8, 0.5).is_err());
        assert!(ImageTensor::<f32>::new(8, 8, vec![0.0; 10]).is_err());
        assert!(ImageTensor::<f32>::filled(8, 8, f32::NAN).is_err());
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let img = ImageTensor::<f64>::from_fn(8, 8, |y, x| {
            let v = (y * 8 + x) as f64 / 64.0;
            [v, 1.0 - v, 0.5]
        })
        .unwrap();
        assert_eq!(img.resize_bilinear(img.shape()), img);
        let c = ImageTensor::<f64>::filled(8, 8, 0.25).unwrap();
        let up = c.resize_bilinear(Shape::new(20, 13));
        assert!(up.data().iter().all(|v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn upsampling_aligned_cells_rethresholds_exactly_on_edges() {
        // 4x4 grid with the left two columns lit, upsampled by 4.
        let grid = Grid::<f64>::new(
            4,
            4,
            (0..16).map(|i| if i % 4 < 2 { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let up = grid.resize_bilinear(Shape::new(16, 16));
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(up.get(y, x) >= 0.5, x < 8, "({y},{x})");
            }
        }
    }

    #[test]
    fn nearest_resize_stays_binary_and_preserves_halves() {
        let m = BinaryMask::from_fn(Shape::new(8, 8), |_, x| x < 4);
        let r = m.resize_nearest(Shape::new(16, 16));
        assert_eq!(r.count(), 128);
        assert!(r.get(0, 7) && !r.get(0, 8));
    }

    #[test]
    fn saliency_normalization_conventions() {
        let zero = SaliencyMap::normalize(Grid::<f32>::zeros(Shape::new(3, 3)));
        assert!(zero.is_zero());
        let raw = Grid::new(1, 4, vec![-1.0f32, 0.3, 3.0, 1.5]).unwrap();
        let s = SaliencyMap::normalize(raw);
        assert_eq!(s.data(), &[0.0, 0.1, 1.0, 0.5]);
    }

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize_unit(0.5), 128);
        assert_eq!(quantize_unit(1.0), 255);
        assert_eq!(quantize_unit(0.0), 0);
        assert_eq!(quantize_unit(127.5 / 255.0), 128);
    }
}
