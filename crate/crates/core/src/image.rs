//! Pixel containers.
//!
//! [`Image`] holds interleaved, row-major RGB values (sRGB-encoded, nominally
//! in `[0, 1]`). [`Mask`] holds one soft weight in `[0, 1]` per pixel.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major `height × width × 3` buffer of sRGB-encoded values.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height * 3 {
            return Err(Error::InvalidImage(format!(
                "expected {} values for {width}x{height}x3, got {}",
                width * height * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image from a per-pixel closure `(x, y) -> [r, g, b]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [T; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, rgb: [T; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    /// Wraps a buffer that the caller guarantees to be well formed.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), width * height * 3);
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [T; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn clamped(&self) -> Self {
        Self::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|v| v.clamp01()).collect(),
        )
    }

    /// Scalar mean over every pixel and channel.
    pub fn mean(&self) -> T {
        let sum: T = self.data.iter().copied().sum();
        sum / T::from_usize_lossy(self.data.len())
    }

    pub fn ensure_same_dims<U>(&self, other: &Image<U>) -> Result<()> {
        if self.dims() != (other.width, other.height) {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: (other.width, other.height),
            });
        }
        Ok(())
    }

    /// Bilinear resample with half-pixel centers.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let xs = resample_taps::<T>(self.width, width);
        let ys = resample_taps::<T>(self.height, height);
        let mut data = Vec::with_capacity(width * height * 3);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let p00 = self.pixel(x0, y0);
                let p10 = self.pixel(x1, y0);
                let p01 = self.pixel(x0, y1);
                let p11 = self.pixel(x1, y1);
                for c in 0..3 {
                    let top = p00[c] + (p10[c] - p00[c]) * fx;
                    let bottom = p01[c] + (p11[c] - p01[c]) * fx;
                    data.push(top + (bottom - top) * fy);
                }
            }
        }
        Self::from_raw(width, height, data)
    }

    /// Dimensions after fitting the long edge into `cap` pixels, preserving
    /// aspect ratio. Images already within the cap keep their size.
    pub fn capped_dims(&self, cap: usize) -> (usize, usize) {
        let long = self.width.max(self.height);
        if long <= cap || cap == 0 {
            return self.dims();
        }
        let scale = cap as f64 / long as f64;
        let w = ((self.width as f64 * scale).round() as usize).max(1);
        let h = ((self.height as f64 * scale).round() as usize).max(1);
        (w, h)
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        )
    }
}

/// Soft per-pixel weight map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mask<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::field(
                "mask",
                format!("dimensions must be positive, got {width}x{height}"),
            ));
        }
        if data.len() != width * height {
            return Err(Error::field(
                "mask",
                format!("expected {} values, got {}", width * height, data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mask".into()));
        }
        if data.iter().any(|&v| v < T::zero() || v > T::one()) {
            return Err(Error::field("mask", "values must lie in [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp01());
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn constant(width: usize, height: usize, value: T) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    /// Wraps values that the caller guarantees to lie in `[0, 1]`.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    pub fn is_all(&self, value: T) -> bool {
        self.data.iter().all(|&v| v == value)
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|&v| (v * factor).clamp01()).collect(),
        )
    }

    /// Rounds every weight to the nearest 8-bit level (`v/255`).
    pub fn quantized_u8(&self) -> Self {
        let levels = T::lit(255.0);
        Self::from_raw(
            self.width,
            self.height,
            self.data
                .iter()
                .map(|&v| (v * levels).round() / levels)
                .collect(),
        )
    }

    /// Bilinear resample with half-pixel centers.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        if (width, height) == self.dims() {
            return self.clone();
        }
        Self::from_raw(
            width,
            height,
            resize_plane(&self.data, self.width, self.height, width, height),
        )
    }

    pub fn cast<U: Scalar>(&self) -> Mask<U> {
        Mask::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        )
    }
}

/// For every destination index, the two source indices and the blend
/// fraction used by half-pixel-center bilinear resampling.
pub(crate) fn resample_taps<T: Scalar>(src: usize, dst: usize) -> Vec<(usize, usize, T)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, T::lit(s - i0 as f64))
        })
        .collect()
}

/// Bilinear resample of a single-channel plane.
pub(crate) fn resize_plane<T: Scalar>(
    src: &[T],
    src_w: usize,
    src_h: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<T> {
    let xs = resample_taps::<T>(src_w, dst_w);
    let ys = resample_taps::<T>(src_h, dst_h);
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let v00 = src[y0 * src_w + x0];
            let v10 = src[y0 * src_w + x1];
            let v01 = src[y1 * src_w + x0];
            let v11 = src[y1 * src_w + x1];
            let top = v00 + (v10 - v00) * fx;
            let bottom = v01 + (v11 - v01) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    out
}

/// Adjoint of [`resize_plane`]: scatters a destination-sized gradient back
/// onto the source grid.
pub(crate) fn resize_plane_adjoint<T: Scalar>(
    grad: &[T],
    src_w: usize,
    src_h: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<T> {
    let xs = resample_taps::<T>(src_w, dst_w);
    let ys = resample_taps::<T>(src_h, dst_h);
    let mut out = vec![T::zero(); src_w * src_h];
    for (dy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (dx, &(x0, x1, fx)) in xs.iter().enumerate() {
            let g = grad[dy * dst_w + dx];
            let one = T::one();
            out[y0 * src_w + x0] += g * (one - fx) * (one - fy);
            out[y0 * src_w + x1] += g * fx * (one - fy);
            out[y1 * src_w + x0] += g * (one - fx) * fy;
            out[y1 * src_w + x1] += g * fx * fy;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(Image::<f64>::new(0, 1, vec![]).is_err());
        assert!(Image::<f64>::new(2, 1, vec![0.0; 5]).is_err());
        assert!(Image::<f64>::new(1, 1, vec![0.0, f64::NAN, 0.0]).is_err());
        assert!(Mask::<f64>::new(1, 1, vec![1.5]).is_err());
        assert!(Mask::<f64>::new(1, 2, vec![0.5]).is_err());
    }

    #[test]
    fn resize_keeps_constants_and_identity() {
        let img = Image::constant(5, 3, [0.2, 0.4, 0.6]);
        let up = img.resize_bilinear(11, 7);
        assert!(up.data().iter().zip([0.2f64, 0.4, 0.6].iter().cycle()).all(|(a, b)| (a - b).abs() < 1e-15));
        let m = Mask::from_fn(4, 4, |x, y| (x + y) as f64 / 6.0);
        assert_eq!(m.resize_bilinear(4, 4), m);
    }

    #[test]
    fn resize_adjoint_matches_dot_product_identity() {
        let (sw, sh, dw, dh) = (3, 4, 7, 5);
        let src: Vec<f64> = (0..sw * sh).map(|i| ((i * 37 % 11) as f64) / 11.0).collect();
        let g: Vec<f64> = (0..dw * dh).map(|i| ((i * 13 % 7) as f64) / 7.0 - 0.5).collect();
        let fwd = resize_plane(&src, sw, sh, dw, dh);
        let adj = resize_plane_adjoint(&g, sw, sh, dw, dh);
        let lhs: f64 = fwd.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = src.iter().zip(&adj).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn capped_dims_preserve_aspect() {
        let img = Image::constant(960, 540, [0.0f64; 3]);
        assert_eq!(img.capped_dims(480), (480, 270));
        assert_eq!(img.capped_dims(2000), (960, 540));
    }
}
