//! Adaptive mask smoothing: a normalized Gaussian truncated to a fixed
//! square window, with replicate borders. σ is differentiable.

use crate::error::{Error, Result};
use crate::image::Mask;
use crate::scalar::Scalar;

/// Default window for 256-pixel inputs.
pub const DEFAULT_WINDOW: usize = 51;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothKernel<T> {
    max_size: usize,
    sigma: T,
}

impl<T: Scalar> SmoothKernel<T> {
    pub fn new(max_size: usize, sigma: T) -> Result<Self> {
        if max_size.is_multiple_of(2) {
            return Err(Error::field("max_size", format!("window must be odd, got {max_size}")));
        }
        if !(sigma > T::zero()) || !sigma.is_finite() {
            return Err(Error::field("sigma", format!("must be finite and positive, got {sigma}")));
        }
        Ok(Self { max_size, sigma })
    }

    pub fn with_sigma(sigma: T) -> Result<Self> {
        Self::new(DEFAULT_WINDOW, sigma)
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    fn radius(&self) -> isize {
        (self.max_size / 2) as isize
    }

    /// Normalized 1-D taps for offsets `-r..=r`.
    pub fn taps(&self) -> Vec<T> {
        let r = self.radius();
        let two_var = T::lit(2.0) * self.sigma * self.sigma;
        let raw: Vec<T> = (-r..=r)
            .map(|i| {
                let d = T::lit(i as f64);
                (-(d * d) / two_var).exp()
            })
            .collect();
        let total: T = raw.iter().copied().sum();
        raw.into_iter().map(|g| g / total).collect()
    }

    /// `∂(taps)/∂σ`: `k_i (i² − Σ_j k_j j²) / σ³`.
    pub fn taps_dsigma(&self) -> Vec<T> {
        let r = self.radius();
        let k = self.taps();
        let sq = |i: isize| T::lit((i * i) as f64);
        let second: T = (-r..=r).zip(&k).map(|(i, &w)| w * sq(i)).sum();
        let s3 = self.sigma * self.sigma * self.sigma;
        (-r..=r)
            .zip(&k)
            .map(|(i, &w)| w * (sq(i) - second) / s3)
            .collect()
    }
}

fn convolve_rows<T: Scalar>(src: &[T], w: usize, h: usize, taps: &[T]) -> Vec<T> {
    let r = (taps.len() / 2) as isize;
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = T::zero();
            for (t, &k) in taps.iter().enumerate() {
                let sx = (x as isize + t as isize - r).clamp(0, w as isize - 1) as usize;
                acc += k * row[sx];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn convolve_cols<T: Scalar>(src: &[T], w: usize, h: usize, taps: &[T]) -> Vec<T> {
    let r = (taps.len() / 2) as isize;
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        for (t, &k) in taps.iter().enumerate() {
            let sy = (y as isize + t as isize - r).clamp(0, h as isize - 1) as usize;
            let src_row = &src[sy * w..(sy + 1) * w];
            let dst_row = &mut out[y * w..(y + 1) * w];
            for (d, &s) in dst_row.iter_mut().zip(src_row) {
                *d += k * s;
            }
        }
    }
    out
}

fn convolve_rows_adjoint<T: Scalar>(grad: &[T], w: usize, h: usize, taps: &[T]) -> Vec<T> {
    let r = (taps.len() / 2) as isize;
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let g = grad[y * w + x];
            for (t, &k) in taps.iter().enumerate() {
                let sx = (x as isize + t as isize - r).clamp(0, w as isize - 1) as usize;
                out[y * w + sx] += k * g;
            }
        }
    }
    out
}

fn convolve_cols_adjoint<T: Scalar>(grad: &[T], w: usize, h: usize, taps: &[T]) -> Vec<T> {
    let r = (taps.len() / 2) as isize;
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        for (t, &k) in taps.iter().enumerate() {
            let sy = (y as isize + t as isize - r).clamp(0, h as isize - 1) as usize;
            for x in 0..w {
                out[sy * w + x] += k * grad[y * w + x];
            }
        }
    }
    out
}

/// Smooths a `w × h` plane.
pub(crate) fn smooth_plane<T: Scalar>(src: &[T], w: usize, h: usize, kernel: &SmoothKernel<T>) -> Vec<T> {
    let taps = kernel.taps();
    convolve_cols(&convolve_rows(src, w, h, &taps), w, h, &taps)
}

pub(crate) fn smooth_plane_dsigma<T: Scalar>(
    src: &[T],
    w: usize,
    h: usize,
    kernel: &SmoothKernel<T>,
) -> Vec<T> {
    let taps = kernel.taps();
    let dtaps = kernel.taps_dsigma();
    let a = convolve_cols(&convolve_rows(src, w, h, &dtaps), w, h, &taps);
    let b = convolve_cols(&convolve_rows(src, w, h, &taps), w, h, &dtaps);
    a.into_iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Transpose of [`smooth_plane`] (not the same operator at the borders,
/// where replicate padding folds weight onto edge pixels).
pub(crate) fn smooth_plane_adjoint<T: Scalar>(
    grad: &[T],
    w: usize,
    h: usize,
    kernel: &SmoothKernel<T>,
) -> Vec<T> {
    let taps = kernel.taps();
    convolve_rows_adjoint(&convolve_cols_adjoint(grad, w, h, &taps), w, h, &taps)
}

pub fn smooth_mask<T: Scalar>(mask: &Mask<T>, kernel: &SmoothKernel<T>) -> Mask<T> {
    let out = smooth_plane(mask.data(), mask.width(), mask.height(), kernel);
    // Convex combinations stay in [0, 1] up to rounding.
    Mask::from_raw(
        mask.width(),
        mask.height(),
        out.into_iter().map(|v| v.clamp01()).collect(),
    )
}

/// `∂ smooth_mask / ∂σ` per pixel.
pub fn smooth_mask_dsigma<T: Scalar>(mask: &Mask<T>, kernel: &SmoothKernel<T>) -> Vec<T> {
    smooth_plane_dsigma(mask.data(), mask.width(), mask.height(), kernel)
}
