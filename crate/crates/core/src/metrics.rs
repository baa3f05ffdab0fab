//! Fidelity metrics: PSNR, single-scale SSIM, ΔE_ab and soft Dice.

use serde::{Deserialize, Serialize};

use crate::color::delta_e_ab;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::scalar::Scalar;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    /// `None` when either side is below the SSIM window size.
    pub ssim: Option<f64>,
    pub delta_e: f64,
}

impl MetricReport {
    pub fn compute<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<Self> {
        let ssim = match ssim(a, b) {
            Ok(v) => Some(v.to_f64_lossy()),
            Err(Error::ImageTooSmall { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            psnr: psnr(a, b)?.to_f64_lossy(),
            ssim,
            delta_e: delta_e_ab(a, b)?.to_f64_lossy(),
        })
    }
}

pub fn mse<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    a.ensure_same_dims(b)?;
    let sum: T = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(sum / T::from_usize_lossy(a.data().len()))
}

/// `10·log10(1/MSE)` with peak 1.0, capped at 99 dB.
pub fn psnr<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    let m = mse(a, b)?;
    let cap = T::lit(PSNR_CAP_DB);
    if m <= T::zero() {
        return Ok(cap);
    }
    Ok((-T::lit(10.0) * m.log10()).min(cap))
}

fn gaussian_taps<T: Scalar>() -> Vec<T> {
    let r = (SSIM_WINDOW / 2) as isize;
    let raw: Vec<T> = (-r..=r)
        .map(|i| T::lit((-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()))
        .collect();
    let total: T = raw.iter().copied().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable 'valid' filtering of a `w × h` plane.
fn filter_valid<T: Scalar>(src: &[T], w: usize, h: usize, taps: &[T]) -> Vec<T> {
    let n = taps.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut rows = vec![T::zero(); ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(t, &k)| k * src[y * w + x + t]).sum();
        }
    }
    let mut out = vec![T::zero(); ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(t, &k)| k * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane<T: Scalar>(x: &[T], y: &[T], w: usize, h: usize, taps: &[T]) -> T {
    let c1 = T::lit(SSIM_K1 * SSIM_K1);
    let c2 = T::lit(SSIM_K2 * SSIM_K2);
    let prod = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&u, &v)| u * v).collect::<Vec<T>>();
    let mx = filter_valid(x, w, h, taps);
    let my = filter_valid(y, w, h, taps);
    let sxx = filter_valid(&prod(x, x), w, h, taps);
    let syy = filter_valid(&prod(y, y), w, h, taps);
    let sxy = filter_valid(&prod(x, y), w, h, taps);
    let two = T::lit(2.0);
    let total: T = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((two * ux * uy + c1) * (two * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    total / T::from_usize_lossy(mx.len())
}

/// Mean SSIM (11×11 Gaussian window, σ = 1.5, K1 = 0.01, K2 = 0.03, peak 1),
/// computed per channel over the valid region and averaged.
pub fn ssim<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    a.ensure_same_dims(b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min: SSIM_WINDOW,
        });
    }
    let taps = gaussian_taps::<T>();
    let plane = |img: &Image<T>, c: usize| img.data().iter().skip(c).step_by(3).copied().collect::<Vec<T>>();
    let total: T = (0..3)
        .map(|c| ssim_plane(&plane(a, c), &plane(b, c), w, h, &taps))
        .sum();
    Ok(total / T::lit(3.0))
}

/// Soft Dice score `2Σab / (Σa² + Σb²)`; two empty masks score 1.
pub fn dice<T: Scalar>(a: &Mask<T>, b: &Mask<T>) -> Result<T> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    let mut inter = T::zero();
    let mut aa = T::zero();
    let mut bb = T::zero();
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += x * y;
        aa += x * x;
        bb += y * y;
    }
    let denom = aa + bb;
    if denom == T::zero() {
        return Ok(T::one());
    }
    Ok(T::lit(2.0) * inter / denom)
}
