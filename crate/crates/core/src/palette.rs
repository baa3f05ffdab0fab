//! Palette-based region masks: K-means main colors in Lab, then a Gaussian
//! soft assignment of every pixel to those colors, then mask smoothing.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::{lab_distance, srgb_pixel_to_lab};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::scalar::Scalar;
use crate::smooth::{smooth_mask, SmoothKernel};

pub const DEFAULT_TEMPERATURE: f64 = 10.0;
pub const DEFAULT_MASK_SIGMA: f64 = 2.0;
const MAX_ITERATIONS: usize = 100;
const MOVE_TOLERANCE: f64 = 1e-4;
const DISTINCT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Palette<T> {
    /// Lab centers, sorted by (L, a, b).
    pub colors: Vec<[T; 3]>,
    /// Set when the image has fewer distinct colors than requested.
    pub shortfall: bool,
}

/// `palette.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaletteFile {
    pub requested: usize,
    pub shortfall: bool,
    pub lab: Vec<[f64; 3]>,
}

impl<T: Scalar> Palette<T> {
    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn to_file(&self, requested: usize) -> PaletteFile {
        PaletteFile {
            requested,
            shortfall: self.shortfall,
            lab: self.colors.iter().map(|c| c.map(|v| v.to_f64_lossy())).collect(),
        }
    }
}

fn lex_cmp<T: Scalar>(a: &[T; 3], b: &[T; 3]) -> std::cmp::Ordering {
    for c in 0..3 {
        match a[c].partial_cmp(&b[c]) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Distinct pixel colors as (Lab, count), in first-appearance order.
fn distinct_colors<T: Scalar>(img: &Image<T>) -> Vec<([T; 3], usize)> {
    let mut index: HashMap<[u64; 3], usize> = HashMap::new();
    let mut out: Vec<([T; 3], usize)> = Vec::new();
    for p in img.pixels() {
        let key = p.map(|v| v.to_f64_lossy().to_bits());
        match index.get(&key) {
            Some(&i) => out[i].1 += 1,
            None => {
                index.insert(key, out.len());
                out.push((srgb_pixel_to_lab(p), 1));
            }
        }
    }
    out
}

fn sample_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut r = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Main colors by seeded K-means (k-means++ seeding) over pixel Lab values.
pub fn extract_palette<T: Scalar>(img: &Image<T>, k: usize, seed: u64) -> Result<Palette<T>> {
    if k == 0 {
        return Err(Error::field("k", "palette size must be at least 1"));
    }
    let points = distinct_colors(img);
    if points.len() <= k {
        let mut colors: Vec<[T; 3]> = points.into_iter().map(|(c, _)| c).collect();
        colors.sort_by(lex_cmp);
        let shortfall = colors.len() < k;
        return Ok(Palette { colors, shortfall });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts: Vec<f64> = points.iter().map(|(_, n)| *n as f64).collect();
    let mut centers = vec![points[sample_weighted(&mut rng, &counts)].0];
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|(p, _)| lab_distance(*p, centers[0]).to_f64_lossy().powi(2))
        .collect();
    while centers.len() < k {
        let weights: Vec<f64> = nearest.iter().zip(&counts).map(|(d, n)| d * n).collect();
        let next = points[sample_weighted(&mut rng, &weights)].0;
        centers.push(next);
        for (d, (p, _)) in nearest.iter_mut().zip(&points) {
            *d = d.min(lab_distance(*p, next).to_f64_lossy().powi(2));
        }
    }

    let mut assignment = vec![0usize; points.len()];
    for _ in 0..MAX_ITERATIONS {
        for (a, (p, _)) in assignment.iter_mut().zip(&points) {
            *a = centers
                .iter()
                .enumerate()
                .map(|(i, c)| (i, lab_distance(*p, *c)))
                .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap_or(std::cmp::Ordering::Equal))
                .map(|(i, _)| i)
                .unwrap_or(0);
        }
        let mut sums = vec![[T::zero(); 3]; k];
        let mut weights = vec![T::zero(); k];
        for (&a, (p, n)) in assignment.iter().zip(&points) {
            let w = T::from_usize_lossy(*n);
            for c in 0..3 {
                sums[a][c] += p[c] * w;
            }
            weights[a] += w;
        }
        let mut moved = T::zero();
        for i in 0..k {
            if weights[i] > T::zero() {
                let updated = sums[i].map(|s| s / weights[i]);
                moved = moved.max(lab_distance(updated, centers[i]));
                centers[i] = updated;
            }
        }
        if moved < T::lit(MOVE_TOLERANCE) {
            break;
        }
    }

    centers.sort_by(lex_cmp);
    let requested = centers.len();
    centers.dedup_by(|a, b| lab_distance(*a, *b) <= T::lit(DISTINCT_EPS));
    let shortfall = centers.len() < requested;
    Ok(Palette {
        colors: centers,
        shortfall,
    })
}

/// Soft assignment `w_i ∝ exp(−d_i² / temperature²)` over Lab distances,
/// normalized per pixel (a partition of unity). No smoothing.
pub fn palette_soft_weights<T: Scalar>(
    img: &Image<T>,
    palette: &Palette<T>,
    temperature: T,
) -> Result<Vec<Mask<T>>> {
    if palette.is_empty() {
        return Err(Error::field("palette", "at least one color is required"));
    }
    if !(temperature > T::zero()) || !temperature.is_finite() {
        return Err(Error::field("temperature", "must be finite and positive"));
    }
    let k = palette.len();
    let t2 = temperature * temperature;
    let mut planes = vec![Vec::with_capacity(img.pixel_count()); k];
    let mut d2 = vec![T::zero(); k];
    for p in img.pixels() {
        let lab = srgb_pixel_to_lab(p);
        for (d, c) in d2.iter_mut().zip(&palette.colors) {
            let dist = lab_distance(lab, *c);
            *d = dist * dist;
        }
        let min = d2.iter().copied().fold(T::infinity(), T::min);
        let weights: Vec<T> = d2.iter().map(|&d| (-(d - min) / t2).exp()).collect();
        let total: T = weights.iter().copied().sum();
        for (plane, w) in planes.iter_mut().zip(weights) {
            plane.push(w / total);
        }
    }
    Ok(planes
        .into_iter()
        .map(|data| Mask::from_raw(img.width(), img.height(), data))
        .collect())
}

/// Soft palette masks, each smoothed by `kernel` when given.
pub fn palette_to_masks<T: Scalar>(
    img: &Image<T>,
    palette: &Palette<T>,
    temperature: T,
    kernel: Option<&SmoothKernel<T>>,
) -> Result<Vec<Mask<T>>> {
    let soft = palette_soft_weights(img, palette, temperature)?;
    Ok(match kernel {
        Some(k) => soft.iter().map(|m| smooth_mask(m, k)).collect(),
        None => soft,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn halves() -> Image<f64> {
        Image::from_fn(8, 6, |x, _| if x < 4 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] })
    }

    #[test]
    fn two_half_planes_recover_both_colors() {
        let p = extract_palette(&halves(), 2, 7).unwrap();
        assert!(!p.shortfall);
        let red = srgb_pixel_to_lab([1.0, 0.0, 0.0]);
        let blue = srgb_pixel_to_lab([0.0, 0.0, 1.0]);
        let mut want = vec![red, blue];
        want.sort_by(lex_cmp);
        for (got, want) in p.colors.iter().zip(&want) {
            assert!(lab_distance(*got, *want) < 1e-6);
        }
    }

    #[test]
    fn constant_image_single_center_and_shortfall() {
        let img = Image::constant(5, 5, [0.2f64, 0.4, 0.6]);
        let p = extract_palette(&img, 1, 0).unwrap();
        assert_eq!(p.colors, vec![srgb_pixel_to_lab([0.2, 0.4, 0.6])]);
        let p3 = extract_palette(&img, 3, 0).unwrap();
        assert!(p3.shortfall);
        assert_eq!(p3.len(), 1);
        assert!(extract_palette(&img, 0, 0).is_err());
    }

    #[test]
    fn seeded_extraction_is_deterministic() {
        let img = Image::from_fn(16, 16, |x, y| {
            [(x * 13 % 16) as f64 / 15.0, (y * 7 % 16) as f64 / 15.0, ((x + y) % 5) as f64 / 4.0]
        });
        let a = extract_palette(&img, 4, 42).unwrap();
        let b = extract_palette(&img, 4, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn saturated_and_symmetric_assignment() {
        let black = srgb_pixel_to_lab([0.0, 0.0, 0.0]);
        let white = srgb_pixel_to_lab([1.0, 1.0, 1.0]);
        let palette = Palette {
            colors: vec![black, white],
            shortfall: false,
        };
        let img = Image::constant(2, 2, [0.0f64; 3]);
        let m = palette_soft_weights(&img, &palette, 10.0).unwrap();
        assert!(m[0].data().iter().all(|&v| v >= 0.999));
        // A pixel at L = 50 is equidistant from L = 0 and L = 100 on the gray axis.
        let mid = Palette {
            colors: vec![[0.0, 0.0, 0.0], [100.0, 0.0, 0.0]],
            shortfall: false,
        };
        let gray_l50 = {
            // find the sRGB gray whose L is 50 by bisection
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..200 {
                let m = 0.5 * (lo + hi);
                if srgb_pixel_to_lab([m; 3])[0] < 50.0 { lo = m } else { hi = m }
            }
            0.5 * (lo + hi)
        };
        let img = Image::constant(1, 1, [gray_l50; 3]);
        let m = palette_soft_weights(&img, &mid, 10.0).unwrap();
        assert!((m[0].data()[0] - 0.5).abs() < 1e-9 && (m[1].data()[0] - 0.5).abs() < 1e-9);
    }
}
