//! sRGB (D65) to CIELAB conversion and the CIE76 color difference.

use crate::error::Result;
use crate::image::Image;
use crate::scalar::Scalar;

/// Linear sRGB to XYZ (D65, 2° observer).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// Reference white taken as the image of RGB (1, 1, 1), so white maps to
/// a = b = 0 exactly.
const WHITE: [f64; 3] = [
    RGB_TO_XYZ[0][0] + RGB_TO_XYZ[0][1] + RGB_TO_XYZ[0][2],
    RGB_TO_XYZ[1][0] + RGB_TO_XYZ[1][1] + RGB_TO_XYZ[1][2],
    RGB_TO_XYZ[2][0] + RGB_TO_XYZ[2][1] + RGB_TO_XYZ[2][2],
];

const DELTA: f64 = 6.0 / 29.0;

/// Row-major `height × width × 3` buffer of (L, a, b) triples.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Scalar> LabImage<T> {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn pixels(&self) -> impl Iterator<Item = [T; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }
}

#[inline]
fn srgb_to_linear<T: Scalar>(c: T) -> T {
    if c <= T::lit(0.04045) {
        c / T::lit(12.92)
    } else {
        ((c + T::lit(0.055)) / T::lit(1.055)).powf(T::lit(2.4))
    }
}

#[inline]
fn srgb_to_linear_deriv<T: Scalar>(c: T) -> T {
    if c <= T::lit(0.04045) {
        T::one() / T::lit(12.92)
    } else {
        T::lit(2.4 / 1.055) * ((c + T::lit(0.055)) / T::lit(1.055)).powf(T::lit(1.4))
    }
}

#[inline]
fn lab_f<T: Scalar>(t: T) -> T {
    if t > T::lit(DELTA * DELTA * DELTA) {
        t.cbrt()
    } else {
        t / T::lit(3.0 * DELTA * DELTA) + T::lit(4.0 / 29.0)
    }
}

#[inline]
fn lab_f_deriv<T: Scalar>(t: T) -> T {
    if t > T::lit(DELTA * DELTA * DELTA) {
        T::one() / (T::lit(3.0) * t.cbrt() * t.cbrt())
    } else {
        T::one() / T::lit(3.0 * DELTA * DELTA)
    }
}

/// Converts one sRGB-encoded pixel to CIELAB. Inputs are clamped to `[0, 1]`.
pub fn srgb_pixel_to_lab<T: Scalar>(rgb: [T; 3]) -> [T; 3] {
    let lin = rgb.map(|c| srgb_to_linear(c.clamp01()));
    let xyz = |row: usize| {
        let m = &RGB_TO_XYZ[row];
        (T::lit(m[0]) * lin[0] + T::lit(m[1]) * lin[1] + T::lit(m[2]) * lin[2]) / T::lit(WHITE[row])
    };
    let fx = lab_f(xyz(0));
    let fy = lab_f(xyz(1));
    let fz = lab_f(xyz(2));
    [
        T::lit(116.0) * fy - T::lit(16.0),
        T::lit(500.0) * (fx - fy),
        T::lit(200.0) * (fy - fz),
    ]
}

/// Normalized lightness `L/100` of one pixel.
#[inline]
pub fn pixel_luminance<T: Scalar>(rgb: [T; 3]) -> T {
    let lin = rgb.map(|c| srgb_to_linear(c.clamp01()));
    let m = &RGB_TO_XYZ[1];
    let y = T::lit(m[0]) * lin[0] + T::lit(m[1]) * lin[1] + T::lit(m[2]) * lin[2];
    (T::lit(116.0) * lab_f(y / T::lit(WHITE[1])) - T::lit(16.0)) / T::lit(100.0)
}

/// Gradient of [`pixel_luminance`] with respect to the three sRGB inputs.
/// Channels outside `[0, 1]` sit on the input clamp and get zero gradient.
pub fn pixel_luminance_grad<T: Scalar>(rgb: [T; 3]) -> [T; 3] {
    let lin = rgb.map(|c| srgb_to_linear(c.clamp01()));
    let m = &RGB_TO_XYZ[1];
    let y = T::lit(m[0]) * lin[0] + T::lit(m[1]) * lin[1] + T::lit(m[2]) * lin[2];
    let outer = T::lit(1.16) * lab_f_deriv(y / T::lit(WHITE[1])) / T::lit(WHITE[1]);
    let mut g = [T::zero(); 3];
    for c in 0..3 {
        if rgb[c] >= T::zero() && rgb[c] <= T::one() {
            g[c] = outer * T::lit(m[c]) * srgb_to_linear_deriv(rgb[c]);
        }
    }
    g
}

pub fn srgb_to_lab<T: Scalar>(img: &Image<T>) -> LabImage<T> {
    let mut data = Vec::with_capacity(img.data().len());
    for p in img.pixels() {
        data.extend_from_slice(&srgb_pixel_to_lab(p));
    }
    LabImage {
        width: img.width(),
        height: img.height(),
        data,
    }
}

/// `L(X)/100` per pixel, row-major.
pub fn luminance_map<T: Scalar>(img: &Image<T>) -> Vec<T> {
    img.pixels().map(pixel_luminance).collect()
}

#[inline]
pub fn lab_distance<T: Scalar>(a: [T; 3], b: [T; 3]) -> T {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    let d2 = a[2] - b[2];
    (d0 * d0 + d1 * d1 + d2 * d2).sqrt()
}

/// Mean CIE76 ΔE_ab over pixels.
pub fn delta_e_ab<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    a.ensure_same_dims(b)?;
    let total: T = a
        .pixels()
        .zip(b.pixels())
        .map(|(p, q)| lab_distance(srgb_pixel_to_lab(p), srgb_pixel_to_lab(q)))
        .sum();
    Ok(total / T::from_usize_lossy(a.pixel_count()))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Values from tests/oracles/cie_lab.py.
    const GRAY_HALF_L: f64 = 53.3889647411;
    const RED_LAB: [f64; 3] = [53.2407918333, 80.0924695448, 67.2031925365];
    const BLUE_LAB: [f64; 3] = [32.2970093230, 79.1875267843, -107.8601645298];
    const MIXED_LAB: [f64; 3] = [60.9297319082, -3.0568385040, -46.8419003499];

    #[test]
    fn white_and_black_anchor_the_scale() {
        let w = srgb_pixel_to_lab([1.0f64; 3]);
        assert!((w[0] - 100.0).abs() < 1e-9);
        assert!(w[1].abs() <= 1e-3 && w[2].abs() <= 1e-3);
        let k = srgb_pixel_to_lab([0.0f64; 3]);
        assert_eq!(k, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn matches_reference_cie_formulas() {
        let g = srgb_pixel_to_lab([0.5f64; 3]);
        assert!((g[0] - GRAY_HALF_L).abs() < 1e-3);
        for (rgb, want) in [
            ([1.0, 0.0, 0.0], RED_LAB),
            ([0.0, 0.0, 1.0], BLUE_LAB),
            ([0.2, 0.6, 0.9], MIXED_LAB),
        ] {
            let got = srgb_pixel_to_lab(rgb);
            for c in 0..3 {
                assert!((got[c] - want[c]).abs() < 1e-6, "{rgb:?} {got:?}");
            }
        }
    }

    #[test]
    fn luminance_map_extremes_and_composition() {
        let white = Image::constant(3, 2, [1.0f64; 3]);
        assert!(luminance_map(&white).iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let black = Image::constant(3, 2, [0.0f64; 3]);
        assert!(luminance_map(&black).iter().all(|&v| v == 0.0));
        let gray = Image::constant(2, 2, [0.5f64; 3]);
        let lab = srgb_to_lab(&gray);
        for (l, p) in luminance_map(&gray).iter().zip(lab.pixels()) {
            assert_eq!(*l, p[0] / 100.0);
        }
    }

    #[test]
    fn luminance_is_monotone_in_gray_level() {
        let mut prev = -1.0;
        for i in 0..=255 {
            let v = i as f64 / 255.0;
            let l = pixel_luminance([v, v, v]);
            assert!(l > prev);
            prev = l;
        }
    }

    #[test]
    fn luminance_gradient_matches_finite_differences() {
        let p = [0.31f64, 0.02, 0.77];
        let g = pixel_luminance_grad(p);
        for c in 0..3 {
            let h = 1e-6;
            let mut hi = p;
            let mut lo = p;
            hi[c] += h;
            lo[c] -= h;
            let fd = (pixel_luminance(hi) - pixel_luminance(lo)) / (2.0 * h);
            assert!((fd - g[c]).abs() < 1e-7 * fd.abs().max(1.0), "{c}: {fd} vs {}", g[c]);
        }
    }

    #[test]
    fn delta_e_white_black_is_100() {
        let w = Image::constant(4, 4, [1.0f64; 3]);
        let k = Image::constant(4, 4, [0.0f64; 3]);
        assert!((delta_e_ab(&w, &k).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(delta_e_ab(&w, &w).unwrap(), 0.0);
        assert!(delta_e_ab(&w, &Image::constant(3, 4, [0.0; 3])).is_err());
    }

    #[test]
    fn lab_shape_is_preserved() {
        let img = Image::constant(7, 3, [0.1f32, 0.2, 0.3]);
        let lab = srgb_to_lab(&img);
        assert_eq!((lab.width(), lab.height()), (7, 3));
        assert_eq!(lab.data().len(), 63);
    }
}
