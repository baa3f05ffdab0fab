//! Synthetic images, masks and recipes shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsf_core::filters::{unit_increment, FilterContext};
use rsf_core::palette::{extract_palette, palette_to_masks, DEFAULT_MASK_SIGMA, DEFAULT_TEMPERATURE};
use rsf_core::smooth::SmoothKernel;
use rsf_core::{Channel, Channels, FilterArg, FilterKind, Image, Layer, Mask, Recipe};

/// Integer hash noise in `[0, 1)`; mirrored in `oracles/ssim_reference.py`.
pub fn hash_noise(x: usize, y: usize, c: usize) -> f64 {
    let mut h = (x as u64)
        .wrapping_mul(374_761_393)
        .wrapping_add((y as u64).wrapping_mul(668_265_263))
        .wrapping_add((c as u64).wrapping_mul(2_147_483_647))
        & 0xFFFF_FFFF;
    h = ((h ^ (h >> 13)).wrapping_mul(1_274_126_177)) & 0xFFFF_FFFF;
    h ^= h >> 16;
    h as f64 / 4_294_967_296.0
}

/// The textured pair used by the SSIM reference.
pub fn ssim_pair(w: usize, h: usize) -> (Image<f64>, Image<f64>) {
    let a = Image::from_fn(w, h, |x, y| {
        std::array::from_fn(|c| {
            let (xf, yf, cf) = (x as f64, y as f64, c as f64);
            (0.45 + 0.25 * (0.31 * xf + 0.17 * yf + 0.9 * cf).sin()
                + 0.1 * (0.11 * xf - 0.23 * yf).cos()
                + 0.1 * (hash_noise(x, y, c) - 0.5))
                .clamp(0.0, 1.0)
        })
    });
    let b = Image::from_fn(w, h, |x, y| {
        let p = a.pixel(x, y);
        std::array::from_fn(|c| (0.9 * p[c] + 0.05 + 0.08 * (hash_noise(x, y, c + 3) - 0.5)).clamp(0.0, 1.0))
    });
    (a, b)
}

/// Smooth multi-region scene: a few colored blobs over a gradient, with
/// mild noise, values kept inside `[0.05, 0.95]`.
pub fn scene(w: usize, h: usize, seed: u64) -> Image<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.6));
    let tilt: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.2..0.2));
    let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..3)
        .map(|_| {
            (
                [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)],
                rng.random_range(0.12..0.3),
                std::array::from_fn(|_| rng.random_range(0.1..0.9)),
            )
        })
        .collect();
    Image::from_fn(w, h, |x, y| {
        let u = (x as f64 + 0.5) / w as f64;
        let v = (y as f64 + 0.5) / h as f64;
        let mut px: [f64; 3] = std::array::from_fn(|c| bg[c] + tilt[c] * (u - v));
        for (center, radius, color) in &blobs {
            let d2 = (u - center[0]).powi(2) + (v - center[1]).powi(2);
            let wgt = (-d2 / (radius * radius)).exp();
            for c in 0..3 {
                px[c] = px[c] * (1.0 - wgt) + color[c] * wgt;
            }
        }
        std::array::from_fn(|c| (px[c] + 0.04 * (hash_noise(x, y, c + seed as usize) - 0.5)).clamp(0.05, 0.95))
    })
}

/// Uniformly random image in `[lo, hi]`.
pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: f64, hi: f64) -> Image<f64> {
    Image::from_fn(w, h, |_, _| std::array::from_fn(|_| rng.random_range(lo..=hi)))
}

pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Mask<f64> {
    Mask::from_fn(w, h, |_, _| rng.random_range(0.0..=1.0))
}

pub fn palette_masks(img: &Image<f64>, k: usize, seed: u64) -> Vec<Mask<f64>> {
    let palette = extract_palette(img, k, seed).unwrap();
    let kernel = SmoothKernel::with_sigma(DEFAULT_MASK_SIGMA).unwrap();
    palette_to_masks(img, &palette, DEFAULT_TEMPERATURE, Some(&kernel)).unwrap()
}

pub fn random_theta(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let mag = rng.random_range(lo..=hi);
    if rng.random_bool(0.5) {
        mag
    } else {
        -mag
    }
}

pub fn random_kind(rng: &mut ChaCha8Rng) -> FilterKind {
    *FilterKind::all().choose(rng).unwrap()
}

/// Per-channel-or-tied variety of every kind, for oracles.
pub fn any_kind(rng: &mut ChaCha8Rng) -> FilterKind {
    match rng.random_range(0..8) {
        0 => FilterKind::Contrast,
        1 => FilterKind::Saturation,
        2 => FilterKind::Hue,
        3 => FilterKind::Temperature,
        4 => FilterKind::Shadows(random_channels(rng)),
        5 => FilterKind::Midtones(random_channels(rng)),
        6 => FilterKind::Highlights(random_channels(rng)),
        _ => FilterKind::Shift(*[Channel::R, Channel::G, Channel::B].choose(rng).unwrap()),
    }
}

fn random_channels(rng: &mut ChaCha8Rng) -> Channels {
    match rng.random_range(0..4) {
        0 => Channels::Tied,
        1 => Channels::Only(Channel::R),
        2 => Channels::Only(Channel::G),
        _ => Channels::Only(Channel::B),
    }
}

/// Condition number of the Gram matrix of the masked unit bases of
/// `recipe` on `img`, each basis on the branch of its θ.
pub fn basis_condition(img: &Image<f64>, recipe: &Recipe<f64>) -> f64 {
    let (w, h) = img.dims();
    let ctx = FilterContext::new(img);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for layer in &recipe.layers {
        let mask = layer.effective_mask(w, h, recipe.window).unwrap();
        for arg in &layer.args {
            let mut u = unit_increment(arg.kind, arg.theta < 0.0, &ctx, &recipe.constants);
            if let Some(m) = &mask {
                u.iter_mut().enumerate().for_each(|(i, v)| *v *= m.data()[i / 3]);
            }
            cols.push(u);
        }
    }
    let n = cols.len();
    let gram = DMatrix::from_fn(n, n, |i, j| cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum::<f64>());
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// A fitting problem with a known answer.
pub struct RoundTrip {
    pub input: Image<f64>,
    pub masks: Vec<Mask<f64>>,
    pub truth: Recipe<f64>,
    /// Filters per mask layer, then the global filters.
    pub per_layer: Vec<Vec<FilterKind>>,
    pub global: Vec<FilterKind>,
}

/// Samples a well-conditioned recipe over 1–3 palette masks of a synthetic
/// scene, with `|θ| ∈ [0.1, 0.5]`. Candidates whose bases are nearly
/// collinear (no unique answer) or that clamp most of the image are redrawn.
pub fn round_trip_problem(size: usize, seed: u64) -> RoundTrip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = FilterKind::tied_set();
    loop {
        let input = scene(size, size, rng.random());
        let k = rng.random_range(1..=3);
        let masks = palette_masks(&input, k, rng.random());
        let mut layers = Vec::new();
        let mut per_layer = Vec::new();
        for m in &masks {
            let n = rng.random_range(1..=3);
            let kinds: Vec<FilterKind> = pool.choose_multiple(&mut rng, n).copied().collect();
            layers.push(Layer::region(
                m.clone(),
                kinds.iter().map(|&kd| FilterArg::new(kd, random_theta(&mut rng, 0.1, 0.5))).collect(),
            ));
            per_layer.push(kinds);
        }
        let global = if rng.random_bool(0.5) {
            vec![*FilterKind::shift_set().choose(&mut rng).unwrap()]
        } else {
            vec![]
        };
        if !global.is_empty() {
            layers.push(Layer::global(
                global.iter().map(|&kd| FilterArg::new(kd, random_theta(&mut rng, 0.05, 0.2))).collect(),
            ));
        }
        let truth = Recipe::new(layers);
        if basis_condition(&input, &truth) > 1e4 {
            continue;
        }
        let inc = rsf_core::render::composite_increment(&input, &truth).unwrap();
        let interior = input
            .data()
            .iter()
            .zip(&inc)
            .filter(|(x, d)| (0.0..=1.0).contains(&(*x + *d)))
            .count();
        if (interior as f64) < 0.7 * inc.len() as f64 {
            continue;
        }
        return RoundTrip {
            input,
            masks,
            truth,
            per_layer,
            global,
        };
    }
}
