//! Parallel compositing of masked filter increments, plus the sequential
//! compositor used as a baseline.
//!
//! Parallel: `Y = clamp(X + Σ_layers Σ_args ΔF(θ, X) ⊙ M̃)`, every increment
//! read from the original `X`. Sequential: each layer sees the previous
//! layer's clamped output.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filters::{filter_increment, FilterArg, FilterConstants, FilterContext};
use crate::image::{Image, Mask};
use crate::scalar::Scalar;
use crate::smooth::{smooth_mask, SmoothKernel, DEFAULT_WINDOW};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerMask<T> {
    /// `M ≡ 1`.
    Global,
    /// Stored at any resolution; resized bilinearly to the image.
    Region(Mask<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub mask: LayerMask<T>,
    pub args: Vec<FilterArg<T>>,
    /// Gaussian smoothing σ in pixels; `0` disables smoothing.
    pub sigma: T,
}

impl<T: Scalar> Layer<T> {
    pub fn global(args: Vec<FilterArg<T>>) -> Self {
        Self {
            mask: LayerMask::Global,
            args,
            sigma: T::zero(),
        }
    }

    pub fn region(mask: Mask<T>, args: Vec<FilterArg<T>>) -> Self {
        Self {
            mask: LayerMask::Region(mask),
            args,
            sigma: T::zero(),
        }
    }

    pub fn with_sigma(mut self, sigma: T) -> Self {
        self.sigma = sigma;
        self
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.args.is_empty() {
            return Err(Error::field(format!("layers[{index}].filters"), "at least one filter is required"));
        }
        for (j, arg) in self.args.iter().enumerate() {
            if !arg.theta.is_finite() {
                return Err(Error::NonFinite(format!("layers[{index}].filters[{j}].theta")));
            }
        }
        if !self.sigma.is_finite() || self.sigma < T::zero() {
            return Err(Error::field(format!("layers[{index}].sigma"), "must be finite and non-negative"));
        }
        Ok(())
    }

    /// The mask actually multiplied into the increments at `width × height`:
    /// resized, then smoothed when σ > 0. `None` for global layers.
    pub fn effective_mask(&self, width: usize, height: usize, window: usize) -> Result<Option<Mask<T>>> {
        let LayerMask::Region(mask) = &self.mask else {
            return Ok(None);
        };
        let resized = mask.resize_bilinear(width, height);
        if self.sigma > T::zero() {
            let kernel = SmoothKernel::new(window, self.sigma)?;
            Ok(Some(smooth_mask(&resized, &kernel)))
        } else {
            Ok(Some(resized))
        }
    }

    /// Arguments in canonical order (by kind, then θ).
    fn canonical_args(&self) -> Vec<FilterArg<T>> {
        let mut args = self.args.clone();
        args.sort_by(|a, b| {
            a.kind
                .cmp(&b.kind)
                .then(a.theta.partial_cmp(&b.theta).unwrap_or(Ordering::Equal))
        });
        args
    }
}

/// A complete white-box edit.
#[derive(Debug, Clone, PartialEq)]
pub struct Recipe<T> {
    pub layers: Vec<Layer<T>>,
    pub constants: FilterConstants<T>,
    /// Required image size, or `None` for any.
    pub canvas: Option<(usize, usize)>,
    /// Smoothing window (odd pixel count).
    pub window: usize,
}

impl<T: Scalar> Default for Recipe<T> {
    fn default() -> Self {
        Self::new(Vec::new())
    }
}

impl<T: Scalar> Recipe<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self {
            layers,
            constants: FilterConstants::default(),
            canvas: None,
            window: DEFAULT_WINDOW,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        if self.window.is_multiple_of(2) {
            return Err(Error::field("window", "smoothing window must be odd"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate(i)?;
        }
        Ok(())
    }

    fn check_canvas(&self, img: &Image<T>) -> Result<()> {
        match self.canvas {
            Some(dims) if dims != img.dims() => Err(Error::DimensionMismatch {
                expected: dims,
                found: img.dims(),
            }),
            _ => Ok(()),
        }
    }

    /// Same recipe with every θ set to zero.
    pub fn zeroed(&self) -> Self {
        let mut out = self.clone();
        for layer in &mut out.layers {
            for arg in &mut layer.args {
                arg.theta = T::zero();
            }
        }
        out
    }
}

/// Masked increment `Σ_args ΔF(θ, X) ⊙ M̃` of one layer, read from the
/// original image in `ctx`.
pub fn layer_contribution<T: Scalar>(
    ctx: &FilterContext<'_, T>,
    layer: &Layer<T>,
    constants: &FilterConstants<T>,
    window: usize,
) -> Result<Vec<T>> {
    let (w, h) = ctx.image.dims();
    let mask = layer.effective_mask(w, h, window)?;
    let mut acc = vec![T::zero(); w * h * 3];
    for arg in layer.canonical_args() {
        let inc = filter_increment(arg.kind, arg.theta, ctx, constants)?;
        match &mask {
            None => acc.iter_mut().zip(&inc).for_each(|(a, &d)| *a += d),
            Some(m) => {
                for (p, &mv) in m.data().iter().enumerate() {
                    for c in 0..3 {
                        acc[p * 3 + c] += inc[p * 3 + c] * mv;
                    }
                }
            }
        }
    }
    Ok(acc)
}

/// Total increment of all layers before it is added to `X`. Per value, the
/// layer contributions are summed in ascending order, so the result does
/// not depend on layer order.
pub fn composite_increment<T: Scalar>(img: &Image<T>, recipe: &Recipe<T>) -> Result<Vec<T>> {
    recipe.validate()?;
    recipe.check_canvas(img)?;
    let ctx = FilterContext::new(img);
    let contributions = recipe
        .layers
        .par_iter()
        .map(|layer| layer_contribution(&ctx, layer, &recipe.constants, recipe.window))
        .collect::<Result<Vec<_>>>()?;
    let n = img.data().len();
    let mut total = vec![T::zero(); n];
    let mut terms = Vec::with_capacity(contributions.len());
    for (i, out) in total.iter_mut().enumerate() {
        terms.clear();
        terms.extend(contributions.iter().map(|c| c[i]));
        terms.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        *out = terms.iter().fold(T::zero(), |s, &v| s + v);
    }
    Ok(total)
}

/// Parallel render: all layers read the original image.
pub fn render<T: Scalar>(img: &Image<T>, recipe: &Recipe<T>) -> Result<Image<T>> {
    let total = composite_increment(img, recipe)?;
    let data = img
        .data()
        .iter()
        .zip(total)
        .map(|(&x, d)| (x + d).clamp01())
        .collect();
    Ok(Image::from_raw(img.width(), img.height(), data))
}

/// Sequential render: `Y_{k+1} = clamp(Y_k + Σ_args ΔF(θ, Y_k) ⊙ M̃_k)`.
pub fn render_sequential<T: Scalar>(
    img: &Image<T>,
    ordered_layers: &[Layer<T>],
    constants: &FilterConstants<T>,
    window: usize,
) -> Result<Image<T>> {
    constants.validate()?;
    for (i, layer) in ordered_layers.iter().enumerate() {
        layer.validate(i)?;
    }
    let mut current = img.clone();
    for layer in ordered_layers {
        let ctx = FilterContext::new(&current);
        let inc = layer_contribution(&ctx, layer, constants, window)?;
        let data = current
            .data()
            .iter()
            .zip(inc)
            .map(|(&x, d)| (x + d).clamp01())
            .collect();
        current = Image::from_raw(img.width(), img.height(), data);
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{Channels, FilterKind};

    fn hl(theta: f64) -> FilterArg<f64> {
        FilterArg::new(FilterKind::Highlights(Channels::Tied), theta)
    }

    fn sh(theta: f64) -> FilterArg<f64> {
        FilterArg::new(FilterKind::Shadows(Channels::Tied), theta)
    }

    #[test]
    fn empty_recipe_is_clamped_identity() {
        let img = Image::from_fn(4, 4, |x, y| [x as f64 * 0.3 - 0.2, y as f64 * 0.4, 0.5]);
        let out = render(&img, &Recipe::default()).unwrap();
        assert_eq!(out, img.clamped());
    }

    #[test]
    fn full_mask_highlights() {
        let img = Image::constant(5, 5, [0.5f64; 3]);
        let recipe = Recipe::new(vec![Layer::region(Mask::constant(5, 5, 1.0), vec![hl(0.2)])]);
        let out = render(&img, &recipe).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.6).abs() < 1e-15));
    }

    #[test]
    fn two_step_chains_depend_on_order() {
        let img = Image::constant(3, 3, [0.5f64; 3]);
        let consts = FilterConstants::default();
        let a = vec![Layer::global(vec![hl(0.5)]), Layer::global(vec![sh(0.5)])];
        let b = vec![Layer::global(vec![sh(0.5)]), Layer::global(vec![hl(0.5)])];
        // highlights first: 0.5 → 0.75 → 0.75 + 0.5·0.25 = 0.875
        // shadows first:    0.5 → 0.75 → 0.75 + 0.5·0.75 = 1.125 → 1.0
        let ya = render_sequential(&img, &a, &consts, DEFAULT_WINDOW).unwrap();
        let yb = render_sequential(&img, &b, &consts, DEFAULT_WINDOW).unwrap();
        assert!(ya.data().iter().all(|&v| v == 0.875));
        assert!(yb.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sequential_identity_for_zero_theta() {
        let img = Image::from_fn(4, 3, |x, y| [0.1 * x as f64, 0.2 * y as f64, 0.4]);
        let layers = vec![
            Layer::global(vec![FilterArg::new(FilterKind::Contrast, 0.0)]),
            Layer::global(vec![FilterArg::new(FilterKind::Saturation, 0.0)]),
        ];
        let out = render_sequential(&img, &layers, &FilterConstants::default(), DEFAULT_WINDOW).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn canvas_and_validation_errors() {
        let img = Image::constant(4, 4, [0.5f64; 3]);
        let mut recipe = Recipe::new(vec![Layer::global(vec![hl(0.1)])]);
        recipe.canvas = Some((8, 8));
        assert!(matches!(render(&img, &recipe), Err(Error::DimensionMismatch { .. })));
        let recipe = Recipe::new(vec![Layer::global(vec![hl(f64::NAN)])]);
        assert!(matches!(render(&img, &recipe), Err(Error::NonFinite(_))));
        let recipe = Recipe::new(vec![Layer::<f64>::global(vec![])]);
        assert!(render(&img, &recipe).is_err());
    }

    #[test]
    fn masks_are_resized_to_the_image() {
        let img = Image::constant(8, 8, [0.5f64; 3]);
        let recipe = Recipe::new(vec![Layer::region(Mask::constant(2, 2, 1.0), vec![hl(0.2)])]);
        let out = render(&img, &recipe).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.6).abs() < 1e-15));
    }
}
