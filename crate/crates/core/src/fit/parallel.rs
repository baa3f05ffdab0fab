//! Differentiable parallel model used by [`super::fit`].

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{initial_thetas, loss_and_seed, FitConfig, LossKind, Objective};
use crate::error::{Error, Result};
use crate::filters::{unit_increment, FilterContext, FilterKind};
use crate::image::{resize_plane, resize_plane_adjoint, Image, Mask};
use crate::render::{LayerMask, Recipe};
use crate::scalar::Scalar;
use crate::smooth::{smooth_plane, smooth_plane_adjoint, smooth_plane_dsigma, SmoothKernel};

const LOGIT_LIMIT: f64 = 12.0;

enum MaskSource<T> {
    Global,
    /// Already at image resolution.
    Fixed(Vec<T>),
    /// Logit grid at `offset` in the parameter vector.
    Free { offset: usize },
}

#[derive(Clone, Copy)]
enum SigmaSource<T> {
    Fixed(T),
    Learned(usize),
}

struct ModelLayer<T> {
    mask: MaskSource<T>,
    sigma: SigmaSource<T>,
    /// `(kind, θ index)`.
    args: Vec<(FilterKind, usize)>,
    /// Effective mask when it does not depend on the parameters.
    cached: Option<Vec<T>>,
}

/// Per-layer intermediate values kept for the backward pass.
struct LayerState<T> {
    /// Logistic grid values (free masks only).
    squashed: Option<Vec<T>>,
    /// Mask at image resolution before smoothing.
    pre_smooth: Option<Vec<T>>,
    /// Mask multiplied into the increments; `None` for global layers.
    effective: Option<Vec<T>>,
}

/// Pre-clamp output, per-layer state and per-layer increments.
type Forward<T> = (Vec<T>, Vec<LayerState<T>>, Vec<Vec<T>>);

pub(crate) struct ParallelModel<'a, T> {
    input: &'a Image<T>,
    target: &'a Image<T>,
    template: Recipe<T>,
    layers: Vec<ModelLayer<T>>,
    /// `U(kind, negative)` on the input.
    bases: BTreeMap<(FilterKind, bool), Vec<T>>,
    n_theta: usize,
    n_params: usize,
    grid: usize,
    loss: LossKind,
    theta_bound: T,
    sigma_bounds: (T, T),
    window: usize,
}

fn logistic<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

impl<'a, T: Scalar> ParallelModel<'a, T> {
    /// θ (and σ when learned) for a recipe with fixed masks.
    pub fn fixed(input: &'a Image<T>, target: &'a Image<T>, template: Recipe<T>, cfg: &FitConfig<T>) -> Result<Self> {
        Self::build(input, target, template, None, cfg)
    }

    /// θ, σ and a logit grid per mask layer of `template`.
    pub fn free(
        input: &'a Image<T>,
        target: &'a Image<T>,
        template: Recipe<T>,
        grid: usize,
        cfg: &FitConfig<T>,
    ) -> Result<Self> {
        Self::build(input, target, template, Some(grid), cfg)
    }

    fn build(
        input: &'a Image<T>,
        target: &'a Image<T>,
        template: Recipe<T>,
        grid: Option<usize>,
        cfg: &FitConfig<T>,
    ) -> Result<Self> {
        template.validate()?;
        let (w, h) = input.dims();
        let ctx = FilterContext::new(input);
        let mut bases = BTreeMap::new();
        let mut n_theta = 0;
        for layer in &template.layers {
            for arg in &layer.args {
                n_theta += 1;
                for negative in [false, true] {
                    if negative && !arg.kind.is_sign_branched() {
                        continue;
                    }
                    bases
                        .entry((arg.kind, negative))
                        .or_insert_with(|| unit_increment(arg.kind, negative, &ctx, &template.constants));
                }
            }
        }
        let mut offset = n_theta;
        let mut layers = Vec::with_capacity(template.layers.len());
        let mut theta_index = 0;
        for layer in &template.layers {
            let args = layer
                .args
                .iter()
                .map(|a| {
                    theta_index += 1;
                    (a.kind, theta_index - 1)
                })
                .collect();
            let mask = match (&layer.mask, grid) {
                (LayerMask::Global, _) => MaskSource::Global,
                (LayerMask::Region(m), None) => MaskSource::Fixed(m.resize_bilinear(w, h).data().to_vec()),
                (LayerMask::Region(_), Some(g)) => {
                    let src = MaskSource::Free { offset };
                    offset += g * g;
                    src
                }
            };
            layers.push(ModelLayer {
                mask,
                sigma: SigmaSource::Fixed(layer.sigma),
                args,
                cached: None,
            });
        }
        if cfg.learn_sigma {
            for layer in &mut layers {
                if !matches!(layer.mask, MaskSource::Global) {
                    layer.sigma = SigmaSource::Learned(offset);
                    offset += 1;
                }
            }
        }
        let mut model = Self {
            input,
            target,
            template,
            layers,
            bases,
            n_theta,
            n_params: offset,
            grid: grid.unwrap_or(0),
            loss: cfg.loss,
            theta_bound: cfg.theta_bound,
            sigma_bounds: (
                cfg.sigma_bounds.0,
                cfg.sigma_bounds.1.min(T::from_usize_lossy(cfg.window / 2)),
            ),
            window: cfg.window,
        };
        for i in 0..model.layers.len() {
            let layer = &model.layers[i];
            if let (MaskSource::Fixed(_), SigmaSource::Fixed(_)) = (&layer.mask, layer.sigma) {
                let state = model.layer_state(i, &[])?;
                model.layers[i].cached = state.effective;
            }
        }
        Ok(model)
    }

    #[cfg(test)]
    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn initial_params(&self, cfg: &FitConfig<T>, rng: &mut ChaCha8Rng) -> Vec<T> {
        let mut params = initial_thetas(self.n_theta, cfg, rng);
        params.resize(self.n_params, T::zero());
        for layer in &self.layers {
            if let MaskSource::Free { offset } = layer.mask {
                for v in &mut params[offset..offset + self.grid * self.grid] {
                    *v = T::lit(rng.random::<f64>() * 2.0 - 1.0);
                }
            }
            if let SigmaSource::Learned(i) = layer.sigma {
                params[i] = cfg.sigma_init;
            }
        }
        params
    }

    fn sigma_of(&self, layer: &ModelLayer<T>, params: &[T]) -> T {
        match layer.sigma {
            SigmaSource::Fixed(s) => s,
            SigmaSource::Learned(i) => params[i],
        }
    }

    fn layer_state(&self, index: usize, params: &[T]) -> Result<LayerState<T>> {
        let layer = &self.layers[index];
        if let Some(c) = &layer.cached {
            return Ok(LayerState {
                squashed: None,
                pre_smooth: None,
                effective: Some(c.clone()),
            });
        }
        let (w, h) = self.input.dims();
        let (squashed, pre) = match &layer.mask {
            MaskSource::Global => {
                return Ok(LayerState {
                    squashed: None,
                    pre_smooth: None,
                    effective: None,
                })
            }
            MaskSource::Fixed(m) => (None, m.clone()),
            MaskSource::Free { offset } => {
                let g = self.grid;
                let s: Vec<T> = params[*offset..offset + g * g].iter().map(|&v| logistic(v)).collect();
                let up = resize_plane(&s, g, g, w, h);
                (Some(s), up)
            }
        };
        let sigma = self.sigma_of(layer, params);
        let effective = if sigma > T::zero() {
            let kernel = SmoothKernel::new(self.window, sigma)?;
            smooth_plane(&pre, w, h, &kernel)
        } else {
            pre.clone()
        };
        Ok(LayerState {
            squashed,
            pre_smooth: Some(pre),
            effective: Some(effective),
        })
    }

    fn basis(&self, kind: FilterKind, theta: T) -> &[T] {
        &self.bases[&(kind, kind.is_sign_branched() && theta < T::zero())]
    }

    /// `Σ_args θ U` of a layer, unmasked.
    fn layer_increment(&self, layer: &ModelLayer<T>, params: &[T]) -> Vec<T> {
        let mut acc = vec![T::zero(); self.input.data().len()];
        for &(kind, j) in &layer.args {
            let theta = params[j];
            if theta == T::zero() {
                continue;
            }
            let basis = self.basis(kind, theta);
            acc.iter_mut().zip(basis).for_each(|(a, &u)| *a += theta * u);
        }
        acc
    }

    /// Pre-clamp output, and per-layer state and increments for the backward pass.
    fn forward(&self, params: &[T]) -> Result<Forward<T>> {
        let mut pre = self.input.data().to_vec();
        let mut states = Vec::with_capacity(self.layers.len());
        let mut incs = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let state = self.layer_state(i, params)?;
            let inc = self.layer_increment(layer, params);
            match &state.effective {
                None => pre.iter_mut().zip(&inc).for_each(|(y, &d)| *y += d),
                Some(m) => {
                    for (p, &mv) in m.iter().enumerate() {
                        for c in 0..3 {
                            pre[p * 3 + c] += inc[p * 3 + c] * mv;
                        }
                    }
                }
            }
            states.push(state);
            incs.push(inc);
        }
        Ok((pre, states, incs))
    }

    pub fn to_recipe(&self, params: &[T]) -> Recipe<T> {
        let (w, h) = self.input.dims();
        let mut recipe = self.template.clone();
        for (layer, model_layer) in recipe.layers.iter_mut().zip(&self.layers) {
            for (arg, &(_, j)) in layer.args.iter_mut().zip(&model_layer.args) {
                arg.theta = params[j];
            }
            if let MaskSource::Free { offset } = model_layer.mask {
                let g = self.grid;
                let s: Vec<T> = params[offset..offset + g * g].iter().map(|&v| logistic(v)).collect();
                let up = resize_plane(&s, g, g, w, h).into_iter().map(|v| v.clamp01()).collect();
                layer.mask = LayerMask::Region(Mask::from_raw(w, h, up));
            }
            layer.sigma = self.sigma_of(model_layer, params);
        }
        recipe
    }
}

impl<T: Scalar> Objective<T> for ParallelModel<'_, T> {
    fn evaluate(&self, params: &[T]) -> Result<(T, Vec<T>)> {
        let (w, h) = self.input.dims();
        let (pre, states, incs) = self.forward(params)?;
        let (loss, seed) = loss_and_seed(&pre, self.target.data(), self.loss);
        if !loss.is_finite() {
            return Err(Error::NonFinite("fit loss".into()));
        }
        let mut grad = vec![T::zero(); self.n_params];
        for ((layer, state), inc) in self.layers.iter().zip(&states).zip(&incs) {
            // Gradient reaching the unmasked increment.
            let masked_seed: Vec<T> = match &state.effective {
                None => seed.clone(),
                Some(m) => seed.iter().enumerate().map(|(i, &g)| g * m[i / 3]).collect(),
            };
            for &(kind, j) in &layer.args {
                let basis = self.basis(kind, params[j]);
                grad[j] = masked_seed.iter().zip(basis).map(|(&g, &u)| g * u).sum();
            }
            let needs_mask_grad =
                matches!(layer.mask, MaskSource::Free { .. }) || matches!(layer.sigma, SigmaSource::Learned(_));
            if !needs_mask_grad {
                continue;
            }
            // ∂L/∂(effective mask) per pixel.
            let d_mask: Vec<T> = seed
                .chunks_exact(3)
                .zip(inc.chunks_exact(3))
                .map(|(g, d)| g[0] * d[0] + g[1] * d[1] + g[2] * d[2])
                .collect();
            let pre_smooth = state.pre_smooth.as_ref().expect("region layer");
            let sigma = self.sigma_of(layer, params);
            let kernel = if sigma > T::zero() {
                Some(SmoothKernel::new(self.window, sigma)?)
            } else {
                None
            };
            if let (SigmaSource::Learned(i), Some(k)) = (layer.sigma, &kernel) {
                let ds = smooth_plane_dsigma(pre_smooth, w, h, k);
                grad[i] = d_mask.iter().zip(&ds).map(|(&a, &b)| a * b).sum();
            }
            if let MaskSource::Free { offset } = layer.mask {
                let g = self.grid;
                let d_pre = match &kernel {
                    Some(k) => smooth_plane_adjoint(&d_mask, w, h, k),
                    None => d_mask,
                };
                let d_s = resize_plane_adjoint(&d_pre, g, g, w, h);
                let s = state.squashed.as_ref().expect("free layer");
                for (k, (&dv, &sv)) in d_s.iter().zip(s).enumerate() {
                    grad[offset + k] = dv * sv * (T::one() - sv);
                }
            }
        }
        Ok((loss, grad))
    }

    fn project(&self, params: &mut [T]) {
        let b = self.theta_bound;
        for v in &mut params[..self.n_theta] {
            *v = v.max(-b).min(b);
        }
        let limit = T::lit(LOGIT_LIMIT);
        for layer in &self.layers {
            if let MaskSource::Free { offset } = layer.mask {
                for v in &mut params[offset..offset + self.grid * self.grid] {
                    *v = v.max(-limit).min(limit);
                }
            }
            if let SigmaSource::Learned(i) = layer.sigma {
                params[i] = params[i].max(self.sigma_bounds.0).min(self.sigma_bounds.1);
            }
        }
    }
}
