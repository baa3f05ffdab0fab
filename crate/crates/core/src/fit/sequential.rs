//! Fitting θ of an ordered chain of layers rendered sequentially.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{initial_thetas, loss_and_seed, optimize, FitConfig, FitReport, LossKind, Objective};
use crate::error::{Error, Result};
use crate::color::luminance_map;
use crate::filters::{increment_vjp, unit_increment, FilterConstants, FilterContext, FilterKind};
use crate::image::Image;
use crate::metrics::MetricReport;
use crate::render::{render_sequential, Layer, Recipe};
use crate::scalar::Scalar;

struct Step<T> {
    mask: Option<Vec<T>>,
    args: Vec<(FilterKind, usize)>,
}

impl<T> Step<T> {
    fn needs_lum(&self) -> bool {
        self.args.iter().any(|(k, _)| *k == FilterKind::Saturation)
    }
}

struct SequentialModel<'a, T> {
    input: &'a Image<T>,
    target: &'a Image<T>,
    steps: Vec<Step<T>>,
    n_theta: usize,
    constants: FilterConstants<T>,
    loss: LossKind,
    theta_bound: T,
}

/// Mean and lightness of a step's input; lightness only when read.
fn step_stats<T: Scalar>(img: &Image<T>, step: &Step<T>) -> (T, Vec<T>) {
    let lum = if step.needs_lum() {
        luminance_map(img)
    } else {
        vec![T::zero(); img.pixel_count()]
    };
    (img.mean(), lum)
}

impl<T: Scalar> SequentialModel<'_, T> {
    fn step_increment(&self, step: &Step<T>, ctx: &FilterContext<'_, T>, params: &[T]) -> Vec<T> {
        let mut acc = vec![T::zero(); ctx.image.data().len()];
        for &(kind, j) in &step.args {
            let theta = params[j];
            if theta == T::zero() {
                continue;
            }
            let u = unit_increment(kind, theta < T::zero(), ctx, &self.constants);
            acc.iter_mut().zip(u).for_each(|(a, u)| *a += theta * u);
        }
        if let Some(m) = &step.mask {
            acc.iter_mut().enumerate().for_each(|(i, a)| *a *= m[i / 3]);
        }
        acc
    }
}

impl<T: Scalar> Objective<T> for SequentialModel<'_, T> {
    fn evaluate(&self, params: &[T]) -> Result<(T, Vec<T>)> {
        let (w, h) = self.input.dims();
        // states[k] is the image step k reads; pres[k] is its pre-clamp output.
        let mut states = vec![self.input.clone()];
        let mut pres: Vec<Vec<T>> = Vec::with_capacity(self.steps.len());
        let mut stats = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            let current = states.last().expect("non-empty");
            let (mean, lum) = step_stats(current, step);
            let ctx = FilterContext::with_stats(current, mean, lum);
            let inc = self.step_increment(step, &ctx, params);
            let pre: Vec<T> = current.data().iter().zip(&inc).map(|(&x, &d)| x + d).collect();
            stats.push((ctx.mean, ctx.lum));
            states.push(Image::from_raw(w, h, pre.iter().map(|v| v.clamp01()).collect()));
            pres.push(pre);
        }
        let last = pres.last().map(Vec::as_slice).unwrap_or(self.input.data());
        let (loss, mut g) = loss_and_seed(last, self.target.data(), self.loss);
        if !loss.is_finite() {
            return Err(Error::NonFinite("fit loss".into()));
        }
        let mut grad = vec![T::zero(); self.n_theta];
        for k in (0..self.steps.len()).rev() {
            let step = &self.steps[k];
            let (mean, lum) = std::mem::take(&mut stats[k]);
            let ctx = FilterContext::with_stats(&states[k], mean, lum);
            let masked: Vec<T> = match &step.mask {
                None => g.clone(),
                Some(m) => g.iter().enumerate().map(|(i, &v)| v * m[i / 3]).collect(),
            };
            let mut d_in = g.clone();
            for &(kind, j) in &step.args {
                let theta = params[j];
                let u = unit_increment(kind, theta < T::zero(), &ctx, &self.constants);
                grad[j] = masked.iter().zip(&u).map(|(&a, &b)| a * b).sum();
                if theta != T::zero() {
                    let vjp = increment_vjp(kind, theta, &ctx, &self.constants, &masked);
                    d_in.iter_mut().zip(vjp).for_each(|(d, v)| *d += v);
                }
            }
            if k > 0 {
                // Through the clamp that produced this step's input.
                for (d, &p) in d_in.iter_mut().zip(&pres[k - 1]) {
                    if p < T::zero() || p > T::one() {
                        *d = T::zero();
                    }
                }
            }
            g = d_in;
        }
        Ok((loss, grad))
    }

    fn project(&self, params: &mut [T]) {
        let b = self.theta_bound;
        params.iter_mut().for_each(|v| *v = v.max(-b).min(b));
    }
}

/// Fits every θ of `chain` (masks and σ held fixed) so that
/// `render_sequential(input, chain)` approaches `target`. The returned
/// recipe's layers are the chain in order; render it with
/// [`render_sequential`], not the parallel renderer.
pub fn fit_sequential<T: Scalar>(
    input: &Image<T>,
    target: &Image<T>,
    chain: &[Layer<T>],
    cfg: &FitConfig<T>,
) -> Result<FitReport<T>> {
    input.ensure_same_dims(target)?;
    cfg.validate()?;
    let (w, h) = input.dims();
    let mut n_theta = 0;
    let mut steps = Vec::with_capacity(chain.len());
    for layer in chain {
        let mask = layer.effective_mask(w, h, cfg.window)?.map(|m| m.data().to_vec());
        let args = layer
            .args
            .iter()
            .map(|a| {
                n_theta += 1;
                (a.kind, n_theta - 1)
            })
            .collect();
        steps.push(Step { mask, args });
    }
    let model = SequentialModel {
        input,
        target,
        steps,
        n_theta,
        constants: cfg.constants,
        loss: cfg.loss,
        theta_bound: cfg.theta_bound,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = initial_thetas(n_theta, cfg, &mut rng);
    let outcome = optimize(&model, init, cfg)?;
    let mut layers = chain.to_vec();
    let mut it = outcome.best.iter();
    for layer in &mut layers {
        for arg in &mut layer.args {
            arg.theta = *it.next().expect("θ count");
        }
    }
    let rendered = render_sequential(input, &layers, &cfg.constants, cfg.window)?;
    let mut recipe = Recipe::new(layers);
    recipe.constants = cfg.constants;
    recipe.window = cfg.window;
    Ok(FitReport {
        metrics: MetricReport::compute(&rendered, target)?,
        recipe,
        loss_history: outcome.history,
        initial_loss: outcome.initial_loss,
        final_loss: outcome.best_loss,
        iterations_run: outcome.iterations,
    })
}
