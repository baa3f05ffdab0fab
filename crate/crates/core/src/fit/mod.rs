//! Recovering recipe parameters for an (input, target) pair by direct
//! gradient optimization.

mod adam;
mod closed_form;
mod harness;
mod parallel;
mod sequential;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState, CosineSchedule};
pub use closed_form::{closed_form_l2, ClosedForm};
pub use harness::{
    run_seq_vs_parallel_harness, sequential_steps, ApproachStats, HarnessConfig, HarnessPair, HarnessReport,
    PairOutcome,
};
pub use sequential::fit_sequential;

use crate::error::{Error, Result};
use crate::filters::{FilterArg, FilterConstants, FilterKind};
use crate::image::{Image, Mask};
use crate::metrics::MetricReport;
use crate::recipe_file::DEFAULT_THETA_BOUND;
use crate::render::{Layer, Recipe};
use crate::scalar::Scalar;
use crate::smooth::DEFAULT_WINDOW;

use parallel::ParallelModel;

pub const DEFAULT_LR: f64 = 0.02;
pub const DEFAULT_ITERATIONS: usize = 2000;
pub const DEFAULT_GRID: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    /// Masks are inputs; only θ (and optionally σ) are fitted.
    FixedMasks,
    /// `layers` masks are fitted too, each a `grid × grid` logit map passed
    /// through the logistic function and upsampled bilinearly.
    FreeMasks { layers: usize, grid: usize },
}

/// Which filters each layer carries.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterLayout {
    /// Filters on every mask layer.
    pub per_mask: Vec<FilterKind>,
    /// Per-layer override of `per_mask`; must match the layer count.
    pub per_layer: Option<Vec<Vec<FilterKind>>>,
    /// Filters on the global (`M ≡ 1`) layer; empty for none.
    pub global: Vec<FilterKind>,
}

impl Default for FilterLayout {
    fn default() -> Self {
        Self {
            per_mask: FilterKind::tied_set(),
            per_layer: None,
            global: FilterKind::shift_set(),
        }
    }
}

impl FilterLayout {
    pub fn uniform(per_mask: Vec<FilterKind>, global: Vec<FilterKind>) -> Self {
        Self {
            per_mask,
            per_layer: None,
            global,
        }
    }

    fn kinds_for(&self, layer: usize) -> &[FilterKind] {
        match &self.per_layer {
            Some(v) => &v[layer],
            None => &self.per_mask,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig<T> {
    pub lr: T,
    pub min_lr: T,
    pub iterations: usize,
    /// Cosine decay period; `None` decays once over `iterations`.
    pub cosine_period: Option<usize>,
    pub adam: AdamConfig<T>,
    pub theta_bound: T,
    pub mode: FitMode,
    pub loss: LossKind,
    pub layout: FilterLayout,
    /// Initial smoothing σ per mask layer; `0` disables smoothing.
    pub sigma_init: T,
    pub learn_sigma: bool,
    pub sigma_bounds: (T, T),
    pub window: usize,
    pub constants: FilterConstants<T>,
    pub seed: u64,
    /// Half-width of a seeded uniform perturbation of the initial θ.
    pub theta_jitter: T,
}

impl<T: Scalar> Default for FitConfig<T> {
    fn default() -> Self {
        Self {
            lr: T::lit(DEFAULT_LR),
            min_lr: T::zero(),
            iterations: DEFAULT_ITERATIONS,
            cosine_period: None,
            adam: AdamConfig::default(),
            theta_bound: T::lit(DEFAULT_THETA_BOUND),
            mode: FitMode::FixedMasks,
            loss: LossKind::L1,
            layout: FilterLayout::default(),
            sigma_init: T::zero(),
            learn_sigma: false,
            sigma_bounds: (T::lit(0.05), T::lit(25.0)),
            window: DEFAULT_WINDOW,
            constants: FilterConstants::default(),
            seed: 0,
            theta_jitter: T::zero(),
        }
    }
}

impl<T: Scalar> FitConfig<T> {
    /// Defaults for fitting free masks: `layers` learned masks with learned σ.
    pub fn free_masks(layers: usize) -> Self {
        Self {
            mode: FitMode::FreeMasks {
                layers,
                grid: DEFAULT_GRID,
            },
            sigma_init: T::one(),
            learn_sigma: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > T::zero()) {
            return Err(Error::field("lr", "must be positive"));
        }
        if self.min_lr < T::zero() || self.min_lr > self.lr {
            return Err(Error::field("min_lr", "must lie in [0, lr]"));
        }
        self.adam.validate()?;
        self.constants.validate()?;
        if !(self.theta_bound > T::zero()) {
            return Err(Error::field("theta_bound", "must be positive"));
        }
        if let FitMode::FreeMasks { grid, layers } = self.mode {
            if grid < 2 {
                return Err(Error::field("grid", "free-mask grid must be at least 2"));
            }
            if layers == 0 {
                return Err(Error::field("free_masks", "at least one free mask is required"));
            }
        }
        if self.sigma_init < T::zero() || (self.learn_sigma && !(self.sigma_init > T::zero())) {
            return Err(Error::field("sigma_init", "learned σ needs a positive initial value"));
        }
        if self.window.is_multiple_of(2) {
            return Err(Error::field("window", "must be odd"));
        }
        Ok(())
    }

    fn schedule(&self) -> CosineSchedule<T> {
        CosineSchedule {
            base: self.lr,
            min: self.min_lr,
            period: self.cosine_period.unwrap_or(self.iterations),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport<T> {
    pub recipe: Recipe<T>,
    /// Loss at every iterate, plus the final one.
    pub loss_history: Vec<T>,
    pub initial_loss: T,
    /// Loss of the returned recipe (the best iterate).
    pub final_loss: T,
    pub metrics: MetricReport,
    pub iterations_run: usize,
}

/// `report.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReportFile {
    pub loss: LossKind,
    pub iterations_run: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub metrics: MetricReport,
    pub thetas: Vec<ThetaEntry>,
    pub sigmas: Vec<f64>,
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaEntry {
    pub layer: usize,
    pub kind: FilterKind,
    pub theta: f64,
}

impl<T: Scalar> FitReport<T> {
    pub fn to_file(&self, loss: LossKind) -> FitReportFile {
        let mut thetas = Vec::new();
        for (i, layer) in self.recipe.layers.iter().enumerate() {
            for a in &layer.args {
                thetas.push(ThetaEntry {
                    layer: i,
                    kind: a.kind,
                    theta: a.theta.to_f64_lossy(),
                });
            }
        }
        FitReportFile {
            loss,
            iterations_run: self.iterations_run,
            initial_loss: self.initial_loss.to_f64_lossy(),
            final_loss: self.final_loss.to_f64_lossy(),
            metrics: self.metrics,
            thetas,
            sigmas: self.recipe.layers.iter().map(|l| l.sigma.to_f64_lossy()).collect(),
            loss_history: self.loss_history.iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }

    /// All θ in layer/argument order.
    pub fn thetas(&self) -> Vec<T> {
        self.recipe.layers.iter().flat_map(|l| l.args.iter().map(|a| a.theta)).collect()
    }
}

/// Loss value and `∂loss/∂(pre-clamp output)`. Gradients are passed
/// straight through where the output lies in `[0, 1]` and zeroed where the
/// clamp is active; the L1 subgradient at zero is zero.
pub(crate) fn loss_and_seed<T: Scalar>(pre: &[T], target: &[T], loss: LossKind) -> (T, Vec<T>) {
    let n = T::from_usize_lossy(pre.len());
    let mut total = T::zero();
    let mut seed = Vec::with_capacity(pre.len());
    for (&y, &t) in pre.iter().zip(target) {
        let out = y.clamp01();
        let r = out - t;
        let interior = y >= T::zero() && y <= T::one();
        let g = match loss {
            LossKind::L1 => {
                total += r.abs();
                if r > T::zero() {
                    T::one()
                } else if r < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
            LossKind::L2 => {
                total += r * r;
                T::lit(2.0) * r
            }
        };
        seed.push(if interior { g / n } else { T::zero() });
    }
    (total / n, seed)
}

/// A differentiable loss over a flat parameter vector.
pub(crate) trait Objective<T: Scalar>: Sync {
    fn evaluate(&self, params: &[T]) -> Result<(T, Vec<T>)>;
    fn project(&self, params: &mut [T]);
}

pub(crate) struct Outcome<T> {
    pub best: Vec<T>,
    pub history: Vec<T>,
    pub initial_loss: T,
    pub best_loss: T,
    pub iterations: usize,
}

pub(crate) fn optimize<T: Scalar>(objective: &dyn Objective<T>, init: Vec<T>, cfg: &FitConfig<T>) -> Result<Outcome<T>> {
    let schedule = cfg.schedule();
    let mut params = init;
    objective.project(&mut params);
    let mut state = AdamState::new(params.len());
    let mut history = Vec::with_capacity(cfg.iterations + 1);
    let mut best = params.clone();
    let mut best_loss = T::infinity();
    for it in 0..cfg.iterations {
        let (loss, grad) = objective.evaluate(&params)?;
        history.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best.clone_from(&params);
        }
        adam_step(&mut state, &mut params, &grad, schedule.lr(it), &cfg.adam)
            .map_err(|_| Error::NonFiniteGradient(it))?;
        objective.project(&mut params);
    }
    let (loss, _) = objective.evaluate(&params)?;
    history.push(loss);
    if loss < best_loss {
        best_loss = loss;
        best = params;
    }
    Ok(Outcome {
        initial_loss: history[0],
        best,
        history,
        best_loss,
        iterations: cfg.iterations,
    })
}

/// Zero-θ recipe with the layer structure `fit` optimizes: one layer per
/// mask (in order) followed by the global layer when it has filters.
pub fn fit_template<T: Scalar>(masks: &[Mask<T>], cfg: &FitConfig<T>) -> Result<Recipe<T>> {
    if let Some(per_layer) = &cfg.layout.per_layer {
        if per_layer.len() != masks.len() {
            return Err(Error::field(
                "layout",
                format!("{} per-layer filter lists for {} masks", per_layer.len(), masks.len()),
            ));
        }
    }
    let mut layers = Vec::with_capacity(masks.len() + 1);
    for (i, mask) in masks.iter().enumerate() {
        let kinds = cfg.layout.kinds_for(i);
        if kinds.is_empty() {
            return Err(Error::field(format!("layout[{i}]"), "layer has no filters"));
        }
        layers.push(
            Layer::region(mask.clone(), kinds.iter().map(|&k| FilterArg::new(k, T::zero())).collect())
                .with_sigma(cfg.sigma_init),
        );
    }
    if !cfg.layout.global.is_empty() {
        layers.push(Layer::global(
            cfg.layout.global.iter().map(|&k| FilterArg::new(k, T::zero())).collect(),
        ));
    }
    if layers.is_empty() {
        return Err(Error::field("layout", "nothing to fit: no masks and no global filters"));
    }
    let mut recipe = Recipe::new(layers);
    recipe.constants = cfg.constants;
    recipe.window = cfg.window;
    Ok(recipe)
}

pub(crate) fn initial_thetas<T: Scalar>(n: usize, cfg: &FitConfig<T>, rng: &mut ChaCha8Rng) -> Vec<T> {
    (0..n)
        .map(|_| {
            if cfg.theta_jitter > T::zero() {
                let u = T::lit(rng.random::<f64>() * 2.0 - 1.0);
                u * cfg.theta_jitter
            } else {
                T::zero()
            }
        })
        .collect()
}

/// Fits a recipe mapping `input` to `target` with the parallel model.
///
/// `FixedMasks` requires `masks` (an empty slice fits the global layer
/// only); `FreeMasks` must not be given masks.
pub fn fit<T: Scalar>(
    input: &Image<T>,
    target: &Image<T>,
    masks: Option<&[Mask<T>]>,
    cfg: &FitConfig<T>,
) -> Result<FitReport<T>> {
    input.ensure_same_dims(target)?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = input.dims();
    let model = match (cfg.mode, masks) {
        (FitMode::FixedMasks, Some(masks)) => ParallelModel::fixed(input, target, fit_template(masks, cfg)?, cfg)?,
        (FitMode::FixedMasks, None) => {
            return Err(Error::field("masks", "fixed-mask fitting needs masks"));
        }
        (FitMode::FreeMasks { .. }, Some(_)) => {
            return Err(Error::field("masks", "free-mask fitting does not take input masks"));
        }
        (FitMode::FreeMasks { layers, grid }, None) => {
            let placeholders = vec![Mask::constant(w, h, T::lit(0.5)); layers];
            let template = fit_template(&placeholders, cfg)?;
            ParallelModel::free(input, target, template, grid, cfg)?
        }
    };
    let init = model.initial_params(cfg, &mut rng);
    let outcome = optimize(&model, init, cfg)?;
    let recipe = model.to_recipe(&outcome.best);
    let rendered = crate::render::render(input, &recipe)?;
    Ok(FitReport {
        metrics: MetricReport::compute(&rendered, target)?,
        recipe,
        loss_history: outcome.history,
        initial_loss: outcome.initial_loss,
        final_loss: outcome.best_loss,
        iterations_run: outcome.iterations,
    })
}
