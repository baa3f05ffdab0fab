//! Sequential-vs-parallel comparison: the same filter set fitted under the
//! parallel renderer (several seeds) and under random sequential orders.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, fit_sequential, fit_template, FitConfig, FitMode};
use crate::error::{Error, Result};
use crate::filters::FilterArg;
use crate::image::{Image, Mask};
use crate::render::Layer;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct HarnessPair<T> {
    pub input: Image<T>,
    pub target: Image<T>,
    /// Region masks shared by both approaches.
    pub masks: Vec<Mask<T>>,
}

#[derive(Debug, Clone)]
pub struct HarnessConfig<T> {
    /// Per-fit settings; `mode` must be `FixedMasks`.
    pub fit: FitConfig<T>,
    pub n_orders: usize,
    /// Repeated parallel fits per pair; each uses a different seed.
    pub n_seeds: usize,
    pub seed: u64,
}

impl<T: Scalar> Default for HarnessConfig<T> {
    fn default() -> Self {
        Self {
            fit: FitConfig {
                theta_jitter: T::lit(0.05),
                ..FitConfig::default()
            },
            n_orders: 5,
            n_seeds: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproachStats {
    pub mean_psnr: f64,
    pub std_psnr: f64,
    pub mean_ssim: Option<f64>,
    pub std_ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    /// One entry per parallel seed.
    pub parallel_psnr: Vec<f64>,
    pub parallel_ssim: Vec<Option<f64>>,
    /// One entry per sequential order.
    pub sequential_psnr: Vec<f64>,
    pub sequential_ssim: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessReport {
    pub parallel: ApproachStats,
    pub sequential: ApproachStats,
    /// Mean PSNR over pairs for each sequential order.
    pub sequential_order_mean_psnr: Vec<f64>,
    /// Mean over pairs of the PSNR std across parallel seeds.
    pub parallel_seed_std_psnr: f64,
    /// Mean over pairs of the PSNR std across sequential orders.
    pub sequential_order_std_psnr: f64,
    /// Step permutations used (indices into the step list).
    pub orders: Vec<Vec<usize>>,
    pub pairs: Vec<PairOutcome>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

fn stats(psnr: &[f64], ssim: &[Option<f64>]) -> ApproachStats {
    let ssim: Option<Vec<f64>> = ssim.iter().copied().collect();
    ApproachStats {
        mean_psnr: mean(psnr),
        std_psnr: std(psnr),
        mean_ssim: ssim.as_deref().map(mean),
        std_ssim: ssim.as_deref().map(std),
    }
}

/// Single-filter steps covering the parallel recipe's filter set: every
/// (layer, filter) of the fit template becomes its own step.
pub fn sequential_steps<T: Scalar>(masks: &[Mask<T>], cfg: &FitConfig<T>) -> Result<Vec<Layer<T>>> {
    let template = fit_template(masks, cfg)?;
    let mut steps = Vec::new();
    for layer in template.layers {
        for arg in &layer.args {
            steps.push(Layer {
                mask: layer.mask.clone(),
                args: vec![FilterArg::new(arg.kind, T::zero())],
                sigma: layer.sigma,
            });
        }
    }
    Ok(steps)
}

enum Job {
    Parallel { pair: usize, rep: usize },
    Sequential { pair: usize, order: usize },
}

pub fn run_seq_vs_parallel_harness<T: Scalar>(
    pairs: &[HarnessPair<T>],
    cfg: &HarnessConfig<T>,
) -> Result<HarnessReport> {
    if pairs.is_empty() {
        return Err(Error::field("pairs", "at least one pair is required"));
    }
    if cfg.n_orders == 0 || cfg.n_seeds == 0 {
        return Err(Error::field("n_orders", "orders and seeds must be positive"));
    }
    if cfg.fit.mode != FitMode::FixedMasks {
        return Err(Error::field("mode", "the harness fits fixed masks"));
    }
    let n_masks = pairs[0].masks.len();
    if pairs.iter().any(|p| p.masks.len() != n_masks) {
        return Err(Error::field("masks", "every pair needs the same number of masks"));
    }
    let n_steps = sequential_steps(&pairs[0].masks, &cfg.fit)?.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let orders: Vec<Vec<usize>> = (0..cfg.n_orders)
        .map(|_| {
            let mut perm: Vec<usize> = (0..n_steps).collect();
            perm.shuffle(&mut rng);
            perm
        })
        .collect();

    let mut jobs = Vec::new();
    for pair in 0..pairs.len() {
        jobs.extend((0..cfg.n_seeds).map(|rep| Job::Parallel { pair, rep }));
        jobs.extend((0..cfg.n_orders).map(|order| Job::Sequential { pair, order }));
    }
    let results = jobs
        .par_iter()
        .map(|job| -> Result<(f64, Option<f64>)> {
            match *job {
                Job::Parallel { pair, rep } => {
                    let p = &pairs[pair];
                    let fit_cfg = FitConfig {
                        seed: cfg.seed.wrapping_add(rep as u64),
                        ..cfg.fit.clone()
                    };
                    let r = fit(&p.input, &p.target, Some(&p.masks), &fit_cfg)?;
                    Ok((r.metrics.psnr, r.metrics.ssim))
                }
                Job::Sequential { pair, order } => {
                    let p = &pairs[pair];
                    let steps = sequential_steps(&p.masks, &cfg.fit)?;
                    let chain: Vec<Layer<T>> = orders[order].iter().map(|&i| steps[i].clone()).collect();
                    let fit_cfg = FitConfig {
                        seed: cfg.seed.wrapping_add(order as u64),
                        ..cfg.fit.clone()
                    };
                    let r = fit_sequential(&p.input, &p.target, &chain, &fit_cfg)?;
                    Ok((r.metrics.psnr, r.metrics.ssim))
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut outcomes = Vec::with_capacity(pairs.len());
    let mut it = results.into_iter();
    for _ in 0..pairs.len() {
        let par: Vec<_> = it.by_ref().take(cfg.n_seeds).collect();
        let seq: Vec<_> = it.by_ref().take(cfg.n_orders).collect();
        outcomes.push(PairOutcome {
            parallel_psnr: par.iter().map(|r| r.0).collect(),
            parallel_ssim: par.iter().map(|r| r.1).collect(),
            sequential_psnr: seq.iter().map(|r| r.0).collect(),
            sequential_ssim: seq.iter().map(|r| r.1).collect(),
        });
    }
    let flat = |f: &dyn Fn(&PairOutcome) -> &Vec<f64>| outcomes.iter().flat_map(|o| f(o).iter().copied()).collect::<Vec<_>>();
    let flat_ssim =
        |f: &dyn Fn(&PairOutcome) -> &Vec<Option<f64>>| outcomes.iter().flat_map(|o| f(o).iter().copied()).collect::<Vec<_>>();
    Ok(HarnessReport {
        parallel: stats(&flat(&|o| &o.parallel_psnr), &flat_ssim(&|o| &o.parallel_ssim)),
        sequential: stats(&flat(&|o| &o.sequential_psnr), &flat_ssim(&|o| &o.sequential_ssim)),
        sequential_order_mean_psnr: (0..cfg.n_orders)
            .map(|k| mean(&outcomes.iter().map(|o| o.sequential_psnr[k]).collect::<Vec<_>>()))
            .collect(),
        parallel_seed_std_psnr: mean(&outcomes.iter().map(|o| std(&o.parallel_psnr)).collect::<Vec<_>>()),
        sequential_order_std_psnr: mean(&outcomes.iter().map(|o| std(&o.sequential_psnr)).collect::<Vec<_>>()),
        orders,
        pairs: outcomes,
    })
}
