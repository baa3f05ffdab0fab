//! `rsf`: apply, fit and inspect region-specific color filter recipes.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rsf_core::fit::{
    fit, run_seq_vs_parallel_harness, FilterLayout, FitConfig, FitMode, HarnessConfig, HarnessPair, LossKind,
    DEFAULT_GRID,
};
use rsf_core::io::{load_image, load_mask, save_image, write_atomic};
use rsf_core::lut::{bake_recipe, BakeReference, LumMode, DEFAULT_LUT_SIZE};
use rsf_core::metrics::MetricReport;
use rsf_core::palette::{extract_palette, palette_to_masks, DEFAULT_MASK_SIGMA, DEFAULT_TEMPERATURE};
use rsf_core::recipe_file::{default_mask_name, load_recipe, save_recipe, DEFAULT_THETA_BOUND};
use rsf_core::smooth::SmoothKernel;
use rsf_core::{render, FilterKind, Image, Mask};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "rsf", version, about = "Region-specific color filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Loss {
    L1,
    L2,
}

impl From<Loss> for LossKind {
    fn from(l: Loss) -> Self {
        match l {
            Loss::L1 => LossKind::L1,
            Loss::L2 => LossKind::L2,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render an image through a recipe.
    Apply {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        recipe: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THETA_BOUND)]
        theta_bound: f64,
    },
    /// Fit a recipe that maps `input` to `target`.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Directory of `mask_*.png` files.
        #[arg(long, conflicts_with = "free_masks")]
        masks: Option<PathBuf>,
        /// Learn this many masks instead.
        #[arg(long)]
        free_masks: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Loss::L1)]
        loss: Loss,
        #[arg(long, default_value_t = rsf_core::fit::DEFAULT_ITERATIONS)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = rsf_core::fit::DEFAULT_LR)]
        lr: f64,
        /// Logit grid side for `--free-masks`.
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
        /// Filters on each mask layer, comma separated (default: the tied set).
        #[arg(long, value_delimiter = ',')]
        filters: Option<Vec<FilterKind>>,
        /// Filters on the global layer (default: the channel shifts).
        #[arg(long, value_delimiter = ',')]
        global_filters: Option<Vec<FilterKind>>,
    },
    /// Soft palette masks from the image's main colors.
    PaletteMasks {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Bake a global-only recipe into a `.cube` 3-D LUT.
    Bake {
        #[arg(long)]
        recipe: PathBuf,
        #[arg(long, default_value_t = DEFAULT_LUT_SIZE)]
        size: usize,
        /// Image mean frozen into contrast.
        #[arg(long)]
        ref_mean: Option<f64>,
        /// Fixed `L/100` for saturation; by default each entry's own.
        #[arg(long)]
        ref_lum: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR, SSIM and ΔE between two images, as one line of JSON.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Compare parallel fitting with sequential chains over a set of pairs.
    Harness {
        /// JSON list of `{input, target, masks?}`; paths relative to the file.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 5)]
        orders: usize,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Palette masks per pair when an entry has no `masks`.
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = rsf_core::fit::DEFAULT_ITERATIONS)]
        iters: usize,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP editing service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Persist sessions here.
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long, default_value_t = 480)]
        preview_cap: usize,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    input: PathBuf,
    target: PathBuf,
    #[serde(default)]
    masks: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(1)
        }
    }
}

/// The error chain on one line, skipping causes already quoted by the
/// message above them.
fn one_line(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

/// `RSF_THREADS` caps the worker pool.
fn configure_threads() -> std::result::Result<(), String> {
    let Ok(value) = std::env::var("RSF_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("RSF_THREADS must be a positive integer, got `{value}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Apply {
            input,
            recipe,
            output,
            theta_bound,
        } => {
            let img: Image<f64> = load_image(&input)?;
            let recipe = load_recipe(&recipe, theta_bound)?;
            save_image(&render(&img, &recipe)?, &output)?;
        }
        Command::Fit {
            input,
            target,
            masks,
            free_masks,
            out,
            loss,
            iters,
            seed,
            lr,
            grid,
            filters,
            global_filters,
        } => {
            let per_mask = filters.unwrap_or_else(FilterKind::tied_set);
            let global = global_filters.unwrap_or_else(FilterKind::shift_set);
            let input: Image<f64> = load_image(&input)?;
            let target: Image<f64> = load_image(&target)?;
            let (cfg, masks) = match (masks, free_masks) {
                (_, Some(k)) => {
                    if k == 0 {
                        bail!("invalid `free_masks`: at least one mask is required");
                    }
                    let cfg = FitConfig {
                        mode: FitMode::FreeMasks { layers: k, grid },
                        layout: FilterLayout::uniform(per_mask, global),
                        ..FitConfig::free_masks(k)
                    };
                    (cfg, None)
                }
                (Some(dir), None) => {
                    let cfg = FitConfig {
                        layout: FilterLayout::uniform(per_mask, global),
                        ..FitConfig::default()
                    };
                    (cfg, Some(load_mask_dir(&dir)?))
                }
                // No masks: every filter on the global layer.
                (None, None) => {
                    let mut all = per_mask;
                    all.extend(global);
                    let cfg = FitConfig {
                        layout: FilterLayout::uniform(Vec::new(), all),
                        ..FitConfig::default()
                    };
                    (cfg, Some(Vec::new()))
                }
            };
            let cfg = FitConfig {
                iterations: iters,
                loss: loss.into(),
                seed,
                lr,
                ..cfg
            };
            let report = fit(&input, &target, masks.as_deref(), &cfg)?;
            fs::create_dir_all(&out).with_context(|| format!("creating `{}`", out.display()))?;
            let file = report.to_file(cfg.loss);
            write_atomic(out.join("report.json"), serde_json::to_string_pretty(&file)?.as_bytes())?;
            save_recipe(&report.recipe, &out)?;
            save_image(&render(&input, &report.recipe)?, out.join("output.png"))?;
            println!("{}", serde_json::to_string(&report.metrics)?);
        }
        Command::PaletteMasks { input, k, out, seed } => {
            if k == 0 {
                bail!("invalid `k`: at least one color is required");
            }
            let img: Image<f64> = load_image(&input)?;
            let palette = extract_palette(&img, k, seed)?;
            let kernel = SmoothKernel::with_sigma(DEFAULT_MASK_SIGMA)?;
            let masks = palette_to_masks(&img, &palette, DEFAULT_TEMPERATURE, Some(&kernel))?;
            fs::create_dir_all(&out).with_context(|| format!("creating `{}`", out.display()))?;
            for (i, m) in masks.iter().enumerate() {
                rsf_core::io::save_mask(m, out.join(default_mask_name(i)))?;
            }
            let file = palette.to_file(k);
            write_atomic(out.join("palette.json"), serde_json::to_string_pretty(&file)?.as_bytes())?;
            if palette.shortfall {
                tracing::warn!(requested = k, found = palette.len(), "image has fewer distinct colors than requested");
            }
        }
        Command::Bake {
            recipe,
            size,
            ref_mean,
            ref_lum,
            out,
        } => {
            let recipe = load_recipe::<f64>(&recipe, DEFAULT_THETA_BOUND)?;
            let reference = BakeReference {
                mean: ref_mean,
                lum: ref_lum.map_or(LumMode::Lattice, LumMode::Fixed),
            };
            let lut = bake_recipe(&recipe, size, &reference)?;
            let title = out.file_stem().and_then(|s| s.to_str()).unwrap_or("rsf");
            write_atomic(&out, lut.to_cube(title).as_bytes())?;
        }
        Command::Metrics { a, b } => {
            let a: Image<f64> = load_image(&a)?;
            let b: Image<f64> = load_image(&b)?;
            println!("{}", serde_json::to_string(&MetricReport::compute(&a, &b)?)?);
        }
        Command::Harness {
            pairs,
            orders,
            seeds,
            seed,
            k,
            iters,
            out,
        } => {
            let text = fs::read_to_string(&pairs).with_context(|| format!("reading `{}`", pairs.display()))?;
            let entries: Vec<ManifestEntry> =
                serde_json::from_str(&text).with_context(|| format!("invalid manifest `{}`", pairs.display()))?;
            let base = pairs.parent().unwrap_or(Path::new("."));
            let loaded = entries
                .iter()
                .enumerate()
                .map(|(i, e)| load_pair(base, e, k, seed).with_context(|| format!("pairs[{i}]")))
                .collect::<Result<Vec<_>>>()?;
            let mut cfg = HarnessConfig::<f64> {
                n_orders: orders,
                n_seeds: seeds,
                seed,
                ..HarnessConfig::default()
            };
            cfg.fit.iterations = iters;
            let report = run_seq_vs_parallel_harness(&loaded, &cfg)?;
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => write_atomic(path, json.as_bytes())?,
                None => println!("{json}"),
            }
        }
        Command::Serve {
            port,
            host,
            root,
            preview_cap,
        } => {
            let config = rsf_service::ServiceConfig {
                root,
                preview_cap,
                ..rsf_service::ServiceConfig::default()
            };
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(rsf_service::serve(SocketAddr::new(host, port), config))?;
        }
    }
    Ok(())
}

/// `mask_*.png` files of `dir` in name order.
fn load_mask_dir(dir: &Path) -> Result<Vec<Mask<f64>>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("invalid `masks`: cannot read `{}`", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("mask_") && n.ends_with(".png"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("invalid `masks`: no mask_*.png files in `{}`", dir.display());
    }
    Ok(paths.iter().map(load_mask).collect::<rsf_core::Result<_>>()?)
}

fn load_pair(base: &Path, e: &ManifestEntry, k: usize, seed: u64) -> Result<HarnessPair<f64>> {
    let input: Image<f64> = load_image(base.join(&e.input))?;
    let target: Image<f64> = load_image(base.join(&e.target))?;
    input.ensure_same_dims(&target)?;
    let masks = match &e.masks {
        Some(dir) => load_mask_dir(&base.join(dir))?,
        None => {
            let palette = extract_palette(&input, k, seed)?;
            let kernel = SmoothKernel::with_sigma(DEFAULT_MASK_SIGMA)?;
            palette_to_masks(&input, &palette, DEFAULT_TEMPERATURE, Some(&kernel))?
        }
    };
    Ok(HarnessPair { input, target, masks })
}
