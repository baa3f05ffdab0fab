//! Session state and the synchronous editing operations behind the routes.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;

use rsf_core::fit::{fit, FilterLayout, FitConfig, LossKind};
use rsf_core::io::{decode_image, decode_mask, encode_png, load_image, probe_dimensions, save_image};
use rsf_core::metrics::MetricReport;
use rsf_core::palette::{extract_palette, palette_to_masks, DEFAULT_MASK_SIGMA, DEFAULT_TEMPERATURE};
use rsf_core::recipe_file::{load_recipe, save_recipe, RecipeFile};
use rsf_core::smooth::SmoothKernel;
use rsf_core::{FilterArg, FilterKind, Image, Layer, LayerMask, Mask, Recipe};

use crate::api::{AutoFit, MaskInfo, Patch};
use crate::error::{ApiError, ApiResult};
use crate::ServiceConfig;

const MAX_PALETTE_K: usize = 16;
const MAX_FIT_ITERATIONS: usize = 20_000;

pub struct Session {
    pub id: String,
    pub source: Arc<Image<f64>>,
    pub preview_source: Arc<Image<f64>>,
    /// Full-resolution masks, quantized to 8 bits so that exported PNGs
    /// reproduce them exactly.
    pub masks: Vec<Mask<f64>>,
    pub recipe: Recipe<f64>,
    pub undo: VecDeque<Recipe<f64>>,
    pub revision: u64,
    preview_cache: Option<(u64, Arc<Vec<u8>>)>,
}

/// Everything `POST /sessions` needs, already base64-decoded.
pub struct NewSession {
    pub image: Vec<u8>,
    pub masks: Vec<Vec<u8>>,
    pub palette_k: Option<usize>,
    pub seed: u64,
    pub recipe: Option<RecipeFile>,
    pub fit: Option<(AutoFit, Vec<u8>)>,
}

fn check_size(bytes: &[u8], label: &str, max_pixels: usize) -> ApiResult<(usize, usize)> {
    let (w, h) = probe_dimensions(bytes, label)?;
    if w.saturating_mul(h) > max_pixels {
        return Err(ApiError::new(
            axum::http::StatusCode::PAYLOAD_TOO_LARGE,
            "too_large",
            format!("{label} is {w}x{h}, over the {max_pixels}-pixel limit"),
        )
        .with_field(label));
    }
    Ok((w, h))
}

/// Mask layers carry the tied filters, the global layer the tied filters
/// plus the channel shifts, all at θ = 0.
pub fn identity_recipe(masks: &[Mask<f64>]) -> Recipe<f64> {
    let zeros = |kinds: Vec<FilterKind>| kinds.into_iter().map(|k| FilterArg::new(k, 0.0)).collect::<Vec<_>>();
    let mut layers: Vec<Layer<f64>> = masks
        .iter()
        .map(|m| Layer::region(m.clone(), zeros(FilterKind::tied_set())))
        .collect();
    let mut global = FilterKind::tied_set();
    global.extend(FilterKind::shift_set());
    layers.push(Layer::global(zeros(global)));
    Recipe::new(layers)
}

fn region_count(recipe: &Recipe<f64>) -> usize {
    recipe
        .layers
        .iter()
        .filter(|l| matches!(l.mask, LayerMask::Region(_)))
        .count()
}

impl Session {
    pub fn create(id: String, req: NewSession, cfg: &ServiceConfig) -> ApiResult<(Self, Option<MetricReport>)> {
        let (w, h) = check_size(&req.image, "image", cfg.max_pixels)?;
        let source: Image<f64> = decode_image(&req.image, "image")?;

        let masks = if !req.masks.is_empty() {
            let mut out = Vec::with_capacity(req.masks.len());
            for (i, bytes) in req.masks.iter().enumerate() {
                let field = format!("masks[{i}]");
                check_size(bytes, &field, cfg.max_pixels)?;
                let m: Mask<f64> = decode_mask(bytes, &field)?;
                if m.dims() != (w, h) {
                    return Err(ApiError::invalid(
                        field,
                        format!("mask is {}x{}, image is {w}x{h}", m.width(), m.height()),
                    ));
                }
                out.push(m);
            }
            out
        } else if let Some(k) = req.palette_k {
            if k == 0 || k > MAX_PALETTE_K {
                return Err(ApiError::invalid("palette_k", format!("must be in 1..={MAX_PALETTE_K}")));
            }
            let palette = extract_palette(&source, k, req.seed)?;
            let kernel = SmoothKernel::with_sigma(DEFAULT_MASK_SIGMA)?;
            palette_to_masks(&source, &palette, DEFAULT_TEMPERATURE, Some(&kernel))?
                .iter()
                .map(Mask::quantized_u8)
                .collect()
        } else {
            Vec::new()
        };

        let mut fit_metrics = None;
        let recipe = match (req.recipe, req.fit) {
            (Some(_), Some(_)) => return Err(ApiError::invalid("fit", "give either `recipe` or `fit`, not both")),
            (Some(file), None) => {
                file.check_theta_bound(cfg.theta_bound)?;
                let regions = file
                    .layers
                    .iter()
                    .filter(|l| l.mask != rsf_core::recipe_file::MaskRef::Global)
                    .count();
                if regions != masks.len() {
                    return Err(ApiError::invalid(
                        "recipe.layers",
                        format!("recipe has {regions} mask layers but {} masks were given", masks.len()),
                    ));
                }
                rsf_core::recipe_file::recipe_from_json_with_masks(&file.to_json(), &masks)?
            }
            (None, Some((opts, target))) => {
                let (recipe, metrics) = auto_fit(&source, &masks, &opts, &target, req.seed, cfg)?;
                fit_metrics = Some(metrics);
                recipe
            }
            (None, None) => identity_recipe(&masks),
        };
        let session = Self::from_parts(id, source, masks, recipe, cfg)?;
        Ok((session, fit_metrics))
    }

    fn from_parts(
        id: String,
        source: Image<f64>,
        masks: Vec<Mask<f64>>,
        recipe: Recipe<f64>,
        cfg: &ServiceConfig,
    ) -> ApiResult<Self> {
        let (pw, ph) = source.capped_dims(cfg.preview_cap);
        let preview_source = source.resize_bilinear(pw, ph);
        let session = Self {
            id,
            source: Arc::new(source),
            preview_source: Arc::new(preview_source),
            masks,
            recipe,
            undo: VecDeque::new(),
            revision: 0,
            preview_cache: None,
        };
        // Renderability against the session image.
        session.recipe.validate()?;
        Ok(session)
    }

    pub fn mask_info(&self) -> Vec<MaskInfo> {
        let mut region = 0;
        let mut out = Vec::new();
        for (layer, l) in self.recipe.layers.iter().enumerate() {
            if matches!(l.mask, LayerMask::Region(_)) {
                out.push(MaskInfo {
                    id: region,
                    name: rsf_core::recipe_file::default_mask_name(region),
                    layer,
                });
                region += 1;
            }
        }
        out
    }

    pub fn recipe_file(&self) -> RecipeFile {
        RecipeFile::from_recipe(&self.recipe, rsf_core::recipe_file::default_mask_name)
    }

    /// Recipe for the preview grid: masks resize inside the renderer, σ is
    /// scaled with the image.
    fn preview_recipe(&self) -> Recipe<f64> {
        let scale = self.preview_source.width() as f64 / self.source.width() as f64;
        let mut recipe = self.recipe.clone();
        for layer in &mut recipe.layers {
            layer.sigma *= scale;
        }
        recipe
    }

    /// PNG of the current preview, rendered once per revision.
    pub fn preview_png(&mut self) -> ApiResult<Arc<Vec<u8>>> {
        if let Some((rev, png)) = &self.preview_cache {
            if *rev == self.revision {
                return Ok(png.clone());
            }
        }
        let out = rsf_core::render(&self.preview_source, &self.preview_recipe())?;
        let png = Arc::new(encode_png(&out));
        self.preview_cache = Some((self.revision, png.clone()));
        Ok(png)
    }

    pub fn export_png(&self) -> ApiResult<Vec<u8>> {
        let out = rsf_core::render(&self.source, &self.recipe)?;
        Ok(encode_png(&out))
    }

    /// Applies every patch or none of them.
    pub fn apply_patches(&mut self, patches: &[Patch], cfg: &ServiceConfig) -> ApiResult<()> {
        if patches.is_empty() {
            return Err(ApiError::invalid("patches", "at least one patch is required"));
        }
        let mut next = self.recipe.clone();
        for (i, p) in patches.iter().enumerate() {
            apply_patch(&mut next, i, p, cfg)?;
        }
        next.validate()?;
        let previous = std::mem::replace(&mut self.recipe, next);
        self.push_undo(previous, cfg.undo_limit);
        self.revision += 1;
        Ok(())
    }

    fn push_undo(&mut self, recipe: Recipe<f64>, limit: usize) {
        if limit == 0 {
            return;
        }
        if self.undo.len() == limit {
            self.undo.pop_front();
        }
        self.undo.push_back(recipe);
    }

    pub fn undo(&mut self) -> ApiResult<()> {
        let previous = self
            .undo
            .pop_back()
            .ok_or_else(|| ApiError::conflict("nothing_to_undo", "the undo stack is empty"))?;
        self.recipe = previous;
        self.revision += 1;
        Ok(())
    }

    /// Writes `source.png`, `recipe.json` and the mask PNGs under `dir`.
    pub fn persist(&self, dir: &Path) -> ApiResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| ApiError::internal(format!("{}: {e}", dir.display())))?;
        let src = dir.join("source.png");
        if !src.exists() {
            save_image(self.source.as_ref(), &src)?;
        }
        save_recipe(&self.recipe, dir)?;
        Ok(())
    }

    /// Reloads a session written by [`Session::persist`].
    pub fn restore(id: String, dir: &Path, cfg: &ServiceConfig) -> ApiResult<Self> {
        let source: Image<f64> = load_image(dir.join("source.png"))?;
        let recipe: Recipe<f64> = load_recipe(dir.join("recipe.json"), cfg.theta_bound)?;
        let masks = recipe
            .layers
            .iter()
            .filter_map(|l| match &l.mask {
                LayerMask::Region(m) => Some(m.clone()),
                LayerMask::Global => None,
            })
            .collect();
        Self::from_parts(id, source, masks, recipe, cfg)
    }
}

fn apply_patch(recipe: &mut Recipe<f64>, i: usize, p: &Patch, cfg: &ServiceConfig) -> ApiResult<()> {
    let n = recipe.layers.len();
    let layer = recipe
        .layers
        .get_mut(p.layer)
        .ok_or_else(|| ApiError::invalid(format!("patches[{i}].layer"), format!("index {} out of range (0..{n})", p.layer)))?;
    if p.kind.is_none() && p.sigma.is_none() {
        return Err(ApiError::invalid(format!("patches[{i}]"), "a patch needs `kind` + `theta` or `sigma`"));
    }
    if let Some(kind) = &p.kind {
        let kind: FilterKind = kind
            .parse()
            .map_err(|_| ApiError::invalid(format!("patches[{i}].kind"), format!("unknown filter kind `{kind}`")))?;
        let theta = p
            .theta
            .ok_or_else(|| ApiError::invalid(format!("patches[{i}].theta"), "required with `kind`"))?;
        if !theta.is_finite() || theta.abs() > cfg.theta_bound {
            return Err(ApiError::invalid(
                format!("patches[{i}].theta"),
                format!("{theta} is outside ±{}", cfg.theta_bound),
            ));
        }
        match layer.args.iter_mut().find(|a| a.kind == kind) {
            Some(arg) => arg.theta = theta,
            None => layer.args.push(FilterArg::new(kind, theta)),
        }
    } else if p.theta.is_some() {
        return Err(ApiError::invalid(format!("patches[{i}].kind"), "required with `theta`"));
    }
    if let Some(sigma) = p.sigma {
        if matches!(layer.mask, LayerMask::Global) {
            return Err(ApiError::invalid(format!("patches[{i}].sigma"), "global layers have no mask to smooth"));
        }
        if !sigma.is_finite() || sigma < 0.0 || sigma > cfg.max_sigma {
            return Err(ApiError::invalid(
                format!("patches[{i}].sigma"),
                format!("{sigma} is outside [0, {}]", cfg.max_sigma),
            ));
        }
        layer.sigma = sigma;
    }
    Ok(())
}

/// Fits mask-layer tied filters plus global shifts at preview resolution,
/// then rebinds the full-resolution masks.
fn auto_fit(
    source: &Image<f64>,
    masks: &[Mask<f64>],
    opts: &AutoFit,
    target_bytes: &[u8],
    seed: u64,
    cfg: &ServiceConfig,
) -> ApiResult<(Recipe<f64>, MetricReport)> {
    if masks.is_empty() {
        return Err(ApiError::invalid("fit", "auto-fit needs `masks` or `palette_k`"));
    }
    check_size(target_bytes, "fit.target", cfg.max_pixels)?;
    let target: Image<f64> = decode_image(target_bytes, "fit.target")?;
    if target.dims() != source.dims() {
        return Err(ApiError::invalid(
            "fit.target",
            format!("target is {}x{}, image is {}x{}", target.width(), target.height(), source.width(), source.height()),
        ));
    }
    let iterations = opts.iterations.unwrap_or(rsf_core::fit::DEFAULT_ITERATIONS);
    if iterations == 0 || iterations > MAX_FIT_ITERATIONS {
        return Err(ApiError::invalid("fit.iterations", format!("must be in 1..={MAX_FIT_ITERATIONS}")));
    }
    let (pw, ph) = source.capped_dims(cfg.preview_cap);
    let input = source.resize_bilinear(pw, ph);
    let target = target.resize_bilinear(pw, ph);
    let small: Vec<Mask<f64>> = masks.iter().map(|m| m.resize_bilinear(pw, ph)).collect();
    let fit_cfg = FitConfig {
        iterations,
        loss: opts.loss.unwrap_or(LossKind::L1),
        layout: FilterLayout::uniform(FilterKind::tied_set(), FilterKind::shift_set()),
        theta_bound: cfg.theta_bound,
        seed,
        ..FitConfig::default()
    };
    let report = fit(&input, &target, Some(&small), &fit_cfg)?;
    let mut recipe = report.recipe;
    let mut full = masks.iter();
    for layer in &mut recipe.layers {
        if let LayerMask::Region(m) = &mut layer.mask {
            *m = full.next().expect("one fitted layer per mask").clone();
        }
    }
    if region_count(&recipe) != masks.len() {
        return Err(ApiError::internal("fitted recipe lost a mask layer"));
    }
    Ok((recipe, report.metrics))
}
