//! Request and response bodies. Images and masks travel as base64 PNG (or
//! JPEG for uploads) inside JSON, except for the raw-PNG preview and export
//! endpoints.

use rsf_core::fit::LossKind;
use rsf_core::metrics::MetricReport;
use rsf_core::recipe_file::RecipeFile;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Base64 PNG or JPEG.
    pub image: String,
    /// Base64 8-bit grayscale PNGs at the image size.
    #[serde(default)]
    pub masks: Vec<String>,
    /// Generate this many palette masks (ignored when `masks` is given).
    #[serde(default)]
    pub palette_k: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Initial recipe; its n-th mask layer uses the n-th mask.
    #[serde(default)]
    pub recipe: Option<RecipeFile>,
    /// Fit the initial recipe to a target instead.
    #[serde(default)]
    pub fit: Option<AutoFit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoFit {
    /// Base64 PNG or JPEG, same size as the image.
    pub target: String,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub loss: Option<LossKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskInfo {
    pub id: usize,
    pub name: String,
    /// Recipe layer that uses the mask.
    pub layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub id: String,
    pub revision: u64,
    pub width: usize,
    pub height: usize,
    pub preview_width: usize,
    pub preview_height: usize,
    pub masks: Vec<MaskInfo>,
    pub recipe: RecipeFile,
    pub preview_png: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Patch {
    pub layer: usize,
    /// With `theta`: sets (or appends) this filter on the layer.
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default)]
    pub theta: Option<f64>,
    /// Smoothing σ in full-resolution pixels.
    #[serde(default)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchRequest {
    pub patches: Vec<Patch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResponse {
    pub revision: u64,
    pub recipe: RecipeFile,
    pub preview_png: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskImage {
    pub id: usize,
    pub name: String,
    pub layer: usize,
    pub width: usize,
    pub height: usize,
    pub png: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskList {
    pub masks: Vec<MaskImage>,
}
