//! JSON recipe documents.
//!
//! ```json
//! {
//!   "version": 1,
//!   "constants": { "alpha_h": 1.0, "alpha_t1": 1.0, "alpha_t2": 1.0,
//!                  "alpha_t3": 0.5, "alpha_t4": 1.0, "alpha_t5": 1.0 },
//!   "layers": [
//!     { "mask": "mask_00.png", "sigma": 2.0,
//!       "filters": [ { "kind": "highlights", "theta": 0.2 } ] },
//!     { "mask": "global", "sigma": 0.0,
//!       "filters": [ { "kind": "shift_r", "theta": 0.01 } ] }
//!   ]
//! }
//! ```
//!
//! Mask paths are resolved relative to the recipe file. Unknown fields are
//! rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::filters::{FilterArg, FilterConstants, FilterKind};
use crate::image::Mask;
use crate::io::{decode_mask, load_mask, save_mask, write_atomic};
use crate::render::{Layer, LayerMask, Recipe};
use crate::scalar::Scalar;

pub const RECIPE_VERSION: u32 = 1;

/// Default bound on `|θ|` for recipes and fitting.
pub const DEFAULT_THETA_BOUND: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeFile {
    pub version: u32,
    #[serde(default)]
    pub constants: ConstantsFile,
    pub layers: Vec<LayerFile>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsFile {
    pub alpha_h: f64,
    pub alpha_t1: f64,
    pub alpha_t2: f64,
    pub alpha_t3: f64,
    pub alpha_t4: f64,
    pub alpha_t5: f64,
}

impl Default for ConstantsFile {
    fn default() -> Self {
        FilterConstants::<f64>::default().into()
    }
}

impl<T: Scalar> From<FilterConstants<T>> for ConstantsFile {
    fn from(c: FilterConstants<T>) -> Self {
        let t = c.alpha_t.map(|v| v.to_f64_lossy());
        Self {
            alpha_h: c.alpha_h.to_f64_lossy(),
            alpha_t1: t[0],
            alpha_t2: t[1],
            alpha_t3: t[2],
            alpha_t4: t[3],
            alpha_t5: t[4],
        }
    }
}

impl ConstantsFile {
    pub fn to_constants<T: Scalar>(&self) -> FilterConstants<T> {
        FilterConstants {
            alpha_h: T::lit(self.alpha_h),
            alpha_t: [self.alpha_t1, self.alpha_t2, self.alpha_t3, self.alpha_t4, self.alpha_t5].map(T::lit),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskRef {
    Global,
    Path(String),
}

impl Serialize for MaskRef {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MaskRef::Global => s.serialize_str("global"),
            MaskRef::Path(p) => s.serialize_str(p),
        }
    }
}

impl<'de> Deserialize<'de> for MaskRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s == "global" { MaskRef::Global } else { MaskRef::Path(s) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerFile {
    pub mask: MaskRef,
    #[serde(default)]
    pub sigma: f64,
    pub filters: Vec<FilterEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterEntry {
    pub kind: FilterKind,
    pub theta: f64,
}

impl RecipeFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: RecipeFile = serde_json::from_str(text)?;
        file.check()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("recipe serializes")
    }

    /// Structural checks that do not need the mask files.
    pub fn check(&self) -> Result<()> {
        if self.version != RECIPE_VERSION {
            return Err(Error::field(
                "version",
                format!("unsupported version {}, expected {RECIPE_VERSION}", self.version),
            ));
        }
        self.constants.to_constants::<f64>().validate()?;
        for (i, layer) in self.layers.iter().enumerate() {
            if !layer.sigma.is_finite() || layer.sigma < 0.0 {
                return Err(Error::field(format!("layers[{i}].sigma"), "must be finite and non-negative"));
            }
            if layer.filters.is_empty() {
                return Err(Error::field(format!("layers[{i}].filters"), "at least one filter is required"));
            }
            for (j, f) in layer.filters.iter().enumerate() {
                if !f.theta.is_finite() {
                    return Err(Error::NonFinite(format!("layers[{i}].filters[{j}].theta")));
                }
            }
        }
        Ok(())
    }

    /// Rejects any `|θ|` above `bound`.
    pub fn check_theta_bound(&self, bound: f64) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            for (j, f) in layer.filters.iter().enumerate() {
                if f.theta.abs() > bound {
                    return Err(Error::field(
                        format!("layers[{i}].filters[{j}].theta"),
                        format!("{} exceeds the bound ±{bound}", f.theta),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Builds the in-memory recipe; `load` fetches mask `i` by its path.
    pub fn resolve_with<T: Scalar>(
        &self,
        mut load: impl FnMut(usize, &str) -> Result<Mask<T>>,
    ) -> Result<Recipe<T>> {
        self.check()?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, lf) in self.layers.iter().enumerate() {
            let mask = match &lf.mask {
                MaskRef::Global => LayerMask::Global,
                MaskRef::Path(p) => LayerMask::Region(load(i, p)?),
            };
            layers.push(Layer {
                mask,
                args: lf.filters.iter().map(|f| FilterArg::new(f.kind, T::lit(f.theta))).collect(),
                sigma: T::lit(lf.sigma),
            });
        }
        let mut recipe = Recipe::new(layers);
        recipe.constants = self.constants.to_constants();
        Ok(recipe)
    }

    /// Resolves mask paths relative to `base_dir`.
    pub fn resolve<T: Scalar>(&self, base_dir: &Path) -> Result<Recipe<T>> {
        self.resolve_with(|i, p| {
            let path = base_dir.join(p);
            load_mask(&path).map_err(|e| match e {
                Error::Io { source, .. } => Error::field(
                    format!("layers[{i}].mask"),
                    format!("cannot read `{}`: {source}", path.display()),
                ),
                other => other,
            })
        })
    }

    /// Serializable form of `recipe`; region masks are referenced by
    /// `mask_name(n)` for the n-th region layer.
    pub fn from_recipe<T: Scalar>(recipe: &Recipe<T>, mask_name: impl Fn(usize) -> String) -> Self {
        let mut region = 0;
        let layers = recipe
            .layers
            .iter()
            .map(|layer| {
                let mask = match &layer.mask {
                    LayerMask::Global => MaskRef::Global,
                    LayerMask::Region(_) => {
                        region += 1;
                        MaskRef::Path(mask_name(region - 1))
                    }
                };
                LayerFile {
                    mask,
                    sigma: layer.sigma.to_f64_lossy(),
                    filters: layer
                        .args
                        .iter()
                        .map(|a| FilterEntry {
                            kind: a.kind,
                            theta: a.theta.to_f64_lossy(),
                        })
                        .collect(),
                }
            })
            .collect();
        Self {
            version: RECIPE_VERSION,
            constants: recipe.constants.into(),
            layers,
        }
    }
}

pub fn default_mask_name(index: usize) -> String {
    format!("mask_{index:02}.png")
}

/// Reads a recipe document and its masks; `|θ|` must respect `theta_bound`.
pub fn load_recipe<T: Scalar>(path: impl AsRef<Path>, theta_bound: f64) -> Result<Recipe<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = RecipeFile::from_json(&text)?;
    file.check_theta_bound(theta_bound)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    file.resolve(base)
}

/// Parses a recipe whose masks come from memory (`masks[i]` for the i-th
/// region layer, in order), ignoring the stored paths.
pub fn recipe_from_json_with_masks<T: Scalar>(text: &str, masks: &[Mask<T>]) -> Result<Recipe<T>> {
    let file = RecipeFile::from_json(text)?;
    let mut next = 0;
    file.resolve_with(|i, _| {
        let m = masks
            .get(next)
            .cloned()
            .ok_or_else(|| Error::field(format!("layers[{i}].mask"), "no mask available for this layer"))?;
        next += 1;
        Ok(m)
    })
}

/// Writes `recipe.json` plus one 8-bit PNG per region mask into `dir`.
pub fn save_recipe<T: Scalar>(recipe: &Recipe<T>, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file = RecipeFile::from_recipe(recipe, default_mask_name);
    let masks = recipe.layers.iter().filter_map(|l| match &l.mask {
        LayerMask::Region(m) => Some(m),
        LayerMask::Global => None,
    });
    for (i, mask) in masks.enumerate() {
        save_mask(mask, dir.join(default_mask_name(i)))?;
    }
    let path = dir.join("recipe.json");
    write_atomic(&path, file.to_json().as_bytes())?;
    Ok(path)
}

/// Masks decoded from in-memory PNG bytes, for callers that already hold
/// the files.
pub fn decode_masks<T: Scalar>(pngs: &[Vec<u8>]) -> Result<Vec<Mask<T>>> {
    pngs.iter()
        .enumerate()
        .map(|(i, b)| decode_mask(b, &format!("mask {i}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::Channels;

    #[test]
    fn theta_text_round_trip_is_exact() {
        let theta: f64 = 0.024299496294629103;
        let recipe = Recipe::new(vec![Layer::global(vec![FilterArg::new(FilterKind::Hue, theta)])]);
        let text = RecipeFile::from_recipe(&recipe, default_mask_name).to_json();
        let back: Recipe<f64> = RecipeFile::from_json(&text).unwrap().resolve(Path::new(".")).unwrap();
        assert_eq!(back.layers[0].args[0].theta.to_bits(), theta.to_bits());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"version":1,"layers":[],"extra":true}"#;
        assert!(RecipeFile::from_json(text).is_err());
        let text = r#"{"version":1,"layers":[{"mask":"global","sigma":0,"filters":[{"kind":"hue","theta":0.1,"x":1}]}]}"#;
        assert!(RecipeFile::from_json(text).is_err());
    }

    #[test]
    fn errors_name_the_offending_field() {
        let text = r#"{"version":2,"layers":[]}"#;
        assert!(RecipeFile::from_json(text).unwrap_err().to_string().contains("version"));
        let text = r#"{"version":1,"layers":[{"mask":"global","sigma":-1,"filters":[{"kind":"hue","theta":0.1}]}]}"#;
        assert!(RecipeFile::from_json(text).unwrap_err().to_string().contains("layers[0].sigma"));
        let text = r#"{"version":1,"layers":[{"mask":"global","sigma":0,"filters":[{"kind":"hue","theta":1.5}]}]}"#;
        let f = RecipeFile::from_json(text).unwrap();
        assert!(f.check_theta_bound(1.0).unwrap_err().to_string().contains("layers[0].filters[0].theta"));
        let text = r#"{"version":1,"layers":[{"mask":"global","sigma":0,"filters":[{"kind":"sparkle","theta":0.1}]}]}"#;
        assert!(RecipeFile::from_json(text).unwrap_err().to_string().contains("sparkle"));
    }

    #[test]
    fn save_then_load_reproduces_recipe() {
        let dir = tempfile::tempdir().unwrap();
        let mask = Mask::from_fn(4, 3, |x, y| ((x + y) * 30) as f64 / 255.0);
        let recipe = Recipe::new(vec![
            Layer::region(
                mask,
                vec![FilterArg::new(FilterKind::Midtones(Channels::Tied), -0.25)],
            )
            .with_sigma(1.5),
            Layer::global(vec![FilterArg::new(FilterKind::Shift(crate::filters::Channel::B), 0.05)]),
        ]);
        let path = save_recipe(&recipe, dir.path()).unwrap();
        let back: Recipe<f64> = load_recipe(&path, DEFAULT_THETA_BOUND).unwrap();
        assert_eq!(back, recipe);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"mask_00.png\"") && text.contains("\"global\""));
    }

    #[test]
    fn missing_mask_file_names_the_layer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("recipe.json");
        fs::write(
            &path,
            r#"{"version":1,"layers":[{"mask":"nope.png","sigma":0,"filters":[{"kind":"hue","theta":0.1}]}]}"#,
        )
        .unwrap();
        let err = load_recipe::<f64>(&path, 1.0).unwrap_err();
        assert!(err.to_string().contains("layers[0].mask"), "{err}");
    }
}
