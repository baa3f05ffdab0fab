//! Baking mask-independent filter chains into a 3-D LUT, trilinear
//! application, and `.cube` text I/O.

use std::fmt::Write as _;

use crate::color::pixel_luminance;
use crate::error::{Error, Result};
use crate::filters::{increment_at, FilterArg, FilterConstants, FilterKind};
use crate::image::Image;
use crate::render::{LayerMask, Recipe};
use crate::scalar::Scalar;

pub const DEFAULT_LUT_SIZE: usize = 33;

/// Lattice of `size³` RGB entries over `[0, 1]³`, red fastest-varying.
#[derive(Debug, Clone, PartialEq)]
pub struct Lut3D<T> {
    size: usize,
    table: Vec<[T; 3]>,
}

/// Where the saturation filter reads lightness from while baking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LumMode<T> {
    /// `L` of the lattice color itself (exact for a pointwise filter).
    Lattice,
    /// A frozen value of `L/100`.
    Fixed(T),
}

/// Image statistics a LUT cannot observe, frozen at bake time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BakeReference<T> {
    /// Image mean used by contrast; required when contrast is baked.
    pub mean: Option<T>,
    pub lum: LumMode<T>,
}

impl<T: Scalar> Default for BakeReference<T> {
    fn default() -> Self {
        Self {
            mean: None,
            lum: LumMode::Lattice,
        }
    }
}

impl<T: Scalar> Lut3D<T> {
    pub fn from_table(size: usize, table: Vec<[T; 3]>) -> Result<Self> {
        if size < 2 {
            return Err(Error::field("size", "lattice side must be at least 2"));
        }
        if table.len() != size * size * size {
            return Err(Error::field(
                "table",
                format!("expected {} entries, got {}", size * size * size, table.len()),
            ));
        }
        if table.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("table".into()));
        }
        Ok(Self { size, table })
    }

    pub fn identity(size: usize) -> Result<Self> {
        bake(&[], &FilterConstants::default(), size, &BakeReference::default())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn table(&self) -> &[[T; 3]] {
        &self.table
    }

    #[inline]
    fn index(&self, r: usize, g: usize, b: usize) -> usize {
        (b * self.size + g) * self.size + r
    }

    #[inline]
    pub fn entry(&self, r: usize, g: usize, b: usize) -> [T; 3] {
        self.table[self.index(r, g, b)]
    }

    /// Trilinear lookup of one color.
    pub fn lookup(&self, rgb: [T; 3]) -> [T; 3] {
        let last = self.size - 1;
        let scale = T::from_usize_lossy(last);
        let mut i0 = [0usize; 3];
        let mut f = [T::zero(); 3];
        for c in 0..3 {
            let s = rgb[c].clamp01() * scale;
            let base = s.floor().to_usize().unwrap_or(0).min(last - 1);
            i0[c] = base;
            f[c] = s - T::from_usize_lossy(base);
        }
        let one = T::one();
        let mut out = [T::zero(); 3];
        for (db, wb) in [(0, one - f[2]), (1, f[2])] {
            for (dg, wg) in [(0, one - f[1]), (1, f[1])] {
                for (dr, wr) in [(0, one - f[0]), (1, f[0])] {
                    let w = wr * wg * wb;
                    if w == T::zero() {
                        continue;
                    }
                    let e = self.entry(i0[0] + dr, i0[1] + dg, i0[2] + db);
                    for c in 0..3 {
                        out[c] += w * e[c];
                    }
                }
            }
        }
        out
    }

    /// `.cube` text: `TITLE`, `LUT_3D_SIZE`, domain, then `size³` rows with
    /// six fraction digits, red fastest.
    pub fn to_cube(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "TITLE \"{}\"", title.replace('"', "'"));
        let _ = writeln!(s, "LUT_3D_SIZE {}", self.size);
        let _ = writeln!(s, "DOMAIN_MIN 0 0 0");
        let _ = writeln!(s, "DOMAIN_MAX 1 1 1");
        for e in &self.table {
            let _ = writeln!(
                s,
                "{:.6} {:.6} {:.6}",
                e[0].to_f64_lossy(),
                e[1].to_f64_lossy(),
                e[2].to_f64_lossy()
            );
        }
        s
    }

    pub fn parse_cube(text: &str) -> Result<Self> {
        let mut size = None;
        let mut table = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |message: String| Error::Cube { line: n + 1, message };
            if line.is_empty() || line.starts_with('#') || line.starts_with("TITLE") {
                continue;
            }
            if let Some(rest) = line.strip_prefix("LUT_3D_SIZE") {
                let s: usize = rest.trim().parse().map_err(|_| err(format!("bad size `{}`", rest.trim())))?;
                size = Some(s);
                continue;
            }
            if let Some(rest) = line
                .strip_prefix("DOMAIN_MIN")
                .map(|r| (r, 0.0))
                .or_else(|| line.strip_prefix("DOMAIN_MAX").map(|r| (r, 1.0)))
            {
                let (values, want) = rest;
                for v in values.split_whitespace() {
                    let v: f64 = v.parse().map_err(|_| err(format!("bad domain value `{v}`")))?;
                    if v != want {
                        return Err(err("only the [0, 1] domain is supported".into()));
                    }
                }
                continue;
            }
            if line.starts_with("LUT_1D_SIZE") {
                return Err(err("1-D LUTs are not supported".into()));
            }
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| err(format!("bad value `{v}`"))))
                .collect::<Result<_>>()?;
            if values.len() != 3 {
                return Err(err(format!("expected 3 values, got {}", values.len())));
            }
            table.push([T::lit(values[0]), T::lit(values[1]), T::lit(values[2])]);
        }
        let size = size.ok_or(Error::Cube {
            line: 0,
            message: "missing LUT_3D_SIZE".into(),
        })?;
        Self::from_table(size, table)
    }
}

/// Bakes `clamp(X + Σ ΔF(θ, X))` at every lattice color.
pub fn bake<T: Scalar>(
    args: &[FilterArg<T>],
    constants: &FilterConstants<T>,
    size: usize,
    reference: &BakeReference<T>,
) -> Result<Lut3D<T>> {
    if size < 2 {
        return Err(Error::field("size", "lattice side must be at least 2"));
    }
    constants.validate()?;
    let needs_mean = args.iter().any(|a| a.kind.needs_image_mean());
    let mean = match (reference.mean, needs_mean) {
        (Some(m), _) => m,
        (None, false) => T::zero(),
        (None, true) => {
            return Err(Error::field("ref_mean", "contrast needs a reference image mean"));
        }
    };
    for (i, a) in args.iter().enumerate() {
        if !a.theta.is_finite() {
            return Err(Error::NonFinite(format!("filters[{i}].theta")));
        }
    }
    let mut args = args.to_vec();
    args.sort_by_key(|a| a.kind);
    let scale = T::from_usize_lossy(size - 1);
    let mut table = Vec::with_capacity(size * size * size);
    for b in 0..size {
        for g in 0..size {
            for r in 0..size {
                let x = [r, g, b].map(|i| T::from_usize_lossy(i) / scale);
                let lum = match reference.lum {
                    LumMode::Lattice => pixel_luminance(x),
                    LumMode::Fixed(v) => v,
                };
                let mut out = x;
                for a in &args {
                    let d = increment_at(a.kind, a.theta, x, mean, lum, constants);
                    for c in 0..3 {
                        out[c] += d[c];
                    }
                }
                table.push(out.map(|v| v.clamp01()));
            }
        }
    }
    Ok(Lut3D { size, table })
}

/// Bakes a recipe whose layers are all global (or carry an all-ones mask).
pub fn bake_recipe<T: Scalar>(recipe: &Recipe<T>, size: usize, reference: &BakeReference<T>) -> Result<Lut3D<T>> {
    recipe.validate()?;
    let mut args = Vec::new();
    for (i, layer) in recipe.layers.iter().enumerate() {
        match &layer.mask {
            LayerMask::Global => {}
            LayerMask::Region(m) if m.is_all(T::one()) => {}
            LayerMask::Region(_) => return Err(Error::MaskBoundLayer(i)),
        }
        args.extend_from_slice(&layer.args);
    }
    bake(&args, &recipe.constants, size, reference)
}

pub fn apply_lut<T: Scalar>(lut: &Lut3D<T>, img: &Image<T>) -> Image<T> {
    let mut data = Vec::with_capacity(img.data().len());
    for p in img.pixels() {
        data.extend_from_slice(&lut.lookup(p));
    }
    Image::from_raw(img.width(), img.height(), data)
}

/// True when `kind` can be baked exactly given the reference.
pub fn is_pointwise(kind: FilterKind) -> bool {
    !kind.needs_image_mean()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{Channel, Channels};
    use crate::image::Mask;
    use crate::render::Layer;

    #[test]
    fn identity_lattice_entries_are_coordinates() {
        let lut = Lut3D::<f64>::identity(5).unwrap();
        for b in 0..5 {
            for g in 0..5 {
                for r in 0..5 {
                    assert_eq!(lut.entry(r, g, b), [r as f64 / 4.0, g as f64 / 4.0, b as f64 / 4.0]);
                }
            }
        }
    }

    #[test]
    fn shift_r_lattice() {
        let args = [FilterArg::new(FilterKind::Shift(Channel::R), 0.1f64)];
        let lut = bake(&args, &FilterConstants::default(), 9, &BakeReference::default()).unwrap();
        for b in 0..9 {
            for g in 0..9 {
                for r in 0..9 {
                    let e = lut.entry(r, g, b);
                    assert_eq!(e[0], (r as f64 / 8.0 + 0.1).min(1.0));
                    assert_eq!(e[1], g as f64 / 8.0);
                    assert_eq!(e[2], b as f64 / 8.0);
                }
            }
        }
    }

    #[test]
    fn identity_application_and_node_exactness() {
        let lut = Lut3D::<f64>::identity(17).unwrap();
        let img = Image::from_fn(6, 5, |x, y| [x as f64 * 0.17, y as f64 * 0.21, 0.333]);
        let out = apply_lut(&lut, &img);
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let args = [FilterArg::new(FilterKind::Midtones(Channels::Tied), 0.7f64)];
        let lut = bake(&args, &FilterConstants::default(), 5, &BakeReference::default()).unwrap();
        let node = [0.25, 0.75, 1.0];
        assert_eq!(lut.lookup(node), lut.entry(1, 3, 4));
    }

    #[test]
    fn contrast_needs_reference_mean() {
        let args = [FilterArg::new(FilterKind::Contrast, 0.2f64)];
        assert!(bake(&args, &FilterConstants::default(), 3, &BakeReference::default()).is_err());
        let reference = BakeReference { mean: Some(0.5), lum: LumMode::Lattice };
        assert!(bake(&args, &FilterConstants::default(), 3, &reference).is_ok());
    }

    #[test]
    fn mask_bound_layers_are_rejected() {
        let arg = vec![FilterArg::new(FilterKind::Hue, 0.2f64)];
        let ones = Recipe::new(vec![Layer::region(Mask::constant(4, 4, 1.0), arg.clone())]);
        assert!(bake_recipe(&ones, 5, &BakeReference::default()).is_ok());
        let half = Recipe::new(vec![Layer::global(arg.clone()), Layer::region(Mask::constant(4, 4, 0.5), arg)]);
        assert!(matches!(
            bake_recipe(&half, 5, &BakeReference::default()),
            Err(Error::MaskBoundLayer(1))
        ));
    }

    #[test]
    fn cube_text_round_trip() {
        let args = [FilterArg::new(FilterKind::Hue, 0.3f64)];
        let lut = bake(&args, &FilterConstants::default(), 4, &BakeReference::default()).unwrap();
        let text = lut.to_cube("hue");
        assert!(text.starts_with("TITLE \"hue\"\nLUT_3D_SIZE 4\n"));
        assert_eq!(text.lines().count(), 4 + 64);
        let back = Lut3D::<f64>::parse_cube(&text).unwrap();
        for (a, b) in back.table().iter().flatten().zip(lut.table().iter().flatten()) {
            assert!((a - b).abs() <= 5e-7);
        }
        assert!(Lut3D::<f64>::parse_cube("LUT_3D_SIZE 2\n0 0 0\n").is_err());
        assert!(matches!(Lut3D::<f64>::parse_cube("LUT_3D_SIZE 2\n0 0\n"), Err(Error::Cube { line: 2, .. })));
    }
}
