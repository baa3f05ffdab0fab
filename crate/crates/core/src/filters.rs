//! Region filter increments `ΔF(θ, X) = F(θ, X) − X` and their θ-derivatives.
//!
//! Every increment is linear in θ within a sign branch: `ΔF = θ · U(sign θ, X)`.
//! Only temperature has distinct branches; for it θ = 0 uses the θ ≥ 0 basis.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::color::{luminance_map, pixel_luminance_grad};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::R, Channel::G, Channel::B];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    fn suffix(self) -> &'static str {
        match self {
            Channel::R => "r",
            Channel::G => "g",
            Channel::B => "b",
        }
    }
}

/// Which channels a tonal filter (shadows, midtones, highlights) drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channels {
    /// One θ shared by R, G and B.
    Tied,
    Only(Channel),
}

impl Channels {
    #[inline]
    fn covers(self, c: usize) -> bool {
        match self {
            Channels::Tied => true,
            Channels::Only(ch) => ch.index() == c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FilterKind {
    Contrast,
    Saturation,
    Hue,
    Temperature,
    Shadows(Channels),
    Midtones(Channels),
    Highlights(Channels),
    /// Constant per-channel offset; θ is the offset itself.
    Shift(Channel),
}

impl FilterKind {
    /// Every kind, in canonical order.
    pub fn all() -> Vec<FilterKind> {
        let mut out = vec![
            FilterKind::Contrast,
            FilterKind::Saturation,
            FilterKind::Hue,
            FilterKind::Temperature,
        ];
        for tone in [FilterKind::Shadows, FilterKind::Midtones, FilterKind::Highlights] {
            out.push(tone(Channels::Tied));
            out.extend(Channel::ALL.map(|c| tone(Channels::Only(c))));
        }
        out.extend(Channel::ALL.map(FilterKind::Shift));
        out
    }

    /// The seven per-region filters with tied tonal channels.
    pub fn tied_set() -> Vec<FilterKind> {
        vec![
            FilterKind::Contrast,
            FilterKind::Saturation,
            FilterKind::Hue,
            FilterKind::Temperature,
            FilterKind::Shadows(Channels::Tied),
            FilterKind::Midtones(Channels::Tied),
            FilterKind::Highlights(Channels::Tied),
        ]
    }

    /// Four global filters plus per-channel tonal filters (13 kinds).
    pub fn per_channel_set() -> Vec<FilterKind> {
        let mut out = vec![
            FilterKind::Contrast,
            FilterKind::Saturation,
            FilterKind::Hue,
            FilterKind::Temperature,
        ];
        for tone in [FilterKind::Shadows, FilterKind::Midtones, FilterKind::Highlights] {
            out.extend(Channel::ALL.map(|c| tone(Channels::Only(c))));
        }
        out
    }

    pub fn shift_set() -> Vec<FilterKind> {
        Channel::ALL.map(FilterKind::Shift).to_vec()
    }

    /// True when the increment depends on the image beyond the pixel itself
    /// (contrast reads the image mean).
    pub fn needs_image_mean(self) -> bool {
        matches!(self, FilterKind::Contrast)
    }

    pub fn is_sign_branched(self) -> bool {
        matches!(self, FilterKind::Temperature)
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tone = |name: &str, ch: &Channels, f: &mut fmt::Formatter<'_>| match ch {
            Channels::Tied => write!(f, "{name}"),
            Channels::Only(c) => write!(f, "{name}_{}", c.suffix()),
        };
        match self {
            FilterKind::Contrast => f.write_str("contrast"),
            FilterKind::Saturation => f.write_str("saturation"),
            FilterKind::Hue => f.write_str("hue"),
            FilterKind::Temperature => f.write_str("temperature"),
            FilterKind::Shadows(ch) => tone("shadows", ch, f),
            FilterKind::Midtones(ch) => tone("midtones", ch, f),
            FilterKind::Highlights(ch) => tone("highlights", ch, f),
            FilterKind::Shift(c) => write!(f, "shift_{}", c.suffix()),
        }
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterKind::all()
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::field("kind", format!("unknown filter kind `{s}`")))
    }
}

impl Serialize for FilterKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FilterKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Gains for the hue and temperature filters. All strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConstants<T> {
    pub alpha_h: T,
    /// Temperature gains: R (θ ≥ 0), R (θ < 0), G (θ < 0), B (θ ≥ 0), B (θ < 0).
    pub alpha_t: [T; 5],
}

impl<T: Scalar> Default for FilterConstants<T> {
    fn default() -> Self {
        Self {
            alpha_h: T::one(),
            alpha_t: [1.0, 1.0, 0.5, 1.0, 1.0].map(T::lit),
        }
    }
}

impl<T: Scalar> FilterConstants<T> {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("alpha_h", self.alpha_h),
            ("alpha_t1", self.alpha_t[0]),
            ("alpha_t2", self.alpha_t[1]),
            ("alpha_t3", self.alpha_t[2]),
            ("alpha_t4", self.alpha_t[3]),
            ("alpha_t5", self.alpha_t[4]),
        ];
        for (name, v) in named {
            if !v.is_finite() || v <= T::zero() {
                return Err(Error::field(name, "must be finite and strictly positive"));
            }
        }
        Ok(())
    }
}

/// One filter bound to a layer: the human-readable knob.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterArg<T> {
    pub kind: FilterKind,
    pub theta: T,
}

impl<T: Scalar> FilterArg<T> {
    pub fn new(kind: FilterKind, theta: T) -> Self {
        Self { kind, theta }
    }
}

/// Per-image quantities shared by all filters: the scalar image mean and
/// the normalized lightness map.
#[derive(Debug, Clone)]
pub struct FilterContext<'a, T> {
    pub image: &'a Image<T>,
    pub mean: T,
    pub lum: Vec<T>,
}

impl<'a, T: Scalar> FilterContext<'a, T> {
    pub fn new(image: &'a Image<T>) -> Self {
        Self {
            image,
            mean: image.mean(),
            lum: luminance_map(image),
        }
    }

    pub fn with_stats(image: &'a Image<T>, mean: T, lum: Vec<T>) -> Self {
        debug_assert_eq!(lum.len(), image.pixel_count());
        Self { image, mean, lum }
    }
}

/// `∂ΔF/∂θ` at one pixel. `negative` selects the θ < 0 branch (temperature
/// only). `lum` is `L/100` of the pixel.
#[inline]
pub fn unit_increment_at<T: Scalar>(
    kind: FilterKind,
    negative: bool,
    rgb: [T; 3],
    mean: T,
    lum: T,
    consts: &FilterConstants<T>,
) -> [T; 3] {
    let zero = T::zero();
    let tone = |ch: Channels, f: &dyn Fn(T) -> T| {
        let mut out = [zero; 3];
        for c in 0..3 {
            if ch.covers(c) {
                out[c] = f(rgb[c]);
            }
        }
        out
    };
    match kind {
        FilterKind::Contrast => rgb.map(|x| x - mean),
        FilterKind::Saturation => rgb.map(|x| x - lum),
        FilterKind::Hue => [
            consts.alpha_h * rgb[0],
            consts.alpha_h * rgb[1],
            -(T::lit(0.5) * consts.alpha_h) * rgb[2],
        ],
        FilterKind::Temperature => {
            let a = &consts.alpha_t;
            if negative {
                [a[1] * rgb[0], a[2] * rgb[1], a[4] * rgb[2]]
            } else {
                [a[0] * rgb[0], zero, a[3] * rgb[2]]
            }
        }
        FilterKind::Shadows(ch) => tone(ch, &|x| T::one() - x),
        FilterKind::Midtones(ch) => tone(ch, &|x| {
            let d = x - T::lit(0.5);
            T::lit(0.25) - d * d
        }),
        FilterKind::Highlights(ch) => tone(ch, &|x| x),
        FilterKind::Shift(c) => {
            let mut out = [zero; 3];
            out[c.index()] = T::one();
            out
        }
    }
}

/// `ΔF(θ, X)` at one pixel.
#[inline]
pub fn increment_at<T: Scalar>(
    kind: FilterKind,
    theta: T,
    rgb: [T; 3],
    mean: T,
    lum: T,
    consts: &FilterConstants<T>,
) -> [T; 3] {
    unit_increment_at(kind, theta < T::zero(), rgb, mean, lum, consts).map(|u| theta * u)
}

fn check_theta<T: Scalar>(kind: FilterKind, theta: T) -> Result<()> {
    if !theta.is_finite() {
        return Err(Error::NonFinite(format!("theta of {kind}")));
    }
    Ok(())
}

/// Unit-θ basis `U` over the whole image for the chosen sign branch.
pub fn unit_increment<T: Scalar>(
    kind: FilterKind,
    negative: bool,
    ctx: &FilterContext<'_, T>,
    consts: &FilterConstants<T>,
) -> Vec<T> {
    let mut out = Vec::with_capacity(ctx.image.data().len());
    for (p, &lum) in ctx.image.pixels().zip(&ctx.lum) {
        out.extend_from_slice(&unit_increment_at(kind, negative, p, ctx.mean, lum, consts));
    }
    out
}

/// Increment buffer (`H × W × 3`, unclamped) of one filter on the image.
pub fn filter_increment<T: Scalar>(
    kind: FilterKind,
    theta: T,
    ctx: &FilterContext<'_, T>,
    consts: &FilterConstants<T>,
) -> Result<Vec<T>> {
    check_theta(kind, theta)?;
    let mut out = unit_increment(kind, theta < T::zero(), ctx, consts);
    out.iter_mut().for_each(|v| *v = theta * *v);
    Ok(out)
}

/// `∂ΔF/∂θ` buffer. Temperature at θ = 0 uses the θ ≥ 0 branch.
pub fn filter_dtheta<T: Scalar>(
    kind: FilterKind,
    theta: T,
    ctx: &FilterContext<'_, T>,
    consts: &FilterConstants<T>,
) -> Result<Vec<T>> {
    check_theta(kind, theta)?;
    Ok(unit_increment(kind, theta < T::zero(), ctx, consts))
}

/// Vector-Jacobian product of `ΔF(θ, ·)` with respect to the image:
/// given `upstream = ∂L/∂ΔF`, returns `∂L/∂X` through this increment
/// (including the image-mean and lightness couplings).
pub fn increment_vjp<T: Scalar>(
    kind: FilterKind,
    theta: T,
    ctx: &FilterContext<'_, T>,
    consts: &FilterConstants<T>,
    upstream: &[T],
) -> Vec<T> {
    let img = ctx.image.data();
    debug_assert_eq!(upstream.len(), img.len());
    let zero = T::zero();
    let mut out = vec![zero; img.len()];
    let per_channel = |out: &mut Vec<T>, coef: &dyn Fn(usize, T) -> T| {
        for (i, (o, &g)) in out.iter_mut().zip(upstream).enumerate() {
            *o = theta * coef(i % 3, img[i]) * g;
        }
    };
    match kind {
        FilterKind::Contrast => {
            let total: T = upstream.iter().copied().sum();
            let shared = theta * total / T::from_usize_lossy(img.len());
            for (o, &g) in out.iter_mut().zip(upstream) {
                *o = theta * g - shared;
            }
        }
        FilterKind::Saturation => {
            for (p, (px, gp)) in img.chunks_exact(3).zip(upstream.chunks_exact(3)).enumerate() {
                let lum_grad = pixel_luminance_grad([px[0], px[1], px[2]]);
                let gsum = gp[0] + gp[1] + gp[2];
                for c in 0..3 {
                    out[p * 3 + c] = theta * (gp[c] - gsum * lum_grad[c]);
                }
            }
        }
        FilterKind::Hue | FilterKind::Temperature => {
            let negative = theta < zero;
            // Both are diagonal gains; read them off the unit basis at X = 1.
            let gains = unit_increment_at(kind, negative, [T::one(); 3], zero, zero, consts);
            per_channel(&mut out, &|c, _| gains[c]);
        }
        FilterKind::Shadows(ch) => {
            per_channel(&mut out, &|c, _| if ch.covers(c) { -T::one() } else { zero })
        }
        FilterKind::Midtones(ch) => per_channel(&mut out, &|c, x| {
            if ch.covers(c) {
                -T::lit(2.0) * (x - T::lit(0.5))
            } else {
                zero
            }
        }),
        FilterKind::Highlights(ch) => {
            per_channel(&mut out, &|c, _| if ch.covers(c) { T::one() } else { zero })
        }
        FilterKind::Shift(_) => {}
    }
    out
}
