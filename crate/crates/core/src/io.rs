//! 8-bit PNG/JPEG decoding and encoding for images and masks.

use std::fs;
use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::scalar::Scalar;

fn codec(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Codec {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn check_color(path: &Path, dynamic: &DynamicImage) -> Result<()> {
    let color = dynamic.color();
    if color.has_alpha() {
        return Err(Error::AlphaChannel(path.display().to_string()));
    }
    if !matches!(color, ColorType::Rgb8 | ColorType::L8) {
        return Err(codec(path, format!("unsupported pixel format {color:?}; expected 8-bit RGB")));
    }
    Ok(())
}

fn to_image<T: Scalar>(rgb: RgbImage) -> Image<T> {
    let (w, h) = rgb.dimensions();
    let scale = T::lit(255.0);
    let data = rgb.into_raw().into_iter().map(|v| T::from_u8(v).unwrap() / scale).collect();
    Image::from_raw(w as usize, h as usize, data)
}

fn decode(path: &Path, bytes: &[u8]) -> Result<DynamicImage> {
    image::load_from_memory(bytes).map_err(|e| codec(path, e))
}

/// Width and height from the encoded header, without decoding pixels.
pub fn probe_dimensions(bytes: &[u8], label: &str) -> Result<(usize, usize)> {
    let path = Path::new(label);
    let (w, h) = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| codec(path, e))?
        .into_dimensions()
        .map_err(|e| codec(path, e))?;
    Ok((w as usize, h as usize))
}

/// Decodes an in-memory PNG or JPEG; `label` names the source in errors.
pub fn decode_image<T: Scalar>(bytes: &[u8], label: &str) -> Result<Image<T>> {
    let path = Path::new(label);
    let dynamic = decode(path, bytes)?;
    check_color(path, &dynamic)?;
    Ok(to_image(dynamic.to_rgb8()))
}

pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, &path.display().to_string())
}

/// Decodes an 8-bit grayscale mask; RGB inputs are reduced to luma.
pub fn decode_mask<T: Scalar>(bytes: &[u8], label: &str) -> Result<Mask<T>> {
    let path = Path::new(label);
    let dynamic = decode(path, bytes)?;
    check_color(path, &dynamic)?;
    let gray = dynamic.to_luma8();
    let (w, h) = gray.dimensions();
    let scale = T::lit(255.0);
    let data = gray.into_raw().into_iter().map(|v| T::from_u8(v).unwrap() / scale).collect();
    Ok(Mask::from_raw(w as usize, h as usize, data))
}

pub fn load_mask<T: Scalar>(path: impl AsRef<Path>) -> Result<Mask<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes, &path.display().to_string())
}

#[inline]
fn quantize<T: Scalar>(v: T) -> u8 {
    (v.clamp01() * T::lit(255.0)).round().to_u8().unwrap_or(0)
}

pub fn to_rgb8<T: Scalar>(img: &Image<T>) -> RgbImage {
    let raw = img.data().iter().map(|&v| quantize(v)).collect();
    RgbImage::from_raw(img.width() as u32, img.height() as u32, raw).expect("buffer sized by Image")
}

fn encode(dynamic: &DynamicImage, format: ImageFormat) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    dynamic
        .write_to(&mut buf, format)
        .expect("encoding into memory does not fail");
    buf.into_inner()
}

pub fn encode_png<T: Scalar>(img: &Image<T>) -> Vec<u8> {
    encode(&DynamicImage::ImageRgb8(to_rgb8(img)), ImageFormat::Png)
}

pub fn encode_mask_png<T: Scalar>(mask: &Mask<T>) -> Vec<u8> {
    let raw = mask.data().iter().map(|&v| quantize(v)).collect();
    let gray = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .expect("buffer sized by Mask");
    encode(&DynamicImage::ImageLuma8(gray), ImageFormat::Png)
}

/// Writes via a sibling temporary file and rename.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp: PathBuf = path.to_path_buf();
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    tmp.set_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Saves as PNG, or JPEG when the extension is `.jpg`/`.jpeg`.
pub fn save_image<T: Scalar>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    let bytes = match ext.as_str() {
        "jpg" | "jpeg" => encode(&DynamicImage::ImageRgb8(to_rgb8(img)), ImageFormat::Jpeg),
        _ => encode_png(img),
    };
    write_atomic(path, &bytes)
}

pub fn save_mask<T: Scalar>(mask: &Mask<T>, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_mask_png(mask))
}
