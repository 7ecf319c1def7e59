//! Image and mask files.

use std::path::Path;

use cartooner_core::{ColorSpace, Image, RegionMask};
use image::{DynamicImage, ImageFormat, Rgb, RgbImage};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot decode image: {0}")]
    Decode(#[from] image::ImageError),
    #[error("{0}")]
    Core(#[from] cartooner_core::Error),
}

/// Decodes an encoded image to RGB in `[0, 1]`. Gray is replicated, alpha
/// dropped, 16-bit data scaled by 1/65535.
pub fn decode_image(bytes: &[u8]) -> Result<Image, IoError> {
    Ok(from_dynamic(&image::load_from_memory(bytes)?))
}

pub fn load_image(path: &Path) -> Result<Image, IoError> {
    let bytes = std::fs::read(path).map_err(|source| IoError::Read { path: path.display().to_string(), source })?;
    decode_image(&bytes)
}

fn from_dynamic(img: &DynamicImage) -> Image {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            img.to_rgb16().into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect()
        }
        DynamicImage::ImageRgb32F(_) | DynamicImage::ImageRgba32F(_) => img.to_rgb32f().into_raw().into_iter().map(|v| f64::from(v).clamp(0.0, 1.0)).collect(),
        _ => img.to_rgb8().into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect(),
    };
    Image::new(w, h, ColorSpace::Rgb, data).expect("decoded buffer has three channels")
}

fn to_rgb8(img: &Image) -> Result<RgbImage, IoError> {
    img.expect_space(ColorSpace::Rgb)?;
    let mut out = RgbImage::new(img.width() as u32, img.height() as u32);
    for (i, px) in img.pixels().enumerate() {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        out.put_pixel((i % img.width()) as u32, (i / img.width()) as u32, Rgb([q(px[0]), q(px[1]), q(px[2])]));
    }
    Ok(out)
}

/// 8-bit RGB PNG bytes, rounded to nearest.
pub fn encode_png(img: &Image) -> Result<Vec<u8>, IoError> {
    let mut buf = std::io::Cursor::new(Vec::new());
    to_rgb8(img)?.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// Saves in the format implied by the extension (PNG or JPEG).
pub fn save_image(img: &Image, path: &Path) -> Result<(), IoError> {
    to_rgb8(img)?.save(path)?;
    Ok(())
}

/// Grayscale mask with weight `value / 255`; color files are converted to luma first.
pub fn decode_mask(bytes: &[u8]) -> Result<RegionMask, IoError> {
    let gray = image::load_from_memory(bytes)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data = gray.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect();
    Ok(RegionMask::new(w, h, data)?)
}

pub fn load_mask(path: &Path) -> Result<RegionMask, IoError> {
    let bytes = std::fs::read(path).map_err(|source| IoError::Read { path: path.display().to_string(), source })?;
    decode_mask(&bytes)
}

/// 8-bit grayscale PNG of a mask.
pub fn encode_mask(mask: &RegionMask) -> Result<Vec<u8>, IoError> {
    let data = mask.data().iter().map(|v| (v * 255.0).round() as u8).collect();
    let gray = image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, data).expect("mask buffer size");
    let mut buf = std::io::Cursor::new(Vec::new());
    gray.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn hex_color(rgb: [f64; 3]) -> String {
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    format!("#{:02X}{:02X}{:02X}", q(rgb[0]), q(rgb[1]), q(rgb[2]))
}

/// Parses `#RRGGBB` or `RRGGBB`.
pub fn parse_hex_color(s: &str) -> Option<[f64; 3]> {
    let s = s.strip_prefix('#').unwrap_or(s);
    if s.len() != 6 || !s.is_ascii() {
        return None;
    }
    let c = |i: usize| u8::from_str_radix(&s[i..i + 2], 16).ok().map(|v| f64::from(v) / 255.0);
    Some([c(0)?, c(2)?, c(4)?])
}
