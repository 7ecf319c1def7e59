//! Pixel-wise conversions between sRGB, CIE Lab (D65) and HSV, plus the
//! affine mapping of Lab onto the network's `[-1, 1]` range.

use alloc::vec::Vec;

use crate::error::shape_err;
use crate::image::{ColorSpace, Image};
use crate::math::{cbrt, powf};
use crate::tensor::Tensor;
use crate::Result;

// Linear sRGB -> XYZ (D65).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

const XYZ_TO_RGB: [[f64; 3]; 3] = invert3(RGB_TO_XYZ);

const fn invert3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    let inv = 1.0 / det;
    [
        [c00 * inv, (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv, (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv],
        [c01 * inv, (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv, (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv],
        [c02 * inv, (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv, (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv],
    ]
}

// Reference white: the image of RGB (1, 1, 1), so white lands exactly on a = b = 0.
const WHITE: [f64; 3] = [
    RGB_TO_XYZ[0][0] + RGB_TO_XYZ[0][1] + RGB_TO_XYZ[0][2],
    RGB_TO_XYZ[1][0] + RGB_TO_XYZ[1][1] + RGB_TO_XYZ[1][2],
    RGB_TO_XYZ[2][0] + RGB_TO_XYZ[2][1] + RGB_TO_XYZ[2][2],
];

const DELTA: f64 = 6.0 / 29.0;

pub const L_RANGE: (f64, f64) = (0.0, 100.0);
pub const AB_RANGE: (f64, f64) = (-128.0, 127.0);

#[inline]
pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        powf((c + 0.055) / 1.055, 2.4)
    }
}

#[inline]
pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        c * 12.92
    } else {
        1.055 * powf(c, 1.0 / 2.4) - 0.055
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        cbrt(t)
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

#[inline]
fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// Unclamped sRGB -> Lab for one pixel.
pub fn rgb_pixel_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let mut xyz = [0.0; 3];
    for (row, out) in RGB_TO_XYZ.iter().zip(xyz.iter_mut()) {
        *out = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
    }
    let fx = lab_f(xyz[0] / WHITE[0]);
    let fy = lab_f(xyz[1] / WHITE[1]);
    let fz = lab_f(xyz[2] / WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Lab -> linear RGB, without gamma or clamping. Used for gamut tests.
pub fn lab_pixel_to_linear_rgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        WHITE[0] * lab_f_inv(fx),
        WHITE[1] * lab_f_inv(fy),
        WHITE[2] * lab_f_inv(fz),
    ];
    let mut lin = [0.0; 3];
    for (row, out) in XYZ_TO_RGB.iter().zip(lin.iter_mut()) {
        *out = row[0] * xyz[0] + row[1] * xyz[1] + row[2] * xyz[2];
    }
    lin
}

/// Lab -> sRGB for one pixel, clamped to `[0, 1]`.
pub fn lab_pixel_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    lab_pixel_to_linear_rgb(lab).map(|c| linear_to_srgb(c.clamp(0.0, 1.0)).clamp(0.0, 1.0))
}

fn clamp_lab(lab: [f64; 3]) -> [f64; 3] {
    [
        lab[0].clamp(L_RANGE.0, L_RANGE.1),
        lab[1].clamp(AB_RANGE.0, AB_RANGE.1),
        lab[2].clamp(AB_RANGE.0, AB_RANGE.1),
    ]
}

/// Standard hexcone HSV. Achromatic pixels get hue 0.
pub fn rgb_pixel_to_hsv(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return [0.0, s, v];
    }
    let sector = if max == r {
        (g - b) / delta
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    [wrap_hue(sector / 6.0), s, v]
}

pub fn hsv_pixel_to_rgb(hsv: [f64; 3]) -> [f64; 3] {
    let [h, s, v] = hsv;
    let h6 = wrap_hue(h) * 6.0;
    let sector = crate::math::floor(h6);
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as i64 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Maps any hue onto `[0, 1)`.
#[inline]
pub fn wrap_hue(h: f64) -> f64 {
    let w = h - crate::math::floor(h);
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

fn map_pixels(img: &Image, from: ColorSpace, to: ColorSpace, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Image> {
    img.expect_space(from)?;
    let mut data = Vec::with_capacity(img.data().len());
    for px in img.pixels() {
        data.extend_from_slice(&f([px[0], px[1], px[2]]));
    }
    Image::new(img.width(), img.height(), to, data)
}

pub fn rgb_to_lab(img: &Image) -> Result<Image> {
    map_pixels(img, ColorSpace::Rgb, ColorSpace::Lab, |p| {
        clamp_lab(rgb_pixel_to_lab(p.map(|c| c.clamp(0.0, 1.0))))
    })
}

pub fn lab_to_rgb(img: &Image) -> Result<Image> {
    map_pixels(img, ColorSpace::Lab, ColorSpace::Rgb, lab_pixel_to_rgb)
}

pub fn rgb_to_hsv(img: &Image) -> Result<Image> {
    map_pixels(img, ColorSpace::Rgb, ColorSpace::Hsv, |p| rgb_pixel_to_hsv(p.map(|c| c.clamp(0.0, 1.0))))
}

pub fn hsv_to_rgb(img: &Image) -> Result<Image> {
    map_pixels(img, ColorSpace::Hsv, ColorSpace::Rgb, |p| {
        hsv_pixel_to_rgb([p[0], p[1].clamp(0.0, 1.0), p[2].clamp(0.0, 1.0)]).map(|c| c.clamp(0.0, 1.0))
    })
}

/// Splits Lab into its `L` and `ab` views.
pub fn split_lab(img: &Image) -> Result<(Image, Image)> {
    img.expect_space(ColorSpace::Lab)?;
    let n = img.pixel_count();
    let mut l = Vec::with_capacity(n);
    let mut ab = Vec::with_capacity(2 * n);
    for px in img.pixels() {
        l.push(px[0]);
        ab.push(px[1]);
        ab.push(px[2]);
    }
    Ok((
        Image::new(img.width(), img.height(), ColorSpace::L, l)?,
        Image::new(img.width(), img.height(), ColorSpace::Ab, ab)?,
    ))
}

pub fn merge_lab(l: &Image, ab: &Image) -> Result<Image> {
    l.expect_space(ColorSpace::L)?;
    ab.expect_space(ColorSpace::Ab)?;
    if !l.same_size(ab) {
        return Err(shape_err!(
            "L is {}x{} but ab is {}x{}",
            l.width(),
            l.height(),
            ab.width(),
            ab.height()
        ));
    }
    let mut data = Vec::with_capacity(3 * l.pixel_count());
    for (lv, abv) in l.data().iter().zip(ab.data().chunks_exact(2)) {
        data.push(*lv);
        data.push(abv[0]);
        data.push(abv[1]);
    }
    Image::new(l.width(), l.height(), ColorSpace::Lab, data)
}

/// Channel semantics of a [`NetTensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetChannels {
    L,
    Ab,
    Lab,
    Mask,
}

impl NetChannels {
    pub const fn count(self) -> usize {
        match self {
            NetChannels::L | NetChannels::Mask => 1,
            NetChannels::Ab => 2,
            NetChannels::Lab => 3,
        }
    }
}

/// Network-facing planar `C x H x W` tensor with values in `[-1, 1]`.
///
/// Lab maps as `L' = L / 50 - 1`, `a' = a / 110`, `b' = b / 110`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetTensor {
    pub channels: NetChannels,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

#[inline]
pub fn normalize_l(l: f64) -> f64 {
    l / 50.0 - 1.0
}

#[inline]
pub fn denormalize_l(v: f64) -> f64 {
    (v + 1.0) * 50.0
}

#[inline]
pub fn normalize_ab(c: f64) -> f64 {
    c / 110.0
}

#[inline]
pub fn denormalize_ab(v: f64) -> f64 {
    v * 110.0
}

impl NetTensor {
    /// Normalizes a Lab, L or ab image.
    pub fn from_image(img: &Image) -> Result<Self> {
        let (channels, maps): (NetChannels, &[fn(f64) -> f64]) = match img.space() {
            ColorSpace::Lab => (NetChannels::Lab, &[normalize_l, normalize_ab, normalize_ab]),
            ColorSpace::L => (NetChannels::L, &[normalize_l]),
            ColorSpace::Ab => (NetChannels::Ab, &[normalize_ab, normalize_ab]),
            other => {
                return Err(crate::Error::WrongSpace { expected: ColorSpace::Lab, found: other });
            }
        };
        let c = channels.count();
        let plane = img.pixel_count();
        let mut data = alloc::vec![0.0; c * plane];
        for (i, px) in img.pixels().enumerate() {
            for ch in 0..c {
                data[ch * plane + i] = maps[ch](px[ch]);
            }
        }
        Ok(Self { channels, width: img.width(), height: img.height(), data })
    }

    /// Inverse of [`NetTensor::from_image`], clamping to the Lab ranges.
    pub fn to_image(&self) -> Result<Image> {
        let (space, maps): (ColorSpace, &[fn(f64) -> f64]) = match self.channels {
            NetChannels::Lab => (ColorSpace::Lab, &[denorm_l_clamped, denorm_ab_clamped, denorm_ab_clamped]),
            NetChannels::L => (ColorSpace::L, &[denorm_l_clamped]),
            NetChannels::Ab => (ColorSpace::Ab, &[denorm_ab_clamped, denorm_ab_clamped]),
            NetChannels::Mask => return Err(crate::error::invalid!("mask tensors have no colorspace")),
        };
        let c = self.channels.count();
        let plane = self.width * self.height;
        let mut data = Vec::with_capacity(c * plane);
        for i in 0..plane {
            for ch in 0..c {
                data.push(maps[ch](self.data[ch * plane + i]));
            }
        }
        Image::new(self.width, self.height, space, data)
    }

    /// `[1, C, H, W]` tensor view.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([1, self.channels.count(), self.height, self.width], self.data.clone())
    }

    /// Reads batch item `n` of a `[N, C, H, W]` tensor.
    pub fn from_tensor(t: &Tensor, n: usize, channels: NetChannels) -> Result<Self> {
        let [_, c, h, w] = t.shape();
        if c != channels.count() {
            return Err(shape_err!("{:?} needs {} channels, tensor has {}", channels, channels.count(), c));
        }
        Ok(Self { channels, width: w, height: h, data: t.item(n).to_vec() })
    }
}

fn denorm_l_clamped(v: f64) -> f64 {
    denormalize_l(v).clamp(L_RANGE.0, L_RANGE.1)
}

fn denorm_ab_clamped(v: f64) -> f64 {
    denormalize_ab(v).clamp(AB_RANGE.0, AB_RANGE.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(p: [f64; 3]) -> Image {
        Image::filled(1, 1, ColorSpace::Rgb, &p)
    }

    #[test]
    fn lab_anchors() {
        let black = rgb_to_lab(&rgb([0.0; 3])).unwrap();
        assert_eq!(black.data(), &[0.0, 0.0, 0.0]);
        let white = rgb_to_lab(&rgb([1.0; 3])).unwrap();
        assert!((white.data()[0] - 100.0).abs() < 1e-9);
        assert!(white.data()[1].abs() <= 0.01 && white.data()[2].abs() <= 0.01);
        // Reference value from an independent colorimetry implementation
        // (scikit-image rgb2lab, D65/2°): 53.3889.
        let gray = rgb_to_lab(&rgb([0.5; 3])).unwrap();
        assert!((gray.data()[0] - 53.39).abs() < 0.005, "{}", gray.data()[0]);
        assert!(gray.data()[1].abs() < 1e-6 && gray.data()[2].abs() < 1e-6);
    }

    #[test]
    fn lab_to_rgb_clamps_out_of_gamut() {
        let lab = Image::filled(1, 1, ColorSpace::Lab, &[50.0, 127.0, -128.0]);
        let out = lab_to_rgb(&lab).unwrap();
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let origin = lab_to_rgb(&Image::filled(1, 1, ColorSpace::Lab, &[0.0; 3])).unwrap();
        assert!(origin.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn wrong_space_is_rejected() {
        let lab = Image::filled(1, 1, ColorSpace::Lab, &[50.0, 0.0, 0.0]);
        assert!(matches!(rgb_to_lab(&lab), Err(crate::Error::WrongSpace { .. })));
        assert!(rgb_to_hsv(&lab).is_err());
        assert!(lab_to_rgb(&rgb([0.1; 3])).is_err());
        assert!(hsv_to_rgb(&lab).is_err());
    }

    #[test]
    fn hsv_anchors() {
        let red = rgb_to_hsv(&rgb([1.0, 0.0, 0.0])).unwrap();
        assert_eq!(red.data(), &[0.0, 1.0, 1.0]);
        let gray = rgb_to_hsv(&rgb([0.5; 3])).unwrap();
        assert_eq!(gray.data(), &[0.0, 0.0, 0.5]);
        assert_eq!(wrap_hue(-0.25), 0.75);
        assert_eq!(wrap_hue(1.0), 0.0);
    }

    #[test]
    fn split_merge_is_exact() {
        let img = Image::from_fn(3, 2, ColorSpace::Lab, |x, y| [x as f64 * 10.1, y as f64 - 3.3, 7.7]);
        let (l, ab) = split_lab(&img).unwrap();
        assert_eq!(l.channels(), 1);
        assert_eq!(ab.channels(), 2);
        assert_eq!(merge_lab(&l, &ab).unwrap(), img);
        let zl = Image::filled(2, 2, ColorSpace::L, &[0.0]);
        let zab = Image::filled(2, 2, ColorSpace::Ab, &[0.0, 0.0]);
        assert_eq!(merge_lab(&zl, &zab).unwrap(), Image::filled(2, 2, ColorSpace::Lab, &[0.0; 3]));
        let small = Image::filled(1, 2, ColorSpace::Ab, &[0.0, 0.0]);
        assert!(merge_lab(&zl, &small).is_err());
    }

    #[test]
    fn net_normalization_inverts() {
        let img = Image::from_fn(4, 3, ColorSpace::Lab, |x, y| {
            [x as f64 * 23.0 + 1.5, y as f64 * 40.0 - 80.0, 100.0 - x as f64 * 50.0]
        });
        let net = NetTensor::from_image(&img).unwrap();
        assert!(net.data.iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = net.to_image().unwrap();
        assert!(back.max_abs_diff(&img) < 1e-6);
    }
}
