use alloc::vec::Vec;

use rand_core::RngCore;

use crate::colorspace::{hsv_pixel_to_rgb, lab_pixel_to_linear_rgb, lab_pixel_to_rgb, rgb_pixel_to_hsv, rgb_pixel_to_lab, wrap_hue};
use crate::error::{invalid, shape_err};
use crate::image::{ColorSpace, Image, RegionMask};
use crate::rng::{rng_from_seed, uniform};
use crate::Result;

/// One HSV color perturbation: circular hue shift, then saturation and value scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsvAugParams {
    pub hue_shift: f64,
    pub sat_scale: f64,
    pub val_scale: f64,
}

impl HsvAugParams {
    pub const IDENTITY: Self = Self { hue_shift: 0.0, sat_scale: 1.0, val_scale: 1.0 };

    pub const HUE_RANGE: (f64, f64) = (-0.5, 0.5);
    pub const SAT_RANGE: (f64, f64) = (0.5, 1.5);
    pub const VAL_RANGE: (f64, f64) = (0.7, 1.3);

    pub fn validate(&self) -> Result<()> {
        if !self.hue_shift.is_finite() {
            return Err(invalid!("hue shift must be finite"));
        }
        if !(self.sat_scale > 0.0 && self.sat_scale.is_finite()) || !(self.val_scale > 0.0 && self.val_scale.is_finite()) {
            return Err(invalid!(
                "saturation and value scales must be positive, got {} and {}",
                self.sat_scale,
                self.val_scale
            ));
        }
        Ok(())
    }
}

pub fn sample_hsv_params_with(rng: &mut impl RngCore) -> HsvAugParams {
    let hue_shift = uniform(rng, HsvAugParams::HUE_RANGE.0, HsvAugParams::HUE_RANGE.1);
    // Closed upper bounds are reachable only with probability zero; uniform() is half-open.
    let sat_scale = uniform(rng, HsvAugParams::SAT_RANGE.0, HsvAugParams::SAT_RANGE.1);
    let val_scale = uniform(rng, HsvAugParams::VAL_RANGE.0, HsvAugParams::VAL_RANGE.1);
    HsvAugParams { hue_shift, sat_scale, val_scale }
}

pub fn sample_hsv_params(seed: u64) -> HsvAugParams {
    sample_hsv_params_with(&mut rng_from_seed(seed))
}

fn in_gamut(lin: [f64; 3]) -> bool {
    lin.iter().all(|&c| (-1e-12..=1.0 + 1e-12).contains(&c))
}

/// Puts `lightness` back on an RGB color, keeping its hue angle in Lab and
/// giving up as little chroma as needed to stay inside the sRGB gamut.
fn restore_lightness(rgb: [f64; 3], lightness: f64) -> [f64; 3] {
    let lab = rgb_pixel_to_lab(rgb);
    let at = |t: f64| [lightness, lab[1] * t, lab[2] * t];
    if in_gamut(lab_pixel_to_linear_rgb(at(1.0))) {
        return lab_pixel_to_rgb(at(1.0));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        if in_gamut(lab_pixel_to_linear_rgb(at(mid))) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lab_pixel_to_rgb(at(lo))
}

fn augment_pixel(px: [f64; 3], p: &HsvAugParams) -> [f64; 3] {
    let [h, s, v] = rgb_pixel_to_hsv(px);
    let shifted = [
        wrap_hue(h + p.hue_shift),
        (s * p.sat_scale).clamp(0.0, 1.0),
        (v * p.val_scale).clamp(0.0, 1.0),
    ];
    hsv_pixel_to_rgb(shifted)
}

/// HSV-perturbs one RGB image and restores each pixel's original Lab lightness.
pub fn hsv_augment_image(img: &Image, p: &HsvAugParams) -> Result<Image> {
    img.expect_space(ColorSpace::Rgb)?;
    p.validate()?;
    if *p == HsvAugParams::IDENTITY {
        return Ok(img.clone());
    }
    let mut data = Vec::with_capacity(img.data().len());
    for px in img.pixels() {
        let px = [px[0], px[1], px[2]];
        let lightness = rgb_pixel_to_lab(px)[0];
        data.extend_from_slice(&restore_lightness(augment_pixel(px, p), lightness));
    }
    Image::new(img.width(), img.height(), ColorSpace::Rgb, data)
}

/// Applies the same perturbation to a photo and its color cue.
pub fn hsv_augment(photo: &Image, cue: &Image, p: &HsvAugParams) -> Result<(Image, Image)> {
    if !photo.same_size(cue) {
        return Err(shape_err!(
            "photo is {}x{} but cue is {}x{}",
            photo.width(),
            photo.height(),
            cue.width(),
            cue.height()
        ));
    }
    Ok((hsv_augment_image(photo, p)?, hsv_augment_image(cue, p)?))
}

/// Perturbation blended in by a soft mask: `(1 - m) * img + m * augmented`.
pub fn hsv_augment_masked(img: &Image, mask: &RegionMask, p: &HsvAugParams) -> Result<Image> {
    mask.check_matches(img)?;
    let aug = hsv_augment_image(img, p)?;
    let mut out = img.clone();
    for ((o, a), &m) in out.data_mut().chunks_exact_mut(3).zip(aug.pixels()).zip(mask.data()) {
        if m == 0.0 {
            continue;
        }
        for c in 0..3 {
            o[c] = (1.0 - m) * o[c] + m * a[c];
        }
    }
    Ok(out)
}
