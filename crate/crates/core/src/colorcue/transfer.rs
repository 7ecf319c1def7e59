use crate::image::{ColorSpace, Image, RegionMask};
use crate::{Error, Result};

/// Mask-weighted mean RGB of a region.
pub fn region_mean_color(img: &Image, mask: &RegionMask) -> Result<[f64; 3]> {
    img.expect_space(ColorSpace::Rgb)?;
    mask.check_matches(img)?;
    let mut acc = [0.0; 3];
    let mut total = 0.0;
    for (px, &m) in img.pixels().zip(mask.data()) {
        if m > 0.0 {
            for c in 0..3 {
                acc[c] += m * px[c];
            }
            total += m;
        }
    }
    if total <= 0.0 {
        return Err(Error::EmptyRegion);
    }
    Ok(acc.map(|v| v / total))
}

/// Shifts the masked region of a cue so its mean moves to `target`:
/// `C' = C + m * (target - mean)`, clamped to `[0, 1]`. Unmasked pixels are untouched.
pub fn palette_transfer(cue: &Image, mask: &RegionMask, target: [f64; 3]) -> Result<Image> {
    let mean = region_mean_color(cue, mask)?;
    let shift = [target[0] - mean[0], target[1] - mean[1], target[2] - mean[2]];
    let mut out = cue.clone();
    for (px, &m) in out.data_mut().chunks_exact_mut(3).zip(mask.data()) {
        if m == 0.0 {
            continue;
        }
        for c in 0..3 {
            px[c] = (px[c] + m * shift[c]).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_mean_cases() {
        let img = Image::filled(3, 2, ColorSpace::Rgb, &[0.25, 0.5, 0.75]);
        assert_eq!(region_mean_color(&img, &RegionMask::full(3, 2)).unwrap(), [0.25, 0.5, 0.75]);

        let tones = Image::from_fn(4, 1, ColorSpace::Rgb, |x, _| if x < 2 { [0.1; 3] } else { [0.8; 3] });
        let half = RegionMask::from_fn(4, 1, |x, _| if x >= 2 { 1.0 } else { 0.0 });
        assert_eq!(region_mean_color(&tones, &half).unwrap(), [0.8; 3]);

        // (1 * 0 + 0.5 * 0.9) / 1.5 = 0.3
        let pair = Image::from_fn(2, 1, ColorSpace::Rgb, |x, _| if x == 0 { [0.0; 3] } else { [0.9; 3] });
        let soft = RegionMask::new(2, 1, alloc::vec![1.0, 0.5]).unwrap();
        let m = region_mean_color(&pair, &soft).unwrap();
        assert!(m.iter().all(|v| (v - 0.3).abs() < 1e-12));

        assert_eq!(region_mean_color(&img, &RegionMask::empty(3, 2)), Err(Error::EmptyRegion));
    }

    #[test]
    fn transfer_cases() {
        let cue = Image::filled(4, 4, ColorSpace::Rgb, &[0.4, 0.4, 0.4]);
        let full = RegionMask::full(4, 4);
        let out = palette_transfer(&cue, &full, [0.6, 0.5, 0.3]).unwrap();
        for px in out.pixels() {
            assert!((px[0] - 0.6).abs() < 1e-12 && (px[1] - 0.5).abs() < 1e-12 && (px[2] - 0.3).abs() < 1e-12);
        }
        let mean = region_mean_color(&cue, &full).unwrap();
        assert_eq!(palette_transfer(&cue, &full, mean).unwrap(), cue);

        let bright = Image::filled(2, 2, ColorSpace::Rgb, &[0.9, 0.5, 0.1]);
        let pushed = palette_transfer(&bright, &RegionMask::full(2, 2), [1.0, 1.0, 0.0]).unwrap();
        assert!(pushed.data().iter().all(|v| (0.0..=1.0).contains(v)));

        let left = RegionMask::from_fn(4, 4, |x, _| if x < 2 { 1.0 } else { 0.0 });
        let out = palette_transfer(&cue, &left, [0.0, 1.0, 0.0]).unwrap();
        assert_eq!(out.pixel(3, 3), cue.pixel(3, 3));
        assert!(palette_transfer(&cue, &RegionMask::empty(4, 4), [0.0; 3]).is_err());
    }
}
