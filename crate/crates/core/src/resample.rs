//! Image resampling: antialiased bicubic resize, area downsampling and crops.

use alloc::vec::Vec;

use crate::image::{ColorSpace, Image};
use crate::math::floor;
use crate::tensor::Tensor;

/// Keys cubic kernel with `a = -0.5`.
fn cubic(x: f64) -> f64 {
    let x = x.abs();
    let a = -0.5;
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * a
    } else {
        0.0
    }
}

/// Normalized source taps for every output coordinate along one axis.
fn taps(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    let stretch = scale.max(1.0);
    let support = 2.0 * stretch;
    (0..dst)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale - 0.5;
            let lo = floor(center - support) as isize + 1;
            let hi = floor(center + support) as isize;
            let mut t: Vec<(usize, f64)> = Vec::new();
            for i in lo..=hi {
                let w = cubic((i as f64 - center) / stretch);
                if w == 0.0 {
                    continue;
                }
                let idx = i.clamp(0, src as isize - 1) as usize;
                match t.iter_mut().find(|(j, _)| *j == idx) {
                    Some(e) => e.1 += w,
                    None => t.push((idx, w)),
                }
            }
            let sum: f64 = t.iter().map(|e| e.1).sum();
            for e in &mut t {
                e.1 /= sum;
            }
            t
        })
        .collect()
}

/// Separable bicubic resize (antialiased when shrinking). RGB output is clamped to `[0, 1]`.
pub fn resize_bicubic(img: &Image, width: usize, height: usize) -> Image {
    assert!(width > 0 && height > 0);
    if img.width() == width && img.height() == height {
        return img.clone();
    }
    let c = img.channels();
    let (sw, sh) = (img.width(), img.height());
    let tx = taps(sw, width);
    let ty = taps(sh, height);
    let mut tmp = alloc::vec![0.0; sh * width * c];
    for y in 0..sh {
        for (x, t) in tx.iter().enumerate() {
            for &(sx, w) in t {
                let src = img.pixel(sx, y);
                let dst = &mut tmp[(y * width + x) * c..(y * width + x + 1) * c];
                for ch in 0..c {
                    dst[ch] += w * src[ch];
                }
            }
        }
    }
    let mut out = alloc::vec![0.0; height * width * c];
    for (y, t) in ty.iter().enumerate() {
        for &(sy, w) in t {
            let src = &tmp[sy * width * c..(sy + 1) * width * c];
            let dst = &mut out[y * width * c..(y + 1) * width * c];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    if img.space() == ColorSpace::Rgb {
        for v in &mut out {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Image::new(width, height, img.space(), out).expect("resize keeps the channel layout")
}

/// Resizes so the shorter side equals `side`, keeping the aspect ratio.
pub fn resize_short_side(img: &Image, side: usize) -> Image {
    let (w, h) = (img.width(), img.height());
    let (nw, nh) = if w <= h {
        (side, ((h as f64 * side as f64 / w as f64) + 0.5) as usize)
    } else {
        (((w as f64 * side as f64 / h as f64) + 0.5) as usize, side)
    };
    resize_bicubic(img, nw.max(side), nh.max(side))
}

/// Block average by an integer factor along both spatial axes of `[N, C, H, W]`.
pub fn area_downsample(t: &Tensor, factor: usize) -> Tensor {
    let [n, c, h, w] = t.shape();
    assert!(factor >= 1 && h % factor == 0 && w % factor == 0, "area downsample by {} of {}x{}", factor, h, w);
    if factor == 1 {
        return t.clone();
    }
    let (oh, ow) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f64;
    Tensor::from_fn([n, c, oh, ow], |[b, ch, y, x]| {
        let p = t.plane(b, ch);
        let mut acc = 0.0;
        for dy in 0..factor {
            let row = (y * factor + dy) * w + x * factor;
            acc += p[row..row + factor].iter().sum::<f64>();
        }
        acc * norm
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_survives_resizing() {
        let img = Image::filled(13, 7, ColorSpace::Rgb, &[0.2, 0.5, 0.9]);
        for (w, h) in [(4, 4), (26, 14), (13, 7), (5, 20)] {
            let out = resize_bicubic(&img, w, h);
            assert_eq!((out.width(), out.height()), (w, h));
            assert!(out.pixels().all(|p| (p[0] - 0.2).abs() < 1e-12 && (p[2] - 0.9).abs() < 1e-12));
        }
    }

    #[test]
    fn downscale_by_two_of_ramp_is_close_to_box() {
        let img = Image::from_fn(16, 2, ColorSpace::L, |x, _| [x as f64, 0.0, 0.0]);
        let out = resize_bicubic(&img, 8, 1);
        for x in 2..6 {
            assert!((out.pixel(x, 0)[0] - (2 * x) as f64 - 0.5).abs() < 1e-9, "{}", out.pixel(x, 0)[0]);
        }
    }

    #[test]
    fn short_side() {
        let img = Image::filled(40, 20, ColorSpace::Rgb, &[0.0; 3]);
        let out = resize_short_side(&img, 10);
        assert_eq!((out.width(), out.height()), (20, 10));
    }

    #[test]
    fn area_average() {
        let t = Tensor::from_fn([1, 1, 4, 4], |[_, _, y, x]| (y * 4 + x) as f64);
        let d = area_downsample(&t, 2);
        assert_eq!(d.data(), &[2.5, 4.5, 10.5, 12.5]);
    }
}
