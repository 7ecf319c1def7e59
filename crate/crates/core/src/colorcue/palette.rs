use alloc::vec;
use alloc::vec::Vec;

use crate::error::invalid;
use crate::image::{ColorSpace, Image, RegionMask};
use crate::rng::{rng_from_seed, unit};
use crate::{Error, Result};

/// Number of palette entries used for reference-image color control.
pub const DEFAULT_PALETTE_SIZE: usize = 8;

/// Cluster centers ordered by descending weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    pub colors: Vec<[f64; 3]>,
    /// Fraction of (mask-weighted) pixels per entry; sums to 1.
    pub weights: Vec<f64>,
    /// Set when the image had fewer distinct colors than requested and the
    /// list was padded by repeating colors (padding entries carry weight 0).
    pub padded: bool,
}

impl Palette {
    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Distinct colors with their accumulated weights, in a canonical order.
fn distinct_weighted(img: &Image, mask: Option<&RegionMask>) -> Vec<([f64; 3], f64)> {
    let mut pts: Vec<([u64; 3], f64)> = img
        .pixels()
        .enumerate()
        .filter_map(|(i, p)| {
            let w = mask.map_or(1.0, |m| m.data()[i]);
            (w > 0.0).then(|| ([p[0].to_bits(), p[1].to_bits(), p[2].to_bits()], w))
        })
        .collect();
    pts.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out: Vec<([f64; 3], f64)> = Vec::new();
    let mut last: Option<[u64; 3]> = None;
    for (bits, w) in pts {
        if last == Some(bits) {
            out.last_mut().unwrap().1 += w;
        } else {
            out.push((bits.map(f64::from_bits), w));
            last = Some(bits);
        }
    }
    out
}

fn finish(mut entries: Vec<([f64; 3], f64)>, k: usize) -> Palette {
    let total: f64 = entries.iter().map(|e| e.1).sum();
    entries.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.0.partial_cmp(&b.0).unwrap_or(core::cmp::Ordering::Equal))
    });
    let distinct = entries.len();
    let mut colors: Vec<[f64; 3]> = entries.iter().map(|e| e.0).collect();
    let mut weights: Vec<f64> = entries.iter().map(|e| e.1 / total).collect();
    let mut i = 0;
    while colors.len() < k {
        colors.push(colors[i % distinct]);
        weights.push(0.0);
        i += 1;
    }
    Palette { colors, weights, padded: distinct < k }
}

/// K-means palette of an RGB image, deterministic per `seed`.
pub fn extract_palette(img: &Image, k: usize, seed: u64) -> Result<Palette> {
    extract_palette_masked(img, None, k, seed)
}

/// K-means palette restricted to (and weighted by) an optional mask.
pub fn extract_palette_masked(img: &Image, mask: Option<&RegionMask>, k: usize, seed: u64) -> Result<Palette> {
    img.expect_space(ColorSpace::Rgb)?;
    if k == 0 {
        return Err(invalid!("palette size must be at least 1"));
    }
    if let Some(m) = mask {
        m.check_matches(img)?;
    }
    let points = distinct_weighted(img, mask);
    if points.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if points.len() <= k {
        return Ok(finish(points, k));
    }

    // k-means++ seeding on the weighted distinct colors.
    let mut rng = rng_from_seed(seed);
    let total: f64 = points.iter().map(|p| p.1).sum();
    let mut centers: Vec<[f64; 3]> = Vec::with_capacity(k);
    let pick = |target: f64, score: &dyn Fn(usize) -> f64| -> usize {
        let mut acc = 0.0;
        for i in 0..points.len() {
            acc += score(i);
            if acc > target {
                return i;
            }
        }
        points.len() - 1
    };
    centers.push(points[pick(unit(&mut rng) * total, &|i| points[i].1)].0);
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(&p.0, &centers[0])).collect();
    while centers.len() < k {
        let mass: f64 = points.iter().zip(&nearest).map(|(p, d)| p.1 * d).sum();
        let idx = if mass > 0.0 {
            pick(unit(&mut rng) * mass, &|i| points[i].1 * nearest[i])
        } else {
            centers.len()
        };
        let c = points[idx].0;
        centers.push(c);
        for (d, p) in nearest.iter_mut().zip(&points) {
            *d = d.min(dist2(&p.0, &c));
        }
    }

    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..200 {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(&points) {
            let best = (0..k)
                .min_by(|&i, &j| dist2(&p.0, &centers[i]).partial_cmp(&dist2(&p.0, &centers[j])).unwrap())
                .unwrap();
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        let mut acc = vec![[0.0f64; 4]; k];
        for (&a, p) in assign.iter().zip(&points) {
            for c in 0..3 {
                acc[a][c] += p.1 * p.0[c];
            }
            acc[a][3] += p.1;
        }
        for (ci, a) in acc.iter().enumerate() {
            if a[3] > 0.0 {
                centers[ci] = [a[0] / a[3], a[1] / a[3], a[2] / a[3]];
            } else {
                // Re-seed an empty cluster at the point farthest from its center.
                let far = (0..points.len())
                    .max_by(|&i, &j| {
                        let di = dist2(&points[i].0, &centers[assign[i]]);
                        let dj = dist2(&points[j].0, &centers[assign[j]]);
                        di.partial_cmp(&dj).unwrap()
                    })
                    .unwrap();
                centers[ci] = points[far].0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut mass = vec![0.0; k];
    for (&a, p) in assign.iter().zip(&points) {
        mass[a] += p.1;
    }
    let entries = centers.into_iter().zip(mass).map(|(c, m)| (c.map(|v| v.clamp(0.0, 1.0)), m)).collect();
    Ok(finish(entries, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::unit;

    #[test]
    fn constant_image_single_color() {
        let img = Image::filled(5, 5, ColorSpace::Rgb, &[0.2, 0.4, 0.6]);
        let p = extract_palette(&img, 1, 0).unwrap();
        assert_eq!(p.colors, vec![[0.2, 0.4, 0.6]]);
        assert_eq!(p.weights, vec![1.0]);
        assert!(!p.padded);
    }

    /// Brute force over all 2-partitions of the two-value pixel set: the
    /// optimal 2-means puts each tone in its own cluster with weight 1/2.
    #[test]
    fn two_tone_two_means() {
        let img = Image::from_fn(8, 6, ColorSpace::Rgb, |x, _| if x < 4 { [0.1, 0.2, 0.3] } else { [0.9, 0.8, 0.7] });
        let p = extract_palette(&img, 2, 11).unwrap();
        let mut colors = p.colors.clone();
        colors.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(colors, vec![[0.1, 0.2, 0.3], [0.9, 0.8, 0.7]]);
        for w in &p.weights {
            assert!((w - 0.5).abs() <= 0.02);
        }
    }

    #[test]
    fn too_few_colors_pads_and_flags() {
        let img = Image::from_fn(4, 4, ColorSpace::Rgb, |x, _| if x < 1 { [0.0; 3] } else { [1.0; 3] });
        let p = extract_palette(&img, DEFAULT_PALETTE_SIZE, 0).unwrap();
        assert_eq!(p.len(), 8);
        assert!(p.padded);
        assert_eq!(p.colors[0], [1.0; 3]);
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_is_deterministic_and_normalized() {
        let mut rng = rng_from_seed(5);
        let img = Image::from_fn(20, 20, ColorSpace::Rgb, |_, _| [unit(&mut rng), unit(&mut rng), unit(&mut rng)]);
        let a = extract_palette(&img, 8, 42).unwrap();
        let b = extract_palette(&img, 8, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(a.weights.windows(2).all(|w| w[0] >= w[1]));
        assert!(a.colors.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn mask_restricts_the_region() {
        let img = Image::from_fn(6, 6, ColorSpace::Rgb, |x, y| if x < 3 { [0.5, 0.1, 0.1] } else { [x as f64 / 6.0, y as f64 / 6.0, 0.3] });
        let mask = RegionMask::from_fn(6, 6, |x, _| if x < 3 { 1.0 } else { 0.0 });
        let p = extract_palette_masked(&img, Some(&mask), 8, 1).unwrap();
        assert!(p.colors.iter().all(|c| *c == [0.5, 0.1, 0.1]));
        assert!(extract_palette_masked(&img, Some(&RegionMask::empty(6, 6)), 8, 1).is_err());
    }
}
