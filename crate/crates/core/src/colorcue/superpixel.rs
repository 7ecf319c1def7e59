use alloc::vec;
use alloc::vec::Vec;

use crate::colorspace::rgb_pixel_to_lab;
use crate::error::invalid;
use crate::image::{ColorSpace, Image};
use crate::math::{ceil, round, sqrt};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicParams {
    pub n_segments: usize,
    pub compactness: f64,
    pub iterations: usize,
}

impl SlicParams {
    pub fn new(n_segments: usize) -> Self {
        Self { n_segments, compactness: 10.0, iterations: 10 }
    }
}

/// 200 segments at 256x256, scaled with the pixel count.
pub fn default_segment_count(width: usize, height: usize) -> usize {
    (round(200.0 * (width * height) as f64 / (256.0 * 256.0)) as usize).max(1)
}

/// Per-pixel segment labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<usize>,
    pub count: usize,
}

impl Segmentation {
    /// Replaces every pixel by the mean of its segment (channel-wise).
    pub fn fill_mean(&self, img: &Image) -> Result<Image> {
        if img.width() != self.width || img.height() != self.height {
            return Err(crate::error::shape_err!("segmentation does not match image size"));
        }
        let c = img.channels();
        let mut sums = vec![0.0; self.count * c];
        let mut counts = vec![0usize; self.count];
        for (px, &l) in img.pixels().zip(&self.labels) {
            counts[l] += 1;
            for ch in 0..c {
                sums[l * c + ch] += px[ch];
            }
        }
        let mut data = Vec::with_capacity(img.data().len());
        for &l in &self.labels {
            let n = counts[l] as f64;
            for ch in 0..c {
                data.push(sums[l * c + ch] / n);
            }
        }
        Image::new(img.width(), img.height(), img.space(), data)
    }
}

/// Seed grid: `nx` x `ny` cells with `nx * ny` close to the requested count.
fn seed_grid(width: usize, height: usize, k: usize) -> (usize, usize) {
    let nx = (ceil(sqrt(k as f64 * width as f64 / height as f64)) as usize).clamp(1, k.min(width));
    let ny = (round(k as f64 / nx as f64) as usize).clamp(1, height);
    (nx, ny)
}

/// SLIC: k-means in joint (Lab, xy) space restricted to a local window.
///
/// Seeds sit on a regular grid at cell centers, so the result is fully
/// determined by the image and the parameters.
pub fn slic(photo: &Image, params: SlicParams) -> Result<Segmentation> {
    photo.expect_space(ColorSpace::Rgb)?;
    let (w, h) = (photo.width(), photo.height());
    let k = params.n_segments;
    if k == 0 {
        return Err(invalid!("n_segments must be at least 1"));
    }
    if k > w * h {
        return Err(invalid!("{} segments requested for {} pixels", k, w * h));
    }
    let lab: Vec<[f64; 3]> = photo.pixels().map(|p| rgb_pixel_to_lab([p[0], p[1], p[2]])).collect();
    let (nx, ny) = seed_grid(w, h, k);
    let (cell_w, cell_h) = (w as f64 / nx as f64, h as f64 / ny as f64);
    let step = cell_w.max(cell_h);
    // centers: L, a, b, x, y
    let mut centers: Vec<[f64; 5]> = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let cx = (i as f64 + 0.5) * cell_w;
            let cy = (j as f64 + 0.5) * cell_h;
            let px = (cx as usize).min(w - 1);
            let py = (cy as usize).min(h - 1);
            let c = lab[py * w + px];
            centers.push([c[0], c[1], c[2], cx, cy]);
        }
    }
    let spatial_weight = (params.compactness / step) * (params.compactness / step);
    let window = 2.0 * step;
    let mut labels = vec![0usize; w * h];
    let mut dist = vec![f64::INFINITY; w * h];
    for _ in 0..params.iterations.max(1) {
        dist.fill(f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let x0 = (c[3] - window).max(0.0) as usize;
            let x1 = ((c[3] + window) as usize).min(w - 1);
            let y0 = (c[4] - window).max(0.0) as usize;
            let y1 = ((c[4] + window) as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y * w + x;
                    let p = lab[i];
                    let dc = sq(p[0] - c[0]) + sq(p[1] - c[1]) + sq(p[2] - c[2]);
                    let ds = sq(x as f64 + 0.5 - c[3]) + sq(y as f64 + 0.5 - c[4]);
                    let d = dc + ds * spatial_weight;
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = ci;
                    }
                }
            }
        }
        let mut acc = vec![[0.0f64; 6]; centers.len()];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let a = &mut acc[labels[i]];
                a[0] += lab[i][0];
                a[1] += lab[i][1];
                a[2] += lab[i][2];
                a[3] += x as f64 + 0.5;
                a[4] += y as f64 + 0.5;
                a[5] += 1.0;
            }
        }
        for (c, a) in centers.iter_mut().zip(&acc) {
            if a[5] > 0.0 {
                for d in 0..5 {
                    c[d] = a[d] / a[5];
                }
            }
        }
    }
    // Compact the label ids to the segments that survived.
    let mut remap = vec![usize::MAX; centers.len()];
    let mut count = 0;
    for l in labels.iter_mut() {
        if remap[*l] == usize::MAX {
            remap[*l] = count;
            count += 1;
        }
        *l = remap[*l];
    }
    Ok(Segmentation { width: w, height: h, labels, count })
}

#[inline]
fn sq(v: f64) -> f64 {
    v * v
}

/// Superpixel color map: each pixel takes the mean RGB of its SLIC segment.
pub fn superpixel_colormap(photo: &Image, n_segments: usize) -> Result<Image> {
    let seg = slic(photo, SlicParams::new(n_segments))?;
    seg.fill_mean(photo)
}
