//! Fréchet feature distance between image sets.

use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::Graph;
use crate::error::{invalid, shape_err};
use crate::image::{ColorSpace, Image};
use crate::math::sqrt;
use crate::nn::Extractor;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Streaming mean and scatter matrix of `D`-dimensional features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    n: u64,
    mean: Vec<f64>,
    /// Row-major `D x D` sum of outer products of deviations.
    scatter: Vec<f64>,
}

impl FeatureStats {
    pub fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], scatter: vec![0.0; dim * dim] }
    }

    /// Stats with a given mean and (unbiased) covariance, as if from `n` samples.
    pub fn from_moments(n: u64, mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(shape_err!("covariance has {} entries, expected {}", cov.len(), d * d));
        }
        let k = n.saturating_sub(1) as f64;
        Ok(Self { n, mean, scatter: cov.iter().map(|c| c * k).collect() })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased covariance, row-major. Requires at least two samples.
    pub fn covariance(&self) -> Result<Vec<f64>> {
        if self.n < 2 {
            return Err(invalid!("covariance needs at least two samples, have {}", self.n));
        }
        let k = 1.0 / (self.n - 1) as f64;
        Ok(self.scatter.iter().map(|s| s * k).collect())
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        let d = self.dim();
        if x.len() != d {
            return Err(shape_err!("feature has {} dims, expected {}", x.len(), d));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector".into()));
        }
        self.n += 1;
        let n = self.n as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / n;
        }
        let post: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        for i in 0..d {
            for j in 0..d {
                self.scatter[i * d + j] += delta[i] * post[j];
            }
        }
        Ok(())
    }

    /// Combines two disjoint accumulations.
    pub fn merge(&self, other: &FeatureStats) -> Result<FeatureStats> {
        let d = self.dim();
        if other.dim() != d {
            return Err(shape_err!("cannot merge {}-dim and {}-dim stats", d, other.dim()));
        }
        if self.n == 0 {
            return Ok(other.clone());
        }
        if other.n == 0 {
            return Ok(self.clone());
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let mean = self.mean.iter().zip(&delta).map(|(a, dl)| a + dl * nb / n).collect();
        let f = na * nb / n;
        let mut scatter = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                scatter[i * d + j] = self.scatter[i * d + j] + other.scatter[i * d + j] + delta[i] * delta[j] * f;
            }
        }
        Ok(FeatureStats { n: self.n + other.n, mean, scatter })
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and row-major eigenvectors (column `k` pairs with value `k`).
pub fn symmetric_eigen(a: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), d * d);
    let mut m = a.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>();
    for _sweep in 0..100 {
        let off: f64 = (0..d).flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i * d + j] * m[i * d + j]).sum();
        if off <= 1e-30 * scale || off == 0.0 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * d + q] - m[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..d {
                    let (mkp, mkq) = (m[k * d + p], m[k * d + q]);
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let (mpk, mqk) = (m[p * d + k], m[q * d + k]);
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let (vkp, vkq) = (v[k * d + p], v[k * d + q]);
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..d).map(|i| m[i * d + i]).collect(), v)
}

fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

fn psd_sqrt(a: &[f64], d: usize) -> Vec<f64> {
    let (vals, vecs) = symmetric_eigen(a, d);
    let mut out = vec![0.0; d * d];
    for k in 0..d {
        let s = sqrt(vals[k].max(0.0));
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] += vecs[i * d + k] * s * vecs[j * d + k];
            }
        }
    }
    out
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d {
        return Err(shape_err!("feature dims differ: {} vs {}", d, b.dim()));
    }
    let (ca, cb) = (a.covariance()?, b.covariance()?);
    if a.mean.iter().chain(&b.mean).chain(&ca).chain(&cb).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature statistics".into()));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let ra = psd_sqrt(&ca, d);
    let mut inner = matmul(&matmul(&ra, &cb, d), &ra, d);
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (inner[i * d + j] + inner[j * d + i]);
            inner[i * d + j] = s;
            inner[j * d + i] = s;
        }
    }
    let (vals, _) = symmetric_eigen(&inner, d);
    let tr_sqrt: f64 = vals.iter().map(|v| sqrt(v.max(0.0))).sum();
    let tr: f64 = (0..d).map(|i| ca[i * d + i] + cb[i * d + i]).sum();
    Ok((mean_term + tr - 2.0 * tr_sqrt).max(0.0))
}

/// Globally average-pooled extractor features of one RGB image.
pub fn image_features(img: &Image, ex: &Extractor) -> Result<Vec<f64>> {
    img.expect_space(ColorSpace::Rgb)?;
    let (w, h) = (img.width(), img.height());
    let t = Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| img.pixel(x, y)[c]);
    let mut g = Graph::new();
    let x = g.constant(t);
    let f = ex.from_rgb(&mut g, x)?;
    Ok(global_average(g.value(f)))
}

fn global_average(t: &Tensor) -> Vec<f64> {
    let [_, c, h, w] = t.shape();
    (0..c).map(|ch| t.plane(0, ch).iter().sum::<f64>() / (h * w) as f64).collect()
}

/// Feature statistics of an image set.
pub fn accumulate<'a>(images: impl IntoIterator<Item = &'a Image>, ex: &Extractor) -> Result<FeatureStats> {
    let mut stats = FeatureStats::new(ex.out_channels());
    for img in images {
        stats.push(&image_features(img, ex)?)?;
    }
    if stats.count() == 0 {
        return Err(Error::Empty("image set".into()));
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uni(n: u64, mu: f64, var: f64) -> FeatureStats {
        FeatureStats::from_moments(n, vec![mu], vec![var]).unwrap()
    }

    #[test]
    fn univariate_closed_form() {
        assert!((frechet_distance(&uni(10, 0.0, 1.0), &uni(10, 1.0, 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((frechet_distance(&uni(10, 0.0, 1.0), &uni(10, 0.0, 4.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!(frechet_distance(&uni(10, 0.3, 2.0), &uni(10, 0.3, 2.0)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn eigen_reconstructs() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0];
        let (vals, vecs) = symmetric_eigen(&a, 3);
        for i in 0..3 {
            for j in 0..3 {
                let r: f64 = (0..3).map(|k| vecs[i * 3 + k] * vals[k] * vecs[j * 3 + k]).sum();
                assert!((r - a[i * 3 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicated_set_has_zero_covariance() {
        let mut s = FeatureStats::new(2);
        s.push(&[1.0, 2.0]).unwrap();
        s.push(&[1.0, 2.0]).unwrap();
        assert!(s.covariance().unwrap().iter().all(|&c| c == 0.0));
        assert_eq!(s.count(), 2);
    }

    #[test]
    fn errors() {
        assert!(frechet_distance(&FeatureStats::new(2), &FeatureStats::new(3)).is_err());
        assert!(FeatureStats::new(1).covariance().is_err());
        assert!(FeatureStats::new(2).push(&[1.0]).is_err());
        assert!(FeatureStats::new(1).push(&[f64::NAN]).is_err());
        let ex = Extractor::test_mode(0);
        assert!(accumulate(core::iter::empty(), &ex).is_err());
    }
}
