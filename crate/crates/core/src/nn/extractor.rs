use alloc::vec::Vec;

use crate::autograd::{ConvSpec, Graph, Var};
use crate::error::shape_err;
use crate::math::sqrt;
use crate::rng::{normal, rng_from_seed};
use crate::tensor::Tensor;
use crate::Result;

/// Per-channel means subtracted in the Caffe convention, BGR order, 0-255 scale.
pub const CAFFE_BGR_MEAN: [f64; 3] = [103.939, 116.779, 123.68];

#[derive(Debug, Clone, PartialEq)]
pub enum ExtractorLayer {
    Conv { weight: Tensor, bias: Tensor, pad: usize },
    Relu,
    LeakyRelu(f64),
    AvgPool,
    MaxPool,
}

/// Frozen perceptual feature function. Its input is a BGR, mean-subtracted,
/// 0-255 image; the helpers below do that preprocessing on the graph so
/// gradients reach the generator output.
#[derive(Debug, Clone, PartialEq)]
pub struct Extractor {
    pub layers: Vec<ExtractorLayer>,
    pub name: alloc::string::String,
}

impl Extractor {
    /// Small seeded random pyramid used when no pretrained weights are supplied.
    pub fn test_mode(seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut layers = Vec::new();
        let widths = [(3usize, 16usize), (16, 32), (32, 32)];
        for (i, &(cin, cout)) in widths.iter().enumerate() {
            let std = 1.0 / sqrt((cin * 9) as f64);
            let weight = Tensor::from_fn([cout, cin, 3, 3], |_| std * normal(&mut rng));
            let bias = Tensor::from_fn([cout, 1, 1, 1], |_| 0.1 * normal(&mut rng));
            layers.push(ExtractorLayer::Conv { weight, bias, pad: 1 });
            layers.push(ExtractorLayer::LeakyRelu(0.2));
            if i + 1 < widths.len() {
                layers.push(ExtractorLayer::AvgPool);
            }
        }
        Self { layers, name: "test-pyramid".into() }
    }

    pub fn in_channels(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match l {
                ExtractorLayer::Conv { weight, .. } => Some(weight.shape()[1]),
                _ => None,
            })
            .unwrap_or(3)
    }

    pub fn out_channels(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                ExtractorLayer::Conv { weight, .. } => Some(weight.shape()[0]),
                _ => None,
            })
            .unwrap_or(3)
    }

    /// Spatial reduction factor of the feature map.
    pub fn stride(&self) -> usize {
        1 << self.layers.iter().filter(|l| matches!(l, ExtractorLayer::AvgPool | ExtractorLayer::MaxPool)).count()
    }

    /// Runs the layer stack on an already preprocessed input.
    pub fn features(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let [_, c, h, w] = g.value(x).shape();
        if c != self.in_channels() {
            return Err(shape_err!("extractor expects {} channels, got {}", self.in_channels(), c));
        }
        if h % self.stride() != 0 || w % self.stride() != 0 || h == 0 || w == 0 {
            return Err(shape_err!("extractor input {}x{} not divisible by {}", h, w, self.stride()));
        }
        let mut x = x;
        for layer in &self.layers {
            x = match layer {
                ExtractorLayer::Conv { weight, bias, pad } => {
                    let k = g.constant(weight.clone());
                    let b = g.constant(bias.clone());
                    g.conv2d(x, k, Some(b), ConvSpec { stride: 1, pad: *pad, groups: 1 })
                }
                ExtractorLayer::Relu => g.relu(x),
                ExtractorLayer::LeakyRelu(s) => g.leaky_relu(x, *s),
                ExtractorLayer::AvgPool => g.avg_pool2(x),
                ExtractorLayer::MaxPool => g.max_pool2(x),
            };
        }
        Ok(x)
    }

    /// Features of a normalized `L` map in `[-1, 1]`, replicated to three channels.
    pub fn from_l(&self, g: &mut Graph, l: Var) -> Result<Var> {
        let [_, c, _, _] = g.value(l).shape();
        if c != 1 {
            return Err(shape_err!("expected a 1-channel L map, got {} channels", c));
        }
        let rep = g.concat(&[l, l, l]);
        let bias: Vec<f64> = CAFFE_BGR_MEAN.iter().map(|m| 127.5 - m).collect();
        let x = g.affine(rep, 127.5, &bias);
        self.features(g, x)
    }

    /// Features of an RGB `[0, 1]` batch `[N, 3, H, W]`.
    pub fn from_rgb(&self, g: &mut Graph, rgb: Var) -> Result<Var> {
        let t = g.value(rgb);
        let [n, c, h, w] = t.shape();
        if c != 3 {
            return Err(shape_err!("expected RGB input, got {} channels", c));
        }
        let bgr = Tensor::from_fn([n, 3, h, w], |[i, ch, y, x]| 255.0 * t.at([i, 2 - ch, y, x]) - CAFFE_BGR_MEAN[ch]);
        let x = g.constant(bgr);
        self.features(g, x)
    }

    pub fn bit_hash(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for l in &self.layers {
            let v = match l {
                ExtractorLayer::Conv { weight, bias, pad } => weight.bit_hash() ^ bias.bit_hash().rotate_left(17) ^ *pad as u64,
                ExtractorLayer::Relu => 1,
                ExtractorLayer::LeakyRelu(s) => s.to_bits(),
                ExtractorLayer::AvgPool => 2,
                ExtractorLayer::MaxPool => 3,
            };
            h = (h ^ v).wrapping_mul(0x100_0000_01b3);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l_replication_matches_rgb_gray() {
        let ex = Extractor::test_mode(1);
        let lval = Tensor::from_fn([1, 1, 8, 8], |[_, _, y, x]| (x as f64 - y as f64) / 8.0);
        let gray = Tensor::from_fn([1, 3, 8, 8], |[_, _, y, x]| (lval.at([0, 0, y, x]) + 1.0) / 2.0);
        let mut g = Graph::new();
        let l = g.constant(lval);
        let a = ex.from_l(&mut g, l).unwrap();
        let r = g.constant(gray);
        let b = ex.from_rgb(&mut g, r).unwrap();
        assert!(g.value(a).max_abs_diff(g.value(b)) < 1e-9);
        assert_eq!(g.value(a).shape(), [1, 32, 2, 2]);
    }

    #[test]
    fn rejects_wrong_channels() {
        let ex = Extractor::test_mode(1);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([1, 2, 8, 8]));
        assert!(ex.from_l(&mut g, x).is_err());
        assert!(ex.from_rgb(&mut g, x).is_err());
    }
}
