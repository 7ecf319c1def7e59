//! Training objectives on the autograd graph.
//!
//! Adversarial terms use the sigmoid cross-entropy form with a
//! non-saturating generator loss. Perceptual terms compare features of the
//! frozen [`Extractor`] on `L` maps replicated to three channels.

use crate::autograd::{Axis, Graph, Var};
use crate::error::{invalid, shape_err};
use crate::nn::Extractor;
use crate::Result;

/// Weights of the texture objective: adversarial, content, Gram, total variation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub adv: f64,
    pub content: f64,
    pub gram: f64,
    pub tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { adv: 1.0, content: 0.0025, gram: 0.0045, tv: 0.0015 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.adv, self.content, self.gram, self.tv].iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(invalid!("loss weights must be non-negative: {:?}", self))
        }
    }
}

/// Weights of the target-color fine-tuning objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorWeights {
    pub recon: f64,
    pub adv: f64,
}

impl Default for ColorWeights {
    fn default() -> Self {
        Self { recon: 1.0, adv: 0.1 }
    }
}

impl ColorWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.recon, self.adv].iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(invalid!("loss weights must be non-negative: {:?}", self))
        }
    }
}

/// Discriminator loss `mean softplus(-D(real)) + mean softplus(D(fake))`.
pub fn adv_d(g: &mut Graph, real_logits: Var, fake_logits: Var) -> Var {
    let neg = g.scale(real_logits, -1.0);
    let r = g.softplus(neg);
    let r = g.mean(r);
    let f = g.softplus(fake_logits);
    let f = g.mean(f);
    g.add(r, f)
}

/// Non-saturating generator loss `mean softplus(-D(fake))`.
pub fn adv_g(g: &mut Graph, fake_logits: Var) -> Var {
    let neg = g.scale(fake_logits, -1.0);
    let s = g.softplus(neg);
    g.mean(s)
}

fn same_shape(g: &Graph, a: Var, b: Var) -> Result<()> {
    if g.value(a).shape() != g.value(b).shape() {
        return Err(shape_err!("shape mismatch {:?} vs {:?}", g.value(a).shape(), g.value(b).shape()));
    }
    Ok(())
}

fn l1(g: &mut Graph, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let d = g.abs(d);
    g.mean(d)
}

/// Mean absolute difference of extractor features of two `L` maps.
pub fn content(g: &mut Graph, ex: &Extractor, src_l: Var, out_l: Var) -> Result<Var> {
    same_shape(g, src_l, out_l)?;
    let a = ex.from_l(g, src_l)?;
    let b = ex.from_l(g, out_l)?;
    Ok(l1(g, a, b))
}

/// Gram matrix `F F^T / (C H W)` per batch item, shape `[N, 1, C, C]`.
pub fn gram(g: &mut Graph, features: Var) -> Result<Var> {
    if g.value(features).is_empty() {
        return Err(crate::Error::Empty("feature map".into()));
    }
    Ok(g.gram(features))
}

/// Mean absolute difference of Gram matrices. Spatial sizes may differ.
pub fn gram_loss(g: &mut Graph, ex: &Extractor, tgt_l: Var, out_l: Var) -> Result<Var> {
    let (ts, os) = (g.value(tgt_l).shape(), g.value(out_l).shape());
    if ts[0] != os[0] || ts[1] != os[1] {
        return Err(shape_err!("gram loss batch/channel mismatch {:?} vs {:?}", ts, os));
    }
    let a = ex.from_l(g, tgt_l)?;
    let a = gram(g, a)?;
    let b = ex.from_l(g, out_l)?;
    let b = gram(g, b)?;
    Ok(l1(g, a, b))
}

/// `mean |dx| + mean |dy|` with forward differences; a missing direction contributes 0.
pub fn tv(g: &mut Graph, x: Var) -> Result<Var> {
    let [_, _, h, w] = g.value(x).shape();
    if h * w < 2 {
        return Err(invalid!("total variation needs at least two pixels, got {}x{}", h, w));
    }
    let dx = g.diff(x, Axis::X);
    let dx = g.abs(dx);
    let dx = g.mean(dx);
    let dy = g.diff(x, Axis::Y);
    let dy = g.abs(dy);
    let dy = g.mean(dy);
    Ok(g.add(dx, dy))
}

/// Components of the texture objective.
#[derive(Debug, Clone, Copy)]
pub struct TextureTerms {
    pub adv: Var,
    pub content: Var,
    pub gram: Var,
    pub tv: Var,
}

pub fn total_texture(g: &mut Graph, w: &LossWeights, t: TextureTerms) -> Var {
    let a = g.scale(t.adv, w.adv);
    let c = g.scale(t.content, w.content);
    let s = g.scale(t.gram, w.gram);
    let v = g.scale(t.tv, w.tv);
    let ac = g.add(a, c);
    let sv = g.add(s, v);
    g.add(ac, sv)
}

/// Mean squared error between `ab` maps.
pub fn color_recon(g: &mut Graph, target_ab: Var, pred_ab: Var) -> Result<Var> {
    same_shape(g, target_ab, pred_ab)?;
    if g.value(pred_ab).shape()[1] != 2 {
        return Err(shape_err!("color loss expects 2 channels, got {}", g.value(pred_ab).shape()[1]));
    }
    let d = g.sub(pred_ab, target_ab);
    let d = g.square(d);
    Ok(g.mean(d))
}

/// `recon * L_color + adv * L_adv` for target-color fine-tuning.
pub fn color_finetune(g: &mut Graph, w: &ColorWeights, recon: Var, adv: Var) -> Var {
    let r = g.scale(recon, w.recon);
    let a = g.scale(adv, w.adv);
    g.add(r, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use alloc::vec;

    #[test]
    fn zero_logits_give_two_log_two() {
        let mut g = Graph::new();
        let r = g.constant(Tensor::zeros([2, 1, 3, 3]));
        let f = g.constant(Tensor::zeros([2, 1, 3, 3]));
        let d = adv_d(&mut g, r, f);
        assert!((g.scalar(d) - 2.0 * core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn confident_discriminator_loss_vanishes() {
        let mut g = Graph::new();
        let r = g.constant(Tensor::full([1, 1, 2, 2], 60.0));
        let f = g.constant(Tensor::full([1, 1, 2, 2], -60.0));
        let d = adv_d(&mut g, r, f);
        assert!(g.scalar(d) < 1e-20);
    }

    #[test]
    fn tv_cases() {
        let mut g = Graph::new();
        let pair = g.constant(Tensor::from_vec([1, 1, 1, 2], vec![0.25, 1.0]));
        let t = tv(&mut g, pair).unwrap();
        assert!((g.scalar(t) - 0.75).abs() < 1e-15);
        let sq = g.constant(Tensor::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]));
        let t = tv(&mut g, sq).unwrap();
        assert_eq!(g.scalar(t), 1.0);
        let c = g.constant(Tensor::full([1, 1, 5, 4], 0.3));
        let t = tv(&mut g, c).unwrap();
        assert_eq!(g.scalar(t), 0.0);
        let one = g.constant(Tensor::zeros([1, 1, 1, 1]));
        assert!(tv(&mut g, one).is_err());
    }

    #[test]
    fn gram_of_constant_feature() {
        let mut g = Graph::new();
        let f = g.constant(Tensor::full([1, 2, 2, 2], 3.0));
        let m = gram(&mut g, f).unwrap();
        assert!(g.value(m).data().iter().all(|v| (v - 4.5).abs() < 1e-12));
    }

    #[test]
    fn color_recon_constant_offset() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::full([1, 2, 3, 3], 0.2));
        let b = g.constant(Tensor::full([1, 2, 3, 3], -0.1));
        let l = color_recon(&mut g, a, b).unwrap();
        assert!((g.scalar(l) - 0.09).abs() < 1e-12);
        let c = g.constant(Tensor::zeros([1, 1, 3, 3]));
        assert!(color_recon(&mut g, a, c).is_err());
    }

    #[test]
    fn content_is_symmetric_and_zero_on_identity() {
        let ex = Extractor::test_mode(2);
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_fn([1, 1, 8, 8], |[_, _, y, x]| ((x * 3 + y) % 7) as f64 / 7.0 - 0.5));
        let b = g.constant(Tensor::from_fn([1, 1, 8, 8], |[_, _, y, x]| ((x + 2 * y) % 5) as f64 / 5.0 - 0.5));
        let ab = content(&mut g, &ex, a, b).unwrap();
        let ba = content(&mut g, &ex, b, a).unwrap();
        let aa = content(&mut g, &ex, a, a).unwrap();
        assert_eq!(g.scalar(ab), g.scalar(ba));
        assert_eq!(g.scalar(aa), 0.0);
        assert!(g.scalar(ab) > 0.0);
    }

    #[test]
    fn weights_validate() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { tv: -1.0, ..Default::default() }.validate().is_err());
        assert!(ColorWeights { adv: f64::NAN, ..Default::default() }.validate().is_err());
    }
}
