use alloc::collections::BTreeMap;
use alloc::string::String;

use super::params::ParamTree;
use crate::math::{powf, sqrt};
use crate::tensor::Tensor;
use crate::error::invalid;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates of one leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        let c = config;
        if !(c.lr > 0.0) || !(0.0..1.0).contains(&c.beta1) || !(0.0..1.0).contains(&c.beta2) || !(c.eps > 0.0) {
            return Err(invalid!("bad Adam settings {:?}", c));
        }
        Ok(Self { config, state: BTreeMap::new() })
    }

    /// Applies one update per `(path, gradient)` pair. Frozen leaves and
    /// unknown paths are left untouched.
    pub fn step<'a>(&mut self, params: &mut ParamTree, grads: impl IntoIterator<Item = (&'a String, &'a Tensor)>) {
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        for (path, grad) in grads {
            let Some(p) = params.get_mut(path) else { continue };
            if p.frozen || p.value.shape() != grad.shape() {
                continue;
            }
            let mom = self.state.entry(path.clone()).or_insert_with(|| Moments {
                m: Tensor::zeros(grad.shape()),
                v: Tensor::zeros(grad.shape()),
                t: 0,
            });
            mom.t += 1;
            let c1 = 1.0 - powf(beta1, mom.t as f64);
            let c2 = 1.0 - powf(beta2, mom.t as f64);
            let (m, v) = (mom.m.data_mut(), mom.v.data_mut());
            for (i, (w, &g)) in p.value.data_mut().iter_mut().zip(grad.data()).enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                *w -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = ParamTree::new();
        p.insert("a.w", Tensor::from_vec([1, 1, 1, 2], alloc::vec![1.0, -1.0]));
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let g = Tensor::from_vec([1, 1, 1, 2], alloc::vec![3.0, -0.5]);
        let path = String::from("a.w");
        opt.step(&mut p, [(&path, &g)]);
        let v = p.value("a.w").data();
        assert!((v[0] - (1.0 - 2e-4)).abs() < 1e-9);
        assert!((v[1] - (-1.0 + 2e-4)).abs() < 1e-9);
    }

    #[test]
    fn frozen_leaf_untouched() {
        let mut p = ParamTree::new();
        p.insert("a.w", Tensor::full([1, 1, 1, 1], 1.0));
        p.freeze(&["a"]).unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let path = String::from("a.w");
        opt.step(&mut p, [(&path, &Tensor::full([1, 1, 1, 1], 1.0))]);
        assert_eq!(p.value("a.w").data()[0], 1.0);
        assert!(opt.state.is_empty());
    }

    #[test]
    fn bad_config_rejected() {
        assert!(Adam::new(AdamConfig { lr: 0.0, ..Default::default() }).is_err());
        assert!(Adam::new(AdamConfig { beta1: 1.0, ..Default::default() }).is_err());
    }
}
