use alloc::vec::Vec;

use crate::autograd::{Graph, Var};
use crate::math::floor;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Stroke-thickness and abstraction levels, each a real number in `[1, N]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureLevels {
    pub alpha_s: f64,
    pub alpha_a: f64,
}

impl TextureLevels {
    pub const fn new(alpha_s: f64, alpha_a: f64) -> Self {
        Self { alpha_s, alpha_a }
    }

    pub const fn uniform(level: f64) -> Self {
        Self { alpha_s: level, alpha_a: level }
    }

    pub fn clamped(self, n: usize) -> Self {
        let hi = n as f64;
        Self { alpha_s: self.alpha_s.clamp(1.0, hi), alpha_a: self.alpha_a.clamp(1.0, hi) }
    }

    pub fn validate(&self, n: usize, extrapolate: bool) -> Result<()> {
        for level in [self.alpha_s, self.alpha_a] {
            check_level(level, n, extrapolate)?;
        }
        Ok(())
    }
}

fn check_level(alpha: f64, n: usize, extrapolate: bool) -> Result<()> {
    if !alpha.is_finite() || (!extrapolate && !(1.0..=n as f64).contains(&alpha)) {
        return Err(Error::LevelOutOfRange { level: alpha, n });
    }
    Ok(())
}

/// Two-nearest-branch interpolation weights for a level.
///
/// With `k = floor(alpha)` and `t = alpha - k`, the result is
/// `(1 - t) * g[k] + t * g[k + 1]`; branches are 0-based in the returned
/// list and zero-weight branches are omitted, so an integer level selects a
/// single branch with weight exactly 1. With `extrapolate`, levels outside
/// `[1, N]` extend the outermost pair linearly.
pub fn branch_weights(alpha: f64, n: usize, extrapolate: bool) -> Result<Vec<(usize, f64)>> {
    check_level(alpha, n, extrapolate)?;
    if n == 1 {
        return Ok(alloc::vec![(0, 1.0)]);
    }
    let k = (floor(alpha) as i64).clamp(1, n as i64 - 1) as usize;
    let t = alpha - k as f64;
    let mut out = Vec::with_capacity(2);
    if t != 1.0 {
        out.push((k - 1, 1.0 - t));
    }
    if t != 0.0 {
        out.push((k, t));
    }
    Ok(out)
}

/// Per-pixel weights from a level map `[N, 1, h, w]`: one map per branch
/// that is active somewhere, in branch order.
pub fn spatial_branch_weights(levels: &Tensor, n: usize, extrapolate: bool) -> Result<Vec<(usize, Tensor)>> {
    let shape = levels.shape();
    assert_eq!(shape[1], 1, "level maps have one channel");
    let mut maps: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
    for (i, &alpha) in levels.data().iter().enumerate() {
        for (b, w) in branch_weights(alpha, n, extrapolate)? {
            maps[b].get_or_insert_with(|| Tensor::zeros(shape)).data_mut()[i] = w;
        }
    }
    Ok(maps.into_iter().enumerate().filter_map(|(b, m)| m.map(|m| (b, m))).collect())
}

/// How branch features are combined.
#[derive(Debug, Clone)]
pub enum BranchMix {
    Uniform(Vec<(usize, f64)>),
    Spatial(Vec<(usize, Tensor)>),
}

impl BranchMix {
    pub fn uniform(alpha: f64, n: usize, extrapolate: bool) -> Result<Self> {
        Ok(Self::Uniform(branch_weights(alpha, n, extrapolate)?))
    }

    pub fn branches(&self) -> Vec<usize> {
        match self {
            BranchMix::Uniform(w) => w.iter().map(|e| e.0).collect(),
            BranchMix::Spatial(w) => w.iter().map(|e| e.0).collect(),
        }
    }

    /// Weighted sum of the active branches, accumulated in branch order.
    pub fn combine(&self, g: &mut Graph, mut branch: impl FnMut(&mut Graph, usize) -> Var) -> Var {
        let mut acc: Option<Var> = None;
        match self {
            BranchMix::Uniform(weights) => {
                for &(b, w) in weights {
                    let f = branch(g, b);
                    let term = g.scale(f, w);
                    acc = Some(match acc {
                        Some(a) => g.add(a, term),
                        None => term,
                    });
                }
            }
            BranchMix::Spatial(maps) => {
                for (b, map) in maps {
                    let f = branch(g, *b);
                    let m = g.constant(map.clone());
                    let term = g.mul_map(f, m);
                    acc = Some(match acc {
                        Some(a) => g.add(a, term),
                        None => term,
                    });
                }
            }
        }
        acc.expect("at least one branch is active")
    }
}
