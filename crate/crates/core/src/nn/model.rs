use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::config::NetConfig;
use super::levels::BranchMix;
use super::params::ParamTree;
use crate::autograd::{ConvSpec, Graph, Var};
use crate::error::shape_err;
use crate::math::sqrt;
use crate::resample::area_downsample;
use crate::rng::{normal, rng_from_seed};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Named subtrees accepted by [`ParamTree::freeze`].
pub const SUBTREES: &[&str] = &[
    "encoder",
    "texture_decoder",
    "texture_decoder.stroke_unit",
    "texture_decoder.abstraction_unit",
    "texture_decoder.trunk",
    "color_decoder",
    "disc_texture",
    "disc_color",
];

/// Binds parameter leaves onto a graph. A leaf requires a gradient only if
/// it is not frozen and lies under one of the `train` subtrees.
pub struct Binder<'p> {
    params: &'p ParamTree,
    train: Vec<String>,
    bound: BTreeMap<String, Var>,
}

impl<'p> Binder<'p> {
    /// Binds everything as constants.
    pub fn inference(params: &'p ParamTree) -> Self {
        Self { params, train: Vec::new(), bound: BTreeMap::new() }
    }

    pub fn training(params: &'p ParamTree, train: &[&str]) -> Self {
        Self { params, train: train.iter().map(|s| s.to_string()).collect(), bound: BTreeMap::new() }
    }

    pub fn params(&self) -> &ParamTree {
        self.params
    }

    fn trainable(&self, path: &str) -> bool {
        !self.params.is_frozen(path)
            && self.train.iter().any(|t| path == t || (path.starts_with(t.as_str()) && path.as_bytes().get(t.len()) == Some(&b'.')))
    }

    pub fn bind(&mut self, g: &mut Graph, path: &str) -> Var {
        if let Some(&v) = self.bound.get(path) {
            return v;
        }
        let rg = self.trainable(path);
        let v = g.leaf(self.params.value(path).clone(), rg);
        self.bound.insert(path.to_string(), v);
        v
    }

    /// Gradients of every bound trainable leaf after `g.backward`.
    pub fn grads(&self, g: &Graph) -> Vec<(String, Tensor)> {
        self.bound
            .iter()
            .filter(|(_, &v)| g.requires_grad(v))
            .filter_map(|(k, &v)| g.grad(v).map(|t| (k.clone(), t.clone())))
            .collect()
    }

    pub fn bound_paths(&self) -> impl Iterator<Item = &String> {
        self.bound.keys()
    }

    /// Releases the parameter borrow, keeping the bindings for [`Binder::attach`].
    pub fn detach(self) -> Bindings {
        Bindings { train: self.train, bound: self.bound }
    }

    /// Resumes binding onto the same graph, possibly after parameters were updated.
    pub fn attach(params: &'p ParamTree, b: Bindings) -> Self {
        Self { params, train: b.train, bound: b.bound }
    }
}

/// Bindings of a [`Binder`] without the parameter borrow.
#[derive(Debug, Clone)]
pub struct Bindings {
    train: Vec<String>,
    bound: BTreeMap<String, Var>,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// He-normal for LeakyReLU layers, scaled.
    Leaky(f64),
    /// `std = scale / sqrt(fan_in)`.
    Plain(f64),
    /// Shared large kernel: variance balanced between the smallest and largest crop.
    Shared,
}

struct ConvDef {
    path: String,
    cout: usize,
    cin_per_group: usize,
    kernel: usize,
    init: Init,
}

fn resnext_defs(defs: &mut Vec<ConvDef>, prefix: &str, cfg: &NetConfig) {
    for i in 0..cfg.resnext_blocks {
        let p = format!("{}.block{}", prefix, i);
        let (c, d) = (cfg.feature_channels, cfg.bottleneck_channels);
        defs.push(ConvDef { path: format!("{}.reduce", p), cout: d, cin_per_group: c, kernel: 1, init: Init::Leaky(1.0) });
        defs.push(ConvDef {
            path: format!("{}.group", p),
            cout: d,
            cin_per_group: d / cfg.cardinality,
            kernel: 3,
            init: Init::Leaky(1.0),
        });
        defs.push(ConvDef { path: format!("{}.expand", p), cout: c, cin_per_group: d, kernel: 1, init: Init::Leaky(0.5) });
    }
}

fn layer_table(cfg: &NetConfig) -> Vec<ConvDef> {
    let (b, f, dc) = (cfg.base_channels, cfg.feature_channels, cfg.disc_channels);
    let mut d = Vec::new();
    let conv = |path: String, cout, cin, kernel, init| ConvDef { path, cout, cin_per_group: cin, kernel, init };
    d.push(conv("encoder.conv0".into(), b, 3, 7, Init::Leaky(1.0)));
    d.push(conv("encoder.down1".into(), 2 * b, b, 3, Init::Leaky(1.0)));
    d.push(conv("encoder.down2".into(), f, 2 * b, 3, Init::Leaky(1.0)));
    resnext_defs(&mut d, "encoder", cfg);

    for i in 0..cfg.n_levels {
        for l in 0..2 {
            d.push(conv(format!("texture_decoder.stroke_unit.branch{}.conv{}", i, l), f, f, 3, Init::Leaky(1.0)));
        }
    }
    for l in 0..2 {
        d.push(conv(format!("texture_decoder.abstraction_unit.conv{}", l), f, f, cfg.largest_kernel(), Init::Shared));
    }
    resnext_defs(&mut d, "texture_decoder.trunk", cfg);
    d.push(conv("texture_decoder.trunk.up1".into(), 2 * b, f, 3, Init::Leaky(1.0)));
    d.push(conv("texture_decoder.trunk.up2".into(), b, 2 * b, 3, Init::Leaky(1.0)));
    d.push(conv("texture_decoder.trunk.out".into(), 1, b, 7, Init::Plain(0.5)));

    resnext_defs(&mut d, "color_decoder", cfg);
    d.push(conv("color_decoder.col2".into(), 2 * b, f + 3, 3, Init::Leaky(1.0)));
    d.push(conv("color_decoder.col3".into(), b, 2 * b + 3, 3, Init::Leaky(1.0)));
    d.push(conv("color_decoder.out".into(), 2, b, 7, Init::Plain(0.5)));

    for (name, cin) in [("disc_texture", 1), ("disc_color", 2)] {
        d.push(conv(format!("{}.trunk.conv0", name), dc, cin, 3, Init::Leaky(1.0)));
        d.push(conv(format!("{}.trunk.conv1", name), 2 * dc, dc, 3, Init::Leaky(1.0)));
        d.push(conv(format!("{}.trunk.conv2", name), 4 * dc, 2 * dc, 3, Init::Leaky(1.0)));
    }
    for i in 0..cfg.n_levels {
        d.push(conv(format!("disc_texture.head{}", i), 1, 4 * dc, 1, Init::Plain(1.0)));
    }
    d.push(conv("disc_color.head".into(), 1, 4 * dc, 1, Init::Plain(1.0)));
    d
}

/// Freshly initialized parameters, deterministic per `seed`.
pub fn init_params(cfg: &NetConfig, seed: u64) -> Result<ParamTree> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    let gain = sqrt(2.0 / (1.0 + cfg.leaky_slope * cfg.leaky_slope));
    let mut tree = ParamTree::new();
    for def in layer_table(cfg) {
        let fan_in = (def.cin_per_group * def.kernel * def.kernel) as f64;
        let std = match def.init {
            Init::Leaky(s) => s * gain / sqrt(fan_in),
            Init::Plain(s) => s / sqrt(fan_in),
            Init::Shared => gain / sqrt((def.cin_per_group * cfg.kernel_sizes[0] * def.kernel) as f64),
        };
        let weight = Tensor::from_fn([def.cout, def.cin_per_group, def.kernel, def.kernel], |_| std * normal(&mut rng));
        tree.insert(format!("{}.weight", def.path), weight);
        tree.insert(format!("{}.bias", def.path), Tensor::zeros([def.cout, 1, 1, 1]));
    }
    Ok(tree)
}

/// Path and shape of every leaf [`init_params`] creates, in path order.
pub fn param_shapes(cfg: &NetConfig) -> Vec<(String, [usize; 4])> {
    let mut out: Vec<(String, [usize; 4])> = layer_table(cfg)
        .into_iter()
        .flat_map(|d| {
            [
                (format!("{}.weight", d.path), [d.cout, d.cin_per_group, d.kernel, d.kernel]),
                (format!("{}.bias", d.path), [d.cout, 1, 1, 1]),
            ]
        })
        .collect();
    out.sort();
    out
}

/// Parameter count if every abstraction branch stored its own kernels.
pub fn unshared_param_count(cfg: &NetConfig) -> usize {
    let f = cfg.feature_channels;
    let shared_layers: usize = layer_table(cfg)
        .iter()
        .filter(|d| d.path.starts_with("texture_decoder.abstraction_unit"))
        .map(|d| d.cout * d.cin_per_group * d.kernel * d.kernel + d.cout)
        .sum();
    let per_branch: usize = cfg.kernel_sizes.iter().map(|k| 2 * (f * f * k * k + f)).sum();
    layer_table(cfg).iter().map(|d| d.cout * d.cin_per_group * d.kernel * d.kernel + d.cout).sum::<usize>() - shared_layers
        + per_branch
}

/// Forward definitions of every network component.
///
/// Conventions: inputs are `[N, C, H, W]` in the normalized `[-1, 1]` range;
/// all convolutions are followed by LeakyReLU except output layers (tanh) and
/// discriminator heads (raw logits). There are no normalization layers.
#[derive(Debug, Clone, Copy)]
pub struct Network<'c> {
    pub cfg: &'c NetConfig,
}

impl<'c> Network<'c> {
    pub fn new(cfg: &'c NetConfig) -> Self {
        Self { cfg }
    }

    fn conv(&self, g: &mut Graph, b: &mut Binder, path: &str, x: Var, spec: ConvSpec) -> Var {
        let w = b.bind(g, &format!("{}.weight", path));
        let bias = b.bind(g, &format!("{}.bias", path));
        g.conv2d(x, w, Some(bias), spec)
    }

    fn conv_act(&self, g: &mut Graph, b: &mut Binder, path: &str, x: Var, spec: ConvSpec) -> Var {
        let y = self.conv(g, b, path, x, spec);
        g.leaky_relu(y, self.cfg.leaky_slope)
    }

    fn resnext(&self, g: &mut Graph, b: &mut Binder, prefix: &str, mut x: Var) -> Var {
        for i in 0..self.cfg.resnext_blocks {
            let p = format!("{}.block{}", prefix, i);
            let r = self.conv_act(g, b, &format!("{}.reduce", p), x, ConvSpec::same(1));
            let spec = ConvSpec { stride: 1, pad: 1, groups: self.cfg.cardinality };
            let r = self.conv_act(g, b, &format!("{}.group", p), r, spec);
            let r = self.conv(g, b, &format!("{}.expand", p), r, ConvSpec::same(1));
            let sum = g.add(x, r);
            x = g.leaky_relu(sum, self.cfg.leaky_slope);
        }
        x
    }

    /// Shared encoder: `H x W` Lab input to an `H/4 x W/4` feature map.
    pub fn encode(&self, g: &mut Graph, b: &mut Binder, x: Var) -> Result<Var> {
        let [_, c, h, w] = g.value(x).shape();
        if c != 3 {
            return Err(shape_err!("encoder expects 3 Lab channels, got {}", c));
        }
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::Indivisible { height: h, width: w, factor: 4 });
        }
        let down = ConvSpec { stride: 2, pad: 1, groups: 1 };
        let x = self.conv_act(g, b, "encoder.conv0", x, ConvSpec::same(7));
        let x = self.conv_act(g, b, "encoder.down1", x, down);
        let x = self.conv_act(g, b, "encoder.down2", x, down);
        Ok(self.resnext(g, b, "encoder", x))
    }

    /// Stroke branch `i` (0-based): two 3x3 convolutions.
    pub fn stroke_branch(&self, g: &mut Graph, b: &mut Binder, f: Var, i: usize) -> Var {
        let p = format!("texture_decoder.stroke_unit.branch{}", i);
        let x = self.conv_act(g, b, &format!("{}.conv0", p), f, ConvSpec::same(3));
        self.conv_act(g, b, &format!("{}.conv1", p), x, ConvSpec::same(3))
    }

    /// Abstraction branch `i` (0-based): two convolutions whose kernels are
    /// the centered `K_i x K_i` windows of the stored `K_N x K_N` kernels.
    pub fn abstraction_branch(&self, g: &mut Graph, b: &mut Binder, f: Var, i: usize) -> Var {
        let k = self.cfg.kernel_sizes[i];
        let mut x = f;
        for l in 0..2 {
            let p = format!("texture_decoder.abstraction_unit.conv{}", l);
            let full = b.bind(g, &format!("{}.weight", p));
            let bias = b.bind(g, &format!("{}.bias", p));
            let w = if k == self.cfg.largest_kernel() { full } else { g.center_crop(full, k) };
            let y = g.conv2d(x, w, Some(bias), ConvSpec::same(k));
            x = g.leaky_relu(y, self.cfg.leaky_slope);
        }
        x
    }

    pub fn stroke_unit(&self, g: &mut Graph, b: &mut Binder, f: Var, mix: &BranchMix) -> Var {
        mix.combine(g, |g, i| self.stroke_branch(g, b, f, i))
    }

    pub fn abstraction_unit(&self, g: &mut Graph, b: &mut Binder, f: Var, mix: &BranchMix) -> Var {
        mix.combine(g, |g, i| self.abstraction_branch(g, b, f, i))
    }

    /// Stroke and abstraction outputs added elementwise.
    pub fn texture_controller(&self, g: &mut Graph, b: &mut Binder, f: Var, stroke: &BranchMix, abstraction: &BranchMix) -> Var {
        let s = self.stroke_unit(g, b, f, stroke);
        let a = self.abstraction_unit(g, b, f, abstraction);
        g.add(s, a)
    }

    /// Texture decoder: feature map to a one-channel `L` map in `[-1, 1]` at 4x resolution.
    pub fn decode_texture(&self, g: &mut Graph, b: &mut Binder, f: Var, stroke: &BranchMix, abstraction: &BranchMix) -> Var {
        let x = self.texture_controller(g, b, f, stroke, abstraction);
        let x = self.resnext(g, b, "texture_decoder.trunk", x);
        let x = g.upsample2x(x);
        let x = self.conv_act(g, b, "texture_decoder.trunk.up1", x, ConvSpec::same(3));
        let x = g.upsample2x(x);
        let x = self.conv_act(g, b, "texture_decoder.trunk.up2", x, ConvSpec::same(3));
        let x = self.conv(g, b, "texture_decoder.trunk.out", x, ConvSpec::same(7));
        g.tanh(x)
    }

    /// Color decoder: feature map plus a normalized Lab cue at full
    /// resolution to a two-channel `ab` map in `[-1, 1]`. The cue is
    /// concatenated (block-averaged to size) before the first convolution of
    /// each upsampling stage.
    pub fn decode_color(&self, g: &mut Graph, b: &mut Binder, f: Var, cue: &Tensor) -> Result<Var> {
        let [n, _, fh, fw] = g.value(f).shape();
        let [cn, cc, ch, cw] = cue.shape();
        if cn != n || cc != 3 || ch != 4 * fh || cw != 4 * fw {
            return Err(shape_err!(
                "cue {:?} does not match features {:?} (needs [{}, 3, {}, {}])",
                cue.shape(),
                g.value(f).shape(),
                n,
                4 * fh,
                4 * fw
            ));
        }
        let x = self.resnext(g, b, "color_decoder", f);
        let x = g.upsample2x(x);
        let half = g.constant(area_downsample(cue, 2));
        let x = g.concat(&[x, half]);
        let x = self.conv_act(g, b, "color_decoder.col2", x, ConvSpec::same(3));
        let x = g.upsample2x(x);
        let full = g.constant(cue.clone());
        let x = g.concat(&[x, full]);
        let x = self.conv_act(g, b, "color_decoder.col3", x, ConvSpec::same(3));
        let x = self.conv(g, b, "color_decoder.out", x, ConvSpec::same(7));
        Ok(g.tanh(x))
    }

    fn disc_trunk(&self, g: &mut Graph, b: &mut Binder, prefix: &str, x: Var) -> Var {
        let down = ConvSpec { stride: 2, pad: 1, groups: 1 };
        let mut x = x;
        for l in 0..3 {
            x = self.conv_act(g, b, &format!("{}.trunk.conv{}", prefix, l), x, down);
        }
        x
    }

    /// Multi-texture discriminator: shared trunk, head selected by the
    /// 1-based `level`. Returns an `H/8 x W/8` logit map.
    pub fn disc_texture(&self, g: &mut Graph, b: &mut Binder, x: Var, level: usize) -> Result<Var> {
        if level == 0 || level > self.cfg.n_levels {
            return Err(Error::LevelOutOfRange { level: level as f64, n: self.cfg.n_levels });
        }
        let t = self.disc_trunk(g, b, "disc_texture", x);
        Ok(self.conv(g, b, &format!("disc_texture.head{}", level - 1), t, ConvSpec::same(1)))
    }

    /// Single-head patch discriminator on `ab` maps.
    pub fn disc_color(&self, g: &mut Graph, b: &mut Binder, x: Var) -> Var {
        let t = self.disc_trunk(g, b, "disc_color", x);
        self.conv(g, b, "disc_color.head", t, ConvSpec::same(1))
    }

    /// Full generator: returns the `(L, ab)` maps.
    pub fn generate(
        &self,
        g: &mut Graph,
        b: &mut Binder,
        photo_lab: Var,
        cue: &Tensor,
        stroke: &BranchMix,
        abstraction: &BranchMix,
    ) -> Result<(Var, Var)> {
        let f = self.encode(g, b, photo_lab)?;
        let l = self.decode_texture(g, b, f, stroke, abstraction);
        let ab = self.decode_color(g, b, f, cue)?;
        Ok((l, ab))
    }
}
