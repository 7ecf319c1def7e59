//! The staged optimization loop.
//!
//! * `Joint`: everything except the abstraction unit; the texture
//!   discriminator head is routed by the stroke level of the batch.
//! * `Abstraction`: only the abstraction unit, head routed by the abstraction level.
//! * `ColorTarget`: only the color decoder and its discriminator, driven by
//!   the un-augmented cue.
//!
//! Each iteration runs one discriminator update followed by one generator
//! update against the freshly updated discriminator.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::autograd::Graph;
use crate::data::{Batch, BatchSampler};
use crate::error::invalid;
use crate::losses::{self, ColorWeights, LossWeights, TextureTerms};
use crate::nn::{Adam, AdamConfig, Binder, BranchMix, Extractor, NetConfig, Network, ParamTree};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Joint,
    Abstraction,
    ColorTarget,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Joint, Stage::Abstraction, Stage::ColorTarget];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Joint => "joint",
            Stage::Abstraction => "abstraction",
            Stage::ColorTarget => "color-target",
        }
    }

    /// Subtrees updated by the generator step.
    pub fn generator_subtrees(self) -> &'static [&'static str] {
        match self {
            Stage::Joint => &["encoder", "texture_decoder.stroke_unit", "texture_decoder.trunk", "color_decoder"],
            Stage::Abstraction => &["texture_decoder.abstraction_unit"],
            Stage::ColorTarget => &["color_decoder"],
        }
    }

    /// Subtree updated by the discriminator step, if any.
    pub fn discriminator_subtree(self) -> Option<&'static str> {
        match self {
            Stage::Joint => Some("disc_texture"),
            Stage::Abstraction => None,
            Stage::ColorTarget => Some("disc_color"),
        }
    }

    /// Every subtree that may change during this stage.
    pub fn trainable(self) -> Vec<&'static str> {
        let mut v: Vec<&'static str> = self.generator_subtrees().to_vec();
        v.extend(self.discriminator_subtree());
        v
    }

    /// Default step count at desk scale.
    pub fn desk_steps(self) -> u64 {
        match self {
            Stage::Joint => 2000,
            Stage::Abstraction | Stage::ColorTarget => 500,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Stage::Joint),
            "abstraction" => Ok(Stage::Abstraction),
            "color-target" | "color_target" => Ok(Stage::ColorTarget),
            _ => Err(invalid!("unknown stage `{}` (joint, abstraction, color-target)", s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub steps: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub color_weights: ColorWeights,
    pub seed: u64,
    /// Checkpoint every this many steps; 0 disables intermediate checkpoints.
    pub checkpoint_every: u64,
}

impl TrainConfig {
    pub fn desk(stage: Stage) -> Self {
        Self {
            stage,
            steps: stage.desk_steps(),
            batch_size: 8,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            color_weights: ColorWeights::default(),
            seed: 0,
            checkpoint_every: 500,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(invalid!("steps and batch size must be positive"));
        }
        Adam::new(self.adam)?;
        self.weights.validate()?;
        self.color_weights.validate()
    }
}

/// Loss values of one iteration. Components a stage does not compute are `None`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepReport {
    pub step: u64,
    pub level: usize,
    pub d_loss: Option<f64>,
    pub g_adv: Option<f64>,
    pub content: Option<f64>,
    pub gram: Option<f64>,
    pub tv: Option<f64>,
    pub color_recon: Option<f64>,
    pub color_adv: Option<f64>,
    /// Total generator objective that was minimized.
    pub g_total: f64,
}

impl StepReport {
    /// Named components in a fixed order, skipping absent ones.
    pub fn components(&self) -> Vec<(&'static str, f64)> {
        [
            ("d_loss", self.d_loss),
            ("g_adv", self.g_adv),
            ("content", self.content),
            ("gram", self.gram),
            ("tv", self.tv),
            ("color_recon", self.color_recon),
            ("color_adv", self.color_adv),
            ("g_total", Some(self.g_total)),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

/// Owns the parameters during training (single writer).
#[derive(Debug, Clone)]
pub struct Trainer {
    pub net: NetConfig,
    pub params: ParamTree,
    pub adam: Adam,
    pub extractor: Extractor,
    pub config: TrainConfig,
    /// Number of completed iterations; also the index of the next batch.
    pub step: u64,
}

fn check(name: &str, step: u64, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{} = {} at step {}", name, v, step)))
    }
}

impl Trainer {
    pub fn new(net: NetConfig, mut params: ParamTree, extractor: Extractor, config: TrainConfig) -> Result<Self> {
        net.validate()?;
        config.validate()?;
        params.unfreeze_all();
        let frozen: Vec<&str> = crate::nn::SUBTREES
            .iter()
            .copied()
            .filter(|s| !config.stage.trainable().iter().any(|t| s == t || s.starts_with(&format!("{}.", t)) || t.starts_with(&format!("{}.", s))))
            .collect();
        params.freeze(&frozen)?;
        let adam = Adam::new(config.adam)?;
        Ok(Self { net, params, adam, extractor, config, step: 0 })
    }

    /// Level override used for batches of this stage.
    pub fn batch_level(&self) -> Option<usize> {
        match self.config.stage {
            Stage::ColorTarget => Some(1),
            _ => None,
        }
    }

    pub fn next_batch(&self, sampler: &BatchSampler) -> Result<Batch> {
        sampler.batch(self.step, self.batch_level())
    }

    /// Runs one iteration on `batch`. Parameters are left untouched when a
    /// loss turns non-finite.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepReport> {
        let report = match self.config.stage {
            Stage::Joint => self.step_texture(batch, true)?,
            Stage::Abstraction => self.step_texture(batch, false)?,
            Stage::ColorTarget => self.step_color_target(batch)?,
        };
        self.step += 1;
        Ok(report)
    }

    fn apply(&mut self, grads: Vec<(String, crate::Tensor)>) {
        self.adam.step(&mut self.params, grads.iter().map(|(k, v)| (k, v)));
    }

    fn discriminator_step(&mut self, real: &crate::Tensor, fake: &crate::Tensor, level: Option<usize>) -> Result<f64> {
        let net = Network::new(&self.net);
        let sub = self.config.stage.discriminator_subtree().expect("stage has a discriminator");
        let mut g = Graph::new();
        let mut b = Binder::training(&self.params, &[sub]);
        let r = g.constant(real.clone());
        let f = g.constant(fake.clone());
        let (rl, fl) = match level {
            Some(k) => (net.disc_texture(&mut g, &mut b, r, k)?, net.disc_texture(&mut g, &mut b, f, k)?),
            None => (net.disc_color(&mut g, &mut b, r), net.disc_color(&mut g, &mut b, f)),
        };
        let loss = losses::adv_d(&mut g, rl, fl);
        let value = check("d_loss", self.step, g.scalar(loss))?;
        g.backward(loss);
        let grads = b.grads(&g);
        self.apply(grads);
        Ok(value)
    }

    fn step_texture(&mut self, batch: &Batch, joint: bool) -> Result<StepReport> {
        let n = self.net.n_levels;
        let level = batch.level;
        let (stroke, abstraction) = if joint {
            (BranchMix::uniform(level as f64, n, false)?, BranchMix::uniform(1.0, n, false)?)
        } else {
            (BranchMix::uniform(1.0, n, false)?, BranchMix::uniform(level as f64, n, false)?)
        };
        let stage = self.config.stage;
        let mut g = Graph::new();
        let photo = g.constant(batch.photo_lab.clone());
        let (out_l, out_ab, bindings) = {
            let net = Network::new(&self.net);
            let mut b = Binder::training(&self.params, stage.generator_subtrees());
            let f = net.encode(&mut g, &mut b, photo)?;
            let l = net.decode_texture(&mut g, &mut b, f, &stroke, &abstraction);
            let ab = if joint { Some(net.decode_color(&mut g, &mut b, f, &batch.aug_cue)?) } else { None };
            (l, ab, b.detach())
        };

        let d_loss = if joint {
            let fake = g.value(out_l).clone();
            Some(self.discriminator_step(&batch.cartoon_l, &fake, Some(level))?)
        } else {
            None
        };

        let net = Network::new(&self.net);
        let mut b = Binder::attach(&self.params, bindings);
        let logits = net.disc_texture(&mut g, &mut b, out_l, level)?;
        let adv = losses::adv_g(&mut g, logits);
        let src_l = g.constant(batch.photo_lab.channels(0, 1));
        let content = losses::content(&mut g, &self.extractor, src_l, out_l)?;
        let tgt_l = g.constant(batch.cartoon_l.clone());
        let gram = losses::gram_loss(&mut g, &self.extractor, tgt_l, out_l)?;
        let tv = losses::tv(&mut g, out_l)?;
        let terms = TextureTerms { adv, content, gram, tv };
        let mut total = losses::total_texture(&mut g, &self.config.weights, terms);
        let mut color_recon = None;
        if let Some(ab) = out_ab {
            let target = g.constant(batch.aug_photo_ab.clone());
            let recon = losses::color_recon(&mut g, target, ab)?;
            color_recon = Some(check("color_recon", self.step, g.scalar(recon))?);
            total = g.add(total, recon);
        }
        let step = self.step;
        let report = StepReport {
            step,
            level,
            d_loss,
            g_adv: Some(check("g_adv", step, g.scalar(adv))?),
            content: Some(check("content", step, g.scalar(content))?),
            gram: Some(check("gram", step, g.scalar(gram))?),
            tv: Some(check("tv", step, g.scalar(tv))?),
            color_recon,
            color_adv: None,
            g_total: check("g_total", step, g.scalar(total))?,
        };
        g.backward(total);
        let grads = b.grads(&g);
        drop(b);
        self.apply(grads);
        Ok(report)
    }

    fn step_color_target(&mut self, batch: &Batch) -> Result<StepReport> {
        let stage = self.config.stage;
        let mut g = Graph::new();
        let photo = g.constant(batch.photo_lab.clone());
        let (out_ab, bindings) = {
            let net = Network::new(&self.net);
            let mut b = Binder::training(&self.params, stage.generator_subtrees());
            let f = net.encode(&mut g, &mut b, photo)?;
            let ab = net.decode_color(&mut g, &mut b, f, &batch.cue)?;
            (ab, b.detach())
        };
        let fake = g.value(out_ab).clone();
        let d_loss = self.discriminator_step(&batch.cartoon_ab, &fake, None)?;

        let net = Network::new(&self.net);
        let mut b = Binder::attach(&self.params, bindings);
        let logits = net.disc_color(&mut g, &mut b, out_ab);
        let adv = losses::adv_g(&mut g, logits);
        let target = g.constant(batch.photo_ab.clone());
        let recon = losses::color_recon(&mut g, target, out_ab)?;
        let total = losses::color_finetune(&mut g, &self.config.color_weights, recon, adv);
        let step = self.step;
        let report = StepReport {
            step,
            level: batch.level,
            d_loss: Some(d_loss),
            color_recon: Some(check("color_recon", step, g.scalar(recon))?),
            color_adv: Some(check("color_adv", step, g.scalar(adv))?),
            g_total: check("g_total", step, g.scalar(total))?,
            ..Default::default()
        };
        g.backward(total);
        let grads = b.grads(&g);
        drop(b);
        self.apply(grads);
        Ok(report)
    }

    /// Runs `steps` iterations, calling `on_step` after each.
    pub fn run(&mut self, sampler: &BatchSampler, steps: u64, mut on_step: impl FnMut(&StepReport, &Trainer) -> Result<()>) -> Result<()> {
        for _ in 0..steps {
            let batch = self.next_batch(sampler)?;
            let report = self.train_step(&batch)?;
            on_step(&report, self)?;
        }
        Ok(())
    }
}
