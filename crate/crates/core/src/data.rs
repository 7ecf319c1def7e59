//! Training-pair assembly: photo crops, color cues, HSV augmentation and
//! level-dependent cartoon targets.

use alloc::vec::Vec;

use crate::colorcue::{default_segment_count, hsv_augment, sample_hsv_params_with, superpixel_colormap, HsvAugParams};
use crate::colorspace::{rgb_to_lab, NetChannels, NetTensor};
use crate::error::invalid;
use crate::image::{ColorSpace, Image};
use crate::nn::NetConfig;
use crate::resample::{resize_bicubic, resize_short_side};
use crate::rng::{below, derive_seed, rng_from_seed, Rng};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Target resolution of a 1-based texture level.
pub fn resolution_for_level(level: usize, cfg: &NetConfig) -> Result<usize> {
    if level == 0 || level > cfg.level_resolutions.len() {
        return Err(Error::LevelOutOfRange { level: level as f64, n: cfg.level_resolutions.len() });
    }
    Ok(cfg.level_resolutions[level - 1])
}

/// In-memory RGB image sets.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub photos: Vec<Image>,
    pub cartoons: Vec<Image>,
}

impl Dataset {
    pub fn new(photos: Vec<Image>, cartoons: Vec<Image>) -> Result<Self> {
        if photos.is_empty() {
            return Err(Error::Empty("photo set".into()));
        }
        if cartoons.is_empty() {
            return Err(Error::Empty("cartoon set".into()));
        }
        for img in photos.iter().chain(&cartoons) {
            img.expect_space(ColorSpace::Rgb)?;
        }
        Ok(Self { photos, cartoons })
    }
}

/// One assembled training sample; all maps are normalized Lab planes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub photo_lab: NetTensor,
    pub photo_ab: NetTensor,
    pub cue: NetTensor,
    pub aug_photo_ab: NetTensor,
    pub aug_cue: NetTensor,
    pub cartoon_l: NetTensor,
    pub cartoon_ab: NetTensor,
    pub hsv: HsvAugParams,
}

/// Stacked samples sharing one texture level.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub level: usize,
    /// `[B, 3, S, S]` photo Lab, the encoder input.
    pub photo_lab: Tensor,
    /// `[B, 2, S, S]` un-augmented photo ab.
    pub photo_ab: Tensor,
    /// `[B, 3, S, S]` cue from the original photo.
    pub cue: Tensor,
    /// `[B, 2, S, S]` ab of the augmented photo.
    pub aug_photo_ab: Tensor,
    /// `[B, 3, S, S]` cue after the same augmentation.
    pub aug_cue: Tensor,
    /// `[B, 1, R, R]` cartoon L at the level's resolution.
    pub cartoon_l: Tensor,
    /// `[B, 2, R, R]` cartoon ab at the level's resolution.
    pub cartoon_ab: Tensor,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.photo_lab.shape()[0]
    }
}

fn channels(lab: &NetTensor, start: usize, len: usize, kind: NetChannels) -> NetTensor {
    let plane = lab.width * lab.height;
    NetTensor { channels: kind, width: lab.width, height: lab.height, data: lab.data[start * plane..(start + len) * plane].to_vec() }
}

fn random_square(img: &Image, side: usize, rng: &mut Rng) -> Result<Image> {
    let x0 = below(rng, img.width() - side + 1);
    let y0 = below(rng, img.height() - side + 1);
    img.crop(x0, y0, side, side)
}

/// Photo: short side resized to `photo_size`, then a random square crop.
pub fn prepare_photo(photo: &Image, photo_size: usize, rng: &mut Rng) -> Result<Image> {
    let scaled = resize_short_side(photo, photo_size);
    random_square(&scaled, photo_size, rng)
}

/// Cartoon: random maximal square crop resized to `resolution`, so the
/// level changes the apparent stroke scale.
pub fn prepare_cartoon(cartoon: &Image, resolution: usize, rng: &mut Rng) -> Result<Image> {
    let side = cartoon.width().min(cartoon.height());
    let crop = random_square(cartoon, side, rng)?;
    Ok(resize_bicubic(&crop, resolution, resolution))
}

/// Builds one sample. The cue is computed on the original photo and then
/// augmented together with it; L is preserved by the augmentation.
pub fn assemble_sample(photo: &Image, cartoon: &Image, cfg: &NetConfig, level: usize, rng: &mut Rng) -> Result<Sample> {
    let res = resolution_for_level(level, cfg)?;
    let photo = prepare_photo(photo, cfg.photo_size, rng)?;
    let cue = superpixel_colormap(&photo, default_segment_count(photo.width(), photo.height()))?;
    let hsv = sample_hsv_params_with(rng);
    let (aug_photo, aug_cue) = hsv_augment(&photo, &cue, &hsv)?;
    let cartoon = prepare_cartoon(cartoon, res, rng)?;

    let photo_lab = NetTensor::from_image(&rgb_to_lab(&photo)?)?;
    let aug_lab = NetTensor::from_image(&rgb_to_lab(&aug_photo)?)?;
    let cartoon_lab = NetTensor::from_image(&rgb_to_lab(&cartoon)?)?;
    Ok(Sample {
        photo_ab: channels(&photo_lab, 1, 2, NetChannels::Ab),
        cue: NetTensor::from_image(&rgb_to_lab(&cue)?)?,
        aug_photo_ab: channels(&aug_lab, 1, 2, NetChannels::Ab),
        aug_cue: NetTensor::from_image(&rgb_to_lab(&aug_cue)?)?,
        cartoon_l: channels(&cartoon_lab, 0, 1, NetChannels::L),
        cartoon_ab: channels(&cartoon_lab, 1, 2, NetChannels::Ab),
        photo_lab,
        hsv,
    })
}

/// Deterministic batch source: batch `i` depends only on the root seed and `i`.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    pub data: Dataset,
    pub cfg: NetConfig,
    pub batch_size: usize,
    pub seed: u64,
}

impl BatchSampler {
    pub fn new(data: Dataset, cfg: NetConfig, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(invalid!("batch size must be positive"));
        }
        cfg.validate()?;
        Ok(Self { data, cfg, batch_size, seed })
    }

    /// Level drawn uniformly from `1..=N` for batch `index`.
    pub fn level_for(&self, index: u64) -> usize {
        let mut rng = rng_from_seed(derive_seed(self.seed, index.wrapping_mul(2)));
        1 + below(&mut rng, self.cfg.n_levels)
    }

    /// Batch `index`; `level` overrides the sampled level.
    pub fn batch(&self, index: u64, level: Option<usize>) -> Result<Batch> {
        let level = level.unwrap_or_else(|| self.level_for(index));
        let root = derive_seed(self.seed, index.wrapping_mul(2) + 1);
        let samples = (0..self.batch_size as u64)
            .map(|i| {
                let mut rng = rng_from_seed(derive_seed(root, i));
                let p = &self.data.photos[below(&mut rng, self.data.photos.len())];
                let c = &self.data.cartoons[below(&mut rng, self.data.cartoons.len())];
                assemble_sample(p, c, &self.cfg, level, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(stack(level, &samples))
    }
}

/// Stacks samples into a batch.
pub fn stack(level: usize, samples: &[Sample]) -> Batch {
    let pick = |f: fn(&Sample) -> &NetTensor| Tensor::stack(&samples.iter().map(|s| f(s).to_tensor()).collect::<Vec<_>>());
    Batch {
        level,
        photo_lab: pick(|s| &s.photo_lab),
        photo_ab: pick(|s| &s.photo_ab),
        cue: pick(|s| &s.cue),
        aug_photo_ab: pick(|s| &s.aug_photo_ab),
        aug_cue: pick(|s| &s.aug_cue),
        cartoon_l: pick(|s| &s.cartoon_l),
        cartoon_ab: pick(|s| &s.cartoon_ab),
    }
}
