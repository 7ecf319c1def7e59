use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::invalid;
use crate::Result;

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub preset: String,
    /// Number of texture levels (branches per control unit).
    pub n_levels: usize,
    /// Abstraction-unit kernel sizes, strictly increasing and odd.
    pub kernel_sizes: Vec<usize>,
    pub base_channels: usize,
    pub feature_channels: usize,
    pub bottleneck_channels: usize,
    pub resnext_blocks: usize,
    pub cardinality: usize,
    pub disc_channels: usize,
    pub photo_size: usize,
    /// Target-cartoon resolution per texture level.
    pub level_resolutions: Vec<usize>,
    pub leaky_slope: f64,
}

impl NetConfig {
    /// Published configuration: 256x256 photos, ResNeXt cardinality 32.
    pub fn paper() -> Self {
        Self {
            preset: "paper".into(),
            n_levels: 5,
            kernel_sizes: vec![3, 7, 11, 15, 19],
            base_channels: 64,
            feature_channels: 256,
            bottleneck_channels: 128,
            resnext_blocks: 4,
            cardinality: 32,
            disc_channels: 64,
            photo_size: 256,
            level_resolutions: vec![256, 320, 416, 544, 800],
            leaky_slope: 0.2,
        }
    }

    /// CPU-sized configuration: 64x64 photos, every resolution divided by 4.
    pub fn desk() -> Self {
        Self {
            preset: "desk".into(),
            n_levels: 5,
            kernel_sizes: vec![3, 7, 11, 15, 19],
            base_channels: 16,
            feature_channels: 32,
            bottleneck_channels: 32,
            resnext_blocks: 2,
            cardinality: 4,
            disc_channels: 16,
            photo_size: 64,
            level_resolutions: vec![64, 80, 104, 136, 200],
            leaky_slope: 0.2,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(invalid!("unknown preset `{}`", other)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_levels == 0 {
            return Err(invalid!("at least one texture level is required"));
        }
        if self.kernel_sizes.len() != self.n_levels || self.level_resolutions.len() != self.n_levels {
            return Err(invalid!("kernel sizes and level resolutions need one entry per level"));
        }
        if self.kernel_sizes.iter().any(|k| k % 2 == 0) || self.kernel_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid!("kernel sizes must be odd and strictly increasing"));
        }
        if self.level_resolutions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid!("level resolutions must be strictly increasing"));
        }
        if self.cardinality == 0 || self.bottleneck_channels % self.cardinality != 0 {
            return Err(invalid!(
                "bottleneck width {} is not divisible by cardinality {}",
                self.bottleneck_channels,
                self.cardinality
            ));
        }
        if self.photo_size % 4 != 0 {
            return Err(invalid!("photo size must be divisible by 4"));
        }
        Ok(())
    }

    pub fn largest_kernel(&self) -> usize {
        *self.kernel_sizes.last().expect("validated config has kernels")
    }
}
