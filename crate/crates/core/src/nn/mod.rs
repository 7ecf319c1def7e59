//! Learnable components: shared encoder, texture decoder with the texture
//! controller, color decoder with cue injection, discriminators, and the
//! parameter tree with per-subtree freezing.

mod config;
mod extractor;
mod levels;
mod model;
mod optim;
mod params;

pub use config::NetConfig;
pub use extractor::{Extractor, ExtractorLayer, CAFFE_BGR_MEAN};
pub use levels::{branch_weights, spatial_branch_weights, BranchMix, TextureLevels};
pub use model::{init_params, param_shapes, unshared_param_count, Binder, Bindings, Network, SUBTREES};
pub use optim::{Adam, AdamConfig, Moments};
pub use params::{Param, ParamTree};
