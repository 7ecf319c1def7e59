//! Controllable photo cartoonization.
//!
//! A shared encoder feeds two decoders: a texture decoder that produces the
//! Lab `L` channel and a color decoder that produces the `ab` channels. Stroke
//! thickness and abstraction are steered at inference by continuous texture
//! levels; color is steered by an editable color cue.
//!
//! The crate is `no_std` (with `alloc`). Everything touching the filesystem,
//! the network or a clock lives in the `cartooner` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::too_many_arguments, clippy::needless_range_loop)]

extern crate alloc;

pub mod autograd;
pub mod colorcue;
pub mod colorspace;
pub mod data;
mod error;
pub mod image;
pub mod inference;
pub mod losses;
mod math;
pub mod metrics;
pub mod nn;
pub mod resample;
pub mod rng;
pub mod tensor;
pub mod train;

pub use crate::error::{Error, Result};
pub use crate::image::{ColorSpace, Image, RegionMask};
pub use crate::tensor::Tensor;
