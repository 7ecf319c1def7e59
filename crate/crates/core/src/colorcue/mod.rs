//! Color guidance maps: superpixel color maps, HSV augmentation with
//! luminance caching, k-means palettes and mean-shift color transfer.

mod hsv;
mod palette;
mod superpixel;
mod transfer;

pub use hsv::{hsv_augment, hsv_augment_image, hsv_augment_masked, sample_hsv_params, sample_hsv_params_with, HsvAugParams};
pub use palette::{extract_palette, extract_palette_masked, Palette, DEFAULT_PALETTE_SIZE};
pub use superpixel::{default_segment_count, slic, superpixel_colormap, Segmentation, SlicParams};
pub use transfer::{palette_transfer, region_mean_color};
