//! Interactive cartoonization: continuous and region-wise texture levels,
//! color-cue edits and reference-image palettes.

use alloc::vec::Vec;

use crate::autograd::Graph;
use crate::colorcue::{default_segment_count, extract_palette_masked, hsv_augment_masked, palette_transfer, superpixel_colormap, HsvAugParams, Palette};
use crate::colorspace::{denormalize_ab, denormalize_l, lab_to_rgb, rgb_to_lab, NetChannels, NetTensor};
use crate::error::{invalid, shape_err};
use crate::image::{ColorSpace, Image, RegionMask};
use crate::nn::{spatial_branch_weights, Binder, BranchMix, NetConfig, Network, ParamTree, TextureLevels};
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorMode {
    /// Colors follow the photo's own cue.
    Preserve,
    /// Color decoder fine-tuned towards the cartoon domain.
    Target,
}

impl ColorMode {
    pub fn name(self) -> &'static str {
        match self {
            ColorMode::Preserve => "preserve",
            ColorMode::Target => "target",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "preserve" => Ok(ColorMode::Preserve),
            "target" => Ok(ColorMode::Target),
            _ => Err(invalid!("unknown color mode `{}` (preserve, target)", s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EditKind {
    /// Move the region's mean cue color to this RGB value.
    Rgb([f64; 3]),
    /// HSV perturbation of the region with lightness kept.
    Hsv(HsvAugParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorEdit {
    pub mask: RegionMask,
    pub kind: EditKind,
}

/// Texture levels applied inside a soft mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub mask: RegionMask,
    pub levels: TextureLevels,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlRequest {
    pub photo: Image,
    pub levels: TextureLevels,
    pub regions: Vec<Region>,
    pub color_edits: Vec<ColorEdit>,
    pub mode: ColorMode,
}

impl ControlRequest {
    pub fn new(photo: Image, levels: TextureLevels) -> Self {
        Self { photo, levels, regions: Vec::new(), color_edits: Vec::new(), mode: ColorMode::Preserve }
    }
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: NetConfig,
    pub params: ParamTree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InferenceOptions {
    /// Accept levels outside `[1, N]` by linear extrapolation.
    pub allow_extrapolation: bool,
}

/// Result of a cartoonization.
#[derive(Debug, Clone, PartialEq)]
pub struct Cartoon {
    pub rgb: Image,
    /// Raw texture decoder output `[1, 1, H, W]`.
    pub l: Tensor,
    /// Raw color decoder output `[1, 2, H, W]`.
    pub ab: Tensor,
}

/// Superpixel color cue of a photo with the default segment count.
pub fn build_cue(photo: &Image) -> Result<Image> {
    superpixel_colormap(photo, default_segment_count(photo.width(), photo.height()))
}

/// Applies edits to a cue in list order.
pub fn apply_color_edits(cue: &Image, edits: &[ColorEdit]) -> Result<Image> {
    let mut out = cue.clone();
    for (i, e) in edits.iter().enumerate() {
        e.mask.check_matches(&out)?;
        if e.mask.is_empty() {
            return Err(invalid!("color edit {} has an empty mask", i));
        }
        out = match &e.kind {
            EditKind::Rgb(target) => palette_transfer(&out, &e.mask, *target)?,
            EditKind::Hsv(p) => hsv_augment_masked(&out, &e.mask, p)?,
        };
    }
    Ok(out)
}

/// Block average by `factor`; blocks of bitwise-equal values keep that value exactly.
fn block_average(plane: &[f64], w: usize, h: usize, factor: usize) -> Vec<f64> {
    let (ow, oh) = (w / factor, h / factor);
    let mut out = Vec::with_capacity(ow * oh);
    for by in 0..oh {
        for bx in 0..ow {
            let first = plane[by * factor * w + bx * factor];
            let mut acc = 0.0;
            let mut uniform = true;
            for y in by * factor..(by + 1) * factor {
                for &v in &plane[y * w + bx * factor..y * w + (bx + 1) * factor] {
                    acc += v;
                    uniform &= v.to_bits() == first.to_bits();
                }
            }
            out.push(if uniform { first } else { acc / (factor * factor) as f64 });
        }
    }
    out
}

/// Per-feature-pixel level maps `[1, 1, H/factor, W/factor]` for stroke and
/// abstraction. Regions are alpha-composited over the default in list order
/// at image resolution, then area-averaged.
pub fn spatial_alpha_map(regions: &[Region], default: TextureLevels, width: usize, height: usize, factor: usize) -> Result<(Tensor, Tensor)> {
    if factor == 0 || width % factor != 0 || height % factor != 0 {
        return Err(Error::Indivisible { height, width, factor });
    }
    let mut s = alloc::vec![default.alpha_s; width * height];
    let mut a = alloc::vec![default.alpha_a; width * height];
    for r in regions {
        if r.mask.width() != width || r.mask.height() != height {
            return Err(shape_err!("region mask {}x{} does not match {}x{}", r.mask.width(), r.mask.height(), width, height));
        }
        for (i, &m) in r.mask.data().iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            if m == 1.0 {
                s[i] = r.levels.alpha_s;
                a[i] = r.levels.alpha_a;
            } else {
                s[i] = (1.0 - m) * s[i] + m * r.levels.alpha_s;
                a[i] = (1.0 - m) * a[i] + m * r.levels.alpha_a;
            }
        }
    }
    let shape = [1, 1, height / factor, width / factor];
    Ok((
        Tensor::from_vec(shape, block_average(&s, width, height, factor)),
        Tensor::from_vec(shape, block_average(&a, width, height, factor)),
    ))
}

fn mix_for(map: &Tensor, n: usize, extrapolate: bool) -> Result<BranchMix> {
    let first = map.data()[0];
    if map.data().iter().all(|v| v.to_bits() == first.to_bits()) {
        BranchMix::uniform(first, n, extrapolate)
    } else {
        Ok(BranchMix::Spatial(spatial_branch_weights(map, n, extrapolate)?))
    }
}

fn pad_to(img: &Image, w: usize, h: usize) -> Image {
    if img.width() == w && img.height() == h {
        return img.clone();
    }
    let c = img.channels();
    let mut data = Vec::with_capacity(w * h * c);
    for y in 0..h {
        for x in 0..w {
            data.extend_from_slice(img.pixel(x.min(img.width() - 1), y.min(img.height() - 1)));
        }
    }
    Image::new(w, h, img.space(), data).expect("padding keeps the layout")
}

fn pad_mask(m: &RegionMask, w: usize, h: usize) -> RegionMask {
    RegionMask::from_fn(w, h, |x, y| m.get(x.min(m.width() - 1), y.min(m.height() - 1)))
}

fn crop_tensor(t: &Tensor, w: usize, h: usize) -> Tensor {
    let [n, c, _, _] = t.shape();
    Tensor::from_fn([n, c, h, w], |[i, ch, y, x]| t.at([i, ch, y, x]))
}

/// Runs the network on a photo and an (edited) cue with explicit branch mixes.
/// Both images must already have sides divisible by 4.
pub fn run_network(model: &Model, photo: &Image, cue: &Image, stroke: &BranchMix, abstraction: &BranchMix) -> Result<(Tensor, Tensor)> {
    if !photo.same_size(cue) {
        return Err(shape_err!("cue does not match the photo size"));
    }
    let photo_lab = NetTensor::from_image(&rgb_to_lab(photo)?)?.to_tensor();
    let cue_lab = NetTensor::from_image(&rgb_to_lab(cue)?)?.to_tensor();
    let net = Network::new(&model.config);
    let mut g = Graph::new();
    let mut b = Binder::inference(&model.params);
    let x = g.constant(photo_lab);
    let f = net.encode(&mut g, &mut b, x)?;
    let l = net.decode_texture(&mut g, &mut b, f, stroke, abstraction);
    let ab = net.decode_color(&mut g, &mut b, f, &cue_lab)?;
    Ok((g.value(l).clone(), g.value(ab).clone()))
}

/// Merges decoder outputs into an RGB image.
pub fn compose_rgb(l: &Tensor, ab: &Tensor) -> Result<Image> {
    let l = NetTensor::from_tensor(l, 0, NetChannels::L)?;
    let ab = NetTensor::from_tensor(ab, 0, NetChannels::Ab)?;
    if (l.width, l.height) != (ab.width, ab.height) {
        return Err(shape_err!("L and ab sizes differ"));
    }
    let plane = l.width * l.height;
    let mut data = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        data.push(denormalize_l(l.data[i]).clamp(0.0, 100.0));
        data.push(denormalize_ab(ab.data[i]).clamp(-128.0, 127.0));
        data.push(denormalize_ab(ab.data[plane + i]).clamp(-128.0, 127.0));
    }
    lab_to_rgb(&Image::new(l.width, l.height, ColorSpace::Lab, data)?)
}

/// Full pipeline: cue, edits, one encoder pass, both decoders, RGB.
pub fn cartoonize(model: &Model, req: &ControlRequest, opts: InferenceOptions) -> Result<Cartoon> {
    let photo = &req.photo;
    photo.expect_space(ColorSpace::Rgb)?;
    let n = model.config.n_levels;
    req.levels.validate(n, opts.allow_extrapolation)?;
    for r in &req.regions {
        r.levels.validate(n, opts.allow_extrapolation)?;
        r.mask.check_matches(photo)?;
    }
    // An all-zero mask selects nothing, so such edits are dropped here
    // rather than rejected.
    let edits: Vec<ColorEdit> = req.color_edits.iter().filter(|e| !e.mask.is_empty()).cloned().collect();
    let cue = apply_color_edits(&build_cue(photo)?, &edits)?;

    let (w, h) = (photo.width(), photo.height());
    let (pw, ph) = (w.div_ceil(4) * 4, h.div_ceil(4) * 4);
    let regions: Vec<Region> = req.regions.iter().map(|r| Region { mask: pad_mask(&r.mask, pw, ph), levels: r.levels }).collect();
    let (smap, amap) = spatial_alpha_map(&regions, req.levels, pw, ph, 4)?;
    let stroke = mix_for(&smap, n, opts.allow_extrapolation)?;
    let abstraction = mix_for(&amap, n, opts.allow_extrapolation)?;

    let (l, ab) = run_network(model, &pad_to(photo, pw, ph), &pad_to(&cue, pw, ph), &stroke, &abstraction)?;
    let (l, ab) = if (pw, ph) == (w, h) { (l, ab) } else { (crop_tensor(&l, w, h), crop_tensor(&ab, w, h)) };
    Ok(Cartoon { rgb: compose_rgb(&l, &ab)?, l, ab })
}

/// Extracts a palette from `reference` (inside `ref_mask` when given), moves
/// the `target_mask` region of the photo's cue to palette entry `pick`, and
/// cartoonizes.
pub fn reference_color_pipeline(
    model: &Model,
    req: &ControlRequest,
    reference: &Image,
    ref_mask: Option<&RegionMask>,
    target_mask: &RegionMask,
    pick: usize,
    opts: InferenceOptions,
) -> Result<(Palette, Cartoon)> {
    let palette = extract_palette_masked(reference, ref_mask, crate::colorcue::DEFAULT_PALETTE_SIZE, 0)?;
    let color = *palette.colors.get(pick).ok_or_else(|| invalid!("palette entry {} out of {}", pick, palette.len()))?;
    let mut req = req.clone();
    req.color_edits.push(ColorEdit { mask: target_mask.clone(), kind: EditKind::Rgb(color) });
    let out = cartoonize(model, &req, opts)?;
    Ok((palette, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;

    fn photo(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, ColorSpace::Rgb, |x, y| [x as f64 / w as f64, y as f64 / h as f64, 0.4])
    }

    fn model() -> Model {
        let config = NetConfig::desk();
        Model { params: init_params(&config, 7).unwrap(), config }
    }

    #[test]
    fn full_region_equals_global_levels() {
        let m = model();
        let p = photo(32, 24);
        let base = ControlRequest::new(p.clone(), TextureLevels::new(2.3, 3.7));
        let mut regional = ControlRequest::new(p.clone(), TextureLevels::new(1.0, 1.0));
        regional.regions.push(Region { mask: RegionMask::full(32, 24), levels: TextureLevels::new(2.3, 3.7) });
        let a = cartoonize(&m, &base, InferenceOptions::default()).unwrap();
        let b = cartoonize(&m, &regional, InferenceOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_mask_edit_is_a_no_op() {
        let m = model();
        let plain = ControlRequest::new(photo(16, 16), TextureLevels::uniform(2.0));
        let mut edited = plain.clone();
        edited.color_edits.push(ColorEdit { mask: RegionMask::empty(16, 16), kind: EditKind::Rgb([1.0, 0.0, 0.0]) });
        let opts = InferenceOptions::default();
        assert_eq!(cartoonize(&m, &plain, opts).unwrap(), cartoonize(&m, &edited, opts).unwrap());
    }

    #[test]
    fn odd_sizes_are_padded_and_cropped() {
        let m = model();
        let out = cartoonize(&m, &ControlRequest::new(photo(30, 21), TextureLevels::uniform(2.0)), InferenceOptions::default()).unwrap();
        assert_eq!((out.rgb.width(), out.rgb.height()), (30, 21));
        assert_eq!(out.ab.shape(), [1, 2, 21, 30]);
    }

    #[test]
    fn out_of_range_levels() {
        let m = model();
        let req = ControlRequest::new(photo(16, 16), TextureLevels::new(6.0, 1.0));
        assert!(matches!(cartoonize(&m, &req, InferenceOptions::default()), Err(Error::LevelOutOfRange { .. })));
        assert!(cartoonize(&m, &req, InferenceOptions { allow_extrapolation: true }).is_ok());
    }

    #[test]
    fn half_mask_transition_is_narrow() {
        let mask = RegionMask::from_fn(32, 16, |x, _| if x >= 16 { 1.0 } else { 0.0 });
        let regions = [Region { mask, levels: TextureLevels::uniform(4.0) }];
        let (s, _) = spatial_alpha_map(&regions, TextureLevels::uniform(1.0), 32, 16, 4).unwrap();
        for y in 0..4 {
            for x in 0..8 {
                assert_eq!(s.at([0, 0, y, x]), if x < 4 { 1.0 } else { 4.0 });
            }
        }
        let soft = RegionMask::from_fn(32, 16, |x, _| if x >= 18 { 1.0 } else { 0.0 });
        let regions = [Region { mask: soft, levels: TextureLevels::uniform(4.0) }];
        let (s, _) = spatial_alpha_map(&regions, TextureLevels::uniform(1.0), 32, 16, 4).unwrap();
        assert_eq!(s.at([0, 0, 0, 4]), 2.5);
    }

    #[test]
    fn zero_shift_edits_are_no_ops() {
        let cue = build_cue(&photo(20, 16)).unwrap();
        let mask = RegionMask::from_fn(20, 16, |x, y| if x > y { 1.0 } else { 0.0 });
        let to_mean = ColorEdit { mask: mask.clone(), kind: EditKind::Rgb(crate::colorcue::region_mean_color(&cue, &mask).unwrap()) };
        assert_eq!(apply_color_edits(&cue, &[to_mean]).unwrap(), cue);
        let identity = ColorEdit { mask, kind: EditKind::Hsv(HsvAugParams::IDENTITY) };
        assert_eq!(apply_color_edits(&cue, &[identity]).unwrap(), cue);
    }

    #[test]
    fn edits_fold_in_order_and_reject_empty_masks() {
        let cue = photo(8, 8);
        assert_eq!(apply_color_edits(&cue, &[]).unwrap(), cue);
        let left = RegionMask::from_fn(8, 8, |x, _| if x < 5 { 1.0 } else { 0.0 });
        let right = RegionMask::from_fn(8, 8, |x, _| if x >= 3 { 1.0 } else { 0.0 });
        let e1 = ColorEdit { mask: left.clone(), kind: EditKind::Rgb([0.9, 0.1, 0.1]) };
        let e2 = ColorEdit { mask: right.clone(), kind: EditKind::Rgb([0.1, 0.1, 0.9]) };
        let manual = palette_transfer(&palette_transfer(&cue, &left, [0.9, 0.1, 0.1]).unwrap(), &right, [0.1, 0.1, 0.9]).unwrap();
        assert_eq!(apply_color_edits(&cue, &[e1, e2]).unwrap(), manual);
        let empty = ColorEdit { mask: RegionMask::empty(8, 8), kind: EditKind::Rgb([0.0; 3]) };
        assert!(apply_color_edits(&cue, &[empty]).is_err());
    }
}
