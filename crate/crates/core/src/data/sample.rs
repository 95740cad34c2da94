use ndarray::s;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::resize::bicubic_downsample;
use crate::boundary_mask::{generate_boundary_mask, BoundaryMask};
use crate::pixels::{quantize_u8, ImageTensor, SegLabelMap};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropConfig {
    pub hr_crop_size: usize,
    pub seed: u64,
}

/// One training example; `hr` is exactly `scale ×` the LR arrays.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub hr: ImageTensor,
    pub lr: ImageTensor,
    pub lr_label: SegLabelMap,
    pub mask: BoundaryMask,
    pub scale: usize,
}

/// Mixes a base seed with stream indices (SplitMix64 finalizer per word).
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    let mut z = base;
    for &word in stream {
        z = z.wrapping_add(word).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Crops image and label at one shared, scale-aligned offset.
pub fn paired_random_crop(
    hr: &ImageTensor,
    hr_label: &SegLabelMap,
    cfg: &CropConfig,
    scale: usize,
) -> Result<(ImageTensor, SegLabelMap)> {
    let (h, w, _) = hr.dim();
    if hr_label.dim() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "image is {h}x{w} but label is {:?}",
            hr_label.dim()
        )));
    }
    let crop = cfg.hr_crop_size;
    if scale == 0 || crop == 0 || !crop.is_multiple_of(scale) {
        return Err(Error::InvalidSpec(format!(
            "crop size {crop} must be a positive multiple of scale {scale}"
        )));
    }
    if h < crop || w < crop {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            crop,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let oy = rng.gen_range(0..=(h - crop) / scale) * scale;
    let ox = rng.gen_range(0..=(w - crop) / scale) * scale;
    Ok((
        hr.slice(s![oy..oy + crop, ox..ox + crop, ..]).to_owned(),
        hr_label.slice(s![oy..oy + crop, ox..ox + crop]).to_owned(),
    ))
}

/// Nearest-neighbour label reduction: keeps the top-left id of each block.
pub fn downsample_label(hr_label: &SegLabelMap, factor: usize) -> Result<SegLabelMap> {
    let (h, w) = hr_label.dim();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::IndivisibleDimensions {
            height: h,
            width: w,
            factor,
        });
    }
    Ok(hr_label.slice(s![..;factor, ..;factor]).to_owned())
}

/// HR image and label → LR image (bicubic, snapped to 8-bit levels), LR
/// label and boundary mask.
pub fn prepare_sample(
    hr: ImageTensor,
    hr_label: &SegLabelMap,
    scale: usize,
    d1: i64,
) -> Result<TrainSample> {
    let lr = quantize_u8(&bicubic_downsample(&hr, scale)?);
    let lr_label = downsample_label(hr_label, scale)?;
    let mask = generate_boundary_mask(&lr_label, d1)?;
    Ok(TrainSample {
        hr,
        lr,
        lr_label,
        mask,
        scale,
    })
}

/// Crop-then-downsample sample preparation.
pub fn make_train_sample(
    hr: &ImageTensor,
    hr_label: &SegLabelMap,
    cfg: &CropConfig,
    scale: usize,
    d1: i64,
) -> Result<TrainSample> {
    let (hr_crop, label_crop) = paired_random_crop(hr, hr_label, cfg, scale)?;
    prepare_sample(hr_crop, &label_crop, scale, d1)
}
