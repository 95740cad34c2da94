use serde::{Deserialize, Serialize};

use super::metrics::{crop_to_multiple, psnr, ssim_rgb};
use crate::boundary_mask::generate_boundary_mask;
use crate::data::{
    bicubic_downsample, bicubic_upsample, downsample_label, remap_classes, ManifestEntry,
    RemapRegistry,
};
use crate::model::Generator;
use crate::pixels::{argmax_classes, quantize_u8, read_label, read_rgb, SegLabelMap, IGNORE_ID};
use crate::{Error, Result};

/// Where the SR image under test comes from.
pub enum SrSource<'a> {
    Model(&'a Generator),
    Bicubic,
    /// The HR image itself (sanity baseline).
    Identity,
}

impl SrSource<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            SrSource::Model(_) => "model",
            SrSource::Bicubic => "bicubic",
            SrSource::Identity => "identity",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub scale: usize,
    pub d1: i64,
    /// Score the segmentation head; labels are read only when set.
    pub with_seg: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seg_pixel_acc_unmasked: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub psnr_db: f64,
    pub ssim: f64,
    /// Pooled over all scored pixels.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seg_pixel_acc_unmasked: Option<f64>,
}

/// PSNR/SSIM are regression sanity checks, not perceptual quality scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub d1: i64,
    pub images: Vec<ImageMetrics>,
    pub aggregate: Aggregate,
}

impl MetricReport {
    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "{:<32} {:>9} {:>7} {:>8}\n",
            "image", "psnr_db", "ssim", "seg_acc"
        );
        let seg = |v: Option<f64>| v.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into());
        for m in &self.images {
            out += &format!(
                "{:<32} {:>9.3} {:>7.4} {:>8}\n",
                m.name,
                m.psnr_db,
                m.ssim,
                seg(m.seg_pixel_acc_unmasked)
            );
        }
        let a = &self.aggregate;
        out += &format!(
            "{:<32} {:>9.3} {:>7.4} {:>8}\n",
            format!("mean ({})", self.method),
            a.psnr_db,
            a.ssim,
            seg(a.seg_pixel_acc_unmasked)
        );
        out
    }
}

/// Correct and counted pixels where the mask is 1 and the label is not ignored.
pub fn masked_accuracy_counts(
    pred: &SegLabelMap,
    label: &SegLabelMap,
    mask: &ndarray::Array2<u8>,
) -> (usize, usize) {
    let mut hit = 0;
    let mut total = 0;
    for ((&p, &l), &m) in pred.iter().zip(label.iter()).zip(mask.iter()) {
        if m == 1 && l != IGNORE_ID {
            total += 1;
            hit += usize::from(p == l);
        }
    }
    (hit, total)
}

/// Scores every manifest entry: HR is cropped to a multiple of the scale,
/// downsampled, super-resolved by `source` and compared against itself.
pub fn evaluate(
    entries: &[ManifestEntry],
    registry: &RemapRegistry,
    source: &SrSource,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    if opts.d1 < 0 {
        return Err(Error::NegativeRadius(opts.d1));
    }
    let seg_model = match source {
        SrSource::Model(g) if opts.with_seg => {
            if !g.has_seg_head() {
                return Err(Error::InvalidSpec(
                    "segmentation scoring needs a checkpoint with its head".into(),
                ));
            }
            Some(*g)
        }
        _ => None,
    };
    let stripped = match source {
        SrSource::Model(g) if seg_model.is_none() => Some(g.strip_seg_head()),
        _ => None,
    };

    let mut images = Vec::with_capacity(entries.len());
    let (mut hits, mut counted) = (0usize, 0usize);
    for entry in entries {
        let hr = crop_to_multiple(&read_rgb(&entry.hr_image_path)?, opts.scale);
        let (h, w, _) = hr.dim();
        let lr = quantize_u8(&bicubic_downsample(&hr, opts.scale)?);
        let mut seg_acc = None;
        let sr = match source {
            SrSource::Identity => hr.clone(),
            SrSource::Bicubic => quantize_u8(&bicubic_upsample(&lr, opts.scale)),
            SrSource::Model(_) => {
                let out = match seg_model {
                    Some(g) => g.infer(&lr)?,
                    None => stripped.as_ref().expect("stripped model").infer(&lr)?,
                };
                if let Some(logits) = &out.seg_logits {
                    let raw = read_label(&entry.label_path)?;
                    let label = remap_classes(&raw, registry.table(&entry.class_vocabulary)?)?;
                    let label = label.slice(ndarray::s![..h, ..w]).to_owned();
                    let lr_label = downsample_label(&label, opts.scale)?;
                    let mask = generate_boundary_mask(&lr_label, opts.d1)?;
                    let (hit, total) =
                        masked_accuracy_counts(&argmax_classes(logits), &lr_label, mask.data());
                    hits += hit;
                    counted += total;
                    seg_acc = (total > 0).then(|| hit as f64 / total as f64);
                }
                quantize_u8(&out.sr)
            }
        };
        images.push(ImageMetrics {
            name: entry
                .hr_image_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            psnr_db: psnr(&sr, &hr, 1.0)?,
            ssim: ssim_rgb(&sr, &hr)?,
            seg_pixel_acc_unmasked: seg_acc,
        });
    }
    let n = images.len().max(1) as f64;
    let aggregate = Aggregate {
        psnr_db: images.iter().map(|m| m.psnr_db).sum::<f64>() / n,
        ssim: images.iter().map(|m| m.ssim).sum::<f64>() / n,
        seg_pixel_acc_unmasked: (counted > 0).then(|| hits as f64 / counted as f64),
    };
    Ok(MetricReport {
        method: source.name().to_string(),
        d1: opts.d1,
        images,
        aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn accuracy_skips_masked_and_ignored_pixels() {
        let pred = array![[0u8, 1, 2], [3, 4, 5]];
        let label = array![[0u8, 0, 2], [IGNORE_ID, 4, 0]];
        let mask = array![[1u8, 1, 0], [1, 1, 1]];
        // counted: (0,0) hit, (0,1) miss, (1,1) hit, (1,2) miss
        assert_eq!(masked_accuracy_counts(&pred, &label, &mask), (2, 4));
    }
}
