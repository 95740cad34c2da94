//! Pixel, perceptual, adversarial and boundary-masked segmentation losses.
//!
//! The plain functions evaluate a loss on concrete values; the `graph_*`
//! builders add the same quantity to an autograd graph for training.

use std::collections::BTreeSet;
use std::fmt;

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use srseg_autograd::{Scalar, Var};

use crate::boundary_mask::BoundaryMask;
use crate::model::{Ctx, FeatureExtractor};
use crate::pixels::{images_to_tensor, ImageTensor, SegLabelMap, IGNORE_ID};
use crate::{Error, Result};

/// Scores are clamped to `[SCORE_EPS, 1 - SCORE_EPS]` before taking logs.
pub const SCORE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 2e-6,
            gamma: 1e-3,
            delta: 0.8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "loss weight {name} = {w} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }

    pub fn weight(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::Mse => self.alpha,
            LossTerm::Vgg => self.beta,
            LossTerm::Adv => self.gamma,
            LossTerm::Seg => self.delta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossTerm {
    Mse,
    Vgg,
    Adv,
    Seg,
}

impl LossTerm {
    pub const ALL: [LossTerm; 4] = [LossTerm::Mse, LossTerm::Vgg, LossTerm::Adv, LossTerm::Seg];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Mse => "mse",
            LossTerm::Vgg => "vgg",
            LossTerm::Adv => "adv",
            LossTerm::Seg => "seg",
        }
    }
}

impl fmt::Display for LossTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub type ActiveTerms = BTreeSet<LossTerm>;

/// How feature-space squared differences are reduced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerceptualReduction {
    #[default]
    Mean,
    Sum,
}

/// Unweighted loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub mse: f64,
    pub vgg: f64,
    pub adv: f64,
    pub seg_masked: f64,
}

impl LossComponents {
    pub fn get(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::Mse => self.mse,
            LossTerm::Vgg => self.vgg,
            LossTerm::Adv => self.adv,
            LossTerm::Seg => self.seg_masked,
        }
    }

    pub fn set(&mut self, term: LossTerm, value: f64) {
        match term {
            LossTerm::Mse => self.mse = value,
            LossTerm::Vgg => self.vgg = value,
            LossTerm::Adv => self.adv = value,
            LossTerm::Seg => self.seg_masked = value,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub vgg: f64,
    pub adv: f64,
    pub seg_masked: f64,
    pub total: f64,
}

fn same_shape<D: ndarray::Dimension>(
    a: &ndarray::Array<f32, D>,
    b: &ndarray::Array<f32, D>,
) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )))
    }
}

/// Mean squared difference over all pixels and channels.
pub fn mse_loss(sr: &ImageTensor, hr: &ImageTensor) -> Result<f64> {
    same_shape(sr, hr)?;
    let n = sr.len().max(1) as f64;
    Ok(sr
        .iter()
        .zip(hr)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / n)
}

/// Squared feature distance of two `[0, 1]` images.
pub fn perceptual_loss(
    sr: &ImageTensor,
    hr: &ImageTensor,
    extractor: &FeatureExtractor,
    reduction: PerceptualReduction,
) -> Result<f64> {
    same_shape(sr, hr)?;
    let fa = extractor.features_of(&images_to_tensor::<f32>(&[sr]));
    let fb = extractor.features_of(&images_to_tensor::<f32>(&[hr]));
    let sum: f64 = fa
        .data()
        .iter()
        .zip(fb.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    Ok(match reduction {
        PerceptualReduction::Mean => sum / fa.numel().max(1) as f64,
        PerceptualReduction::Sum => sum,
    })
}

fn check_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::ShapeMismatch("no discriminator scores".into()));
    }
    match scores.iter().find(|&&s| !(s > 0.0 && s < 1.0)) {
        Some(&bad) => Err(Error::DomainError(bad)),
        None => Ok(()),
    }
}

fn clamp_score(s: f64) -> f64 {
    s.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

/// Non-saturating generator loss, mean of `-ln D(SR)`.
pub fn adversarial_g_loss(d_on_sr: &[f64]) -> Result<f64> {
    check_scores(d_on_sr)?;
    Ok(d_on_sr.iter().map(|&s| -clamp_score(s).ln()).sum::<f64>() / d_on_sr.len() as f64)
}

/// Mean of `-ln D(HR)` plus mean of `-ln(1 - D(SR))`.
pub fn discriminator_loss(d_on_hr: &[f64], d_on_sr: &[f64]) -> Result<f64> {
    check_scores(d_on_hr)?;
    check_scores(d_on_sr)?;
    let real = d_on_hr.iter().map(|&s| -clamp_score(s).ln()).sum::<f64>() / d_on_hr.len() as f64;
    let fake = d_on_sr
        .iter()
        .map(|&s| -(1.0 - clamp_score(s)).ln())
        .sum::<f64>()
        / d_on_sr.len() as f64;
    Ok(real + fake)
}

/// Cross-entropy of `H × W × C` logits against `label`, averaged over pixels
/// the mask keeps. Ignore pixels never count; no kept pixel gives 0.
pub fn masked_seg_loss(
    seg_logits: &Array3<f32>,
    lr_label: &SegLabelMap,
    mask: &BoundaryMask,
) -> Result<f64> {
    let (h, w, c) = seg_logits.dim();
    if lr_label.dim() != (h, w) || mask.data().dim() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "logits {h}x{w}, label {:?}, mask {:?}",
            lr_label.dim(),
            mask.data().dim()
        )));
    }
    if let Some(&bad) = lr_label
        .iter()
        .find(|&&l| l != IGNORE_ID && l as usize >= c)
    {
        return Err(Error::InvalidLabel(format!(
            "class id {bad} with {c} classes"
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((y, x), &label) in lr_label.indexed_iter() {
        if label == IGNORE_ID || mask.data()[[y, x]] != 1 {
            continue;
        }
        let row = seg_logits.slice(ndarray::s![y, x, ..]);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let lse = max
            + row
                .iter()
                .map(|&v| (v as f64 - max).exp())
                .sum::<f64>()
                .ln();
        total += lse - row[label as usize] as f64;
        count += 1;
    }
    Ok(if count == 0 {
        0.0
    } else {
        total / count as f64
    })
}

/// Weighted sum of the four components.
pub fn total_loss(c: LossComponents, w: &LossWeights) -> Result<LossBreakdown> {
    for term in LossTerm::ALL {
        let value = c.get(term);
        if !value.is_finite() {
            return Err(Error::NonFiniteComponent {
                name: term.name(),
                value,
            });
        }
    }
    Ok(LossBreakdown {
        mse: c.mse,
        vgg: c.vgg,
        adv: c.adv,
        seg_masked: c.seg_masked,
        total: w.alpha * c.mse + w.beta * c.vgg + w.gamma * c.adv + w.delta * c.seg_masked,
    })
}

/// Perceptual term between two `[-1, 1]` image batches already in the graph.
pub fn graph_perceptual<T: Scalar>(
    ctx: &mut Ctx<T>,
    extractor: &FeatureExtractor<T>,
    sr: Var,
    hr: Var,
    reduction: PerceptualReduction,
) -> Var {
    let fs = extractor.features(ctx, sr);
    let fh = extractor.features(ctx, hr);
    let fh = ctx.graph.detach(fh);
    let mean = ctx.graph.mse(fs, fh);
    match reduction {
        PerceptualReduction::Mean => mean,
        PerceptualReduction::Sum => {
            let n = T::from_usize(ctx.graph.value(fs).numel()).unwrap();
            ctx.graph.scale(mean, n)
        }
    }
}

/// `-mean ln D(SR)` on clamped scores.
pub fn graph_adversarial_g<T: Scalar>(ctx: &mut Ctx<T>, d_on_sr: Var) -> Var {
    ctx.graph
        .neg_log_mean(d_on_sr, T::from_f64_lossy(SCORE_EPS))
}

/// `-mean ln D(HR) - mean ln(1 - D(SR))` on clamped scores.
pub fn graph_discriminator<T: Scalar>(ctx: &mut Ctx<T>, d_on_hr: Var, d_on_sr: Var) -> Var {
    let eps = T::from_f64_lossy(SCORE_EPS);
    let real = ctx.graph.neg_log_mean(d_on_hr, eps);
    let fake = ctx.graph.neg_log1m_mean(d_on_sr, eps);
    ctx.graph.add(real, fake)
}
