use std::collections::BTreeMap;

use srseg_autograd::{Adam, Graph, Scalar, Tensor, Var};

use crate::data::TrainSample;
use crate::losses::{
    graph_adversarial_g, graph_discriminator, graph_perceptual, total_loss, ActiveTerms,
    LossBreakdown, LossComponents, LossTerm, LossWeights, PerceptualReduction,
};
use crate::model::{apply_bn_updates, Ctx, Discriminator, FeatureExtractor, Generator, Mode};
use crate::pixels::images_to_tensor;
use crate::{Error, Result};

/// Network-ready minibatch: images in `[-1, 1]`, labels and masks flattened
/// in `N·H·W` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T: Scalar = f32> {
    pub lr: Tensor<T>,
    pub hr: Tensor<T>,
    pub labels: Vec<u8>,
    pub mask: Vec<u8>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_samples(samples: &[TrainSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::ShapeMismatch("empty batch".into()))?;
        if samples
            .iter()
            .any(|s| s.hr.dim() != first.hr.dim() || s.lr.dim() != first.lr.dim())
        {
            return Err(Error::ShapeMismatch(
                "samples in a batch must share a size".into(),
            ));
        }
        let lr: Vec<_> = samples.iter().map(|s| &s.lr).collect();
        let hr: Vec<_> = samples.iter().map(|s| &s.hr).collect();
        Ok(Batch {
            lr: images_to_tensor(&lr),
            hr: images_to_tensor(&hr),
            labels: samples
                .iter()
                .flat_map(|s| s.lr_label.iter().copied())
                .collect(),
            mask: samples
                .iter()
                .flat_map(|s| s.mask.data().iter().copied())
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.lr.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cast<U: Scalar>(&self) -> Batch<U> {
        Batch {
            lr: self.lr.cast(),
            hr: self.hr.cast(),
            labels: self.labels.clone(),
            mask: self.mask.clone(),
        }
    }
}

/// Fixed inputs of the generator objective.
pub struct ObjectiveEnv<'a, T: Scalar> {
    pub discriminator: Option<&'a Discriminator<T>>,
    pub extractor: Option<&'a FeatureExtractor<T>>,
    pub weights: LossWeights,
    pub reduction: PerceptualReduction,
}

/// Graph nodes of one generator objective.
pub struct Objective {
    pub total: Var,
    pub sr: Var,
    pub terms: BTreeMap<LossTerm, Var>,
}

/// Builds `Σ weight·term` over the active terms only.
pub fn generator_objective<T: Scalar>(
    ctx: &mut Ctx<T>,
    generator: &Generator<T>,
    batch: &Batch<T>,
    active: &ActiveTerms,
    env: &ObjectiveEnv<T>,
    mode: Mode,
) -> Result<Objective> {
    if active.is_empty() {
        return Err(Error::EmptyPlan);
    }
    let seg = active.contains(&LossTerm::Seg);
    if seg && !generator.has_seg_head() {
        return Err(Error::InvalidSpec(
            "segmentation term needs the segmentation head".into(),
        ));
    }
    let lr = ctx.graph.constant(batch.lr.clone());
    let hr = ctx.graph.constant(batch.hr.clone());
    let out = generator.forward(ctx, lr, mode, seg)?;
    if ctx.graph.shape(out.sr) != batch.hr.shape() {
        return Err(Error::ShapeMismatch(format!(
            "SR output {:?} vs HR {:?}",
            ctx.graph.shape(out.sr),
            batch.hr.shape()
        )));
    }
    let mut terms = BTreeMap::new();
    for &term in active {
        let v = match term {
            LossTerm::Mse => ctx.graph.mse(out.sr, hr),
            LossTerm::Seg => {
                let logits = out.seg_logits.expect("head ran");
                ctx.graph
                    .masked_cross_entropy(logits, &batch.labels, &batch.mask)
            }
            LossTerm::Vgg => {
                let ext = env.extractor.ok_or_else(|| {
                    Error::ExtractorUnavailable("perceptual term without an extractor".into())
                })?;
                graph_perceptual(ctx, ext, out.sr, hr, env.reduction)
            }
            LossTerm::Adv => {
                let disc = env.discriminator.ok_or_else(|| {
                    Error::InvalidSpec("adversarial term without a discriminator".into())
                })?;
                let scores = disc.forward(ctx, out.sr, Mode::FROZEN_TRAIN)?;
                graph_adversarial_g(ctx, scores)
            }
        };
        terms.insert(term, v);
    }
    let weighted: Vec<(Var, T)> = terms
        .iter()
        .map(|(&t, &v)| (v, T::from_f64_lossy(env.weights.weight(t))))
        .collect();
    let total = ctx.graph.weighted_sum(&weighted);
    Ok(Objective {
        total,
        sr: out.sr,
        terms,
    })
}

/// Objective value plus gradients for every generator parameter (zeros where
/// no active term reaches a parameter).
pub struct GeneratorGrads<T: Scalar> {
    pub breakdown: LossBreakdown,
    pub grads: BTreeMap<String, Tensor<T>>,
    /// Parameters an active term actually reached.
    pub reached: Vec<String>,
    /// SR batch before the update, `[-1, 1]`.
    pub sr: Tensor<T>,
    bn_updates: Vec<(String, srseg_autograd::BatchStats<T>)>,
}

pub fn generator_grads<T: Scalar>(
    generator: &Generator<T>,
    batch: &Batch<T>,
    active: &ActiveTerms,
    env: &ObjectiveEnv<T>,
    mode: Mode,
) -> Result<GeneratorGrads<T>> {
    let mut graph = Graph::new();
    let mut ctx = Ctx::new(&mut graph);
    let obj = generator_objective(&mut ctx, generator, batch, active, env, mode)?;
    let mut components = LossComponents::default();
    for (&t, &v) in &obj.terms {
        components.set(t, ctx.graph.value(v).item().as_f64());
    }
    // non-finite values are reported by the caller, not here
    let breakdown = total_loss(components, &env.weights).unwrap_or(LossBreakdown {
        mse: components.mse,
        vgg: components.vgg,
        adv: components.adv,
        seg_masked: components.seg_masked,
        total: f64::NAN,
    });
    let mut grads = ctx.graph.backward(obj.total);
    let reached_grads = ctx.param_grads(&mut grads, "gen.");
    let reached = reached_grads.keys().cloned().collect();
    let mut all = BTreeMap::new();
    for (name, t) in generator.params.params() {
        let g = reached_grads
            .get(name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape()));
        all.insert(name.to_string(), g);
    }
    let bn_updates = ctx.take_bn_updates();
    let sr = graph.value(obj.sr).clone();
    Ok(GeneratorGrads {
        breakdown,
        grads: all,
        reached,
        sr,
        bn_updates,
    })
}

/// Result of one generator update.
pub struct GeneratorStep {
    pub breakdown: LossBreakdown,
    /// SR batch produced before the update, for the discriminator.
    pub sr: Tensor<f32>,
}

fn finite(grads: &BTreeMap<String, Tensor<f32>>) -> bool {
    grads.values().all(Tensor::all_finite)
}

/// One Adam update of the generator on the active terms. The discriminator
/// and extractor are read only.
pub fn train_step_generator(
    generator: &mut Generator,
    optimizer: &mut Adam<f32>,
    batch: &Batch,
    active: &ActiveTerms,
    env: &ObjectiveEnv<f32>,
    lr: f64,
) -> Result<GeneratorStep> {
    let g = generator_grads(generator, batch, active, env, Mode::TRAIN)?;
    if !g.breakdown.total.is_finite() || !finite(&g.grads) {
        return Err(Error::NonFiniteLoss {
            step: 0,
            dump: Default::default(),
        });
    }
    let reached: BTreeMap<String, Tensor<f32>> = g
        .grads
        .into_iter()
        .filter(|(k, _)| g.reached.contains(k))
        .collect();
    optimizer.step(&mut generator.params, &reached, lr);
    apply_bn_updates(&mut generator.params, &g.bn_updates, "gen.");
    Ok(GeneratorStep {
        breakdown: g.breakdown,
        sr: g.sr,
    })
}

/// One Adam update of the discriminator on real HR versus detached SR.
pub fn train_step_discriminator(
    discriminator: &mut Discriminator,
    optimizer: &mut Adam<f32>,
    hr: &Tensor<f32>,
    sr: &Tensor<f32>,
    lr: f64,
) -> Result<f64> {
    let mut graph = Graph::new();
    let mut ctx = Ctx::new(&mut graph);
    let real = ctx.graph.constant(hr.clone());
    let fake = ctx.graph.constant(sr.clone());
    let real_scores = discriminator.forward(&mut ctx, real, Mode::TRAIN)?;
    let fake_scores = discriminator.forward(&mut ctx, fake, Mode::TRAIN)?;
    let loss = graph_discriminator(&mut ctx, real_scores, fake_scores);
    let value = ctx.graph.value(loss).item() as f64;
    let mut grads = ctx.graph.backward(loss);
    let grads = ctx.param_grads(&mut grads, "disc.");
    if !value.is_finite() || !finite(&grads) {
        return Err(Error::NonFiniteLoss {
            step: 0,
            dump: Default::default(),
        });
    }
    let updates = ctx.take_bn_updates();
    optimizer.step(&mut discriminator.params, &grads, lr);
    apply_bn_updates(&mut discriminator.params, &updates, "disc.");
    Ok(value)
}
