mod common;

use common::*;
use srseg::losses::LossTerm::{self, *};
use srseg::model::{build_discriminator, build_extractor, build_generator, Mode, SEG_PREFIX};
use srseg::trainer::{
    generator_grads, train_step_discriminator, train_step_generator, ObjectiveEnv,
};
use srseg_autograd::{Adam, AdamConfig, Tensor};

fn env<'a>(
    d: Option<&'a srseg::model::Discriminator>,
    e: Option<&'a srseg::model::FeatureExtractor>,
) -> ObjectiveEnv<'a, f32> {
    ObjectiveEnv {
        discriminator: d,
        extractor: e,
        weights: weights(),
        reduction: reduction(),
    }
}

fn sq_norm(t: &Tensor<f32>) -> f64 {
    t.data().iter().map(|&v| (v as f64).powi(2)).sum()
}

#[test]
fn inactive_terms_leave_their_parameters_untouched() {
    let gen = build_generator(&tiny_generator(), true, 1).unwrap();
    let batch = batch_of(&scenes(2, 48, 1), 32, 1, 0);
    let g = generator_grads(&gen, &batch, &terms(&[Mse]), &env(None, None), Mode::TRAIN).unwrap();
    for (name, grad) in &g.grads {
        if name.starts_with(SEG_PREFIX) {
            assert_eq!(sq_norm(grad), 0.0, "{name}");
            assert!(!g.reached.contains(name));
        }
    }
    assert!(sq_norm(&g.grads["gen.head.conv.weight"]) > 0.0);

    // with seg active, the head is reached and the upsampling path is not touched by seg alone
    let s = generator_grads(&gen, &batch, &terms(&[Seg]), &env(None, None), Mode::TRAIN).unwrap();
    assert!(sq_norm(&s.grads["gen.seg.conv2.weight"]) > 0.0);
    for (name, grad) in &s.grads {
        if name.starts_with("gen.up") || name.starts_with("gen.out") {
            assert_eq!(sq_norm(grad), 0.0, "{name}");
        }
    }
}

#[test]
fn seg_term_changes_trunk_gradients() {
    let gen = build_generator(&tiny_generator(), true, 2).unwrap();
    let batch = batch_of(&scenes(2, 48, 2), 32, 1, 0);
    let a = generator_grads(&gen, &batch, &terms(&[Mse]), &env(None, None), Mode::TRAIN).unwrap();
    let b = generator_grads(
        &gen,
        &batch,
        &terms(&[Mse, Seg]),
        &env(None, None),
        Mode::TRAIN,
    )
    .unwrap();
    for name in [
        "gen.head.conv.weight",
        "gen.trunk.block00.conv1.weight",
        "gen.fuse.conv.weight",
    ] {
        let diff = a.grads[name].max_abs_diff(&b.grads[name]);
        assert!(diff > 0.0, "{name} unchanged");
    }
    // the SR-only layers see the same gradient either way
    assert_eq!(
        a.grads["gen.out.conv.weight"],
        b.grads["gen.out.conv.weight"]
    );
}

#[test]
fn discriminator_is_frozen_during_the_generator_step() {
    let mut gen = build_generator(&tiny_generator(), true, 3).unwrap();
    let disc = build_discriminator(&tiny_discriminator(32), 3).unwrap();
    let ext = build_extractor(&tiny_extractor()).unwrap();
    let before_disc = disc.clone();
    let before_gen = gen.clone();
    let mut opt = Adam::new(AdamConfig::default());
    let batch = batch_of(&scenes(2, 48, 3), 32, 1, 0);
    let all = terms(&LossTerm::ALL);
    let step = train_step_generator(
        &mut gen,
        &mut opt,
        &batch,
        &all,
        &env(Some(&disc), Some(&ext)),
        1e-3,
    )
    .unwrap();
    assert_eq!(disc, before_disc);
    assert_ne!(gen.params, before_gen.params);
    assert!(
        step.breakdown.adv > 0.0 && step.breakdown.vgg > 0.0 && step.breakdown.seg_masked > 0.0
    );
}

#[test]
fn generator_is_frozen_during_the_discriminator_step() {
    let gen = build_generator(&tiny_generator(), true, 4).unwrap();
    let before = gen.clone();
    let mut disc = build_discriminator(&tiny_discriminator(32), 4).unwrap();
    let d_before = disc.clone();
    let batch = batch_of(&scenes(2, 48, 4), 32, 1, 0);
    let g = generator_grads(&gen, &batch, &terms(&[Mse]), &env(None, None), Mode::TRAIN).unwrap();
    let mut opt = Adam::new(AdamConfig::default());
    train_step_discriminator(&mut disc, &mut opt, &batch.hr, &g.sr, 1e-3).unwrap();
    assert_eq!(gen, before);
    assert_ne!(disc, d_before);
}

#[test]
fn discriminator_separates_white_from_black() {
    let spec = srseg::model::DiscriminatorSpec {
        base_width: 16,
        max_width: 32,
        dense_units: 32,
        ..tiny_discriminator(16)
    };
    let mut disc = build_discriminator(&spec, 5).unwrap();
    let mut opt = Adam::new(AdamConfig::default());
    let white = Tensor::full(&[4, 3, 16, 16], 1.0f32);
    let black = Tensor::full(&[4, 3, 16, 16], -1.0f32);
    let mut last = f64::INFINITY;
    for _ in 0..50 {
        last = train_step_discriminator(&mut disc, &mut opt, &white, &black, 1e-3).unwrap();
    }
    assert!(last < 0.1, "d_loss after 50 steps: {last}");
}

#[test]
fn mse_only_training_reduces_the_loss() {
    let mut gen = build_generator(&tiny_generator(), true, 6).unwrap();
    let mut opt = Adam::new(AdamConfig::default());
    let batch = batch_of(&scenes(2, 32, 6), 32, 1, 0);
    let mse = terms(&[Mse]);
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..200 {
        let s =
            train_step_generator(&mut gen, &mut opt, &batch, &mse, &env(None, None), 1e-3).unwrap();
        first.get_or_insert(s.breakdown.mse);
        last = s.breakdown.mse;
    }
    assert!(last < first.unwrap(), "{last} vs {first:?}");
}

#[test]
fn nonfinite_loss_aborts_without_updating() {
    let mut gen = build_generator(&tiny_generator(), true, 7).unwrap();
    let mut batch = batch_of(&scenes(1, 32, 7), 32, 1, 0);
    batch.hr.data_mut()[0] = f32::NAN;
    let before = gen.clone();
    let mut opt = Adam::new(AdamConfig::default());
    let err = train_step_generator(
        &mut gen,
        &mut opt,
        &batch,
        &terms(&[Mse]),
        &env(None, None),
        1e-3,
    );
    assert!(matches!(err, Err(srseg::Error::NonFiniteLoss { .. })));
    assert_eq!(gen, before);
}

#[test]
fn adversarial_term_needs_a_discriminator() {
    let gen = build_generator(&tiny_generator(), true, 8).unwrap();
    let batch = batch_of(&scenes(1, 32, 8), 32, 1, 0);
    let r = generator_grads(
        &gen,
        &batch,
        &terms(&[Mse, Adv]),
        &env(None, None),
        Mode::TRAIN,
    );
    assert!(r.is_err());
    let stripped = gen.strip_seg_head();
    let r = generator_grads(
        &stripped,
        &batch,
        &terms(&[Seg]),
        &env(None, None),
        Mode::TRAIN,
    );
    assert!(r.is_err());
}
