#![allow(dead_code)]

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use srseg::data::synth::render_scene;
use srseg::data::{make_train_sample, CropConfig, LabeledImage};
use srseg::losses::{ActiveTerms, LossTerm, LossWeights, PerceptualReduction};
use srseg::model::{DiscriminatorSpec, FeatureExtractorSpec, GeneratorSpec};
use srseg::trainer::{Batch, DataConfig, LossConfig, OptimizerConfig, PlanMode, RunConfig, Stage};

pub fn tiny_generator() -> GeneratorSpec {
    GeneratorSpec {
        n_res_blocks: 1,
        trunk_width: 8,
        ..GeneratorSpec::default()
    }
}

pub fn tiny_discriminator(input_size: usize) -> DiscriminatorSpec {
    DiscriminatorSpec {
        base_width: 4,
        max_width: 8,
        dense_units: 8,
        input_size,
        leaky_slope: 0.2,
    }
}

pub fn tiny_extractor() -> FeatureExtractorSpec {
    FeatureExtractorSpec {
        layer_tag: "relu1_2".into(),
        n_feature_maps: 64,
        ..FeatureExtractorSpec::default()
    }
}

pub fn terms(list: &[LossTerm]) -> ActiveTerms {
    list.iter().copied().collect()
}

/// In-memory synthetic scenes.
pub fn scenes(n: usize, size: usize, seed: u64) -> Vec<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (hr, label, _) = render_scene(size, &mut rng);
            LabeledImage {
                name: format!("scene{i}"),
                hr,
                label,
            }
        })
        .collect()
}

pub fn batch_of(images: &[LabeledImage], crop: usize, d1: i64, seed: u64) -> Batch {
    let samples: Vec<_> = images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let cfg = CropConfig {
                hr_crop_size: crop,
                seed: seed + i as u64,
            };
            make_train_sample(&img.hr, &img.label, &cfg, 4, d1).unwrap()
        })
        .collect();
    Batch::from_samples(&samples).unwrap()
}

pub fn weights() -> LossWeights {
    LossWeights::default()
}

pub fn reduction() -> PerceptualReduction {
    PerceptualReduction::Mean
}

/// Small three-stage run over 32-pixel crops.
pub fn tiny_run_config(out_dir: &Path, epochs: [usize; 3]) -> RunConfig {
    use LossTerm::*;
    let stage = |name: &str, epochs: usize, t: &[LossTerm]| Stage {
        name: name.into(),
        epochs,
        terms: terms(t),
    };
    RunConfig {
        out_dir: out_dir.to_path_buf(),
        seed: 11,
        d1: 1,
        batch_size: 2,
        log_every: 1,
        generator: tiny_generator(),
        discriminator: tiny_discriminator(32),
        extractor: tiny_extractor(),
        loss: LossConfig::default(),
        optimizer: OptimizerConfig {
            decay_every: 2,
            ..OptimizerConfig::default()
        },
        plan: PlanMode::Custom {
            stages: vec![
                stage("warmup", epochs[0], &[Mse]),
                stage("seg", epochs[1], &[Mse, Seg]),
                stage("full", epochs[2], &[Mse, Vgg, Adv, Seg]),
            ],
        },
        data: DataConfig {
            manifest: out_dir.join("unused.jsonl"),
            hr_crop: 32,
        },
    }
}

/// Central-difference check of the full `mse + seg` objective in f64, batch
/// norm on running statistics. Scalars spread across every parameter tensor
/// are probed until `n_checks` smooth points were compared; a point whose
/// one-sided slopes disagree sits on a leaky-ReLU kink and is skipped.
/// Relative errors use a denominator of at least 1e-6.
/// Returns the worst relative error and the number of skipped points.
pub fn gradient_check(n_checks: usize, seed: u64) -> (f64, usize) {
    use srseg::model::{build_generator, Mode};
    use srseg::trainer::{generator_grads, ObjectiveEnv};

    let spec = GeneratorSpec {
        n_res_blocks: 2,
        trunk_width: 8,
        ..GeneratorSpec::default()
    };
    let gen = build_generator(&spec, true, seed).unwrap().cast::<f64>();
    let batch = batch_of(&scenes(1, 48, seed), 32, 1, seed).cast::<f64>();
    let active = terms(&[LossTerm::Mse, LossTerm::Seg]);
    let env = ObjectiveEnv {
        discriminator: None,
        extractor: None,
        weights: weights(),
        reduction: reduction(),
    };
    let mode = Mode {
        train_bn: false,
        trainable: true,
    };
    let analytic = generator_grads(&gen, &batch, &active, &env, mode).unwrap();
    let f0 = analytic.breakdown.total;
    let names: Vec<String> = gen.params.param_names().map(str::to_string).collect();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    let mut k = 0;
    while checked < n_checks {
        let name = &names[k % names.len()];
        let numel = gen.params.param(name).unwrap().numel();
        let idx = (k / names.len() * 7919 + k * 31) % numel;
        k += 1;
        let eval = |delta: f64| {
            let mut g = gen.clone();
            g.params.param_mut(name).unwrap().data_mut()[idx] += delta;
            generator_grads(&g, &batch, &active, &env, mode)
                .unwrap()
                .breakdown
                .total
        };
        let (fp, fm) = (eval(h), eval(-h));
        let (right, left) = ((fp - f0) / h, (f0 - fm) / h);
        if (right - left).abs() > 1e-4 * right.abs().max(left.abs()) + 1e-9 {
            skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.grads[name].data()[idx];
        // the floor sits above the ~1e-11 round-off of the difference quotient
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        worst = worst.max(rel);
        checked += 1;
    }
    (worst, skipped)
}
