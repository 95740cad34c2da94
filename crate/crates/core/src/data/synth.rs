//! Procedural class-textured scenes for desk-scale experiments.
//!
//! Every image is split into 2–4 axis-aligned regions; each region shows a
//! texture whose color and frequency content depend on its class, so a
//! network has to look at local appearance to label it.

use std::f32::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{write_manifest, DatasetManifest, ManifestEntry};
use super::remap::{NUM_CLASSES, SYNTHETIC_VOCAB};
use super::sample::derive_seed;
use crate::pixels::{quantize_u8, write_gray, write_rgb, ImageTensor, SegLabelMap};
use crate::{Error, Result};

/// Axis-aligned region `[y0, y1) × [x0, x1)` with its class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
    pub class: u8,
}

fn jitter(rng: &mut ChaCha8Rng, base: [f32; 3], amount: f32) -> [f32; 3] {
    base.map(|c| c + rng.gen_range(-amount..amount))
}

/// Bilinear value noise with the given cell size, values in `[-1, 1]`.
fn value_noise(h: usize, w: usize, cell: usize, rng: &mut ChaCha8Rng) -> Array2<f32> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let grid = Array2::from_shape_fn((gh, gw), |_| rng.gen_range(-1.0f32..1.0));
    Array2::from_shape_fn((h, w), |(y, x)| {
        let fy = y as f32 / cell as f32;
        let fx = x as f32 / cell as f32;
        let (iy, ix) = (fy as usize, fx as usize);
        let (ty, tx) = (fy - iy as f32, fx - ix as f32);
        let top = grid[[iy, ix]] * (1.0 - tx) + grid[[iy, ix + 1]] * tx;
        let bottom = grid[[iy + 1, ix]] * (1.0 - tx) + grid[[iy + 1, ix + 1]] * tx;
        top * (1.0 - ty) + bottom * ty
    })
}

/// Full-frame texture of one class; values in `[0, 1]`.
pub fn render_texture(class: u8, h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImageTensor {
    let mut img = Array3::<f32>::zeros((h, w, 3));
    match class {
        // sky: smooth vertical gradient
        0 => {
            let top = jitter(rng, [0.35, 0.55, 0.92], 0.05);
            let bottom = jitter(rng, [0.75, 0.85, 0.97], 0.03);
            for ((y, _, c), v) in img.indexed_iter_mut() {
                let t = y as f32 / h.max(2) as f32;
                *v = top[c] * (1.0 - t) + bottom[c] * t;
            }
        }
        // ground: brown with per-pixel grain
        1 => {
            let base = jitter(rng, [0.52, 0.37, 0.22], 0.04);
            let grain = Array2::from_shape_fn((h, w), |_| rng.gen_range(-0.18f32..0.18));
            for ((y, x, c), v) in img.indexed_iter_mut() {
                *v = base[c] + grain[[y, x]];
            }
        }
        // buildings: gray masonry with dark mortar lines
        2 => {
            let gray = rng.gen_range(0.55f32..0.7);
            let course = rng.gen_range(5..=7);
            let brick = 2 * course;
            let shift = rng.gen_range(0..brick);
            for ((y, x, c), v) in img.indexed_iter_mut() {
                let row = y / course;
                let xs = x + shift + if row % 2 == 1 { brick / 2 } else { 0 };
                let mortar = y % course == 0 || xs % brick == 0;
                let tint = [0.0, 0.0, 0.03][c];
                *v = if mortar { 0.28 } else { gray + tint };
            }
        }
        // plants: green with blotchy mid-frequency variation
        3 => {
            let base = jitter(rng, [0.2, 0.5, 0.15], 0.04);
            let blotch = value_noise(h, w, 3, rng);
            for ((y, x, c), v) in img.indexed_iter_mut() {
                let k = [0.6, 1.0, 0.5][c];
                *v = base[c] + 0.17 * k * blotch[[y, x]];
            }
        }
        // water: blue sinusoidal waves
        4 => {
            let base = jitter(rng, [0.1, 0.33, 0.6], 0.04);
            let period = rng.gen_range(6.0f32..8.0);
            let angle = PI / 2.0 + rng.gen_range(-0.3f32..0.3);
            let phase = rng.gen_range(0.0..2.0 * PI);
            for ((y, x, c), v) in img.indexed_iter_mut() {
                let t = (x as f32 * angle.cos() + y as f32 * angle.sin()) / period;
                *v = base[c] + 0.13 * (2.0 * PI * t + phase).sin();
            }
        }
        // others: blocks of saturated warm colors
        _ => {
            let palette = [
                [0.85, 0.15, 0.2],
                [0.8, 0.2, 0.7],
                [0.95, 0.8, 0.1],
                [0.95, 0.5, 0.1],
            ];
            let block = 8;
            let grid = Array2::from_shape_fn((h / block + 1, w / block + 1), |_| {
                *palette.choose(rng).expect("non-empty palette")
            });
            for ((y, x, c), v) in img.indexed_iter_mut() {
                *v = grid[[y / block, x / block]][c];
            }
        }
    }
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

fn cut(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    // cuts on a 4-pixel grid keep regions aligned with LR pixels
    let lo = lo.div_ceil(4);
    let hi = hi / 4;
    rng.gen_range(lo..=hi.max(lo)) * 4
}

fn distinct_classes(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    let mut all: Vec<u8> = (0..NUM_CLASSES as u8).collect();
    all.shuffle(rng);
    all.truncate(n);
    all
}

/// Random 2–4 region layout of a `size × size` frame.
pub fn random_layout(size: usize, rng: &mut ChaCha8Rng) -> Vec<Region> {
    let (lo, hi) = (size / 4, size - size / 4);
    let region = |y0, y1, x0, x1, class| Region {
        y0,
        y1,
        x0,
        x1,
        class,
    };
    match rng.gen_range(0..4) {
        // horizontal bands
        0 | 1 => {
            let bands = rng.gen_range(2..=4);
            let classes = distinct_classes(rng, bands);
            let mut cuts: Vec<usize> = Vec::new();
            while cuts.len() < bands - 1 {
                let c = cut(rng, 8, size - 8);
                if !cuts.contains(&c) {
                    cuts.push(c);
                }
            }
            cuts.sort_unstable();
            let mut bounds = vec![0];
            bounds.extend(cuts);
            bounds.push(size);
            let vertical = rng.gen_bool(0.3);
            (0..bands)
                .map(|i| {
                    let (a, b) = (bounds[i], bounds[i + 1]);
                    if vertical {
                        region(0, size, a, b, classes[i])
                    } else {
                        region(a, b, 0, size, classes[i])
                    }
                })
                .collect()
        }
        // quadrants
        2 => {
            let (cy, cx) = (cut(rng, lo, hi), cut(rng, lo, hi));
            let c = distinct_classes(rng, 4);
            vec![
                region(0, cy, 0, cx, c[0]),
                region(0, cy, cx, size, c[1]),
                region(cy, size, 0, cx, c[2]),
                region(cy, size, cx, size, c[3]),
            ]
        }
        // top band over two bottom halves
        _ => {
            let (cy, cx) = (cut(rng, lo, hi), cut(rng, lo, hi));
            let c = distinct_classes(rng, 3);
            vec![
                region(0, cy, 0, size, c[0]),
                region(cy, size, 0, cx, c[1]),
                region(cy, size, cx, size, c[2]),
            ]
        }
    }
}

/// Renders one synthetic scene and its pixel labels.
pub fn render_scene(size: usize, rng: &mut ChaCha8Rng) -> (ImageTensor, SegLabelMap, Vec<Region>) {
    let layout = random_layout(size, rng);
    let mut img = Array3::zeros((size, size, 3));
    let mut label = Array2::zeros((size, size));
    for r in &layout {
        let tex = render_texture(r.class, size, size, rng);
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                label[[y, x]] = r.class;
                for c in 0..3 {
                    img[[y, x, c]] = tex[[y, x, c]];
                }
            }
        }
    }
    (quantize_u8(&img), label, layout)
}

/// Writes `n` scenes plus `manifest.jsonl` under `dir`.
pub fn make_synthetic_dataset(
    dir: &Path,
    n: usize,
    hr_size: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::InvalidSpec(
            "synthetic dataset needs at least one image".into(),
        ));
    }
    if hr_size == 0 || !hr_size.is_multiple_of(4) || hr_size < 32 {
        return Err(Error::InvalidSpec(format!(
            "synthetic image size {hr_size} must be a multiple of 4 and at least 32"
        )));
    }
    let images = dir.join("images");
    let labels = dir.join("labels");
    for d in [&images, &labels] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[i as u64]));
        let (img, label, _) = render_scene(hr_size, &mut rng);
        let hr_image_path = images.join(format!("synth_{i:05}.png"));
        let label_path = labels.join(format!("synth_{i:05}.png"));
        write_rgb(&hr_image_path, &img)?;
        write_gray(&label_path, &label)?;
        entries.push(ManifestEntry {
            hr_image_path,
            label_path,
            class_vocabulary: SYNTHETIC_VOCAB.into(),
        });
    }
    let manifest = DatasetManifest {
        entries,
        warnings: Vec::new(),
    };
    write_manifest(&dir.join("manifest.jsonl"), &manifest)?;
    Ok(manifest)
}
