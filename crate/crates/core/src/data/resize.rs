//! Bicubic resizing with the semantics of MATLAB's `imresize`.
//!
//! The cubic convolution kernel uses `a = -0.5`. When shrinking, the kernel
//! is stretched by `1/scale` (antialiasing), output pixel centers map to
//! `u = x/scale + 0.5·(1 − 1/scale)` in 1-based input coordinates, weights
//! are normalized to sum to one, and out-of-range taps reflect symmetrically
//! at the borders.

use ndarray::{Array3, Axis};

use crate::pixels::ImageTensor;
use crate::{Error, Result};

const KERNEL_WIDTH: f64 = 4.0;

pub(crate) fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Input taps and weights for each output position along one axis.
#[derive(Clone, Debug)]
pub(crate) struct Contributions {
    pub taps: Vec<Vec<(usize, f64)>>,
}

pub(crate) fn contributions(
    in_len: usize,
    out_len: usize,
    scale: f64,
    antialias: bool,
) -> Contributions {
    let shrink = scale < 1.0 && antialias;
    let width = if shrink {
        KERNEL_WIDTH / scale
    } else {
        KERNEL_WIDTH
    };
    let kernel = |x: f64| {
        if shrink {
            scale * cubic(scale * x)
        } else {
            cubic(x)
        }
    };
    let span = width.ceil() as i64 + 2;
    let taps = (1..=out_len)
        .map(|x| {
            let u = x as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
            let left = (u - width / 2.0).floor() as i64;
            let raw: Vec<(i64, f64)> = (0..span)
                .map(|p| {
                    let idx = left + p;
                    (idx, kernel(u - idx as f64))
                })
                .collect();
            let total: f64 = raw.iter().map(|t| t.1).sum();
            raw.into_iter()
                .filter(|t| t.1 != 0.0)
                .map(|(idx, w)| (reflect(idx, in_len), w / total))
                .collect()
        })
        .collect();
    Contributions { taps }
}

/// Maps a 1-based, possibly out-of-range index onto `0..len` by symmetric
/// reflection (the border sample is repeated).
fn reflect(idx: i64, len: usize) -> usize {
    let n = len as i64;
    let m = (idx - 1).rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn resize_axis(img: &Array3<f64>, axis: usize, out_len: usize, scale: f64) -> Array3<f64> {
    let in_len = img.len_of(Axis(axis));
    let contrib = contributions(in_len, out_len, scale, true);
    let mut shape = [img.dim().0, img.dim().1, img.dim().2];
    shape[axis] = out_len;
    let mut out = Array3::<f64>::zeros(shape);
    for (o, taps) in contrib.taps.iter().enumerate() {
        let mut lane = out.index_axis_mut(Axis(axis), o);
        for &(i, w) in taps {
            lane.scaled_add(w, &img.index_axis(Axis(axis), i));
        }
    }
    out
}

/// Resizes to `out_h × out_w`; the output is clamped to `[0, 1]`.
pub fn bicubic_resize(img: &ImageTensor, out_h: usize, out_w: usize) -> ImageTensor {
    let (h, w, _) = img.dim();
    assert!(h > 0 && w > 0 && out_h > 0 && out_w > 0, "empty resize");
    let src = img.mapv(|v| v as f64);
    let scale_h = out_h as f64 / h as f64;
    let scale_w = out_w as f64 / w as f64;
    // imresize processes the dimension with the smaller scale first; rows win ties.
    let out = if scale_h <= scale_w {
        let tmp = resize_axis(&src, 0, out_h, scale_h);
        resize_axis(&tmp, 1, out_w, scale_w)
    } else {
        let tmp = resize_axis(&src, 1, out_w, scale_w);
        resize_axis(&tmp, 0, out_h, scale_h)
    };
    out.mapv(|v| v.clamp(0.0, 1.0) as f32)
}

/// Shrinks both spatial dimensions by an integer `factor`.
pub fn bicubic_downsample(img: &ImageTensor, factor: usize) -> Result<ImageTensor> {
    let (h, w, _) = img.dim();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::IndivisibleDimensions {
            height: h,
            width: w,
            factor,
        });
    }
    Ok(bicubic_resize(img, h / factor, w / factor))
}

/// Enlarges both spatial dimensions by an integer `factor`.
pub fn bicubic_upsample(img: &ImageTensor, factor: usize) -> ImageTensor {
    let (h, w, _) = img.dim();
    bicubic_resize(img, h * factor, w * factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent reference: 2-D direct summation over the tensor product
    /// of per-axis imresize weights, computed without the shared helpers.
    fn reference_downsample(img: &Array3<f32>, factor: usize) -> Array3<f64> {
        fn keys(x: f64) -> f64 {
            let t = x.abs();
            match t {
                t if t <= 1.0 => (1.5 * t - 2.5) * t * t + 1.0,
                t if t <= 2.0 => ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0,
                _ => 0.0,
            }
        }
        fn axis_weights(n_in: usize, factor: usize) -> Vec<Vec<(usize, f64)>> {
            let s = 1.0 / factor as f64;
            let support = 4.0 * factor as f64;
            (0..n_in / factor)
                .map(|o| {
                    let center = (o + 1) as f64 * factor as f64 - 0.5 * (factor as f64 - 1.0);
                    let first = (center - support / 2.0).floor() as i64;
                    let mut ws = Vec::new();
                    for j in first..=first + support as i64 + 2 {
                        let w = s * keys(s * (center - j as f64));
                        // symmetric padding, 1-based
                        let mut k = j;
                        while k < 1 || k > n_in as i64 {
                            k = if k < 1 {
                                1 - k
                            } else {
                                2 * n_in as i64 + 1 - k
                            };
                        }
                        ws.push(((k - 1) as usize, w));
                    }
                    let total: f64 = ws.iter().map(|w| w.1).sum();
                    ws.into_iter().map(|(k, w)| (k, w / total)).collect()
                })
                .collect()
        }
        let (h, w, c) = img.dim();
        let wy = axis_weights(h, factor);
        let wx = axis_weights(w, factor);
        Array3::from_shape_fn((h / factor, w / factor, c), |(oy, ox, ch)| {
            let mut acc = 0.0;
            for &(iy, a) in &wy[oy] {
                for &(ix, b) in &wx[ox] {
                    acc += a * b * img[[iy, ix, ch]] as f64;
                }
            }
            acc
        })
    }

    #[test]
    fn kernel_values() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn weights_sum_to_one() {
        for (n, out) in [(8, 2), (16, 4), (5, 20), (7, 3)] {
            let c = contributions(n, out, out as f64 / n as f64, true);
            for taps in &c.taps {
                let s: f64 = taps.iter().map(|t| t.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(taps.iter().all(|t| t.0 < n));
            }
        }
    }

    #[test]
    fn constant_image_is_preserved() {
        let img = Array3::from_elem((16, 12, 3), 0.5f32);
        let out = bicubic_downsample(&img, 4).unwrap();
        assert_eq!(out.dim(), (4, 3, 3));
        assert!(out.iter().all(|&v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn horizontal_ramp_is_reproduced_in_the_interior() {
        let (h, w) = (8, 32);
        let img = Array3::from_shape_fn((h, w, 3), |(_, x, _)| x as f32 / 64.0);
        let out = bicubic_downsample(&img, 2).unwrap();
        let oracle = reference_downsample(&img, 2);
        // Taps reach 4 input pixels to each side; those columns see no padding.
        for oy in 0..h / 2 {
            for ox in 2..w / 2 - 2 {
                let expected = (2.0 * ox as f64 + 0.5) / 64.0;
                assert!((out[[oy, ox, 0]] as f64 - expected).abs() < 1e-6);
                assert!((oracle[[oy, ox, 0]] - expected).abs() < 1e-12);
            }
        }
        for (a, b) in out.iter().zip(oracle.iter()) {
            assert!((*a as f64 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn random_8x8_matches_direct_summation() {
        for seed in [0u64, 1, 2, 3] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = Array3::from_shape_fn((8, 8, 3), |_| rng.gen::<f32>());
            let out = bicubic_downsample(&img, 4).unwrap();
            let oracle = reference_downsample(&img, 4);
            assert_eq!(out.dim(), (2, 2, 3));
            for (a, b) in out.iter().zip(oracle.iter()) {
                assert!(
                    (*a as f64 - b.clamp(0.0, 1.0)).abs() < 1e-6,
                    "seed {seed}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn indivisible_dimensions_are_rejected() {
        let img = Array3::from_elem((10, 8, 3), 0.1f32);
        assert!(matches!(
            bicubic_downsample(&img, 4),
            Err(Error::IndivisibleDimensions { height: 10, .. })
        ));
    }

    #[test]
    fn upsampling_preserves_constants() {
        let img = Array3::from_elem((4, 5, 3), 0.25f32);
        let up = bicubic_upsample(&img, 4);
        assert_eq!(up.dim(), (16, 20, 3));
        assert!(up.iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }
}
