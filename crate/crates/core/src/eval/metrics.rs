use ndarray::{s, Array2};

use crate::pixels::{luma, ImageTensor};
use crate::{Error, Result};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!("{a:?} vs {b:?}")))
    }
}

/// `10·log10(peak² / mse)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageTensor, b: &ImageTensor, peak: f64) -> Result<f64> {
    check_shapes(a.shape(), b.shape())?;
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::DomainError(peak));
    }
    if a.is_empty() {
        return Err(Error::ShapeMismatch("empty image".into()));
    }
    let mse = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian(size: usize) -> Vec<f64> {
    let c = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Separable filter over valid positions only.
fn filter_valid(img: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let n = k.len();
    let rows: Array2<f64> = Array2::from_shape_fn((h, w + 1 - n), |(y, x)| {
        (0..n).map(|i| k[i] * img[[y, x + i]]).sum::<f64>()
    });
    Array2::from_shape_fn((h + 1 - n, w + 1 - n), |(y, x)| {
        (0..n).map(|i| k[i] * rows[[y + i, x]]).sum::<f64>()
    })
}

/// Mean local SSIM of two single-channel images in `[0, 1]`, Gaussian window
/// (11×11, σ = 1.5; shrunk to the largest odd size that fits smaller images).
pub fn ssim(a: &Array2<f32>, b: &Array2<f32>) -> Result<f64> {
    check_shapes(a.shape(), b.shape())?;
    let (h, w) = a.dim();
    if h == 0 || w == 0 {
        return Err(Error::ShapeMismatch("empty image".into()));
    }
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian(size);
    let a = a.mapv(f64::from);
    let b = b.mapv(f64::from);
    let mu_a = filter_valid(&a, &k);
    let mu_b = filter_valid(&b, &k);
    let aa = filter_valid(&(&a * &a), &k);
    let bb = filter_valid(&(&b * &b), &k);
    let ab = filter_valid(&(&a * &b), &k);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mut total = 0.0;
    for ((((&ma, &mb), &saa), &sbb), &sab) in mu_a.iter().zip(&mu_b).zip(&aa).zip(&bb).zip(&ab) {
        let var_a = saa - ma * ma;
        let var_b = sbb - mb * mb;
        let cov = sab - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// SSIM on BT.601 luma.
pub fn ssim_rgb(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    check_shapes(a.shape(), b.shape())?;
    ssim(&luma(a), &luma(b))
}

/// Top-left crop so both sides divide by `factor`.
pub fn crop_to_multiple(img: &ImageTensor, factor: usize) -> ImageTensor {
    let (h, w, _) = img.dim();
    img.slice(s![..h - h % factor, ..w - w % factor, ..])
        .to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> ImageTensor {
        Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            ((y * 7 + x * 3 + c * 11) % 64) as f32 / 63.0
        })
    }

    #[test]
    fn psnr_closed_forms() {
        let a = ramp(8, 8);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        let zeros = Array3::zeros((4, 4, 3));
        let half = Array3::from_elem((4, 4, 3), 0.5f32);
        assert!((psnr(&zeros, &half, 1.0).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-9);
        assert!(matches!(
            psnr(&a, &ramp(8, 4), 1.0),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(psnr(&a, &a, 0.0), Err(Error::DomainError(_))));
    }

    #[test]
    fn ssim_identity_and_checkerboard_inversion() {
        let a = ramp(16, 16);
        assert!((ssim_rgb(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let board = Array2::from_shape_fn((16, 16), |(y, x)| ((y + x) % 2) as f32);
        let inverted = board.mapv(|v| 1.0 - v);
        let v = ssim(&board, &inverted).unwrap();
        assert!(v < 0.0, "{v}");
        assert!(v >= -1.0);
    }

    #[test]
    fn ssim_tends_to_one_near_identity() {
        let c = Array2::from_elem((12, 12), 0.4f32);
        let mut last = f64::NEG_INFINITY;
        for eps in [0.2f32, 0.05, 0.01, 0.0] {
            let v = ssim(&c, &c.mapv(|x| x + eps)).unwrap();
            assert!(v >= last);
            last = v;
        }
        assert!((last - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_a_direct_window_sum() {
        // independent computation: explicit 2-D window weights at one position
        let a = ramp(11, 11).index_axis(ndarray::Axis(2), 0).to_owned();
        let b = a.mapv(|v| (v * 0.7 + 0.1).min(1.0));
        let g: Vec<f64> = (0..11)
            .map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp())
            .collect();
        let norm: f64 = g.iter().sum::<f64>().powi(2);
        let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for y in 0..11 {
            for x in 0..11 {
                let wt = g[y] * g[x] / norm;
                let (p, q) = (a[[y, x]] as f64, b[[y, x]] as f64);
                ma += wt * p;
                mb += wt * q;
                saa += wt * p * p;
                sbb += wt * q * q;
                sab += wt * p * q;
            }
        }
        let (c1, c2) = (1e-4, 9e-4);
        let want = ((2.0 * ma * mb + c1) * (2.0 * (sab - ma * mb) + c2))
            / ((ma * ma + mb * mb + c1) * (saa - ma * ma + sbb - mb * mb + c2));
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn metric_ranges(seed in 0u64..1000, h in 4usize..20, w in 4usize..20) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = Array3::from_shape_fn((h, w, 3), |_| rng.gen::<f32>());
            let b = Array3::from_shape_fn((h, w, 3), |_| rng.gen::<f32>());
            let p = psnr(&a, &b, 1.0).unwrap();
            prop_assert!((0.0..=PSNR_CAP_DB).contains(&p));
            let s = ssim_rgb(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
            prop_assert!((ssim_rgb(&a, &b).unwrap() - ssim_rgb(&b, &a).unwrap()).abs() < 1e-12);
        }
    }
}
