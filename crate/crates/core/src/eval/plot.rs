use std::path::Path;

use image::{Rgb, RgbImage};

use crate::trainer::LogRow;
use crate::{Error, Result};

const W: u32 = 720;
const H: u32 = 420;
const MARGIN: u32 = 40;

type Series = (&'static str, [u8; 3], fn(&LogRow) -> Option<f64>);

const SERIES: [Series; 6] = [
    ("total", [0, 0, 0], |r| Some(r.total)),
    ("mse", [31, 119, 180], |r| Some(r.mse)),
    ("seg", [44, 160, 44], |r| Some(r.seg_masked)),
    ("vgg", [255, 127, 14], |r| Some(r.vgg)),
    ("adv", [148, 103, 189], |r| Some(r.adv)),
    ("d", [214, 39, 40], |r| r.d_loss),
];

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>) {
    let n = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
    }
}

/// Loss curves against step on a log10 axis; non-positive values are skipped.
/// Each series gets a legend swatch in the top-left corner.
pub fn plot_loss_curves(rows: &[LogRow], path: &Path) -> Result<()> {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let grey = Rgb([160, 160, 160]);
    let (left, right, top, bottom) = (MARGIN as f64, (W - 10) as f64, 10.0, (H - MARGIN) as f64);
    line(&mut img, (left, bottom), (right, bottom), grey);
    line(&mut img, (left, top), (left, bottom), grey);

    let logs: Vec<f64> = rows
        .iter()
        .flat_map(|r| SERIES.iter().filter_map(move |s| (s.2)(r)))
        .filter(|v| *v > 0.0 && v.is_finite())
        .map(f64::log10)
        .collect();
    if !logs.is_empty() {
        let lo = logs.iter().copied().fold(f64::INFINITY, f64::min).floor();
        let hi = logs
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
            .ceil()
            .max(lo + 1.0);
        // decade ticks
        for d in lo as i64..=hi as i64 {
            let y = bottom - (d as f64 - lo) / (hi - lo) * (bottom - top);
            line(&mut img, (left - 5.0, y), (left, y), grey);
        }
        let first = rows.first().map_or(0, |r| r.step) as f64;
        let span = (rows.last().map_or(1, |r| r.step) as f64 - first).max(1.0);
        let to_px = |step: u64, v: f64| {
            (
                left + (step as f64 - first) / span * (right - left),
                bottom - (v.log10() - lo) / (hi - lo) * (bottom - top),
            )
        };
        for (k, (_, colour, get)) in SERIES.iter().enumerate() {
            let c = Rgb(*colour);
            let mut prev = None;
            let mut drawn = false;
            for r in rows {
                match get(r).filter(|v| *v > 0.0 && v.is_finite()) {
                    Some(v) => {
                        let p = to_px(r.step, v);
                        line(&mut img, prev.unwrap_or(p), p, c);
                        prev = Some(p);
                        drawn = true;
                    }
                    None => prev = None,
                }
            }
            if drawn {
                let y = 16.0 + 8.0 * k as f64;
                for dy in 0..4 {
                    line(
                        &mut img,
                        (left + 8.0, y + dy as f64),
                        (left + 24.0, y + dy as f64),
                        c,
                    );
                }
            }
        }
    }
    img.save(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: u64, total: f64) -> LogRow {
        LogRow {
            step,
            epoch: 0,
            stage: "warmup".into(),
            lr: 1e-3,
            mse: total,
            vgg: 0.0,
            adv: 0.0,
            seg_masked: 0.0,
            total,
            d_loss: None,
        }
    }

    #[test]
    fn writes_a_png_even_without_rows() {
        let dir = tempfile::tempdir().unwrap();
        for rows in [vec![], vec![row(1, 0.5), row(2, 0.1), row(3, f64::NAN)]] {
            let path = dir.path().join("c.png");
            plot_loss_curves(&rows, &path).unwrap();
            let img = image::open(&path).unwrap();
            assert_eq!((img.width(), img.height()), (W, H));
        }
    }
}
