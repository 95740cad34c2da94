//! Image and label containers plus their file and network conversions.
//!
//! Value conventions:
//! * files hold 8-bit samples;
//! * [`ImageTensor`] holds `f32` in `[0, 1]` (used by resizing and metrics);
//! * network tensors hold values in `[-1, 1]`, NCHW.

use std::path::Path;

use image::{GrayImage, RgbImage};
use ndarray::{Array2, Array3, Axis};
use srseg_autograd::{Scalar, Tensor};

use crate::{Error, Result};

/// `height × width × channels`, values in `[0, 1]`.
pub type ImageTensor = Array3<f32>;

/// Class ids `0..=5`, or [`IGNORE_ID`].
pub type SegLabelMap = Array2<u8>;

pub use srseg_autograd::IGNORE_LABEL as IGNORE_ID;

pub fn read_rgb(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)
        .map_err(|e| decode_error(path, e))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| v as f32 / 255.0)
        .collect();
    Ok(Array3::from_shape_vec((h as usize, w as usize, 3), data).expect("rgb buffer size"))
}

/// Reads an 8-bit single-channel label map. Multi-channel files are rejected
/// because silently converting colors to ids would corrupt labels.
pub fn read_label(path: &Path) -> Result<SegLabelMap> {
    let img = image::open(path).map_err(|e| decode_error(path, e))?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                reason: format!(
                    "label must be 8-bit single channel, found {:?}",
                    other.color()
                ),
            })
        }
    };
    let (w, h) = gray.dimensions();
    Ok(
        Array2::from_shape_vec((h as usize, w as usize), gray.into_raw())
            .expect("label buffer size"),
    )
}

/// Rejects ids outside `0..n_classes` other than [`IGNORE_ID`].
pub fn check_label_ids(label: &SegLabelMap, n_classes: usize) -> Result<()> {
    match label
        .iter()
        .find(|&&v| v != IGNORE_ID && v as usize >= n_classes)
    {
        Some(bad) => Err(Error::InvalidLabel(format!(
            "class id {bad} outside 0..{n_classes} (ignore id {IGNORE_ID})"
        ))),
        None => Ok(()),
    }
}

pub fn write_rgb(path: &Path, img: &ImageTensor) -> Result<()> {
    let (h, w, c) = img.dim();
    assert_eq!(c, 3, "write_rgb expects 3 channels");
    let raw: Vec<u8> = img.iter().map(|&v| to_u8(v)).collect();
    let buf = RgbImage::from_raw(w as u32, h as u32, raw).expect("rgb buffer size");
    buf.save(path).map_err(|e| encode_error(path, e))
}

pub fn write_gray(path: &Path, values: &Array2<u8>) -> Result<()> {
    let (h, w) = values.dim();
    let raw: Vec<u8> = values.iter().copied().collect();
    let buf = GrayImage::from_raw(w as u32, h as u32, raw).expect("gray buffer size");
    buf.save(path).map_err(|e| encode_error(path, e))
}

fn decode_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::Decode {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

fn encode_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    }
}

/// Rounds a `[0, 1]` value to the nearest 8-bit level.
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Snaps every sample to the 8-bit grid, as if written to and read from a PNG.
pub fn quantize_u8(img: &ImageTensor) -> ImageTensor {
    img.mapv(|v| to_u8(v) as f32 / 255.0)
}

/// BT.601 luma of an RGB image.
pub fn luma(img: &ImageTensor) -> Array2<f32> {
    let (h, w, c) = img.dim();
    assert_eq!(c, 3, "luma expects RGB");
    Array2::from_shape_fn((h, w), |(y, x)| {
        0.299 * img[[y, x, 0]] + 0.587 * img[[y, x, 1]] + 0.114 * img[[y, x, 2]]
    })
}

/// Stacks `[0, 1]` HWC images into an NCHW network tensor in `[-1, 1]`.
pub fn images_to_tensor<T: Scalar>(images: &[&ImageTensor]) -> Tensor<T> {
    assert!(!images.is_empty(), "empty image batch");
    let (h, w, c) = images[0].dim();
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        assert_eq!(img.dim(), (h, w, c), "images in a batch must share a shape");
        let chw = img.view().permuted_axes([2, 0, 1]);
        data.extend(chw.iter().map(|&v| T::from_f64_lossy(v as f64 * 2.0 - 1.0)));
    }
    Tensor::from_vec(&[images.len(), c, h, w], data)
}

/// Inverse of [`images_to_tensor`]; values are clamped into `[0, 1]`.
pub fn tensor_to_images<T: Scalar>(t: &Tensor<T>) -> Vec<ImageTensor> {
    let &[n, c, h, w] = t.shape() else {
        panic!("tensor_to_images expects NCHW, got {:?}", t.shape());
    };
    let plane = c * h * w;
    (0..n)
        .map(|i| {
            let chw: Vec<f32> = t.data()[i * plane..(i + 1) * plane]
                .iter()
                .map(|&v| ((v.as_f64() as f32 + 1.0) * 0.5).clamp(0.0, 1.0))
                .collect();
            let chw = Array3::from_shape_vec((c, h, w), chw).expect("plane size");
            chw.permuted_axes([1, 2, 0]).as_standard_layout().to_owned()
        })
        .collect()
}

/// `[N, C, H, W]` logits → per-image `H × W × C` arrays.
pub fn logits_to_arrays<T: Scalar>(t: &Tensor<T>) -> Vec<Array3<f32>> {
    let &[n, c, h, w] = t.shape() else {
        panic!("logits_to_arrays expects NCHW, got {:?}", t.shape());
    };
    let plane = c * h * w;
    (0..n)
        .map(|i| {
            let chw: Vec<f32> = t.data()[i * plane..(i + 1) * plane]
                .iter()
                .map(|v| v.as_f64() as f32)
                .collect();
            Array3::from_shape_vec((c, h, w), chw)
                .expect("plane size")
                .permuted_axes([1, 2, 0])
                .as_standard_layout()
                .to_owned()
        })
        .collect()
}

/// Per-pixel argmax over the channel axis of `H × W × C` scores.
pub fn argmax_classes(scores: &Array3<f32>) -> SegLabelMap {
    scores.map_axis(Axis(2), |row| {
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        best as u8
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn network_round_trip_preserves_values() {
        let img =
            Array3::from_shape_fn((3, 4, 3), |(y, x, c)| ((y * 12 + x * 3 + c) as f32) / 35.0);
        let t = images_to_tensor::<f32>(&[&img, &img]);
        assert_eq!(t.shape(), &[2, 3, 3, 4]);
        // Channel-major layout: the second value is pixel (0, 1) of channel 0.
        assert!((t.data()[1] - (img[[0, 1, 0]] * 2.0 - 1.0)).abs() < 1e-7);
        let back = tensor_to_images(&t);
        for b in back {
            for (x, y) in b.iter().zip(img.iter()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn png_round_trip_is_exact_for_quantized_images() {
        let dir = tempfile::tempdir().unwrap();
        let img = quantize_u8(&Array3::from_shape_fn((5, 7, 3), |(y, x, c)| {
            ((y * 31 + x * 7 + c * 3) % 256) as f32 / 255.0
        }));
        let p = dir.path().join("a.png");
        write_rgb(&p, &img).unwrap();
        assert_eq!(read_rgb(&p).unwrap(), img);

        let label = Array2::from_shape_fn((5, 7), |(y, x)| if x > y { 3 } else { IGNORE_ID });
        let q = dir.path().join("l.png");
        write_gray(&q, &label).unwrap();
        assert_eq!(read_label(&q).unwrap(), label);
        assert!(matches!(read_label(&p), Err(Error::Decode { .. })));
    }

    #[test]
    fn non_image_is_a_decode_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        std::fs::write(&p, b"definitely not a png").unwrap();
        assert!(matches!(read_rgb(&p), Err(Error::Decode { .. })));
    }
}
