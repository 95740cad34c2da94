use crate::graph::{BackwardArgs, Graph, Var};
use crate::scalar::gemm;
use crate::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds output rows `oy0..oy1` of one CHW image into a
/// `(C·k·k) × ((oy1 - oy0)·Wo)` patch matrix.
fn im2col_rows<T: Scalar>(img: &[T], g: &Geometry, oy0: usize, oy1: usize, col: &mut [T]) {
    let plane = (oy1 - oy0) * g.wo;
    for c in 0..g.cin {
        let src = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in oy0..oy1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[(oy - oy0) * g.wo..(oy - oy0 + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn im2col<T: Scalar>(img: &[T], g: &Geometry, col: &mut [T]) {
    im2col_rows(img, g, 0, g.ho, col);
}

/// Adjoint of [`im2col`]: scatters patch gradients back into the image.
fn col2im<T: Scalar>(col: &[T], g: &Geometry, img: &mut [T]) {
    let plane = g.ho * g.wo;
    for c in 0..g.cin {
        let dst = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[base + ix as usize] = dst[base + ix as usize] + src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn geometry(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Geometry {
    assert_eq!(x.len(), 4, "conv2d input must be NCHW, got {x:?}");
    assert_eq!(w.len(), 4, "conv2d weight must be OIHW, got {w:?}");
    assert_eq!(
        x[1], w[1],
        "conv2d channel mismatch: input {x:?}, weight {w:?}"
    );
    assert_eq!(w[2], w[3], "conv2d kernels must be square");
    assert!(stride >= 1);
    let k = w[2];
    assert!(
        x[2] + 2 * pad >= k && x[3] + 2 * pad >= k,
        "conv2d kernel {k} larger than padded input {x:?}"
    );
    Geometry {
        cin: x[1],
        h: x[2],
        w: x[3],
        k,
        stride,
        pad,
        ho: (x[2] + 2 * pad - k) / stride + 1,
        wo: (x[3] + 2 * pad - k) / stride + 1,
    }
}

/// Upper bound on patch-matrix elements materialized at once in the forward
/// pass; larger outputs are processed in bands of rows.
const MAX_COL_ELEMS: usize = 1 << 22;

/// Plain convolution forward pass, NCHW input and OIHW weight.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let g = geometry(x.shape(), w.shape(), stride, pad);
    let (n, cout) = (x.shape()[0], w.shape()[0]);
    let plane = g.col_cols();
    let rows = g.col_rows();
    let mut out = vec![T::zero(); n * cout * plane];
    let band = (MAX_COL_ELEMS / (rows * g.wo).max(1)).clamp(1, g.ho);
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * band * g.wo]
    };
    let mut band_out = if band < g.ho {
        vec![T::zero(); cout * band * g.wo]
    } else {
        Vec::new()
    };
    let in_stride = g.cin * g.h * g.w;
    for i in 0..n {
        let img = &x.data()[i * in_stride..(i + 1) * in_stride];
        let dst = &mut out[i * cout * plane..(i + 1) * cout * plane];
        if g.is_pointwise() {
            gemm(cout, rows, plane, w.data(), false, img, false, dst, false);
        } else if band == g.ho {
            im2col(img, &g, &mut col);
            gemm(cout, rows, plane, w.data(), false, &col, false, dst, false);
        } else {
            for oy0 in (0..g.ho).step_by(band) {
                let oy1 = (oy0 + band).min(g.ho);
                let bp = (oy1 - oy0) * g.wo;
                im2col_rows(img, &g, oy0, oy1, &mut col[..rows * bp]);
                gemm(
                    cout,
                    rows,
                    bp,
                    w.data(),
                    false,
                    &col[..rows * bp],
                    false,
                    &mut band_out[..cout * bp],
                    false,
                );
                for o in 0..cout {
                    dst[o * plane + oy0 * g.wo..o * plane + oy1 * g.wo]
                        .copy_from_slice(&band_out[o * bp..(o + 1) * bp]);
                }
            }
        }
        if let Some(b) = b {
            for (o, &bias) in b.data().iter().enumerate() {
                dst[o * plane..(o + 1) * plane]
                    .iter_mut()
                    .for_each(|v| *v = *v + bias);
            }
        }
    }
    Tensor::from_vec(&[n, cout, g.ho, g.wo], out)
}

fn conv2d_backward<T: Scalar>(
    args: &BackwardArgs<'_, T>,
    stride: usize,
    pad: usize,
) -> Vec<Option<Tensor<T>>> {
    let x = args.inputs[0];
    let w = args.inputs[1];
    let g = geometry(x.shape(), w.shape(), stride, pad);
    let (n, cout) = (x.shape()[0], w.shape()[0]);
    let plane = g.col_cols();
    let rows = g.col_rows();
    let in_stride = g.cin * g.h * g.w;
    let dy = args.grad.data();

    let mut gx = args.needs[0].then(|| vec![T::zero(); x.numel()]);
    let mut gw = args.needs[1].then(|| vec![T::zero(); w.numel()]);
    let mut col = vec![T::zero(); if g.is_pointwise() { 0 } else { rows * plane }];
    let mut gcol = vec![
        T::zero();
        if gx.is_some() && !g.is_pointwise() {
            rows * plane
        } else {
            0
        }
    ];

    for i in 0..n {
        let dy_i = &dy[i * cout * plane..(i + 1) * cout * plane];
        if let Some(gw) = gw.as_mut() {
            let img = &x.data()[i * in_stride..(i + 1) * in_stride];
            let patches: &[T] = if g.is_pointwise() {
                img
            } else {
                im2col(img, &g, &mut col);
                &col
            };
            // dW += dY · colᵀ
            gemm(cout, plane, rows, dy_i, false, patches, true, gw, true);
        }
        if let Some(gx) = gx.as_mut() {
            let dst = &mut gx[i * in_stride..(i + 1) * in_stride];
            if g.is_pointwise() {
                gemm(rows, cout, plane, w.data(), true, dy_i, false, dst, true);
            } else {
                // dcol = Wᵀ · dY
                gemm(
                    rows,
                    cout,
                    plane,
                    w.data(),
                    true,
                    dy_i,
                    false,
                    &mut gcol,
                    false,
                );
                col2im(&gcol, &g, dst);
            }
        }
    }

    let mut grads = vec![
        gx.map(|d| Tensor::from_vec(x.shape(), d)),
        gw.map(|d| Tensor::from_vec(w.shape(), d)),
    ];
    if args.inputs.len() == 3 {
        grads.push(args.needs[2].then(|| {
            let mut gb = vec![T::zero(); cout];
            for i in 0..n {
                for (o, acc) in gb.iter_mut().enumerate() {
                    let start = (i * cout + o) * plane;
                    *acc = *acc + dy[start..start + plane].iter().copied().sum();
                }
            }
            Tensor::from_vec(&[cout], gb)
        }));
    }
    grads
}

impl<T: Scalar> Graph<T> {
    /// 2-D convolution with square kernels, zero padding and optional bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let out = conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        );
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push_op(
            out,
            &parents,
            Box::new(move |args: BackwardArgs<'_, T>| conv2d_backward(&args, stride, pad)),
        )
    }
}
