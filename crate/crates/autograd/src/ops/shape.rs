use crate::graph::{BackwardArgs, Graph, Var};
use crate::scalar::gemm;
use crate::{Scalar, Tensor};

impl<T: Scalar> Graph<T> {
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshape(shape);
        self.push_op(
            out,
            &[a],
            Box::new(|args: BackwardArgs<'_, T>| {
                vec![Some(args.grad.clone().reshape(args.inputs[0].shape()))]
            }),
        )
    }

    /// Concatenates two NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape().to_vec(), bv.shape().to_vec());
        assert!(
            sa.len() == 4 && sb.len() == 4 && sa[0] == sb[0] && sa[2..] == sb[2..],
            "concat_channels: incompatible shapes {sa:?} and {sb:?}"
        );
        let n = sa[0];
        let (ca, cb, hw) = (sa[1], sb[1], sa[2] * sa[3]);
        let mut out = Vec::with_capacity(av.numel() + bv.numel());
        for i in 0..n {
            out.extend_from_slice(&av.data()[i * ca * hw..(i + 1) * ca * hw]);
            out.extend_from_slice(&bv.data()[i * cb * hw..(i + 1) * cb * hw]);
        }
        let out = Tensor::from_vec(&[n, ca + cb, sa[2], sa[3]], out);
        self.push_op(
            out,
            &[a, b],
            Box::new(move |args: BackwardArgs<'_, T>| {
                let g = args.grad.data();
                let mut ga = Vec::with_capacity(n * ca * hw);
                let mut gb = Vec::with_capacity(n * cb * hw);
                for i in 0..n {
                    let base = i * (ca + cb) * hw;
                    ga.extend_from_slice(&g[base..base + ca * hw]);
                    gb.extend_from_slice(&g[base + ca * hw..base + (ca + cb) * hw]);
                }
                vec![
                    Some(Tensor::from_vec(args.inputs[0].shape(), ga)),
                    Some(Tensor::from_vec(args.inputs[1].shape(), gb)),
                ]
            }),
        )
    }

    /// Depth-to-space: `[N, C·r², H, W] → [N, C, H·r, W·r]`.
    ///
    /// Output pixel `(c, y·r+i, x·r+j)` reads input channel `c·r² + i·r + j`.
    pub fn pixel_shuffle(&mut self, a: Var, r: usize) -> Var {
        let shape = self.value(a).shape().to_vec();
        assert_eq!(shape.len(), 4, "pixel_shuffle expects NCHW");
        assert_eq!(
            shape[1] % (r * r),
            0,
            "pixel_shuffle: channels not divisible by r²"
        );
        let (n, c, h, w) = (shape[0], shape[1] / (r * r), shape[2], shape[3]);
        let index = move |i: usize, ch: usize, y: usize, x: usize| {
            // (output flat index, input flat index)
            let (yi, xi) = (y / r, x / r);
            let sub = (y % r) * r + (x % r);
            let src = ((i * c * r * r + ch * r * r + sub) * h + yi) * w + xi;
            let dst = ((i * c + ch) * h * r + y) * w * r + x;
            (dst, src)
        };
        let src = self.value(a).data();
        let mut out = vec![T::zero(); src.len()];
        for i in 0..n {
            for ch in 0..c {
                for y in 0..h * r {
                    for x in 0..w * r {
                        let (d, s) = index(i, ch, y, x);
                        out[d] = src[s];
                    }
                }
            }
        }
        let out = Tensor::from_vec(&[n, c, h * r, w * r], out);
        self.push_op(
            out,
            &[a],
            Box::new(move |args: BackwardArgs<'_, T>| {
                let g = args.grad.data();
                let mut gx = vec![T::zero(); g.len()];
                for i in 0..n {
                    for ch in 0..c {
                        for y in 0..h * r {
                            for x in 0..w * r {
                                let (d, s) = index(i, ch, y, x);
                                gx[s] = g[d];
                            }
                        }
                    }
                }
                vec![Some(Tensor::from_vec(args.inputs[0].shape(), gx))]
            }),
        )
    }

    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, a: Var) -> Var {
        let xv = self.value(a);
        let shape = xv.shape().to_vec();
        assert_eq!(shape.len(), 4, "max_pool2 expects NCHW");
        let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
        let (ho, wo) = (h / 2, w / 2);
        let src = xv.data();
        let mut out = Vec::with_capacity(planes * ho * wo);
        let mut argmax = Vec::with_capacity(planes * ho * wo);
        for p in 0..planes {
            for y in 0..ho {
                for x in 0..wo {
                    let mut best = (p * h + 2 * y) * w + 2 * x;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (p * h + 2 * y + dy) * w + 2 * x + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::from_vec(&[shape[0], shape[1], ho, wo], out);
        self.push_op(
            out,
            &[a],
            Box::new(move |args: BackwardArgs<'_, T>| {
                let mut gx = Tensor::zeros(args.inputs[0].shape());
                let gd = gx.data_mut();
                for (&src, &g) in argmax.iter().zip(args.grad.data()) {
                    gd[src] = gd[src] + g;
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Fully connected layer: `x [N, in] · wᵀ [in, out] + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(xv.shape().len(), 2, "linear expects [N, features]");
        let (n, fin) = (xv.shape()[0], xv.shape()[1]);
        assert_eq!(
            wv.shape(),
            &[wv.shape()[0], fin],
            "linear weight must be [out, in]"
        );
        let fout = wv.shape()[0];
        let mut out = vec![T::zero(); n * fout];
        gemm(
            n,
            fin,
            fout,
            xv.data(),
            false,
            wv.data(),
            true,
            &mut out,
            false,
        );
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.chunks_mut(fout) {
                row.iter_mut().zip(bd).for_each(|(v, &bias)| *v = *v + bias);
            }
        }
        let mut parents = vec![x, w];
        parents.extend(b);
        self.push_op(
            Tensor::from_vec(&[n, fout], out),
            &parents,
            Box::new(move |args: BackwardArgs<'_, T>| {
                let dy = args.grad.data();
                let gx = args.needs[0].then(|| {
                    let mut gx = vec![T::zero(); n * fin];
                    gemm(
                        n,
                        fout,
                        fin,
                        dy,
                        false,
                        args.inputs[1].data(),
                        false,
                        &mut gx,
                        false,
                    );
                    Tensor::from_vec(&[n, fin], gx)
                });
                let gw = args.needs[1].then(|| {
                    let mut gw = vec![T::zero(); fout * fin];
                    gemm(
                        fout,
                        n,
                        fin,
                        dy,
                        true,
                        args.inputs[0].data(),
                        false,
                        &mut gw,
                        false,
                    );
                    Tensor::from_vec(&[fout, fin], gw)
                });
                let mut grads = vec![gx, gw];
                if args.inputs.len() == 3 {
                    grads.push(args.needs[2].then(|| {
                        let mut gb = vec![T::zero(); fout];
                        for row in dy.chunks(fout) {
                            gb.iter_mut().zip(row).for_each(|(a, &g)| *a = *a + g);
                        }
                        Tensor::from_vec(&[fout], gb)
                    }));
                }
                grads
            }),
        )
    }
}
