use crate::graph::{BackwardArgs, Graph, Var};
use crate::{Scalar, Tensor};

/// Per-channel statistics of one training-mode batch-norm call.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, the quantity folded into running estimates.
    pub var: Vec<T>,
}

fn dims(shape: &[usize]) -> (usize, usize, usize) {
    assert_eq!(shape.len(), 4, "batch norm expects NCHW, got {shape:?}");
    (shape[0], shape[1], shape[2] * shape[3])
}

/// Visits every element of channel `c` as `(flat index)`.
fn channel_indices(n: usize, c: usize, ch: usize, hw: usize) -> impl Iterator<Item = usize> {
    (0..n).flat_map(move |i| {
        let start = (i * c + ch) * hw;
        start..start + hw
    })
}

/// Shared affine backward for `y = γ·x̂ + β` given `x̂` per channel.
fn affine_param_grads<T: Scalar>(
    grad: &Tensor<T>,
    xhat: impl Fn(usize, usize) -> T,
    n: usize,
    c: usize,
    hw: usize,
) -> (Vec<T>, Vec<T>) {
    let dy = grad.data();
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    for ch in 0..c {
        for idx in channel_indices(n, c, ch, hw) {
            gg[ch] = gg[ch] + dy[idx] * xhat(idx, ch);
            gb[ch] = gb[ch] + dy[idx];
        }
    }
    (gg, gb)
}

impl<T: Scalar> Graph<T> {
    /// Batch normalization with statistics of the current batch.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> (Var, BatchStats<T>) {
        let xv = self.value(x);
        let (n, c, hw) = dims(xv.shape());
        let m = n * hw;
        assert!(
            m > 1,
            "batch norm in training mode needs more than one value per channel"
        );
        let mf = T::from_usize(m).unwrap();
        let data = xv.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let s: T = channel_indices(n, c, ch, hw).map(|i| data[i]).sum();
            mean[ch] = s / mf;
            let ss: T = channel_indices(n, c, ch, hw)
                .map(|i| (data[i] - mean[ch]) * (data[i] - mean[ch]))
                .sum();
            var[ch] = ss / mf;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut out = xv.clone();
        for (idx, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (idx / hw) % c;
            *v = g[ch] * (*v - mean[ch]) * inv_std[ch] + b[ch];
        }
        let unbiased = var
            .iter()
            .map(|&v| v * mf / T::from_usize(m - 1).unwrap())
            .collect();
        let stats = BatchStats {
            mean: mean.clone(),
            var: unbiased,
        };
        let y = self.push_op(
            out,
            &[x, gamma, beta],
            Box::new(move |args: BackwardArgs<'_, T>| {
                let xd = args.inputs[0].data();
                let gam = args.inputs[1].data();
                let xhat = |idx: usize, ch: usize| (xd[idx] - mean[ch]) * inv_std[ch];
                let (gg, gb) = affine_param_grads(args.grad, xhat, n, c, hw);
                let gx = args.needs[0].then(|| {
                    let dy = args.grad.data();
                    let mut gx = vec![T::zero(); xd.len()];
                    for ch in 0..c {
                        // dx = γ/σ · (dy − mean(dy) − x̂·mean(dy·x̂))
                        let mean_dy = gb[ch] / mf;
                        let mean_dyx = gg[ch] / mf;
                        let k = gam[ch] * inv_std[ch];
                        for idx in channel_indices(n, c, ch, hw) {
                            gx[idx] = k * (dy[idx] - mean_dy - xhat(idx, ch) * mean_dyx);
                        }
                    }
                    Tensor::from_vec(args.inputs[0].shape(), gx)
                });
                vec![
                    gx,
                    args.needs[1].then(|| Tensor::from_vec(&[c], gg)),
                    args.needs[2].then(|| Tensor::from_vec(&[c], gb)),
                ]
            }),
        );
        (y, stats)
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Var {
        let xv = self.value(x);
        let (n, c, hw) = dims(xv.shape());
        assert!(mean.len() == c && var.len() == c, "running statistics size");
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mean = mean.to_vec();
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut out = xv.clone();
        for (idx, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (idx / hw) % c;
            *v = g[ch] * (*v - mean[ch]) * inv_std[ch] + b[ch];
        }
        self.push_op(
            out,
            &[x, gamma, beta],
            Box::new(move |args: BackwardArgs<'_, T>| {
                let xd = args.inputs[0].data();
                let gam = args.inputs[1].data();
                let xhat = |idx: usize, ch: usize| (xd[idx] - mean[ch]) * inv_std[ch];
                let (gg, gb) = affine_param_grads(args.grad, xhat, n, c, hw);
                let gx = args.needs[0].then(|| {
                    let mut gx = args.grad.clone();
                    for (idx, v) in gx.data_mut().iter_mut().enumerate() {
                        let ch = (idx / hw) % c;
                        *v = *v * gam[ch] * inv_std[ch];
                    }
                    gx
                });
                vec![
                    gx,
                    args.needs[1].then(|| Tensor::from_vec(&[c], gg)),
                    args.needs[2].then(|| Tensor::from_vec(&[c], gb)),
                ]
            }),
        )
    }
}
