use crate::graph::{BackwardArgs, Graph, Var};
use crate::{Scalar, Tensor};

/// Label value excluded from every segmentation loss.
pub const IGNORE_LABEL: u8 = 255;

impl<T: Scalar> Graph<T> {
    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mse shape mismatch");
        let n = T::from_usize(av.numel().max(1)).unwrap();
        let total: T = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        self.push_op(
            Tensor::scalar(total / n),
            &[a, b],
            Box::new(move |args: BackwardArgs<'_, T>| {
                let k = args.grad.item() * T::from_f64_lossy(2.0) / n;
                let diff = args.inputs[0].zip_map(args.inputs[1], |x, y| (x - y) * k);
                let gb = args.needs[1].then(|| diff.map(|v| -v));
                vec![Some(diff), gb]
            }),
        )
    }

    /// Softmax cross-entropy over the channel axis of `[N, C, H, W]` logits,
    /// averaged over pixels where `mask == 1` and the label is not
    /// [`IGNORE_LABEL`]. With no such pixel the loss is 0.
    pub fn masked_cross_entropy(&mut self, logits: Var, labels: &[u8], mask: &[u8]) -> Var {
        let lv = self.value(logits);
        let shape = lv.shape().to_vec();
        assert_eq!(shape.len(), 4, "masked_cross_entropy expects NCHW logits");
        let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
        assert_eq!(labels.len(), n * hw, "label count mismatch");
        assert_eq!(mask.len(), n * hw, "mask count mismatch");
        let data = lv.data();

        let active: Vec<usize> = (0..n * hw)
            .filter(|&p| mask[p] == 1 && labels[p] != IGNORE_LABEL)
            .collect();
        let count = active.len();
        let at = move |p: usize, k: usize| {
            let (i, s) = (p / hw, p % hw);
            (i * c + k) * hw + s
        };
        let mut total = T::zero();
        for &p in &active {
            let label = labels[p] as usize;
            assert!(label < c, "label {label} outside {c} classes");
            let max = (0..c)
                .map(|k| data[at(p, k)])
                .fold(T::neg_infinity(), T::max);
            let lse = max + (0..c).map(|k| (data[at(p, k)] - max).exp()).sum::<T>().ln();
            total = total + lse - data[at(p, label)];
        }
        let value = if count == 0 {
            T::zero()
        } else {
            total / T::from_usize(count).unwrap()
        };
        let labels = labels.to_vec();
        self.push_op(
            Tensor::scalar(value),
            &[logits],
            Box::new(move |args: BackwardArgs<'_, T>| {
                let x = args.inputs[0].data();
                let mut gx = Tensor::zeros(args.inputs[0].shape());
                if count == 0 {
                    return vec![Some(gx)];
                }
                let k0 = args.grad.item() / T::from_usize(count).unwrap();
                let gd = gx.data_mut();
                for &p in &active {
                    let max = (0..c).map(|k| x[at(p, k)]).fold(T::neg_infinity(), T::max);
                    let z: T = (0..c).map(|k| (x[at(p, k)] - max).exp()).sum();
                    for k in 0..c {
                        let soft = (x[at(p, k)] - max).exp() / z;
                        let target = if k == labels[p] as usize {
                            T::one()
                        } else {
                            T::zero()
                        };
                        gd[at(p, k)] = k0 * (soft - target);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// `mean(−ln clamp(p, eps, 1−eps))`.
    pub fn neg_log_mean(&mut self, p: Var, eps: T) -> Var {
        self.log_loss(p, eps, false)
    }

    /// `mean(−ln(1 − clamp(p, eps, 1−eps)))`.
    pub fn neg_log1m_mean(&mut self, p: Var, eps: T) -> Var {
        self.log_loss(p, eps, true)
    }

    fn log_loss(&mut self, p: Var, eps: T, complement: bool) -> Var {
        let pv = self.value(p);
        let n = T::from_usize(pv.numel().max(1)).unwrap();
        let hi = T::one() - eps;
        let arg = move |v: T| {
            let c = v.max(eps).min(hi);
            if complement {
                T::one() - c
            } else {
                c
            }
        };
        let total: T = pv.data().iter().map(|&v| -arg(v).ln()).sum();
        self.push_op(
            Tensor::scalar(total / n),
            &[p],
            Box::new(move |args: BackwardArgs<'_, T>| {
                let g = args.grad.item() / n;
                let gx = args.inputs[0].map(|v| {
                    if v < eps || v > hi {
                        T::zero()
                    } else if complement {
                        g / (T::one() - v)
                    } else {
                        -g / v
                    }
                });
                vec![Some(gx)]
            }),
        )
    }
}
