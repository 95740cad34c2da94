use crate::graph::{BackwardArgs, Graph, Var};
use crate::{Scalar, Tensor};

impl<T: Scalar> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push_op(
            out,
            &[a, b],
            Box::new(|args: BackwardArgs<'_, T>| {
                vec![Some(args.grad.clone()), Some(args.grad.clone())]
            }),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push_op(
            out,
            &[a, b],
            Box::new(|args: BackwardArgs<'_, T>| {
                vec![Some(args.grad.clone()), Some(args.grad.map(|g| -g))]
            }),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push_op(
            out,
            &[a, b],
            Box::new(|args: BackwardArgs<'_, T>| {
                let ga = args.needs[0].then(|| args.grad.zip_map(args.inputs[1], |g, y| g * y));
                let gb = args.needs[1].then(|| args.grad.zip_map(args.inputs[0], |g, x| g * x));
                vec![ga, gb]
            }),
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push_op(
            out,
            &[a],
            Box::new(|args: BackwardArgs<'_, T>| {
                vec![Some(Tensor::full(args.inputs[0].shape(), args.grad.item()))]
            }),
        )
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push_op(
            out,
            &[a],
            Box::new(move |args: BackwardArgs<'_, T>| vec![Some(args.grad.map(|g| g * factor))]),
        )
    }

    /// `Σ wᵢ·termsᵢ` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        assert!(!terms.is_empty(), "weighted_sum of nothing");
        let mut total = T::zero();
        for &(v, w) in terms {
            let value = self.value(v);
            assert_eq!(value.numel(), 1, "weighted_sum expects scalars");
            total = total + w * value.item();
        }
        let weights: Vec<T> = terms.iter().map(|t| t.1).collect();
        let parents: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push_op(
            Tensor::scalar(total),
            &parents,
            Box::new(move |args: BackwardArgs<'_, T>| {
                let g = args.grad.item();
                args.inputs
                    .iter()
                    .zip(&weights)
                    .map(|(input, &w)| Some(Tensor::full(input.shape(), g * w)))
                    .collect()
            }),
        )
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let out = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { x * slope });
        self.push_op(
            out,
            &[a],
            Box::new(move |args: BackwardArgs<'_, T>| {
                let gx =
                    args.grad.zip_map(
                        args.inputs[0],
                        |g, x| if x > T::zero() { g } else { g * slope },
                    );
                vec![Some(gx)]
            }),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, T::zero())
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(T::tanh);
        self.push_op(
            out,
            &[a],
            Box::new(|args: BackwardArgs<'_, T>| {
                vec![Some(
                    args.grad.zip_map(args.out, |g, y| g * (T::one() - y * y)),
                )]
            }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push_op(
            out,
            &[a],
            Box::new(|args: BackwardArgs<'_, T>| {
                vec![Some(
                    args.grad.zip_map(args.out, |g, y| g * y * (T::one() - y)),
                )]
            }),
        )
    }

    /// Per-channel `x·scale[c] + shift[c]` with constant coefficients, NCHW.
    pub fn channel_affine(&mut self, a: Var, scale: &[T], shift: &[T]) -> Var {
        let x = self.value(a);
        let shape = x.shape().to_vec();
        assert_eq!(shape.len(), 4, "channel_affine expects NCHW");
        let (c, hw) = (shape[1], shape[2] * shape[3]);
        assert!(
            scale.len() == c && shift.len() == c,
            "channel_affine coefficient count"
        );
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (i / hw) % c;
            *v = *v * scale[ch] + shift[ch];
        }
        let scale = scale.to_vec();
        self.push_op(
            out,
            &[a],
            Box::new(move |args: BackwardArgs<'_, T>| {
                let mut g = args.grad.clone();
                for (i, v) in g.data_mut().iter_mut().enumerate() {
                    *v = *v * scale[(i / hw) % c];
                }
                vec![Some(g)]
            }),
        )
    }
}
