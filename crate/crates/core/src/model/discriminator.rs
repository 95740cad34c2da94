use serde::{Deserialize, Serialize};
use srseg_autograd::{ParamStore, Scalar, Var};

use super::layers::{batch_norm, conv, linear, Ctx, Init, Mode};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorSpec {
    pub base_width: usize,
    pub max_width: usize,
    pub dense_units: usize,
    /// Side of the square HR crops it scores; fixes the dense input size.
    pub input_size: usize,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec {
            base_width: 64,
            max_width: 512,
            dense_units: 1024,
            input_size: 80,
            leaky_slope: 0.2,
        }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.base_width == 0
            || !self.base_width.is_power_of_two()
            || !self.max_width.is_power_of_two()
        {
            return bad("discriminator widths must be powers of 2".into());
        }
        if self.max_width < self.base_width {
            return bad(format!(
                "max_width {} below base_width {}",
                self.max_width, self.base_width
            ));
        }
        if self.dense_units == 0 {
            return bad("dense_units must be positive".into());
        }
        if self.input_size == 0 {
            return bad("input_size must be positive".into());
        }
        if !(self.leaky_slope.is_finite() && (0.0..1.0).contains(&self.leaky_slope)) {
            return bad(format!("leaky_slope {} outside [0, 1)", self.leaky_slope));
        }
        Ok(())
    }

    /// Output channels of each conv layer, two per width.
    pub fn widths(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut w = self.base_width;
        while w <= self.max_width && w > 0 {
            out.extend([w, w]);
            w *= 2;
        }
        out
    }

    /// Stride of conv layer `i`: 1, 2, 1, 2, ...
    pub fn stride(i: usize) -> usize {
        1 + i % 2
    }

    /// Spatial side after the conv stack.
    pub fn final_side(&self) -> usize {
        (0..self.widths().len()).fold(self.input_size, |s, i| {
            if Self::stride(i) == 2 {
                s.div_ceil(2)
            } else {
                s
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T: Scalar = f32> {
    pub spec: DiscriminatorSpec,
    pub params: ParamStore<T>,
}

pub fn build_discriminator(spec: &DiscriminatorSpec, seed: u64) -> Result<Discriminator> {
    spec.validate()?;
    let mut store = ParamStore::new();
    let mut init = Init::new(seed);
    let mut cin = 3;
    for (i, &w) in spec.widths().iter().enumerate() {
        init.conv(&mut store, &format!("disc.conv{i}"), cin, w, 3);
        if i > 0 {
            Init::batch_norm(&mut store, &format!("disc.bn{i}"), w);
        }
        cin = w;
    }
    let side = spec.final_side();
    init.linear(
        &mut store,
        "disc.dense1",
        cin * side * side,
        spec.dense_units,
    );
    init.linear(&mut store, "disc.dense2", spec.dense_units, 1);
    Ok(Discriminator {
        spec: spec.clone(),
        params: store,
    })
}

impl<T: Scalar> Discriminator<T> {
    pub fn from_params(spec: DiscriminatorSpec, params: ParamStore<T>) -> Result<Self> {
        spec.validate()?;
        Ok(Discriminator { spec, params })
    }

    pub fn cast<U: Scalar>(&self) -> Discriminator<U> {
        Discriminator {
            spec: self.spec.clone(),
            params: self.params.cast(),
        }
    }

    /// Probability that each image of `[N, 3, S, S]` is a real HR image; `[N, 1]`.
    pub fn forward(&self, ctx: &mut Ctx<T>, x: Var, mode: Mode) -> Result<Var> {
        let shape = ctx.graph.shape(x).to_vec();
        let s = self.spec.input_size;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != s || shape[3] != s {
            return Err(Error::ShapeMismatch(format!(
                "discriminator expects [N, 3, {s}, {s}], got {shape:?}"
            )));
        }
        let p = &self.params;
        let slope = T::from_f64_lossy(self.spec.leaky_slope);
        let mut h = x;
        for i in 0..self.spec.widths().len() {
            h = conv(
                ctx,
                p,
                &format!("disc.conv{i}"),
                h,
                DiscriminatorSpec::stride(i),
                mode,
            );
            if i > 0 {
                h = batch_norm(ctx, p, &format!("disc.bn{i}"), h, mode);
            }
            h = ctx.graph.leaky_relu(h, slope);
        }
        let flat = ctx.graph.shape(h)[1..].iter().product::<usize>();
        let h = ctx.graph.reshape(h, &[shape[0], flat]);
        let h = linear(ctx, p, "disc.dense1", h, mode);
        let h = ctx.graph.leaky_relu(h, slope);
        let h = linear(ctx, p, "disc.dense2", h, mode);
        Ok(ctx.graph.sigmoid(h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use srseg_autograd::{Graph, Tensor};

    fn small() -> DiscriminatorSpec {
        DiscriminatorSpec {
            base_width: 8,
            max_width: 32,
            dense_units: 16,
            input_size: 24,
            leaky_slope: 0.2,
        }
    }

    #[test]
    fn default_widths_double_up_to_512() {
        let spec = DiscriminatorSpec::default();
        assert_eq!(spec.widths(), vec![64, 64, 128, 128, 256, 256, 512, 512]);
        assert_eq!(spec.final_side(), 5);
        let strides: Vec<usize> = (0..8).map(DiscriminatorSpec::stride).collect();
        assert_eq!(strides, vec![1, 2, 1, 2, 1, 2, 1, 2]);
    }

    #[test]
    fn built_model_has_the_spec_widths() {
        let d = build_discriminator(&small(), 0).unwrap();
        let widths: Vec<usize> = (0..6)
            .map(|i| {
                d.params
                    .param(&format!("disc.conv{i}.weight"))
                    .unwrap()
                    .shape()[0]
            })
            .collect();
        assert_eq!(widths, vec![8, 8, 16, 16, 32, 32]);
        assert!(d.params.param("disc.bn0.weight").is_none());
        assert_eq!(
            d.params.param("disc.dense1.weight").unwrap().shape(),
            &[16, 32 * 3 * 3]
        );
    }

    #[test]
    fn one_probability_per_image() {
        let d = build_discriminator(&small(), 1).unwrap();
        for mode in [Mode::EVAL, Mode::FROZEN_TRAIN] {
            let mut g = Graph::new();
            let mut ctx = Ctx::new(&mut g);
            let data = (0..3 * 3 * 24 * 24)
                .map(|i| ((i % 17) as f32 / 8.0) - 1.0)
                .collect();
            let x = ctx.graph.constant(Tensor::from_vec(&[3, 3, 24, 24], data));
            let p = d.forward(&mut ctx, x, mode).unwrap();
            let v = g.value(p);
            assert_eq!(v.shape(), &[3, 1]);
            assert!(v.data().iter().all(|&s| s > 0.0 && s < 1.0));
        }
    }

    #[test]
    fn wrong_size_is_rejected() {
        let d = build_discriminator(&small(), 1).unwrap();
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g);
        let x = ctx.graph.constant(Tensor::zeros(&[1, 3, 16, 16]));
        assert!(matches!(
            d.forward(&mut ctx, x, Mode::EVAL),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn invalid_specs() {
        for bad in [
            DiscriminatorSpec {
                base_width: 48,
                ..small()
            },
            DiscriminatorSpec {
                max_width: 4,
                ..small()
            },
            DiscriminatorSpec {
                dense_units: 0,
                ..small()
            },
        ] {
            assert!(matches!(
                build_discriminator(&bad, 0),
                Err(Error::InvalidSpec(_))
            ));
        }
    }
}
