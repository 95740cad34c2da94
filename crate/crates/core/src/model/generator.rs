use ndarray::Array3;
use serde::{Deserialize, Serialize};
use srseg_autograd::{Graph, ParamStore, Scalar, Var};

use super::layers::{batch_norm, conv, Ctx, Init, Mode};
use crate::data::derive_seed;
use crate::pixels::{images_to_tensor, logits_to_arrays, tensor_to_images, ImageTensor};
use crate::{Error, Result};

/// Name prefix shared by every segmentation-head layer.
pub const SEG_PREFIX: &str = "gen.seg.";
/// Smallest LR side the generator accepts.
pub const MIN_LR_SIDE: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n_res_blocks: usize,
    pub trunk_width: usize,
    pub scale: usize,
    pub n_classes: usize,
    pub leaky_slope: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            n_res_blocks: 16,
            trunk_width: 64,
            scale: 4,
            n_classes: 6,
            leaky_slope: 0.2,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.scale < 2 || !self.scale.is_power_of_two() {
            return bad(format!("scale {} is not a power of 2", self.scale));
        }
        if self.n_res_blocks == 0 {
            return bad("n_res_blocks must be at least 1".into());
        }
        if self.trunk_width == 0 || self.n_classes == 0 {
            return bad("trunk_width and n_classes must be positive".into());
        }
        if !(self.leaky_slope.is_finite() && (0.0..1.0).contains(&self.leaky_slope)) {
            return bad(format!("leaky_slope {} outside [0, 1)", self.leaky_slope));
        }
        Ok(())
    }

    pub fn upsample_stages(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }
}

/// Result of one forward pass as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorVars {
    /// `[N, 3, s·H, s·W]` in `[-1, 1]`.
    pub sr: Var,
    /// `[N, n_classes, H, W]` logits.
    pub seg_logits: Option<Var>,
}

/// One image's inference result.
#[derive(Clone, Debug)]
pub struct GeneratorOutput {
    pub sr: ImageTensor,
    /// `H × W × n_classes`, present only with the segmentation head.
    pub seg_logits: Option<Array3<f32>>,
}

/// Shared-trunk generator: SR branch plus optional segmentation head.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T: Scalar = f32> {
    pub spec: GeneratorSpec,
    pub params: ParamStore<T>,
    with_seg_head: bool,
}

pub fn build_generator(spec: &GeneratorSpec, with_seg_head: bool, seed: u64) -> Result<Generator> {
    spec.validate()?;
    let w = spec.trunk_width;
    let mut store = ParamStore::new();
    let mut init = Init::new(derive_seed(seed, &[0]));
    init.conv(&mut store, "gen.head.conv", 3, w, 9);
    for i in 0..spec.n_res_blocks {
        let block = format!("gen.trunk.block{i:02}");
        init.conv(&mut store, &format!("{block}.conv1"), w, w, 3);
        Init::batch_norm(&mut store, &format!("{block}.bn1"), w);
        init.conv(&mut store, &format!("{block}.conv2"), w, w, 3);
        Init::batch_norm(&mut store, &format!("{block}.bn2"), w);
    }
    init.conv(&mut store, "gen.fuse.conv", 2 * w, w, 1);
    for j in 0..spec.upsample_stages() {
        init.conv(&mut store, &format!("gen.up{j}.conv"), w, 4 * w, 3);
    }
    init.conv(&mut store, "gen.out.conv", w, 3, 9);
    if with_seg_head {
        // separate stream, so shared weights do not depend on the head
        let mut head = Init::new(derive_seed(seed, &[1]));
        head.conv(&mut store, "gen.seg.conv1", w, w, 3);
        head.conv(&mut store, "gen.seg.conv2", w, spec.n_classes, 1);
    }
    Ok(Generator {
        spec: spec.clone(),
        params: store,
        with_seg_head,
    })
}

/// conv → BN → LReLU → conv → BN → LReLU, plus the identity skip.
pub(crate) fn residual_block<T: Scalar>(
    ctx: &mut Ctx<T>,
    p: &ParamStore<T>,
    block: &str,
    x: Var,
    mode: Mode,
    slope: T,
) -> Var {
    let mut y = x;
    for k in 1..=2 {
        y = conv(ctx, p, &format!("{block}.conv{k}"), y, 1, mode);
        y = batch_norm(ctx, p, &format!("{block}.bn{k}"), y, mode);
        y = ctx.graph.leaky_relu(y, slope);
    }
    ctx.graph.add(x, y)
}

impl<T: Scalar> Generator<T> {
    /// Wraps stored weights; the head is present iff its weights are.
    pub fn from_params(spec: GeneratorSpec, params: ParamStore<T>) -> Result<Self> {
        spec.validate()?;
        let with_seg_head = params.param_names().any(|n| n.starts_with(SEG_PREFIX));
        Ok(Generator {
            spec,
            params,
            with_seg_head,
        })
    }

    pub fn has_seg_head(&self) -> bool {
        self.with_seg_head
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        Generator {
            spec: self.spec.clone(),
            params: self.params.cast(),
            with_seg_head: self.with_seg_head,
        }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let ok =
            shape.len() == 4 && shape[1] == 3 && shape[2] >= MIN_LR_SIDE && shape[3] >= MIN_LR_SIDE;
        if ok && shape[0] > 0 {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "generator expects [N, 3, H, W] with H, W >= {MIN_LR_SIDE}, got {shape:?}"
            )))
        }
    }

    /// Builds the forward pass. `with_seg` runs the head when attached.
    pub fn forward(
        &self,
        ctx: &mut Ctx<T>,
        lr: Var,
        mode: Mode,
        with_seg: bool,
    ) -> Result<GeneratorVars> {
        self.check_input(ctx.graph.shape(lr))?;
        let p = &self.params;
        let slope = T::from_f64_lossy(self.spec.leaky_slope);

        let head = conv(ctx, p, "gen.head.conv", lr, 1, mode);
        let head = ctx.graph.leaky_relu(head, slope);
        let mut x = head;
        for i in 0..self.spec.n_res_blocks {
            x = residual_block(ctx, p, &format!("gen.trunk.block{i:02}"), x, mode, slope);
        }
        let cat = ctx.graph.concat_channels(x, head);
        let shared = conv(ctx, p, "gen.fuse.conv", cat, 1, mode);

        let mut up = shared;
        for j in 0..self.spec.upsample_stages() {
            up = conv(ctx, p, &format!("gen.up{j}.conv"), up, 1, mode);
            up = ctx.graph.pixel_shuffle(up, 2);
            up = ctx.graph.leaky_relu(up, slope);
        }
        let out = conv(ctx, p, "gen.out.conv", up, 1, mode);
        let sr = ctx.graph.tanh(out);

        let seg_logits = (with_seg && self.with_seg_head).then(|| {
            let s = conv(ctx, p, "gen.seg.conv1", shared, 1, mode);
            let s = ctx.graph.leaky_relu(s, slope);
            conv(ctx, p, "gen.seg.conv2", s, 1, mode)
        });
        Ok(GeneratorVars { sr, seg_logits })
    }
}

impl Generator<f32> {
    /// Copy without the segmentation head; shared weights are untouched.
    pub fn strip_seg_head(&self) -> Generator<f32> {
        Generator {
            spec: self.spec.clone(),
            params: self.params.without_prefix(SEG_PREFIX),
            with_seg_head: false,
        }
    }

    /// Evaluation-mode forward of one `[0, 1]` image.
    pub fn infer(&self, lr: &ImageTensor) -> Result<GeneratorOutput> {
        Ok(self.infer_traced(lr)?.0)
    }

    /// Like [`Generator::infer`], also returning executed layer names.
    pub fn infer_traced(&self, lr: &ImageTensor) -> Result<(GeneratorOutput, Vec<String>)> {
        let mut graph = Graph::new();
        let mut ctx = Ctx::traced(&mut graph);
        let x = ctx.graph.constant(images_to_tensor(&[lr]));
        let vars = self.forward(&mut ctx, x, Mode::EVAL, true)?;
        let trace = ctx.take_trace();
        let sr = tensor_to_images(graph.value(vars.sr)).remove(0);
        let seg_logits = vars
            .seg_logits
            .map(|v| logits_to_arrays(graph.value(v)).remove(0));
        Ok((GeneratorOutput { sr, seg_logits }, trace))
    }
}
