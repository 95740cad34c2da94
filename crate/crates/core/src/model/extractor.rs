//! Frozen VGG16-style feature extractor for the perceptual loss.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use srseg_autograd::{Graph, ParamStore, Scalar, Tensor, Var};

use super::layers::{Ctx, Init};
use crate::tensor_io::{decode, encode};
use crate::{Error, Result};

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// VGG16 convolutions in order; `None` marks a 2×2 max pool.
const VGG16: [Option<(&str, usize)>; 16] = [
    Some(("conv1_1", 64)),
    Some(("conv1_2", 64)),
    None,
    Some(("conv2_1", 128)),
    Some(("conv2_2", 128)),
    None,
    Some(("conv3_1", 256)),
    Some(("conv3_2", 256)),
    Some(("conv3_3", 256)),
    None,
    Some(("conv4_1", 512)),
    Some(("conv4_2", 512)),
    Some(("conv4_3", 512)),
    None,
    Some(("conv5_1", 512)),
    Some(("conv5_2", 512)),
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureExtractorSpec {
    /// Activation whose output is compared, e.g. `relu4_1`.
    pub layer_tag: String,
    pub n_feature_maps: usize,
    pub frozen: bool,
    /// Safetensors file with `vgg.<conv>.weight|bias`. Without one the
    /// network gets seeded He-normal weights.
    pub weights: Option<PathBuf>,
    pub seed: u64,
}

impl Default for FeatureExtractorSpec {
    fn default() -> Self {
        FeatureExtractorSpec {
            layer_tag: "relu4_1".into(),
            n_feature_maps: 512,
            frozen: true,
            weights: None,
            seed: 0x5EED,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExtractorLayer {
    /// 3×3 convolution followed by ReLU.
    Conv {
        name: String,
        cin: usize,
        cout: usize,
    },
    MaxPool,
}

/// Conv/pool stack evaluated with constant weights.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor<T: Scalar = f32> {
    layers: Vec<ExtractorLayer>,
    params: ParamStore<T>,
    /// Map `[-1, 1]` input to ImageNet-normalized statistics first.
    normalize: bool,
}

fn vgg_layers(tag: &str) -> Result<Vec<ExtractorLayer>> {
    let conv_name = tag
        .strip_prefix("relu")
        .map(|rest| format!("conv{rest}"))
        .ok_or_else(|| Error::InvalidSpec(format!("layer tag `{tag}` is not a relu layer")))?;
    let mut layers = Vec::new();
    let mut cin = 3;
    for entry in VGG16 {
        match entry {
            None => layers.push(ExtractorLayer::MaxPool),
            Some((name, cout)) => {
                layers.push(ExtractorLayer::Conv {
                    name: format!("vgg.{name}"),
                    cin,
                    cout,
                });
                cin = cout;
                if name == conv_name {
                    return Ok(layers);
                }
            }
        }
    }
    Err(Error::InvalidSpec(format!("unknown layer tag `{tag}`")))
}

fn load_weights(path: &Path, layers: &[ExtractorLayer]) -> Result<ParamStore<f32>> {
    let unavailable =
        |reason: String| Error::ExtractorUnavailable(format!("{}: {reason}", path.display()));
    let bytes = fs::read(path).map_err(|e| unavailable(e.to_string()))?;
    let mut tensors = decode(&bytes).map_err(unavailable)?;
    let mut store = ParamStore::new();
    for layer in layers {
        let ExtractorLayer::Conv { name, cin, cout } = layer else {
            continue;
        };
        for (suffix, shape) in [("weight", vec![*cout, *cin, 3, 3]), ("bias", vec![*cout])] {
            let key = format!("{name}.{suffix}");
            let t = tensors
                .remove(&key)
                .ok_or_else(|| unavailable(format!("no tensor {key}")))?;
            if t.shape() != shape.as_slice() {
                return Err(unavailable(format!(
                    "{key} is {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            store.insert_param(key, t);
        }
    }
    Ok(store)
}

pub fn build_extractor(spec: &FeatureExtractorSpec) -> Result<FeatureExtractor> {
    if !spec.frozen {
        return Err(Error::InvalidSpec(
            "the perceptual feature extractor must be frozen".into(),
        ));
    }
    let layers = vgg_layers(&spec.layer_tag)?;
    let out = match layers.last() {
        Some(ExtractorLayer::Conv { cout, .. }) => *cout,
        _ => unreachable!("stack ends at a conv"),
    };
    if out != spec.n_feature_maps {
        return Err(Error::InvalidSpec(format!(
            "{} has {out} feature maps, spec says {}",
            spec.layer_tag, spec.n_feature_maps
        )));
    }
    let params = match &spec.weights {
        Some(path) => load_weights(path, &layers)?,
        None => {
            let mut store = ParamStore::new();
            let mut init = Init::new(spec.seed);
            for layer in &layers {
                if let ExtractorLayer::Conv { name, cin, cout } = layer {
                    init.conv_he(&mut store, name, *cin, *cout, 3);
                }
            }
            store
        }
    };
    Ok(FeatureExtractor {
        layers,
        params,
        normalize: true,
    })
}

impl<T: Scalar> FeatureExtractor<T> {
    /// Arbitrary conv/pool stack; weights must be present for every conv.
    pub fn from_layers(
        layers: Vec<ExtractorLayer>,
        params: ParamStore<T>,
        normalize: bool,
    ) -> Result<Self> {
        for layer in &layers {
            if let ExtractorLayer::Conv { name, cin, cout } = layer {
                let ok = params
                    .param(&format!("{name}.weight"))
                    .map(|t| t.shape() == [*cout, *cin, 3, 3])
                    == Some(true)
                    && params
                        .param(&format!("{name}.bias"))
                        .map(|t| t.shape() == [*cout])
                        == Some(true);
                if !ok {
                    return Err(Error::InvalidSpec(format!(
                        "missing or misshaped weights for {name}"
                    )));
                }
            }
        }
        Ok(FeatureExtractor {
            layers,
            params,
            normalize,
        })
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn layers(&self) -> &[ExtractorLayer] {
        &self.layers
    }

    pub fn out_channels(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                ExtractorLayer::Conv { cout, .. } => Some(*cout),
                ExtractorLayer::MaxPool => None,
            })
            .unwrap_or(3)
    }

    pub fn cast<U: Scalar>(&self) -> FeatureExtractor<U> {
        FeatureExtractor {
            layers: self.layers.clone(),
            params: self.params.cast(),
            normalize: self.normalize,
        }
    }

    /// Features of `[N, 3, H, W]` images in `[-1, 1]`. Weights enter the
    /// graph as constants, so gradients reach only the input.
    pub fn features(&self, ctx: &mut Ctx<T>, x: Var) -> Var {
        let mut h = x;
        if self.normalize {
            let scale: Vec<T> = IMAGENET_STD
                .iter()
                .map(|s| T::from_f64_lossy(0.5 / s))
                .collect();
            let shift: Vec<T> = IMAGENET_MEAN
                .iter()
                .zip(IMAGENET_STD)
                .map(|(m, s)| T::from_f64_lossy((0.5 - m) / s))
                .collect();
            h = ctx.graph.channel_affine(h, &scale, &shift);
        }
        for layer in &self.layers {
            h = match layer {
                ExtractorLayer::Conv { name, .. } => {
                    ctx.record(name);
                    let w = ctx.bind(&self.params, &format!("{name}.weight"), false);
                    let b = ctx.bind(&self.params, &format!("{name}.bias"), false);
                    let y = ctx.graph.conv2d(h, w, Some(b), 1, 1);
                    ctx.graph.relu(y)
                }
                ExtractorLayer::MaxPool => ctx.graph.max_pool2(h),
            };
        }
        h
    }

    /// Features of a constant batch, without building a backward graph.
    pub fn features_of(&self, images: &Tensor<T>) -> Tensor<T> {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g);
        let x = ctx.graph.constant(images.clone());
        let f = self.features(&mut ctx, x);
        g.value(f).clone()
    }
}

/// Writes extractor weights in the format [`build_extractor`] loads.
pub fn save_extractor_weights(path: &Path, extractor: &FeatureExtractor) -> Result<()> {
    let tensors = extractor
        .params
        .params()
        .map(|(k, t)| (k.to_string(), t.clone()))
        .collect();
    fs::write(path, encode(&tensors)).map_err(|e| Error::io(path, e))
}
