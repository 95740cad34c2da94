use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srseg_autograd::{BatchStats, Gradients, Graph, ParamStore, Scalar, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// How a model takes part in one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mode {
    /// Batch norm normalizes with batch statistics (and reports them).
    pub train_bn: bool,
    /// Parameters become graph variables; otherwise they are constants.
    pub trainable: bool,
}

impl Mode {
    pub const EVAL: Mode = Mode {
        train_bn: false,
        trainable: false,
    };
    pub const TRAIN: Mode = Mode {
        train_bn: true,
        trainable: true,
    };
    /// Batch statistics, but no gradient into the weights.
    pub const FROZEN_TRAIN: Mode = Mode {
        train_bn: true,
        trainable: false,
    };
}

/// State of one forward pass: the graph, parameter bindings, an optional
/// layer trace and pending batch-norm updates.
pub struct Ctx<'g, T: Scalar> {
    pub graph: &'g mut Graph<T>,
    bindings: BTreeMap<String, Var>,
    trace: Option<Vec<String>>,
    bn_updates: Vec<(String, BatchStats<T>)>,
}

impl<'g, T: Scalar> Ctx<'g, T> {
    pub fn new(graph: &'g mut Graph<T>) -> Self {
        Ctx {
            graph,
            bindings: BTreeMap::new(),
            trace: None,
            bn_updates: Vec::new(),
        }
    }

    pub fn traced(graph: &'g mut Graph<T>) -> Self {
        Ctx {
            trace: Some(Vec::new()),
            ..Ctx::new(graph)
        }
    }

    /// Layer names in execution order, when tracing.
    pub fn trace(&self) -> Option<&[String]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Vec<String> {
        self.trace.take().unwrap_or_default()
    }

    pub(crate) fn record(&mut self, layer: &str) {
        if let Some(t) = self.trace.as_mut() {
            t.push(layer.to_string());
        }
    }

    /// Graph node for a stored parameter; a repeated name reuses the node so
    /// gradients accumulate.
    pub fn bind(&mut self, store: &ParamStore<T>, name: &str, trainable: bool) -> Var {
        if let Some(&v) = self.bindings.get(name) {
            return v;
        }
        let value = store
            .param(name)
            .unwrap_or_else(|| panic!("model has no parameter {name}"))
            .clone();
        let v = if trainable {
            self.graph.variable(value)
        } else {
            self.graph.constant(value)
        };
        self.bindings.insert(name.to_string(), v);
        v
    }

    /// Gradients of every trainable bound parameter under `prefix`.
    pub fn param_grads(
        &self,
        grads: &mut Gradients<T>,
        prefix: &str,
    ) -> BTreeMap<String, Tensor<T>> {
        self.bindings
            .iter()
            .filter(|(name, _)| name.starts_with(prefix))
            .filter_map(|(name, &v)| grads.take(v).map(|g| (name.clone(), g)))
            .collect()
    }

    pub fn take_bn_updates(&mut self) -> Vec<(String, BatchStats<T>)> {
        std::mem::take(&mut self.bn_updates)
    }
}

/// Folds batch statistics into running estimates for names under `prefix`.
pub fn apply_bn_updates<T: Scalar>(
    store: &mut ParamStore<T>,
    updates: &[(String, BatchStats<T>)],
    prefix: &str,
) {
    let m = T::from_f64_lossy(BN_MOMENTUM);
    let keep = T::one() - m;
    for (name, stats) in updates.iter().filter(|(n, _)| n.starts_with(prefix)) {
        for (suffix, batch) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
            let buf = store
                .buffer_mut(&format!("{name}.{suffix}"))
                .unwrap_or_else(|| panic!("missing buffer {name}.{suffix}"));
            for (r, &b) in buf.data_mut().iter_mut().zip(batch.iter()) {
                *r = keep * *r + m * b;
            }
        }
    }
}

pub(crate) fn conv<T: Scalar>(
    ctx: &mut Ctx<T>,
    store: &ParamStore<T>,
    name: &str,
    x: Var,
    stride: usize,
    mode: Mode,
) -> Var {
    ctx.record(name);
    let w = ctx.bind(store, &format!("{name}.weight"), mode.trainable);
    let b = ctx.bind(store, &format!("{name}.bias"), mode.trainable);
    let k = ctx.graph.shape(w)[2];
    ctx.graph.conv2d(x, w, Some(b), stride, k / 2)
}

pub(crate) fn batch_norm<T: Scalar>(
    ctx: &mut Ctx<T>,
    store: &ParamStore<T>,
    name: &str,
    x: Var,
    mode: Mode,
) -> Var {
    ctx.record(name);
    let gamma = ctx.bind(store, &format!("{name}.weight"), mode.trainable);
    let beta = ctx.bind(store, &format!("{name}.bias"), mode.trainable);
    let eps = T::from_f64_lossy(BN_EPS);
    if mode.train_bn {
        let (y, stats) = ctx.graph.batch_norm_train(x, gamma, beta, eps);
        ctx.bn_updates.push((name.to_string(), stats));
        y
    } else {
        let buf = |s: &str| {
            store
                .buffer(&format!("{name}.{s}"))
                .unwrap_or_else(|| panic!("missing buffer {name}.{s}"))
                .data()
                .to_vec()
        };
        let (mean, var) = (buf("running_mean"), buf("running_var"));
        ctx.graph.batch_norm_eval(x, gamma, beta, &mean, &var, eps)
    }
}

pub(crate) fn linear<T: Scalar>(
    ctx: &mut Ctx<T>,
    store: &ParamStore<T>,
    name: &str,
    x: Var,
    mode: Mode,
) -> Var {
    ctx.record(name);
    let w = ctx.bind(store, &format!("{name}.weight"), mode.trainable);
    let b = ctx.bind(store, &format!("{name}.bias"), mode.trainable);
    ctx.graph.linear(x, w, Some(b))
}

/// Seeded parameter initializer (uniform `±1/√fan_in` for weights and biases).
pub(crate) struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor<f32> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.gen_range(-bound..bound) as f32)
            .collect();
        Tensor::from_vec(shape, data)
    }

    pub fn conv(
        &mut self,
        store: &mut ParamStore<f32>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
    ) {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        store.insert_param(
            format!("{name}.weight"),
            self.uniform(&[cout, cin, k, k], bound),
        );
        store.insert_param(format!("{name}.bias"), self.uniform(&[cout], bound));
    }

    /// He-normal weights and zero bias, for deep ReLU stacks without batch norm.
    pub fn conv_he(
        &mut self,
        store: &mut ParamStore<f32>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
    ) {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        let n = cout * cin * k * k;
        let data = (0..n)
            .map(|_| {
                // Box-Muller
                let u1: f64 = self.rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = self.rng.gen();
                (std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
            })
            .collect();
        store.insert_param(
            format!("{name}.weight"),
            Tensor::from_vec(&[cout, cin, k, k], data),
        );
        store.insert_param(format!("{name}.bias"), Tensor::zeros(&[cout]));
    }

    pub fn linear(&mut self, store: &mut ParamStore<f32>, name: &str, fin: usize, fout: usize) {
        let bound = 1.0 / (fin as f64).sqrt();
        store.insert_param(format!("{name}.weight"), self.uniform(&[fout, fin], bound));
        store.insert_param(format!("{name}.bias"), self.uniform(&[fout], bound));
    }

    pub fn batch_norm(store: &mut ParamStore<f32>, name: &str, c: usize) {
        store.insert_param(format!("{name}.weight"), Tensor::ones(&[c]));
        store.insert_param(format!("{name}.bias"), Tensor::zeros(&[c]));
        store.insert_buffer(format!("{name}.running_mean"), Tensor::zeros(&[c]));
        store.insert_buffer(format!("{name}.running_var"), Tensor::ones(&[c]));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_stats_follow_momentum() {
        let mut store = ParamStore::<f64>::new();
        store.insert_buffer("bn.running_mean", Tensor::zeros(&[2]));
        store.insert_buffer("bn.running_var", Tensor::ones(&[2]));
        let stats = BatchStats {
            mean: vec![1.0, -2.0],
            var: vec![3.0, 0.5],
        };
        apply_bn_updates(
            &mut store,
            &[("bn".into(), stats.clone()), ("other".into(), stats)],
            "bn",
        );
        let mean = store.buffer("bn.running_mean").unwrap().data();
        let var = store.buffer("bn.running_var").unwrap().data();
        assert!((mean[0] - 0.1).abs() < 1e-12 && (mean[1] + 0.2).abs() < 1e-12);
        assert!((var[0] - 1.2).abs() < 1e-12 && (var[1] - 0.95).abs() < 1e-12);
    }

    #[test]
    fn rebinding_reuses_the_node() {
        let mut store = ParamStore::<f64>::new();
        store.insert_param("p", Tensor::from_vec(&[2], vec![1.0, 2.0]));
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g);
        let a = ctx.bind(&store, "p", true);
        let b = ctx.bind(&store, "p", true);
        assert_eq!(a, b);
        let s = ctx.graph.mul(a, b);
        let loss = ctx.graph.sum_all(s);
        let mut grads = ctx.graph.backward(loss);
        let gp = ctx.param_grads(&mut grads, "");
        assert_eq!(gp["p"].data(), &[2.0, 4.0]);
    }
}
