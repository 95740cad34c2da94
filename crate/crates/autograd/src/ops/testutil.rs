use crate::{Graph, Tensor, Var};

/// Deterministic values in [-1, 1).
pub fn lcg_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut state = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect();
    Tensor::from_vec(shape, data)
}

fn project(g: &mut Graph<f64>, out: Var) -> Var {
    let weights = lcg_tensor(g.shape(out), 99);
    let w = g.constant(weights);
    let prod = g.mul(out, w);
    g.sum_all(prod)
}

fn eval(inputs: &[Tensor<f64>], f: &impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars);
    let loss = project(&mut g, out);
    g.value(loss).item()
}

/// Compares analytic gradients of `f` (projected onto fixed random weights)
/// with central differences for every input element.
pub fn check_grad_multi(inputs: &[Tensor<f64>], f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars);
    let loss = project(&mut g, out);
    let grads = g.backward(loss);
    let h = 1e-6;
    for (which, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[which]).expect("gradient reaches input");
        for idx in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[idx] += h;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[idx] -= h;
            let numeric = (eval(&plus, &f) - eval(&minus, &f)) / (2.0 * h);
            let a = analytic.data()[idx];
            assert!(
                (a - numeric).abs() <= 1e-6 + 1e-5 * a.abs().max(numeric.abs()),
                "input {which} element {idx}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

pub fn check_grad(input: &Tensor<f64>, f: impl Fn(&mut Graph<f64>, Var) -> Var) {
    check_grad_multi(std::slice::from_ref(input), |g, v| f(g, v[0]));
}
