//! Central finite-difference gradient verification, kept independent of the
//! tape so it can serve as an oracle against the analytic backward pass.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use rand::Rng;
use std::collections::BTreeMap;

/// Central finite differences of a scalar function of named tensors.
pub fn finite_difference(
    inputs: &BTreeMap<String, Tensor>,
    f: &dyn Fn(&BTreeMap<String, Tensor>) -> f64,
    h: f64,
) -> BTreeMap<String, Tensor> {
    let mut out = BTreeMap::new();
    for (name, t) in inputs {
        let mut grad = Tensor::zeros(&t.shape);
        for i in 0..t.data.len() {
            let mut plus = inputs.clone();
            plus.get_mut(name).unwrap().data[i] += h;
            let mut minus = inputs.clone();
            minus.get_mut(name).unwrap().data[i] -= h;
            grad.data[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out.insert(name.clone(), grad);
    }
    out
}

/// Worst-case relative error between two gradients, with a small absolute
/// floor so near-zero entries do not blow up the ratio.
pub fn max_rel_err(a: &Tensor, b: &Tensor) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

/// Compares analytic gradients of a recorded scalar loss against central
/// finite differences at perturbation 1e-4; returns the worst relative error.
pub fn check_loss_gradients(
    inputs: &BTreeMap<String, Tensor>,
    build: &dyn Fn(&mut Graph, &BTreeMap<String, Var>) -> Var,
) -> f64 {
    let eval = |vals: &BTreeMap<String, Tensor>| -> f64 {
        let mut g = Graph::new();
        let vars: BTreeMap<String, Var> = vals
            .iter()
            .map(|(k, t)| (k.clone(), g.leaf(t.clone())))
            .collect();
        let loss = build(&mut g, &vars);
        g.value(loss).item()
    };
    let fd = finite_difference(inputs, &eval, 1e-4);

    let mut g = Graph::new();
    let vars: BTreeMap<String, Var> = inputs
        .iter()
        .map(|(k, t)| (k.clone(), g.leaf(t.clone())))
        .collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).expect("single backward");
    let mut worst: f64 = 0.0;
    for (name, var) in &vars {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&inputs[name].shape));
        worst = worst.max(max_rel_err(&analytic, &fd[name]));
    }
    worst
}
