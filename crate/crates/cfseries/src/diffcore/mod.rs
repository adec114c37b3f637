//! Minimal reverse-mode differentiable substrate: the exact layer set,
//! optimizer and gradient-reversal mechanism the five models need.
//! All floating point is 64-bit.

mod checkpoint;
pub mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use checkpoint::Checkpoint;
pub use graph::{Grads, Graph, Var};
pub use optim::{adam_step, linear_schedule, Param, ParamStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use tensor::Tensor;

#[cfg(test)]
mod gradcheck_tests {
    use super::gradcheck::{check_loss_gradients, random_tensor};
    use super::*;
    use std::collections::BTreeMap;

    /// Runs the analytic-vs-finite-difference comparison for a builder that
    /// wires named leaves into a scalar loss.
    fn check(
        inputs: BTreeMap<String, Tensor>,
        build: impl Fn(&mut Graph, &BTreeMap<String, Var>) -> Var,
    ) {
        let err = check_loss_gradients(&inputs, &build);
        assert!(err <= 1e-4, "rel err {err}");
    }

    #[test]
    fn dense_matches_finite_differences() {
        let mut rng = crate::rng::stream(1, "gradcheck", 0);
        for trial in 0..5 {
            let n = 2 + trial % 3;
            let m = 1 + trial % 4;
            let mut inputs = BTreeMap::new();
            inputs.insert("w".to_string(), random_tensor(&[m, n], &mut rng));
            inputs.insert("b".to_string(), random_tensor(&[m], &mut rng));
            inputs.insert("x".to_string(), random_tensor(&[n], &mut rng));
            check(inputs, |g, v| {
                let y = g.dense(v["x"], v["w"], v["b"]).unwrap();
                let sq = g.square(y);
                g.sum(sq)
            });
        }
    }

    #[test]
    fn conv1d_matches_finite_differences() {
        let mut rng = crate::rng::stream(1, "gradcheck", 1);
        for (c_in, c_out, l, k, s) in [(1, 1, 5, 3, 1), (2, 3, 8, 3, 2), (3, 2, 9, 2, 1), (1, 4, 7, 3, 2), (2, 2, 6, 2, 2)] {
            let mut inputs = BTreeMap::new();
            inputs.insert("x".to_string(), random_tensor(&[c_in, l], &mut rng));
            inputs.insert("w".to_string(), random_tensor(&[c_out, c_in, k], &mut rng));
            inputs.insert("b".to_string(), random_tensor(&[c_out], &mut rng));
            check(inputs, move |g, v| {
                let y = g.conv1d(v["x"], v["w"], Some(v["b"]), s).unwrap();
                let r = g.relu(y);
                let sq = g.square(r);
                g.sum(sq)
            });
        }
    }

    #[test]
    fn conv1d_transpose_matches_finite_differences() {
        let mut rng = crate::rng::stream(1, "gradcheck", 2);
        for (c_in, c_out, l, k, s) in [(1, 1, 4, 3, 1), (2, 3, 5, 3, 2), (3, 1, 6, 2, 1), (2, 2, 4, 3, 2), (4, 2, 3, 2, 2)] {
            let mut inputs = BTreeMap::new();
            inputs.insert("x".to_string(), random_tensor(&[c_in, l], &mut rng));
            inputs.insert("w".to_string(), random_tensor(&[c_in, c_out, k], &mut rng));
            inputs.insert("b".to_string(), random_tensor(&[c_out], &mut rng));
            check(inputs, move |g, v| {
                let y = g.conv1d_transpose(v["x"], v["w"], Some(v["b"]), s).unwrap();
                let sq = g.square(y);
                g.sum(sq)
            });
        }
    }

    #[test]
    fn lstm_cell_matches_finite_differences() {
        let mut rng = crate::rng::stream(1, "gradcheck", 3);
        for (n_in, hidden) in [(1, 2), (2, 3), (3, 2), (1, 4), (2, 2)] {
            let mut inputs = BTreeMap::new();
            inputs.insert("x".to_string(), random_tensor(&[n_in], &mut rng));
            inputs.insert("h".to_string(), random_tensor(&[hidden], &mut rng));
            inputs.insert("c".to_string(), random_tensor(&[hidden], &mut rng));
            inputs.insert("w_ih".to_string(), random_tensor(&[4 * hidden, n_in], &mut rng));
            inputs.insert("w_hh".to_string(), random_tensor(&[4 * hidden, hidden], &mut rng));
            inputs.insert("b".to_string(), random_tensor(&[4 * hidden], &mut rng));
            check(inputs, |g, v| {
                let (h, c) = g
                    .lstm_cell(v["x"], v["h"], v["c"], v["w_ih"], v["w_hh"], v["b"])
                    .unwrap();
                let both = g.concat(&[h, c]);
                let sq = g.square(both);
                g.sum(sq)
            });
        }
    }

    #[test]
    fn misc_ops_match_finite_differences() {
        let mut rng = crate::rng::stream(1, "gradcheck", 4);
        for trial in 0..5 {
            let n = 3 + trial;
            let mut inputs = BTreeMap::new();
            inputs.insert("a".to_string(), random_tensor(&[n], &mut rng));
            inputs.insert("b".to_string(), random_tensor(&[n], &mut rng));
            check(inputs, |g, v| {
                let s = g.sub(v["a"], v["b"]).unwrap();
                let t = g.tanh(s);
                let e = g.sigmoid(t);
                let m = g.mul(e, v["a"]).unwrap();
                let ab = g.abs(m);
                g.mean(ab)
            });
        }
    }

    #[test]
    fn batch_std_matches_finite_differences() {
        let mut rng = crate::rng::stream(1, "gradcheck", 5);
        for (b, n) in [(2, 3), (4, 2), (3, 5), (5, 1), (6, 4)] {
            let mut inputs = BTreeMap::new();
            inputs.insert("z".to_string(), random_tensor(&[b, n], &mut rng));
            check(inputs, |g, v| {
                let s = g.batch_std(v["z"]).unwrap();
                g.sum(s)
            });
        }
    }

    #[test]
    fn bce_logits_matches_finite_differences() {
        let mut rng = crate::rng::stream(1, "gradcheck", 6);
        for n in [1usize, 2, 4, 5, 8] {
            let targets: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
            let mut inputs = BTreeMap::new();
            inputs.insert("logits".to_string(), random_tensor(&[n], &mut rng));
            let t = targets.clone();
            check(inputs, move |g, v| g.bce_logits(v["logits"], t.clone()).unwrap());
        }
    }

    #[test]
    fn layer_forward_examples() {
        let mut g = Graph::new();
        // hand cross-correlation: (1,2,3) * (1,0,-1) = 1*1 + 2*0 + 3*(-1) = -2
        let x = g.leaf(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let w = g.leaf(Tensor::new(vec![1, 1, 3], vec![1.0, 0.0, -1.0]).unwrap());
        let y = g.conv1d(x, w, None, 1).unwrap();
        assert_eq!(g.value(y).data, vec![-2.0]);

        let r_in = g.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let r = g.relu(r_in);
        assert_eq!(g.value(r).data, vec![0.0, 0.0, 2.0]);

        // dense with identity weights and zero bias leaves input unchanged
        let w_id = g.leaf(Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap());
        let b0 = g.leaf(Tensor::vector(vec![0.0; 3]));
        let x2 = g.leaf(Tensor::vector(vec![0.5, -0.25, 4.0]));
        let y2 = g.dense(x2, w_id, b0).unwrap();
        assert_eq!(g.value(y2).data, vec![0.5, -0.25, 4.0]);
    }

    #[test]
    fn gradient_reversal_forward_is_identity_and_backward_flips() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.5, -2.0]));
        let y = g.gradient_reversal(x, 1.0);
        assert_eq!(g.value(y).data, vec![1.5, -2.0]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        // incoming gradient is all ones, reversed to exactly -1
        assert_eq!(grads.get(x).unwrap().data, vec![-1.0, -1.0]);
    }

    #[test]
    fn gradient_reversal_lambda_zero_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![3.0, 4.0]));
        let y = g.gradient_reversal(x, 0.0);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data, vec![0.0, 0.0]);
    }

    #[test]
    fn double_gradient_reversal_restores_identity_backward() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![2.0, -1.0]));
        let y1 = g.gradient_reversal(x, 1.0);
        let y2 = g.gradient_reversal(y1, 1.0);
        let s = g.sum(y2);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data, vec![1.0, 1.0]);
    }

    #[test]
    fn double_backward_is_usage_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.0));
        let y = g.square(x);
        g.backward(y).unwrap();
        let x2 = g.square(x);
        assert!(g.backward(x2).is_err());
    }

    #[test]
    fn zero_loss_gradient_gives_zero_parameter_gradients() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let z = g.scale(x, 0.0);
        let s = g.sum(z);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data, vec![0.0, 0.0]);
    }
}
