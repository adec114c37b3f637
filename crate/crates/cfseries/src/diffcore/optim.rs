//! Named parameter storage and the bias-corrected Adam update.

use super::tensor::Tensor;
use crate::error::{CfError, Result};
use crate::rng::derive_seed;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One trainable tensor plus its Adam moment accumulators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub value: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let m = Tensor::zeros(&value.shape);
        let v = Tensor::zeros(&value.shape);
        Self { value, m, v }
    }
}

/// All trainable weights of a model, keyed by parameter path, plus the shared
/// optimizer step counter. BTreeMap keeps iteration order deterministic.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    pub params: BTreeMap<String, Param>,
    pub step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Glorot-style uniform init in ±√(6/(fan_in+fan_out)), seeded per path so
    /// models sharing a sub-network initialize it identically.
    pub fn init_glorot(
        &mut self,
        path: &str,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        seed: u64,
    ) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, path, 0));
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-limit..limit)).collect();
        self.params.insert(
            path.to_string(),
            Param::new(Tensor {
                shape: shape.to_vec(),
                data,
            }),
        );
    }

    pub fn init_zeros(&mut self, path: &str, shape: &[usize]) {
        self.params
            .insert(path.to_string(), Param::new(Tensor::zeros(shape)));
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.params.get(path).map(|p| &p.value)
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam step over every parameter with a gradient.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    for (path, g) in grads {
        if !g.all_finite() {
            return Err(CfError::Training(format!(
                "non-finite gradient for parameter {path}"
            )));
        }
    }
    store.step += 1;
    let t = store.step as f64;
    let (b1, b2) = betas;
    let corr1 = 1.0 - b1.powf(t);
    let corr2 = 1.0 - b2.powf(t);
    for (path, g) in grads {
        let param = store
            .params
            .get_mut(path)
            .ok_or_else(|| CfError::Usage(format!("gradient for unknown parameter {path}")))?;
        if !param.value.same_shape(g) {
            return Err(CfError::Shape {
                expected: param.value.shape.clone(),
                got: g.shape.clone(),
            });
        }
        for i in 0..g.data.len() {
            let gi = g.data[i];
            param.m.data[i] = b1 * param.m.data[i] + (1.0 - b1) * gi;
            param.v.data[i] = b2 * param.v.data[i] + (1.0 - b2) * gi * gi;
            let m_hat = param.m.data[i] / corr1;
            let v_hat = param.v.data[i] / corr2;
            param.value.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// min(step / total_ramp_steps, 1) · final_value.
pub fn linear_schedule(step: u64, total_ramp_steps: u64, final_value: f64) -> f64 {
    debug_assert!(total_ramp_steps >= 1);
    let frac = (step as f64 / total_ramp_steps as f64).min(1.0);
    frac * final_value
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(theta: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.params
            .insert("theta".into(), Param::new(Tensor::scalar(theta)));
        s
    }

    fn grad_map(g: f64) -> BTreeMap<String, Tensor> {
        let mut m = BTreeMap::new();
        m.insert("theta".to_string(), Tensor::scalar(g));
        m
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        // hand-evaluated Adam recurrence at t=1: update = lr * g / (|g| + eps)
        let mut s = scalar_store(1.0);
        adam_step(&mut s, &grad_map(1.0), 1e-4, (ADAM_BETA1, ADAM_BETA2), ADAM_EPS).unwrap();
        let theta = s.get("theta").unwrap().item();
        assert!((theta - 0.9999).abs() < 1e-9, "theta = {theta}");
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut s = scalar_store(0.5);
        adam_step(&mut s, &grad_map(0.0), 1e-2, (ADAM_BETA1, ADAM_BETA2), ADAM_EPS).unwrap();
        assert_eq!(s.get("theta").unwrap().item(), 0.5);
    }

    #[test]
    fn quadratic_converges() {
        // 1000 steps on f(theta) = theta^2 with lr 1e-2
        let mut s = scalar_store(1.0);
        for _ in 0..1000 {
            let theta = s.get("theta").unwrap().item();
            adam_step(
                &mut s,
                &grad_map(2.0 * theta),
                1e-2,
                (ADAM_BETA1, ADAM_BETA2),
                ADAM_EPS,
            )
            .unwrap();
        }
        assert!(s.get("theta").unwrap().item().abs() < 1e-2);
    }

    #[test]
    fn first_step_is_scale_invariant() {
        for g in [1e-3, 1.0, 1e3] {
            let mut s = scalar_store(0.0);
            adam_step(&mut s, &grad_map(g), 1e-2, (ADAM_BETA1, ADAM_BETA2), ADAM_EPS).unwrap();
            let update = s.get("theta").unwrap().item().abs();
            assert!(update >= 0.99 * 1e-2 && update <= 1e-2, "update {update} for g {g}");
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut s = scalar_store(0.0);
        assert!(adam_step(
            &mut s,
            &grad_map(f64::NAN),
            1e-2,
            (ADAM_BETA1, ADAM_BETA2),
            ADAM_EPS
        )
        .is_err());
    }

    #[test]
    fn linear_schedule_endpoints() {
        assert_eq!(linear_schedule(0, 100, 8.9), 0.0);
        assert_eq!(linear_schedule(100, 100, 8.9), 8.9);
        assert_eq!(linear_schedule(250, 100, 8.9), 8.9);
        assert!((linear_schedule(50, 100, 8.9) - 4.45).abs() < 1e-12);
    }
}
