//! Numerically integrates the synthetic generator's likelihood to estimate
//! the Bayes-optimal event-classification accuracy, i.e. the ceiling for
//! the effectiveness pseudo-oracle.

use cfseries::datasets::gen_synthetic;

const T1: usize = 20;
const T2: usize = 10;
const NOISE_VAR: f64 = 0.1;
const DROP: f64 = 0.7;

/// log p(h, y | e) marginalized over trend (grid around the OLS slope),
/// shift value (grid over U[-0.7, 0.7]) and shift start (uniform over the
/// strictly post-boundary steps).
fn log_lik(h: &[f64], y: &[f64], e: u8) -> f64 {
    // Slope posterior from the full series is sharp; center a grid on the
    // history OLS slope through the origin.
    let num: f64 = h.iter().enumerate().map(|(t, &v)| v * (t + 1) as f64).sum();
    let den: f64 = (1..=T1).map(|t| (t * t) as f64).sum::<f64>();
    let slope_hat = num / den;
    let slope_std = (NOISE_VAR / den).sqrt();
    let mut terms: Vec<f64> = Vec::new();
    let nv = 71;
    let nt = 17;
    for ti in 0..nt {
        let slope = slope_hat + (ti as f64 / (nt - 1) as f64 - 0.5) * 8.0 * slope_std;
        if !(-0.1..=0.1).contains(&slope) {
            continue;
        }
        // History contribution is shared across (m, v).
        let mut base = 0.0;
        for (t, &v) in h.iter().enumerate() {
            let r = v - slope * (t + 1) as f64;
            base += -r * r / (2.0 * NOISE_VAR);
        }
        for m in 1..T2 {
            for vi in 0..nv {
                let shift = -0.7 + 1.4 * vi as f64 / (nv - 1) as f64;
                let mut ll = base;
                for (k, &obs) in y.iter().enumerate() {
                    let mut mu = slope * (T1 + k + 1) as f64;
                    if e == 1 {
                        mu -= DROP;
                    }
                    if k == m {
                        mu += shift;
                    }
                    let r = obs - mu;
                    ll += -r * r / (2.0 * NOISE_VAR);
                }
                terms.push(ll);
            }
        }
    }
    let mx = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln()
}

fn main() {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1000);
    let ds = gen_synthetic(n, 123, false);
    let mut correct_f = 0usize;
    let mut correct_cf = 0usize;
    for s in &ds.samples {
        let l1 = log_lik(&s.h, &s.y, 1);
        let l0 = log_lik(&s.h, &s.y, 0);
        let pred = if l1 > l0 { 1 } else { 0 };
        if pred == s.e {
            correct_f += 1;
        }
        let cf = s.y_cf.as_ref().unwrap();
        let l1 = log_lik(&s.h, cf, 1);
        let l0 = log_lik(&s.h, cf, 0);
        let pred = if l1 > l0 { 1 } else { 0 };
        if pred == 1 - s.e {
            correct_cf += 1;
        }
    }
    println!(
        "bayes factual accuracy {:.4} counterfactual {:.4} (n={n})",
        correct_f as f64 / n as f64,
        correct_cf as f64 / n as f64
    );
}
