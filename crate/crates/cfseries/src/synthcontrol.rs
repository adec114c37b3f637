//! Synthetic-control donor sweep: how good does a control-series baseline
//! get as a function of donor quality? Donors are noisy copies of each
//! sample's event-free trajectory; a shared recurrent model predicts the
//! target from its donors, and its counterfactual error is tracked as the
//! donor noise grows.

use crate::datasets::Dataset;
use crate::diffcore::{
    adam_step, Graph, ParamStore, Tensor, Var, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
use crate::error::{CfError, Result};
use crate::rng::{derive_seed, stream};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// Per-sample donor series: noisy copies of the event-free trajectory over
/// the full window (history plus outcome steps).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DonorSet {
    /// donors[sample][donor][step]
    pub donors: Vec<Vec<Vec<f64>>>,
    pub sigma: f64,
    pub k: usize,
    pub seed: u64,
}

/// The event-free trajectory of a sample over the full window: the factual
/// series when no event happened, the counterfactual one otherwise.
fn event_free_trajectory(
    sample: &crate::datasets::EventSeries,
) -> Result<Vec<f64>> {
    let tail = if sample.e == 0 {
        &sample.y
    } else {
        sample
            .y_cf
            .as_ref()
            .ok_or_else(|| CfError::Input("donor construction needs ground truth".into()))?
    };
    let mut full = Vec::with_capacity(sample.h.len() + tail.len());
    full.extend_from_slice(&sample.h);
    full.extend_from_slice(tail);
    Ok(full)
}

/// Builds k donors per sample by adding per-step Gaussian noise to the
/// event-free trajectory. Donors never see the event by construction.
pub fn make_donors(dataset: &Dataset, sigma: f64, k: usize, seed: u64) -> Result<DonorSet> {
    if sigma < 0.0 {
        return Err(CfError::Input("donor noise sigma must be >= 0".into()));
    }
    if k == 0 {
        return Err(CfError::Input("need at least one donor".into()));
    }
    let mut donors = Vec::with_capacity(dataset.samples.len());
    for (i, s) in dataset.samples.iter().enumerate() {
        let base = event_free_trajectory(s)?;
        let mut rng = stream(seed, "donor-noise", i as u64);
        let mut per_sample = Vec::with_capacity(k);
        for _ in 0..k {
            if sigma == 0.0 {
                per_sample.push(base.clone());
            } else {
                let normal = Normal::new(0.0, sigma).expect("sigma validated");
                per_sample.push(base.iter().map(|v| v + normal.sample(&mut rng)).collect());
            }
        }
        donors.push(per_sample);
    }
    Ok(DonorSet {
        donors,
        sigma,
        k,
        seed,
    })
}

/// Shared recurrent donor→target regressor. Each step reads the k donor
/// values; the per-step prediction reads the hidden state together with the
/// current donor values, so an identity mapping is directly representable.
#[derive(Debug, Clone)]
pub struct DonorModel {
    pub store: ParamStore,
    pub hidden: usize,
    pub k: usize,
}

fn donor_predictions(
    g: &mut Graph,
    params: &BTreeMap<String, Var>,
    hidden: usize,
    donors: &[Vec<f64>],
) -> Result<Vec<Var>> {
    let steps = donors[0].len();
    let mut hv = g.leaf(Tensor::zeros(&[hidden]));
    let mut cv = g.leaf(Tensor::zeros(&[hidden]));
    let mut preds = Vec::with_capacity(steps);
    for t in 0..steps {
        let x: Vec<f64> = donors.iter().map(|d| d[t]).collect();
        let xt = g.leaf(Tensor::vector(x));
        let (h_next, c_next) = g.lstm_cell(
            xt,
            hv,
            cv,
            params["lstm.w_ih"],
            params["lstm.w_hh"],
            params["lstm.b"],
        )?;
        hv = h_next;
        cv = c_next;
        let joint = g.concat(&[hv, xt]);
        preds.push(g.dense(joint, params["out.w"], params["out.b"])?);
    }
    Ok(preds)
}

impl DonorModel {
    pub fn predict(&self, donors: &[Vec<f64>]) -> Result<Vec<f64>> {
        if donors.len() != self.k {
            return Err(CfError::Shape {
                expected: vec![self.k],
                got: vec![donors.len()],
            });
        }
        let mut g = Graph::new();
        let params: BTreeMap<String, Var> = self
            .store
            .params
            .iter()
            .map(|(k, p)| (k.clone(), g.leaf(p.value.clone())))
            .collect();
        let preds = donor_predictions(&mut g, &params, self.hidden, donors)?;
        Ok(preds.iter().map(|p| g.value(*p).item()).collect())
    }
}

/// Trains the shared donor model with squared error over every step of the
/// event-free trajectories.
pub fn fit_donor_model(
    targets: &[Vec<f64>],
    donors: &[Vec<Vec<f64>>],
    k: usize,
    seed: u64,
    epochs: usize,
) -> Result<DonorModel> {
    if targets.is_empty() || targets.len() != donors.len() {
        return Err(CfError::Input(
            "donor-model training needs matched targets and donors".into(),
        ));
    }
    let hidden = 16;
    let mut store = ParamStore::new();
    store.init_glorot("lstm.w_ih", &[4 * hidden, k], k, hidden, seed);
    store.init_glorot("lstm.w_hh", &[4 * hidden, hidden], hidden, hidden, seed);
    store.init_zeros("lstm.b", &[4 * hidden]);
    store.init_glorot("out.w", &[1, hidden + k], hidden + k, 1, seed);
    store.init_zeros("out.b", &[1]);
    let mut model = DonorModel { store, hidden, k };

    let batch_size = 16;
    let mut order: Vec<usize> = (0..targets.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut stream(seed, "donor-shuffle", epoch as u64));
        for chunk in order.chunks(batch_size) {
            let mut g = Graph::new();
            let params: BTreeMap<String, Var> = model
                .store
                .params
                .iter()
                .map(|(k, p)| (k.clone(), g.leaf(p.value.clone())))
                .collect();
            let mut errs = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let preds = donor_predictions(&mut g, &params, hidden, &donors[i])?;
                let pred_vec = g.concat(&preds);
                let target = g.leaf(Tensor::vector(targets[i].clone()));
                let d = g.sub(pred_vec, target)?;
                let sq = g.square(d);
                errs.push(g.mean(sq));
            }
            let evec = g.concat(&errs);
            let loss = g.mean(evec);
            if !g.value(loss).item().is_finite() {
                return Err(CfError::Training("non-finite donor-model loss".into()));
            }
            let grads = g.backward(loss)?;
            let mut by_path = BTreeMap::new();
            for (path, var) in &params {
                if let Some(grad) = grads.get(*var) {
                    by_path.insert(path.clone(), grad.clone());
                }
            }
            adam_step(
                &mut model.store,
                &by_path,
                3e-3,
                (ADAM_BETA1, ADAM_BETA2),
                ADAM_EPS,
            )?;
        }
    }
    Ok(model)
}

/// One (sigma, seed) measurement of the sweep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sigma: f64,
    pub seed: u64,
    /// Post-event counterfactual MAE on event samples.
    pub mae: f64,
    pub mbe: f64,
    /// Pre-event R² of the donor fit, pooled over test series.
    pub r2: f64,
}

/// Seed-aggregated sweep point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepPoint {
    pub sigma: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub mbe_mean: f64,
    pub r2_mean: f64,
}

/// Runs the full donor-quality sweep on a dataset with ground truth. For
/// each sigma and seed the donors are rebuilt, the model refit on the train
/// share, and post-event predictions of event samples scored against the
/// ground-truth counterfactuals.
pub fn run_sweep(
    dataset: &Dataset,
    sigmas: &[f64],
    seeds: &[u64],
    epochs: usize,
) -> Result<(Vec<SweepRecord>, Vec<SweepPoint>)> {
    if sigmas.is_empty() || seeds.is_empty() {
        return Err(CfError::Input("sweep needs sigmas and seeds".into()));
    }
    let n = dataset.samples.len();
    let n_train = n * 4 / 5;
    if n_train == 0 || n_train == n {
        return Err(CfError::Input("dataset too small for a sweep split".into()));
    }
    let t1 = dataset.t1;
    let mut records = Vec::new();
    for (si, &sigma) in sigmas.iter().enumerate() {
        for &seed in seeds {
            let donor_seed = derive_seed(seed, "sweep-donors", si as u64);
            let donors = make_donors(dataset, sigma, 2, donor_seed)?;
            let targets: Vec<Vec<f64>> = dataset
                .samples
                .iter()
                .map(event_free_trajectory)
                .collect::<Result<_>>()?;
            let model = fit_donor_model(
                &targets[..n_train],
                &donors.donors[..n_train],
                2,
                derive_seed(seed, "sweep-fit", si as u64),
                epochs,
            )?;

            let mut abs_err = 0.0;
            let mut bias = 0.0;
            let mut steps = 0usize;
            let mut ss_res = 0.0;
            let mut ss_tot = 0.0;
            let pre_mean = {
                let mut acc = 0.0;
                let mut m = 0usize;
                for t in &targets[n_train..] {
                    for v in &t[..t1] {
                        acc += v;
                        m += 1;
                    }
                }
                acc / m as f64
            };
            for i in n_train..n {
                let pred = model.predict(&donors.donors[i])?;
                for step in 0..t1 {
                    ss_res += (pred[step] - targets[i][step]).powi(2);
                    ss_tot += (targets[i][step] - pre_mean).powi(2);
                }
                if dataset.samples[i].e == 1 {
                    for step in t1..targets[i].len() {
                        abs_err += (pred[step] - targets[i][step]).abs();
                        bias += pred[step] - targets[i][step];
                        steps += 1;
                    }
                }
            }
            if steps == 0 {
                return Err(CfError::Input(
                    "sweep test share contains no event samples".into(),
                ));
            }
            records.push(SweepRecord {
                sigma,
                seed,
                mae: abs_err / steps as f64,
                mbe: bias / steps as f64,
                r2: 1.0 - ss_res / ss_tot,
            });
        }
    }
    let points = aggregate_records(&records);
    Ok((records, points))
}

/// Seed-aggregates sweep records into one point per sigma, in first-seen
/// sigma order.
pub fn aggregate_records(records: &[SweepRecord]) -> Vec<SweepPoint> {
    let mut sigmas = Vec::new();
    for r in records {
        if !sigmas.contains(&r.sigma) {
            sigmas.push(r.sigma);
        }
    }
    let mut points = Vec::with_capacity(sigmas.len());
    for sigma in sigmas {
        let vals: Vec<&SweepRecord> = records.iter().filter(|r| r.sigma == sigma).collect();
        let m = vals.len() as f64;
        let mae_mean = vals.iter().map(|r| r.mae).sum::<f64>() / m;
        let mae_var = vals
            .iter()
            .map(|r| (r.mae - mae_mean).powi(2))
            .sum::<f64>()
            / m;
        points.push(SweepPoint {
            sigma,
            mae_mean,
            mae_std: mae_var.sqrt(),
            mbe_mean: vals.iter().map(|r| r.mbe).sum::<f64>() / m,
            r2_mean: vals.iter().map(|r| r.r2).sum::<f64>() / m,
        });
    }
    points
}

/// Reads back a sweep CSV written by [`write_sweep_csv`].
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CfError::Serde(e.to_string()))?;
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec.map_err(|e| CfError::Serde(e.to_string()))?);
    }
    Ok(out)
}

/// CSV with one row per (sigma, seed) measurement.
pub fn write_sweep_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "sigma,seed,mae,mbe,r2")?;
    for r in records {
        writeln!(f, "{},{},{},{},{}", r.sigma, r.seed, r.mae, r.mbe, r.r2)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_synthetic, standardize};

    #[test]
    fn zero_sigma_donors_copy_the_event_free_trajectory() {
        let ds = gen_synthetic(20, 5, false);
        let set = make_donors(&ds, 0.0, 2, 1).unwrap();
        for (s, d) in ds.samples.iter().zip(&set.donors) {
            let base = event_free_trajectory(s).unwrap();
            assert_eq!(d[0], base);
            assert_eq!(d[1], base);
            if s.e == 1 {
                // event-free means the counterfactual tail, not the factual one
                assert_ne!(&d[0][ds.t1..], &s.y[..]);
            }
        }
        assert!(make_donors(&ds, -0.1, 2, 1).is_err());
    }

    #[test]
    fn donor_noise_moments_and_independence() {
        let ds = gen_synthetic(1000, 5, false);
        let sigma = 0.5;
        let set = make_donors(&ds, sigma, 2, 9).unwrap();
        let mut resid_a = Vec::new();
        let mut resid_b = Vec::new();
        for (s, d) in ds.samples.iter().zip(&set.donors) {
            let base = event_free_trajectory(s).unwrap();
            for step in 0..base.len() {
                resid_a.push(d[0][step] - base[step]);
                resid_b.push(d[1][step] - base[step]);
            }
        }
        let n = resid_a.len() as f64;
        let std_a = (resid_a.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        assert!(
            (std_a - sigma).abs() / sigma < 0.05,
            "sample std {std_a} vs {sigma}"
        );
        let mean_a = resid_a.iter().sum::<f64>() / n;
        let mean_b = resid_b.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        for (a, b) in resid_a.iter().zip(&resid_b) {
            cov += (a - mean_a) * (b - mean_b);
        }
        let std_b = (resid_b.iter().map(|v| (v - mean_b).powi(2)).sum::<f64>() / n).sqrt();
        let corr = cov / n / (std_a * std_b);
        assert!(corr.abs() < 3.0 / n.sqrt(), "cross-donor correlation {corr}");
    }

    #[test]
    fn perfect_donors_give_near_perfect_predictions() {
        let ds = gen_synthetic(120, 5, false);
        let (scaled, _) = standardize(&ds).unwrap();
        let set = make_donors(&scaled, 0.0, 2, 1).unwrap();
        let targets: Vec<Vec<f64>> = scaled
            .samples
            .iter()
            .map(|s| event_free_trajectory(s).unwrap())
            .collect();
        let model = fit_donor_model(&targets[..100], &set.donors[..100], 2, 3, 60).unwrap();
        let mut abs = 0.0;
        let mut m = 0usize;
        for i in 100..120 {
            let pred = model.predict(&set.donors[i]).unwrap();
            for (p, t) in pred.iter().zip(&targets[i]) {
                abs += (p - t).abs();
                m += 1;
            }
        }
        let mae = abs / m as f64;
        assert!(mae <= 0.02, "held-out MAE {mae}");
    }

    #[test]
    fn sweep_degrades_with_noise_and_is_deterministic() {
        let ds = gen_synthetic(150, 5, false);
        let (scaled, _) = standardize(&ds).unwrap();
        let sigmas = [0.0, 0.3, 1.5];
        let (rec1, points) = run_sweep(&scaled, &sigmas, &[1, 2], 90).unwrap();
        assert!(points[0].mae_mean <= 0.02, "sigma 0 MAE {}", points[0].mae_mean);
        assert!(
            points[0].mae_mean < points[1].mae_mean
                && points[1].mae_mean < points[2].mae_mean,
            "MAE not monotone: {points:?}"
        );
        assert!(points[0].r2_mean > points[2].r2_mean);
        assert!(points.iter().all(|p| p.r2_mean <= 1.0));
        let (det1, _) = run_sweep(&scaled, &[0.3], &[1], 5).unwrap();
        let (det2, _) = run_sweep(&scaled, &[0.3], &[1], 5).unwrap();
        for (a, b) in det1.iter().zip(&det2) {
            assert_eq!(a.mae, b.mae);
            assert_eq!(a.r2, b.r2);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&rec1, &path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        assert!(body.starts_with("sigma,seed,mae,mbe,r2\n"));
        assert_eq!(body.lines().count(), 1 + rec1.len());
    }
}
