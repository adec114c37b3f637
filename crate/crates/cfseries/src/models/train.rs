//! Deterministic training loop: seeded shuffles, bias-corrected Adam, a
//! linear ramp on the regularizer weight, periodic counterfactual-error
//! evaluation on the validation split, and best/final weight tracking.

use super::losses::{self, LossParts};
use super::nets;
use super::{ArchitectureSpec, Model, ModelKind};
use crate::datasets::EventSeries;
use crate::diffcore::{adam_step, linear_schedule, Graph, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::error::{CfError, Result};
use crate::rng::stream;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Final regularizer weight: latent-spread penalty, divergence weight,
    /// or gradient-reversal strength depending on the model.
    pub reg_weight: f64,
    /// Fraction of all updates over which the weight ramps linearly from
    /// zero. Zero means the weight is held constant from the first update.
    pub ramp_fraction: f64,
    /// Validation-evaluation period in epochs.
    pub eval_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn defaults_for(kind: ModelKind, seed: u64) -> Self {
        let (reg_weight, ramp_fraction) = match kind {
            ModelKind::Cepae => (0.09, 0.15),
            ModelKind::Cvae => (1e-3, 0.0),
            ModelKind::Caae => (8.9, 1.0),
            ModelKind::Lstm => (0.0, 0.0),
            ModelKind::AbLstm => (1.0, 0.4),
        };
        Self {
            epochs: 150,
            batch_size: 64,
            learning_rate: 1e-4,
            reg_weight,
            ramp_fraction,
            eval_every: 5,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: ModelKind,
    pub epochs_run: usize,
    /// Per-epoch batch-mean loss components.
    pub loss_curve: Vec<LossParts>,
    /// (epoch, validation counterfactual MAE) at each evaluation point.
    pub val_curve: Vec<(usize, f64)>,
    pub best_epoch: Option<usize>,
    /// Set when a non-finite loss or gradient stopped training early; the
    /// returned weights are the last finite ones.
    pub aborted_at: Option<usize>,
    pub wall_secs: f64,
}

pub struct TrainOutcome {
    /// Weights at the end of training (or the last finite ones on abort).
    pub model: Model,
    /// Weights at the best validation evaluation.
    pub best: Model,
    pub report: TrainReport,
}

/// Mean absolute error of the model's counterfactual answer against the
/// ground-truth counterfactual window, in the units of the data given.
/// Samples without ground truth fall back to the factual window, which turns
/// this into a plain predictive error.
pub fn counterfactual_mae(model: &Model, samples: &[EventSeries]) -> Result<f64> {
    if samples.is_empty() {
        return Err(CfError::Input("empty evaluation split".into()));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for s in samples {
        let e_cf = 1 - s.e;
        let pred = match model.kind {
            ModelKind::Cepae | ModelKind::Caae => {
                let z = model.encode(&s.y, &s.h, s.e)?;
                model.decode(&z, &s.h, e_cf)?
            }
            ModelKind::Cvae => {
                let (mu, _) = model.encode_dist(&s.y, &s.h, s.e)?;
                model.decode(&mu, &s.h, e_cf)?
            }
            ModelKind::Lstm => model.forecast(&s.h, s.e)?,
            ModelKind::AbLstm => model.forecast(&s.h, e_cf)?,
        };
        let target = s.y_cf.as_ref().unwrap_or(&s.y);
        for (p, t) in pred.iter().zip(target) {
            acc += (p - t).abs();
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

/// Trains a model of the given kind from scratch. Fully deterministic in
/// `cfg.seed`: initialization, shuffling and variational noise all derive
/// from it through independent named streams.
pub fn train(
    kind: ModelKind,
    arch: ArchitectureSpec,
    train_set: &[EventSeries],
    val_set: &[EventSeries],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.len() < 2 {
        return Err(CfError::Input("training split too small".into()));
    }
    let started = std::time::Instant::now();
    let mut model = Model::init(kind, arch, cfg.seed);
    let batches_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total_updates = (cfg.epochs * batches_per_epoch) as u64;
    let ramp_steps = ((cfg.ramp_fraction * total_updates as f64) as u64).max(1);

    let mut report = TrainReport {
        kind,
        epochs_run: 0,
        loss_curve: Vec::new(),
        val_curve: Vec::new(),
        best_epoch: None,
        aborted_at: None,
        wall_secs: 0.0,
    };
    let mut best: Option<(f64, Model)> = None;
    let mut updates_done: u64 = 0;
    let mut indices: Vec<usize> = (0..train_set.len()).collect();

    'epochs: for epoch in 0..cfg.epochs {
        let mut shuffler = stream(cfg.seed, "epoch-shuffle", epoch as u64);
        indices.shuffle(&mut shuffler);
        let mut noise = stream(cfg.seed, "vae-noise", epoch as u64);

        let mut epoch_parts = LossParts {
            total: 0.0,
            rec: 0.0,
            reg: 0.0,
        };
        let mut batches = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue; // spread/divergence terms need at least two samples
            }
            let batch: Vec<&EventSeries> = chunk.iter().map(|&i| &train_set[i]).collect();
            let weight = if cfg.ramp_fraction > 0.0 {
                linear_schedule(updates_done, ramp_steps, cfg.reg_weight)
            } else {
                cfg.reg_weight
            };

            let mut g = Graph::new();
            let params = nets::load_params(&mut g, &model.store);
            let (loss, parts) = match kind {
                ModelKind::Cepae => losses::cepae_batch_loss(&mut g, &params, &arch, &batch, weight)?,
                ModelKind::Cvae => {
                    losses::cvae_batch_loss(&mut g, &params, &arch, &batch, weight, &mut noise)?
                }
                ModelKind::Caae => losses::caae_batch_loss(&mut g, &params, &arch, &batch, weight)?,
                ModelKind::Lstm => losses::forecast_batch_loss(&mut g, &params, &arch, &batch)?,
                ModelKind::AbLstm => {
                    losses::ablstm_batch_loss(&mut g, &params, &arch, &batch, weight)?
                }
            };
            if !parts.total.is_finite() {
                report.aborted_at = Some(epoch);
                break 'epochs;
            }
            let grads = g.backward(loss)?;
            let mut by_path = BTreeMap::new();
            for (path, var) in &params {
                if let Some(grad) = grads.get(*var) {
                    by_path.insert(path.clone(), grad.clone());
                }
            }
            if let Err(CfError::Training(_)) = adam_step(
                &mut model.store,
                &by_path,
                cfg.learning_rate,
                (ADAM_BETA1, ADAM_BETA2),
                ADAM_EPS,
            ) {
                report.aborted_at = Some(epoch);
                break 'epochs;
            }
            updates_done += 1;
            epoch_parts.total += parts.total;
            epoch_parts.rec += parts.rec;
            epoch_parts.reg += parts.reg;
            batches += 1;
        }
        if batches > 0 {
            epoch_parts.total /= batches as f64;
            epoch_parts.rec /= batches as f64;
            epoch_parts.reg /= batches as f64;
        }
        report.loss_curve.push(epoch_parts);
        report.epochs_run = epoch + 1;

        let is_eval_epoch = (epoch + 1) % cfg.eval_every.max(1) == 0 || epoch + 1 == cfg.epochs;
        if is_eval_epoch && !val_set.is_empty() {
            let mae = counterfactual_mae(&model, val_set)?;
            report.val_curve.push((epoch + 1, mae));
            let improved = best.as_ref().map(|(b, _)| mae < *b).unwrap_or(true);
            if improved {
                best = Some((mae, model.clone()));
                report.best_epoch = Some(epoch + 1);
            }
        }
    }

    report.wall_secs = started.elapsed().as_secs_f64();
    let best_model = best.map(|(_, m)| m).unwrap_or_else(|| model.clone());
    Ok(TrainOutcome {
        model,
        best: best_model,
        report,
    })
}
