//! Batch training objectives, each wired as a single graph so one backward
//! sweep yields every parameter gradient.

use super::nets;
use super::ArchitectureSpec;
use crate::datasets::EventSeries;
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{CfError, Result};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Value breakdown of a batch objective: total = rec + weighted regularizer.
/// `reg` is the unweighted regularizer value (latent spread, divergence, or
/// discriminator cross-entropy depending on the model).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub rec: f64,
    pub reg: f64,
}

fn target_leaf(g: &mut Graph, y: &[f64]) -> Var {
    g.leaf(Tensor::vector(y.to_vec()))
}

/// Squared reconstruction error of one sample, summed over the window.
fn sq_norm(g: &mut Graph, pred: Var, target: &[f64]) -> Result<Var> {
    let t = target_leaf(g, target);
    let d = g.sub(pred, t)?;
    let sq = g.square(d);
    Ok(g.sum(sq))
}

fn batch_mean(g: &mut Graph, per_sample: &[Var]) -> Var {
    let v = g.concat(per_sample);
    g.mean(v)
}

/// Entropy-penalty autoencoder: batch-mean squared reconstruction plus
/// `lambda` times the summed per-dimension latent standard deviation.
pub fn cepae_batch_loss(
    g: &mut Graph,
    params: &BTreeMap<String, Var>,
    arch: &ArchitectureSpec,
    batch: &[&EventSeries],
    lambda: f64,
) -> Result<(Var, LossParts)> {
    if batch.len() < 2 {
        return Err(CfError::Input("latent-spread loss needs batch >= 2".into()));
    }
    let mut recs = Vec::with_capacity(batch.len());
    let mut zs = Vec::with_capacity(batch.len());
    for s in batch {
        let z = nets::ae_encode(g, params, arch, &s.y, &s.h, s.e, arch.latent_dim)?;
        let xhat = nets::ae_decode(g, params, arch, z, &s.h, s.e)?;
        recs.push(sq_norm(g, xhat, &s.y)?);
        zs.push(z);
    }
    let rec = batch_mean(g, &recs);
    let zmat = g.stack(&zs)?;
    let stds = g.batch_std(zmat)?;
    let spread = g.sum(stds);
    let weighted = g.scale(spread, lambda);
    let total = g.add(rec, weighted)?;
    let parts = LossParts {
        total: g.value(total).item(),
        rec: g.value(rec).item(),
        reg: g.value(spread).item(),
    };
    Ok((total, parts))
}

/// Variational autoencoder: batch-mean squared reconstruction plus a
/// `beta`-weighted Gaussian divergence of the posterior from the prior.
pub fn cvae_batch_loss(
    g: &mut Graph,
    params: &BTreeMap<String, Var>,
    arch: &ArchitectureSpec,
    batch: &[&EventSeries],
    beta: f64,
    noise: &mut impl Rng,
) -> Result<(Var, LossParts)> {
    let n = arch.latent_dim;
    let mut recs = Vec::with_capacity(batch.len());
    let mut kls = Vec::with_capacity(batch.len());
    for s in batch {
        let out = nets::ae_encode(g, params, arch, &s.y, &s.h, s.e, 2 * n)?;
        let mu = g.slice(out, 0, n)?;
        let logvar = g.slice(out, n, n)?;
        let half = g.scale(logvar, 0.5);
        let sigma = g.exp(half);
        let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(noise)).collect();
        let epsv = g.leaf(Tensor::vector(eps));
        let noise_term = g.mul(sigma, epsv)?;
        let z = g.add(mu, noise_term)?;
        let xhat = nets::ae_decode(g, params, arch, z, &s.h, s.e)?;
        recs.push(sq_norm(g, xhat, &s.y)?);
        // KL(N(mu, sigma^2) || N(0, 1)) = 1/2 * sum(mu^2 + sigma^2 - 1 - log sigma^2)
        let mu2 = g.square(mu);
        let var = g.exp(logvar);
        let ones = g.leaf(Tensor::vector(vec![1.0; n]));
        let a = g.add(mu2, var)?;
        let b = g.sub(a, ones)?;
        let c = g.sub(b, logvar)?;
        let ksum = g.sum(c);
        kls.push(g.scale(ksum, 0.5));
    }
    let rec = batch_mean(g, &recs);
    let kl = batch_mean(g, &kls);
    let weighted = g.scale(kl, beta);
    let total = g.add(rec, weighted)?;
    let parts = LossParts {
        total: g.value(total).item(),
        rec: g.value(rec).item(),
        reg: g.value(kl).item(),
    };
    Ok((total, parts))
}

/// Adversarial autoencoder: reconstruction plus event-discriminator
/// cross-entropy, with the latent code passing through gradient reversal at
/// strength `lambda` on its way to the discriminator.
pub fn caae_batch_loss(
    g: &mut Graph,
    params: &BTreeMap<String, Var>,
    arch: &ArchitectureSpec,
    batch: &[&EventSeries],
    lambda: f64,
) -> Result<(Var, LossParts)> {
    let mut recs = Vec::with_capacity(batch.len());
    let mut logits = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for s in batch {
        let z = nets::ae_encode(g, params, arch, &s.y, &s.h, s.e, arch.latent_dim)?;
        let xhat = nets::ae_decode(g, params, arch, z, &s.h, s.e)?;
        recs.push(sq_norm(g, xhat, &s.y)?);
        let rev = g.gradient_reversal(z, lambda);
        logits.push(nets::caae_disc(g, params, rev)?);
        targets.push(s.e as f64);
    }
    let rec = batch_mean(g, &recs);
    let logit_vec = g.concat(&logits);
    let bce = g.bce_logits(logit_vec, targets)?;
    let total = g.add(rec, bce)?;
    let parts = LossParts {
        total: g.value(total).item(),
        rec: g.value(rec).item(),
        reg: g.value(bce).item(),
    };
    Ok((total, parts))
}

/// Plain forecaster: batch-mean per-step squared error of the forecast.
pub fn forecast_batch_loss(
    g: &mut Graph,
    params: &BTreeMap<String, Var>,
    arch: &ArchitectureSpec,
    batch: &[&EventSeries],
) -> Result<(Var, LossParts)> {
    let mut errs = Vec::with_capacity(batch.len());
    for s in batch {
        let z = nets::lstm_encode(g, params, arch, &s.h)?;
        let yhat = nets::lstm_head(g, params, arch, z, None)?;
        let t = target_leaf(g, &s.y);
        let d = g.sub(yhat, t)?;
        let sq = g.square(d);
        errs.push(g.mean(sq));
    }
    let mse = batch_mean(g, &errs);
    let parts = LossParts {
        total: g.value(mse).item(),
        rec: g.value(mse).item(),
        reg: 0.0,
    };
    Ok((mse, parts))
}

/// Balanced forecaster: per-step absolute error of the event-conditioned
/// outcome head plus discriminator cross-entropy through gradient reversal.
pub fn ablstm_batch_loss(
    g: &mut Graph,
    params: &BTreeMap<String, Var>,
    arch: &ArchitectureSpec,
    batch: &[&EventSeries],
    lambda: f64,
) -> Result<(Var, LossParts)> {
    let mut errs = Vec::with_capacity(batch.len());
    let mut logits = Vec::with_capacity(batch.len());
    let mut targets = Vec::with_capacity(batch.len());
    for s in batch {
        let z = nets::lstm_encode(g, params, arch, &s.h)?;
        let yhat = nets::lstm_head(g, params, arch, z, Some(s.e))?;
        let t = target_leaf(g, &s.y);
        let d = g.sub(yhat, t)?;
        let a = g.abs(d);
        errs.push(g.mean(a));
        let rev = g.gradient_reversal(z, lambda);
        logits.push(nets::ablstm_disc(g, params, rev)?);
        targets.push(s.e as f64);
    }
    let mae = batch_mean(g, &errs);
    let logit_vec = g.concat(&logits);
    let bce = g.bce_logits(logit_vec, targets)?;
    let total = g.add(mae, bce)?;
    let parts = LossParts {
        total: g.value(total).item(),
        rec: g.value(mae).item(),
        reg: g.value(bce).item(),
    };
    Ok((total, parts))
}
