//! The five model families: three encoder–decoder counterfactual models
//! (entropy-penalty autoencoder, variational autoencoder, adversarial
//! autoencoder) and two recurrent forecasters (plain and adversarially
//! balanced). They share sub-networks by parameter path, so models that
//! differ only in their regularizer start from identical weights.

mod losses;
mod nets;
mod train;

pub use losses::{
    ablstm_batch_loss, caae_batch_loss, cepae_batch_loss, cvae_batch_loss, forecast_batch_loss,
    LossParts,
};
pub use train::{counterfactual_mae, train, TrainConfig, TrainOutcome, TrainReport};

use crate::diffcore::{Checkpoint, Graph, ParamStore, Var};
use crate::error::{CfError, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Cepae,
    Cvae,
    Caae,
    Lstm,
    AbLstm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Cepae,
        ModelKind::Cvae,
        ModelKind::Caae,
        ModelKind::Lstm,
        ModelKind::AbLstm,
    ];

    /// Encoder–decoder models answer counterfactual queries; forecasters
    /// only extrapolate from history.
    pub fn is_counterfactual(self) -> bool {
        matches!(self, ModelKind::Cepae | ModelKind::Cvae | ModelKind::Caae)
    }

    pub fn is_forecaster(self) -> bool {
        !self.is_counterfactual()
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::Cepae => "cepae",
            ModelKind::Cvae => "cvae",
            ModelKind::Caae => "caae",
            ModelKind::Lstm => "lstm",
            ModelKind::AbLstm => "ab-lstm",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = CfError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cepae" => Ok(ModelKind::Cepae),
            "cvae" => Ok(ModelKind::Cvae),
            "caae" => Ok(ModelKind::Caae),
            "lstm" => Ok(ModelKind::Lstm),
            "ab-lstm" | "ablstm" => Ok(ModelKind::AbLstm),
            other => Err(CfError::Usage(format!("unknown model kind: {other}"))),
        }
    }
}

/// Shape hyperparameters shared by every model built on the same dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub t1: usize,
    pub t2: usize,
    pub latent_dim: usize,
    pub conv_channels: (usize, usize),
    pub kernel: usize,
    pub stride: usize,
    /// Width of the decoder's embedding of (history, event flag).
    pub cond_embed: usize,
    pub lstm_hidden: usize,
}

impl ArchitectureSpec {
    pub fn new(t1: usize, t2: usize) -> Self {
        Self {
            t1,
            t2,
            latent_dim: 8,
            conv_channels: (32, 64),
            // An even kernel with stride 2 tiles the window exactly, so the
            // strided stack sees every step including the final one.
            kernel: 4,
            stride: 2,
            cond_embed: 32,
            lstm_hidden: 32,
        }
    }

    pub fn total_len(&self) -> usize {
        self.t1 + self.t2
    }

    /// Sequence length after the first valid strided convolution.
    pub fn conv1_len(&self) -> usize {
        (self.total_len() - self.kernel) / self.stride + 1
    }

    pub fn conv2_len(&self) -> usize {
        (self.conv1_len() - self.kernel) / self.stride + 1
    }

    /// Length produced by the transposed convolution in the decoder.
    pub fn deconv_len(&self) -> usize {
        (self.conv2_len() - 1) * self.stride + self.kernel
    }
}

/// A model: its kind, shape, and trainable parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub kind: ModelKind,
    pub arch: ArchitectureSpec,
    pub store: ParamStore,
}

impl Model {
    /// Initializes fresh weights. Parameters are seeded per path, so two
    /// model kinds sharing a sub-network get identical initial weights for
    /// it under the same seed.
    pub fn init(kind: ModelKind, arch: ArchitectureSpec, seed: u64) -> Self {
        let mut store = ParamStore::new();
        nets::init_params(kind, &arch, seed, &mut store);
        Self { kind, arch, store }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model_kind: self.kind.to_string(),
            arch_json: serde_json::to_value(self.arch).expect("arch serializes"),
            store: self.store.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let kind: ModelKind = ckpt.model_kind.parse()?;
        let arch: ArchitectureSpec = serde_json::from_value(ckpt.arch_json)
            .map_err(|e| CfError::Serde(e.to_string()))?;
        Ok(Self {
            kind,
            arch,
            store: ckpt.store,
        })
    }

    fn load_vars(&self, g: &mut Graph) -> BTreeMap<String, Var> {
        nets::load_params(g, &self.store)
    }

    /// Deterministic latent code z = E(y_f, h, e_f). For the variational
    /// model this is the posterior mean.
    pub fn encode(&self, y: &[f64], h: &[f64], e: u8) -> Result<Vec<f64>> {
        if !self.kind.is_counterfactual() {
            return Err(CfError::Usage(format!(
                "{} has no instance encoder",
                self.kind
            )));
        }
        if self.kind == ModelKind::Cvae {
            return Ok(self.encode_dist(y, h, e)?.0);
        }
        let mut g = Graph::new();
        let p = self.load_vars(&mut g);
        let z = nets::ae_encode(&mut g, &p, &self.arch, y, h, e, self.arch.latent_dim)?;
        Ok(g.value(z).data.clone())
    }

    /// Posterior location and scale of the variational encoder.
    pub fn encode_dist(&self, y: &[f64], h: &[f64], e: u8) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.kind != ModelKind::Cvae {
            return Err(CfError::Usage(format!(
                "{} has no distributional encoder",
                self.kind
            )));
        }
        let n = self.arch.latent_dim;
        let mut g = Graph::new();
        let p = self.load_vars(&mut g);
        let out = nets::ae_encode(&mut g, &p, &self.arch, y, h, e, 2 * n)?;
        let v = &g.value(out).data;
        let mu = v[..n].to_vec();
        let sigma = v[n..].iter().map(|lv| (0.5 * lv).exp()).collect();
        Ok((mu, sigma))
    }

    /// Decoded post-event window D(z, h, e).
    pub fn decode(&self, z: &[f64], h: &[f64], e: u8) -> Result<Vec<f64>> {
        if !self.kind.is_counterfactual() {
            return Err(CfError::Usage(format!("{} has no decoder", self.kind)));
        }
        if z.len() != self.arch.latent_dim {
            return Err(CfError::Shape {
                expected: vec![self.arch.latent_dim],
                got: vec![z.len()],
            });
        }
        let mut g = Graph::new();
        let p = self.load_vars(&mut g);
        let zv = g.leaf(crate::diffcore::Tensor::vector(z.to_vec()));
        let out = nets::ae_decode(&mut g, &p, &self.arch, zv, h, e)?;
        Ok(g.value(out).data.clone())
    }

    /// Forecast of the post-event window from history and event flag.
    pub fn forecast(&self, h: &[f64], e: u8) -> Result<Vec<f64>> {
        if !self.kind.is_forecaster() {
            return Err(CfError::Usage(format!("{} is not a forecaster", self.kind)));
        }
        let mut g = Graph::new();
        let p = self.load_vars(&mut g);
        let z = nets::lstm_encode(&mut g, &p, &self.arch, h)?;
        let cond = if self.kind == ModelKind::AbLstm {
            Some(e)
        } else {
            None
        };
        let out = nets::lstm_head(&mut g, &p, &self.arch, z, cond)?;
        Ok(g.value(out).data.clone())
    }

    /// Representation-level output of the recurrent encoder, used by the
    /// balanced forecaster when flipping the event flag at query time.
    pub fn lstm_representation(&self, h: &[f64]) -> Result<Vec<f64>> {
        if !self.kind.is_forecaster() {
            return Err(CfError::Usage(format!("{} is not a forecaster", self.kind)));
        }
        let mut g = Graph::new();
        let p = self.load_vars(&mut g);
        let z = nets::lstm_encode(&mut g, &p, &self.arch, h)?;
        Ok(g.value(z).data.clone())
    }
}

#[cfg(test)]
mod tests;
