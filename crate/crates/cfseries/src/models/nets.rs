//! Network builders. Each function wires one sub-network into a graph from
//! a shared map of parameter variables, so training losses and inference
//! paths are guaranteed to run the same forward computation.

use super::{ArchitectureSpec, ModelKind};
use crate::diffcore::{Graph, ParamStore, Tensor, Var};
use crate::error::Result;
use std::collections::BTreeMap;

/// Registers every parameter the given model kind needs.
pub fn init_params(kind: ModelKind, arch: &ArchitectureSpec, seed: u64, store: &mut ParamStore) {
    let (c1, c2) = arch.conv_channels;
    let k = arch.kernel;
    let n = arch.latent_dim;
    let emb = arch.cond_embed;
    let flat2 = c2 * arch.conv2_len();
    let flat_dec = c1 * arch.deconv_len();
    match kind {
        ModelKind::Cepae | ModelKind::Cvae | ModelKind::Caae => {
            store.init_glorot("enc.conv1.w", &[c1, 2, k], 2 * k, c1 * k, seed);
            store.init_zeros("enc.conv1.b", &[c1]);
            store.init_glorot("enc.conv2.w", &[c2, c1, k], c1 * k, c2 * k, seed);
            store.init_zeros("enc.conv2.b", &[c2]);
            // The variational encoder emits a location and a log-variance
            // per latent dimension; the others emit the code directly.
            let latent_out = if kind == ModelKind::Cvae { 2 * n } else { n };
            store.init_glorot(
                &format!("enc.fc{latent_out}.w"),
                &[latent_out, flat2],
                flat2,
                latent_out,
                seed,
            );
            store.init_zeros(&format!("enc.fc{latent_out}.b"), &[latent_out]);
            store.init_glorot("dec.embed.w", &[emb, arch.t1 + 1], arch.t1 + 1, emb, seed);
            store.init_zeros("dec.embed.b", &[emb]);
            store.init_glorot("dec.fc.w", &[flat2, n + emb], n + emb, flat2, seed);
            store.init_zeros("dec.fc.b", &[flat2]);
            store.init_glorot("dec.deconv.w", &[c2, c1, k], c2 * k, c1 * k, seed);
            store.init_zeros("dec.deconv.b", &[c1]);
            store.init_glorot("dec.head.w", &[arch.t2, flat_dec], flat_dec, arch.t2, seed);
            store.init_zeros("dec.head.b", &[arch.t2]);
            if kind == ModelKind::Caae {
                store.init_glorot("disc.fc1.w", &[16, n], n, 16, seed);
                store.init_zeros("disc.fc1.b", &[16]);
                store.init_glorot("disc.fc2.w", &[1, 16], 16, 1, seed);
                store.init_zeros("disc.fc2.b", &[1]);
            }
        }
        ModelKind::Lstm | ModelKind::AbLstm => {
            let h = arch.lstm_hidden;
            store.init_glorot("lstm.w_ih", &[4 * h, 1], 1, h, seed);
            store.init_glorot("lstm.w_hh", &[4 * h, h], h, h, seed);
            store.init_zeros("lstm.b", &[4 * h]);
            let head_in = if kind == ModelKind::AbLstm { h + 1 } else { h };
            store.init_glorot(
                &format!("head.fc{head_in}.w"),
                &[h, head_in],
                head_in,
                h,
                seed,
            );
            store.init_zeros(&format!("head.fc{head_in}.b"), &[h]);
            store.init_glorot("head.out.w", &[arch.t2, h], h, arch.t2, seed);
            store.init_zeros("head.out.b", &[arch.t2]);
            if kind == ModelKind::AbLstm {
                store.init_glorot("disc.w", &[1, h], h, 1, seed);
                store.init_zeros("disc.b", &[1]);
            }
        }
    }
}

/// Loads every stored parameter into the graph as a leaf.
pub fn load_params(g: &mut Graph, store: &ParamStore) -> BTreeMap<String, Var> {
    store
        .params
        .iter()
        .map(|(path, p)| (path.clone(), g.leaf(p.value.clone())))
        .collect()
}

fn p(params: &BTreeMap<String, Var>, path: &str) -> Var {
    *params
        .get(path)
        .unwrap_or_else(|| panic!("missing parameter {path}"))
}

/// Convolutional encoder over the full series. The input has two channels:
/// the concatenated (history, outcome window) and the event flag broadcast
/// over the steps where the event acts (the post-event window), which lets
/// even the first convolution express event-conditional corrections.
pub fn ae_encode(
    g: &mut Graph,
    params: &BTreeMap<String, Var>,
    arch: &ArchitectureSpec,
    y: &[f64],
    h: &[f64],
    e: u8,
    latent_out: usize,
) -> Result<Var> {
    let t = arch.total_len();
    debug_assert_eq!(h.len(), arch.t1);
    debug_assert_eq!(y.len(), arch.t2);
    let mut data = Vec::with_capacity(2 * t);
    data.extend_from_slice(h);
    data.extend_from_slice(y);
    data.extend(std::iter::repeat(0.0).take(arch.t1));
    data.extend(std::iter::repeat(e as f64).take(arch.t2));
    let x = g.leaf(Tensor {
        shape: vec![2, t],
        data,
    });
    let c1 = g.conv1d(
        x,
        p(params, "enc.conv1.w"),
        Some(p(params, "enc.conv1.b")),
        arch.stride,
    )?;
    let a1 = g.relu(c1);
    let c2 = g.conv1d(
        a1,
        p(params, "enc.conv2.w"),
        Some(p(params, "enc.conv2.b")),
        arch.stride,
    )?;
    let a2 = g.relu(c2);
    let flat = g.flatten(a2);
    g.dense(
        flat,
        p(params, &format!("enc.fc{latent_out}.w")),
        p(params, &format!("enc.fc{latent_out}.b")),
    )
}

/// Conditional decoder: embeds (history, event flag), concatenates the
/// latent code, and mirrors the encoder with a transposed convolution.
pub fn ae_decode(
    g: &mut Graph,
    params: &BTreeMap<String, Var>,
    arch: &ArchitectureSpec,
    z: Var,
    h: &[f64],
    e: u8,
) -> Result<Var> {
    let mut cond = Vec::with_capacity(arch.t1 + 1);
    cond.extend_from_slice(h);
    cond.push(e as f64);
    let cv = g.leaf(Tensor::vector(cond));
    let emb_pre = g.dense(cv, p(params, "dec.embed.w"), p(params, "dec.embed.b"))?;
    let emb = g.relu(emb_pre);
    let zin = g.concat(&[z, emb]);
    let f_pre = g.dense(zin, p(params, "dec.fc.w"), p(params, "dec.fc.b"))?;
    let f = g.relu(f_pre);
    let grid = g.reshape(f, vec![arch.conv_channels.1, arch.conv2_len()])?;
    let up = g.conv1d_transpose(
        grid,
        p(params, "dec.deconv.w"),
        Some(p(params, "dec.deconv.b")),
        arch.stride,
    )?;
    let au = g.relu(up);
    let flat = g.flatten(au);
    g.dense(flat, p(params, "dec.head.w"), p(params, "dec.head.b"))
}

/// Two-layer event discriminator on the latent code (adversarial model).
pub fn caae_disc(g: &mut Graph, params: &BTreeMap<String, Var>, z: Var) -> Result<Var> {
    let h_pre = g.dense(z, p(params, "disc.fc1.w"), p(params, "disc.fc1.b"))?;
    let h = g.relu(h_pre);
    g.dense(h, p(params, "disc.fc2.w"), p(params, "disc.fc2.b"))
}

/// Unrolls the recurrent encoder over a scalar series; returns the final
/// hidden state.
pub fn lstm_encode(
    g: &mut Graph,
    params: &BTreeMap<String, Var>,
    arch: &ArchitectureSpec,
    series: &[f64],
) -> Result<Var> {
    let hidden = arch.lstm_hidden;
    let mut hv = g.leaf(Tensor::zeros(&[hidden]));
    let mut cv = g.leaf(Tensor::zeros(&[hidden]));
    let (w_ih, w_hh, b) = (
        p(params, "lstm.w_ih"),
        p(params, "lstm.w_hh"),
        p(params, "lstm.b"),
    );
    for &x in series {
        let xt = g.leaf(Tensor::vector(vec![x]));
        let (h_next, c_next) = g.lstm_cell(xt, hv, cv, w_ih, w_hh, b)?;
        hv = h_next;
        cv = c_next;
    }
    Ok(hv)
}

/// Outcome head of the forecasters. The plain forecaster reads only the
/// representation; the balanced variant also conditions on the event flag.
pub fn lstm_head(
    g: &mut Graph,
    params: &BTreeMap<String, Var>,
    arch: &ArchitectureSpec,
    z: Var,
    e: Option<u8>,
) -> Result<Var> {
    let hidden = arch.lstm_hidden;
    let (input, head_in) = match e {
        Some(flag) => {
            let ev = g.leaf(Tensor::vector(vec![flag as f64]));
            (g.concat(&[z, ev]), hidden + 1)
        }
        None => (z, hidden),
    };
    let h_pre = g.dense(
        input,
        p(params, &format!("head.fc{head_in}.w")),
        p(params, &format!("head.fc{head_in}.b")),
    )?;
    let h = g.relu(h_pre);
    g.dense(h, p(params, "head.out.w"), p(params, "head.out.b"))
}

/// Logistic event discriminator on the recurrent representation.
pub fn ablstm_disc(g: &mut Graph, params: &BTreeMap<String, Var>, z: Var) -> Result<Var> {
    g.dense(z, p(params, "disc.w"), p(params, "disc.b"))
}
