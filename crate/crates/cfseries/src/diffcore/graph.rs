//! Tape-based reverse-mode differentiation over the small layer set the
//! models need. A [`Graph`] records one forward pass; [`Graph::backward`]
//! may be called exactly once per recording.

use super::tensor::Tensor;
use crate::error::{CfError, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackFn = Box<dyn Fn(&[Tensor], &Tensor) -> Vec<Tensor>>;

struct Node {
    parents: Vec<usize>,
    back: Option<BackFn>,
}

/// Recorded forward pass with saved activations for one backward sweep.
#[derive(Default)]
pub struct Graph {
    vals: Vec<Tensor>,
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by a backward sweep, indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.vals[v.0]
    }

    fn push(&mut self, val: Tensor, parents: Vec<usize>, back: Option<BackFn>) -> Var {
        self.vals.push(val);
        self.nodes.push(Node { parents, back });
        Var(self.vals.len() - 1)
    }

    /// Introduces an input or parameter value. Gradients are collected for
    /// every leaf; callers ignore the ones they do not need.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, vec![], None)
    }

    fn check_same_shape(&self, a: Var, b: Var) -> Result<()> {
        if !self.vals[a.0].same_shape(&self.vals[b.0]) {
            return Err(CfError::Shape {
                expected: self.vals[a.0].shape.clone(),
                got: self.vals[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b)?;
        let mut out = self.vals[a.0].clone();
        out.axpy(1.0, &self.vals[b.0]);
        Ok(self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(|_, g| vec![g.clone(), g.clone()])),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b)?;
        let mut out = self.vals[a.0].clone();
        out.axpy(-1.0, &self.vals[b.0]);
        Ok(self.push(
            out,
            vec![a.0, b.0],
            Some(Box::new(|_, g| {
                let mut neg = g.clone();
                for v in &mut neg.data {
                    *v = -*v;
                }
                vec![g.clone(), neg]
            })),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b)?;
        let data = self.vals[a.0]
            .data
            .iter()
            .zip(&self.vals[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.vals[a.0].shape.clone();
        let (ai, bi) = (a.0, b.0);
        Ok(self.push(
            Tensor { shape, data },
            vec![ai, bi],
            Some(Box::new(move |vals, g| {
                let ga = Tensor {
                    shape: g.shape.clone(),
                    data: g
                        .data
                        .iter()
                        .zip(&vals[bi].data)
                        .map(|(gi, y)| gi * y)
                        .collect(),
                };
                let gb = Tensor {
                    shape: g.shape.clone(),
                    data: g
                        .data
                        .iter()
                        .zip(&vals[ai].data)
                        .map(|(gi, x)| gi * x)
                        .collect(),
                };
                vec![ga, gb]
            })),
        ))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.vals[a.0].clone();
        for v in &mut out.data {
            *v *= c;
        }
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |_, g| {
                let mut gg = g.clone();
                for v in &mut gg.data {
                    *v *= c;
                }
                vec![gg]
            })),
        )
    }

    fn unary(
        &mut self,
        a: Var,
        f: impl Fn(f64) -> f64,
        dfdy: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let out = Tensor {
            shape: self.vals[a.0].shape.clone(),
            data: self.vals[a.0].data.iter().map(|&x| f(x)).collect(),
        };
        let ai = a.0;
        let oi = self.vals.len();
        self.push(
            out,
            vec![ai],
            Some(Box::new(move |vals, g| {
                let gi = Tensor {
                    shape: g.shape.clone(),
                    data: g
                        .data
                        .iter()
                        .zip(vals[ai].data.iter().zip(&vals[oi].data))
                        .map(|(gv, (&x, &y))| gv * dfdy(x, y))
                        .collect(),
                };
                vec![gi]
            })),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), |_, y| 1.0 - y * y)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), |_, y| y)
    }

    /// |x|, with the subgradient at 0 taken as 0.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.vals[a.0].data.iter().sum();
        let shape = self.vals[a.0].shape.clone();
        self.push(
            Tensor::scalar(total),
            vec![a.0],
            Some(Box::new(move |_, g| {
                let gv = g.item();
                vec![Tensor {
                    shape: shape.clone(),
                    data: vec![gv; shape.iter().product()],
                }]
            })),
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.vals[a.0].len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// y = W x for W (m, n) and x (n).
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (ws, xs) = (&self.vals[w.0].shape, &self.vals[x.0].shape);
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(CfError::Shape {
                expected: ws.clone(),
                got: xs.clone(),
            });
        }
        let (m, n) = (ws[0], ws[1]);
        let mut out = vec![0.0; m];
        {
            let wd = &self.vals[w.0].data;
            let xd = &self.vals[x.0].data;
            for i in 0..m {
                let row = &wd[i * n..(i + 1) * n];
                out[i] = row.iter().zip(xd).map(|(a, b)| a * b).sum();
            }
        }
        let (wi, xi) = (w.0, x.0);
        Ok(self.push(
            Tensor::vector(out),
            vec![wi, xi],
            Some(Box::new(move |vals, g| {
                let wd = &vals[wi].data;
                let xd = &vals[xi].data;
                let mut gw = vec![0.0; m * n];
                let mut gx = vec![0.0; n];
                for i in 0..m {
                    let gi = g.data[i];
                    for j in 0..n {
                        gw[i * n + j] += gi * xd[j];
                        gx[j] += gi * wd[i * n + j];
                    }
                }
                vec![
                    Tensor {
                        shape: vec![m, n],
                        data: gw,
                    },
                    Tensor::vector(gx),
                ]
            })),
        ))
    }

    /// Dense layer y = W x + b.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    /// Reinterprets the buffer under a new shape (same length).
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let len: usize = shape.iter().product();
        if len != self.vals[a.0].len() {
            return Err(CfError::Shape {
                expected: shape,
                got: self.vals[a.0].shape.clone(),
            });
        }
        let old_shape = self.vals[a.0].shape.clone();
        let out = Tensor {
            shape,
            data: self.vals[a.0].data.clone(),
        };
        Ok(self.push(
            out,
            vec![a.0],
            Some(Box::new(move |_, g| {
                vec![Tensor {
                    shape: old_shape.clone(),
                    data: g.data.clone(),
                }]
            })),
        ))
    }

    pub fn flatten(&mut self, a: Var) -> Var {
        let len = self.vals[a.0].len();
        self.reshape(a, vec![len]).expect("flatten preserves length")
    }

    /// 1-D concatenation of the flattened inputs.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            data.extend_from_slice(&self.vals[p.0].data);
            lens.push(self.vals[p.0].len());
        }
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| self.vals[p.0].shape.clone()).collect();
        self.push(
            Tensor::vector(data),
            parts.iter().map(|p| p.0).collect(),
            Some(Box::new(move |_, g| {
                let mut out = Vec::with_capacity(lens.len());
                let mut offset = 0;
                for (len, shape) in lens.iter().zip(&shapes) {
                    out.push(Tensor {
                        shape: shape.clone(),
                        data: g.data[offset..offset + len].to_vec(),
                    });
                    offset += len;
                }
                out
            })),
        )
    }

    /// Contiguous slice of the flattened input.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > self.vals[a.0].len() {
            return Err(CfError::Input(format!(
                "slice {start}..{} out of range for length {}",
                start + len,
                self.vals[a.0].len()
            )));
        }
        let data = self.vals[a.0].data[start..start + len].to_vec();
        let full_len = self.vals[a.0].len();
        let full_shape = self.vals[a.0].shape.clone();
        Ok(self.push(
            Tensor::vector(data),
            vec![a.0],
            Some(Box::new(move |_, g| {
                let mut gd = vec![0.0; full_len];
                gd[start..start + len].copy_from_slice(&g.data);
                vec![Tensor {
                    shape: full_shape.clone(),
                    data: gd,
                }]
            })),
        ))
    }

    /// Stacks B equally sized vectors into a (B, n) matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(CfError::Input("stack of zero rows".into()));
        }
        let n = self.vals[rows[0].0].len();
        let mut data = Vec::with_capacity(rows.len() * n);
        for r in rows {
            if self.vals[r.0].len() != n {
                return Err(CfError::Shape {
                    expected: vec![n],
                    got: self.vals[r.0].shape.clone(),
                });
            }
            data.extend_from_slice(&self.vals[r.0].data);
        }
        let b = rows.len();
        Ok(self.push(
            Tensor {
                shape: vec![b, n],
                data,
            },
            rows.iter().map(|r| r.0).collect(),
            Some(Box::new(move |_, g| {
                (0..b)
                    .map(|i| Tensor::vector(g.data[i * n..(i + 1) * n].to_vec()))
                    .collect()
            })),
        ))
    }

    /// Per-column population standard deviation of a (B, n) matrix.
    pub fn batch_std(&mut self, a: Var) -> Result<Var> {
        let shape = self.vals[a.0].shape.clone();
        if shape.len() != 2 || shape[0] < 2 {
            return Err(CfError::Input(
                "batch_std needs a (B, n) matrix with B >= 2".into(),
            ));
        }
        let (b, n) = (shape[0], shape[1]);
        let data = &self.vals[a.0].data;
        let mut mean = vec![0.0; n];
        for i in 0..b {
            for j in 0..n {
                mean[j] += data[i * n + j];
            }
        }
        for m in &mut mean {
            *m /= b as f64;
        }
        let mut std = vec![0.0; n];
        for i in 0..b {
            for j in 0..n {
                let d = data[i * n + j] - mean[j];
                std[j] += d * d;
            }
        }
        for s in &mut std {
            *s = (*s / b as f64).sqrt();
        }
        let ai = a.0;
        let mean_b = mean.clone();
        let std_b = std.clone();
        Ok(self.push(
            Tensor::vector(std),
            vec![ai],
            Some(Box::new(move |vals, g| {
                let data = &vals[ai].data;
                let mut gd = vec![0.0; b * n];
                for j in 0..n {
                    let denom = (b as f64) * std_b[j].max(1e-12);
                    for i in 0..b {
                        gd[i * n + j] = g.data[j] * (data[i * n + j] - mean_b[j]) / denom;
                    }
                }
                vec![Tensor {
                    shape: vec![b, n],
                    data: gd,
                }]
            })),
        ))
    }

    /// Gradient reversal: identity forward, backward multiplied by -lambda.
    pub fn gradient_reversal(&mut self, a: Var, lambda: f64) -> Var {
        let out = self.vals[a.0].clone();
        self.push(
            out,
            vec![a.0],
            Some(Box::new(move |_, g| {
                let mut gg = g.clone();
                for v in &mut gg.data {
                    *v *= -lambda;
                }
                vec![gg]
            })),
        )
    }

    /// Mean binary cross-entropy of logits against fixed targets.
    pub fn bce_logits(&mut self, logits: Var, targets: Vec<f64>) -> Result<Var> {
        if self.vals[logits.0].len() != targets.len() {
            return Err(CfError::Shape {
                expected: vec![targets.len()],
                got: self.vals[logits.0].shape.clone(),
            });
        }
        let n = targets.len() as f64;
        let loss: f64 = self.vals[logits.0]
            .data
            .iter()
            .zip(&targets)
            .map(|(&x, &t)| softplus(x) - t * x)
            .sum::<f64>()
            / n;
        let li = logits.0;
        let shape = self.vals[logits.0].shape.clone();
        Ok(self.push(
            Tensor::scalar(loss),
            vec![li],
            Some(Box::new(move |vals, g| {
                let gv = g.item() / n;
                let gd = vals[li]
                    .data
                    .iter()
                    .zip(&targets)
                    .map(|(&x, &t)| gv * (1.0 / (1.0 + (-x).exp()) - t))
                    .collect();
                vec![Tensor {
                    shape: shape.clone(),
                    data: gd,
                }]
            })),
        ))
    }

    /// Valid (no padding) strided cross-correlation.
    /// x: (C_in, L), w: (C_out, C_in, K), optional bias (C_out).
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let xs = self.vals[x.0].shape.clone();
        let ws = self.vals[w.0].shape.clone();
        if xs.len() != 2 || ws.len() != 3 || ws[1] != xs[0] {
            return Err(CfError::Shape {
                expected: ws,
                got: xs,
            });
        }
        let (c_in, l) = (xs[0], xs[1]);
        let (c_out, k) = (ws[0], ws[2]);
        if k > l || stride == 0 {
            return Err(CfError::Input(format!(
                "kernel {k} with stride {stride} does not fit length {l}"
            )));
        }
        let l_out = (l - k) / stride + 1;
        let mut out = vec![0.0; c_out * l_out];
        {
            let xd = &self.vals[x.0].data;
            let wd = &self.vals[w.0].data;
            for co in 0..c_out {
                for t in 0..l_out {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        let xrow = &xd[ci * l..(ci + 1) * l];
                        let wrow = &wd[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                        let base = t * stride;
                        for kk in 0..k {
                            acc += wrow[kk] * xrow[base + kk];
                        }
                    }
                    out[co * l_out + t] = acc;
                }
            }
            if let Some(bias) = b {
                let bd = &self.vals[bias.0].data;
                if bd.len() != c_out {
                    return Err(CfError::Shape {
                        expected: vec![c_out],
                        got: self.vals[bias.0].shape.clone(),
                    });
                }
                for co in 0..c_out {
                    for t in 0..l_out {
                        out[co * l_out + t] += bd[co];
                    }
                }
            }
        }
        let (xi, wi) = (x.0, w.0);
        let mut parents = vec![xi, wi];
        if let Some(bias) = b {
            parents.push(bias.0);
        }
        let has_bias = b.is_some();
        Ok(self.push(
            Tensor {
                shape: vec![c_out, l_out],
                data: out,
            },
            parents,
            Some(Box::new(move |vals, g| {
                let xd = &vals[xi].data;
                let wd = &vals[wi].data;
                let mut gx = vec![0.0; c_in * l];
                let mut gw = vec![0.0; c_out * c_in * k];
                let mut gb = vec![0.0; c_out];
                for co in 0..c_out {
                    for t in 0..l_out {
                        let go = g.data[co * l_out + t];
                        gb[co] += go;
                        let base = t * stride;
                        for ci in 0..c_in {
                            for kk in 0..k {
                                gw[(co * c_in + ci) * k + kk] += go * xd[ci * l + base + kk];
                                gx[ci * l + base + kk] += go * wd[(co * c_in + ci) * k + kk];
                            }
                        }
                    }
                }
                let mut grads = vec![
                    Tensor {
                        shape: vec![c_in, l],
                        data: gx,
                    },
                    Tensor {
                        shape: vec![c_out, c_in, k],
                        data: gw,
                    },
                ];
                if has_bias {
                    grads.push(Tensor::vector(gb));
                }
                grads
            })),
        ))
    }

    /// Adjoint of [`Graph::conv1d`]: maps (C_in, L) to (C_out, (L-1)*stride + K)
    /// with weights (C_in, C_out, K).
    pub fn conv1d_transpose(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
    ) -> Result<Var> {
        let xs = self.vals[x.0].shape.clone();
        let ws = self.vals[w.0].shape.clone();
        if xs.len() != 2 || ws.len() != 3 || ws[0] != xs[0] || stride == 0 {
            return Err(CfError::Shape {
                expected: ws,
                got: xs,
            });
        }
        let (c_in, l) = (xs[0], xs[1]);
        let (c_out, k) = (ws[1], ws[2]);
        let l_out = (l - 1) * stride + k;
        let mut out = vec![0.0; c_out * l_out];
        {
            let xd = &self.vals[x.0].data;
            let wd = &self.vals[w.0].data;
            for ci in 0..c_in {
                for t in 0..l {
                    let xv = xd[ci * l + t];
                    let base = t * stride;
                    for co in 0..c_out {
                        let wrow = &wd[(ci * c_out + co) * k..(ci * c_out + co + 1) * k];
                        for kk in 0..k {
                            out[co * l_out + base + kk] += xv * wrow[kk];
                        }
                    }
                }
            }
            if let Some(bias) = b {
                let bd = &self.vals[bias.0].data;
                if bd.len() != c_out {
                    return Err(CfError::Shape {
                        expected: vec![c_out],
                        got: self.vals[bias.0].shape.clone(),
                    });
                }
                for co in 0..c_out {
                    for t in 0..l_out {
                        out[co * l_out + t] += bd[co];
                    }
                }
            }
        }
        let (xi, wi) = (x.0, w.0);
        let mut parents = vec![xi, wi];
        if let Some(bias) = b {
            parents.push(bias.0);
        }
        let has_bias = b.is_some();
        Ok(self.push(
            Tensor {
                shape: vec![c_out, l_out],
                data: out,
            },
            parents,
            Some(Box::new(move |vals, g| {
                let xd = &vals[xi].data;
                let wd = &vals[wi].data;
                let mut gx = vec![0.0; c_in * l];
                let mut gw = vec![0.0; c_in * c_out * k];
                let mut gb = vec![0.0; c_out];
                for ci in 0..c_in {
                    for t in 0..l {
                        let base = t * stride;
                        let mut acc = 0.0;
                        for co in 0..c_out {
                            let widx = (ci * c_out + co) * k;
                            for kk in 0..k {
                                let go = g.data[co * l_out + base + kk];
                                acc += go * wd[widx + kk];
                                gw[widx + kk] += go * xd[ci * l + t];
                            }
                        }
                        gx[ci * l + t] = acc;
                    }
                }
                for co in 0..c_out {
                    for t in 0..l_out {
                        gb[co] += g.data[co * l_out + t];
                    }
                }
                let mut grads = vec![
                    Tensor {
                        shape: vec![c_in, l],
                        data: gx,
                    },
                    Tensor {
                        shape: vec![c_in, c_out, k],
                        data: gw,
                    },
                ];
                if has_bias {
                    grads.push(Tensor::vector(gb));
                }
                grads
            })),
        ))
    }

    /// Standard 4-gate LSTM cell, composed from primitive ops so its backward
    /// pass is covered by the same machinery as everything else.
    /// Gate order in the stacked weights: input, forget, cell, output.
    pub fn lstm_cell(
        &mut self,
        x: Var,
        h_prev: Var,
        c_prev: Var,
        w_ih: Var,
        w_hh: Var,
        bias: Var,
    ) -> Result<(Var, Var)> {
        let hidden = self.vals[h_prev.0].len();
        let ih = self.matvec(w_ih, x)?;
        let hh = self.matvec(w_hh, h_prev)?;
        let pre0 = self.add(ih, hh)?;
        let pre = self.add(pre0, bias)?;
        let i_gate = self.slice(pre, 0, hidden)?;
        let f_gate = self.slice(pre, hidden, hidden)?;
        let g_gate = self.slice(pre, 2 * hidden, hidden)?;
        let o_gate = self.slice(pre, 3 * hidden, hidden)?;
        let i = self.sigmoid(i_gate);
        let f = self.sigmoid(f_gate);
        let g = self.tanh(g_gate);
        let o = self.sigmoid(o_gate);
        let fc = self.mul(f, c_prev)?;
        let ig = self.mul(i, g)?;
        let c = self.add(fc, ig)?;
        let ct = self.tanh(c);
        let h = self.mul(o, ct)?;
        Ok((h, c))
    }

    /// Reverse sweep from a scalar loss. Consumes the recording; calling it a
    /// second time on the same graph is a usage error.
    pub fn backward(&mut self, loss: Var) -> Result<Grads> {
        if self.consumed {
            return Err(CfError::Usage(
                "backward already called on this recording".into(),
            ));
        }
        if self.vals[loss.0].len() != 1 {
            return Err(CfError::Usage("loss must be a scalar".into()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.vals.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].clone() else { continue };
            let node = &self.nodes[i];
            let Some(back) = &node.back else { continue };
            let parent_grads = back(&self.vals, &g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                match &mut grads[p] {
                    Some(acc) => acc.axpy(1.0, &pg),
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(Grads { grads })
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        0.0
    } else {
        (1.0 + x.exp()).ln()
    }
}
