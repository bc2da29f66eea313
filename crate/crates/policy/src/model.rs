//! Pre-norm decoder-only transformer over a flat `f64` parameter buffer.
//!
//! Parameters are laid out contiguously (see [`Layout`]) so that optimizers,
//! checkpoints and gradient checks can treat them as one vector. The backward
//! pass is written by hand and accumulates into a caller-provided gradient
//! buffer with the same layout.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use drs_core::{TokenId, Vocab};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("sequence of length {len} exceeds the maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("token id {0} outside the vocabulary")]
    UnknownToken(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub vocab: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_len: usize,
    pub d_ff: usize,
    /// Policy readout reuses the transposed token embedding.
    #[serde(default)]
    pub tie_output: bool,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            vocab: Vocab::standard().len(),
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            max_len: 160,
            d_ff: 256,
            tie_output: false,
        }
    }
}

impl ModelDims {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Tying applies only when the readout width is the vocabulary.
    pub fn tied(&self, out_dim: usize) -> bool {
        self.tie_output && out_dim == self.vocab
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    ln1_g: usize,
    ln1_b: usize,
    w_qkv: usize,
    b_qkv: usize,
    w_o: usize,
    b_o: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Offsets of every tensor inside the flat parameter buffer, in storage order.
#[derive(Debug, Clone)]
pub struct Layout {
    tok: usize,
    pos: usize,
    layers: Vec<LayerOffsets>,
    lnf_g: usize,
    lnf_b: usize,
    w_out: usize,
    b_out: usize,
    tied: bool,
    total: usize,
}

impl Layout {
    pub fn new(d: &ModelDims, out_dim: usize) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let (m, f) = (d.d_model, d.d_ff);
        let tok = take(d.vocab * m);
        let pos = take(d.max_len * m);
        let layers = (0..d.n_layers)
            .map(|_| LayerOffsets {
                ln1_g: take(m),
                ln1_b: take(m),
                w_qkv: take(m * 3 * m),
                b_qkv: take(3 * m),
                w_o: take(m * m),
                b_o: take(m),
                ln2_g: take(m),
                ln2_b: take(m),
                w1: take(m * f),
                b1: take(f),
                w2: take(f * m),
                b2: take(m),
            })
            .collect();
        let lnf_g = take(m);
        let lnf_b = take(m);
        let tied = d.tied(out_dim);
        let w_out = take(if tied { 0 } else { m * out_dim });
        let b_out = take(out_dim);
        Layout {
            tok,
            pos,
            layers,
            lnf_g,
            lnf_b,
            w_out,
            b_out,
            tied,
            total: at,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Start of the output projection; everything before it is trunk.
    pub fn head_offset(&self) -> usize {
        self.w_out
    }

    /// Named tensors with their shapes, in storage order.
    pub fn tensors(&self, d: &ModelDims, out_dim: usize) -> Vec<(String, Vec<usize>)> {
        let (m, f) = (d.d_model, d.d_ff);
        let mut v = vec![
            ("tok_emb".to_string(), vec![d.vocab, m]),
            ("pos_emb".to_string(), vec![d.max_len, m]),
        ];
        for i in 0..self.layers.len() {
            for (name, shape) in [
                ("ln1_g", vec![m]),
                ("ln1_b", vec![m]),
                ("w_qkv", vec![m, 3 * m]),
                ("b_qkv", vec![3 * m]),
                ("w_o", vec![m, m]),
                ("b_o", vec![m]),
                ("ln2_g", vec![m]),
                ("ln2_b", vec![m]),
                ("w1", vec![m, f]),
                ("b1", vec![f]),
                ("w2", vec![f, m]),
                ("b2", vec![m]),
            ] {
                v.push((format!("layer{i}.{name}"), shape));
            }
        }
        v.push(("lnf_g".into(), vec![m]));
        v.push(("lnf_b".into(), vec![m]));
        if !self.tied {
            v.push(("w_out".into(), vec![m, out_dim]));
        }
        v.push(("b_out".into(), vec![out_dim]));
        v
    }
}

/// Readout matrix, d_model × out_dim.
fn readout<'a>(p: &'a [f64], lay: &Layout, d: &ModelDims, out_dim: usize) -> ArrayView2<'a, f64> {
    if lay.tied {
        mat(p, lay.tok, d.vocab, d.d_model).reversed_axes()
    } else {
        mat(p, lay.w_out, d.d_model, out_dim)
    }
}

fn mat(p: &[f64], off: usize, r: usize, c: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((r, c), &p[off..off + r * c]).expect("layout")
}

fn vector(p: &[f64], off: usize, n: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&p[off..off + n])
}

fn mat_mut(p: &mut [f64], off: usize, r: usize, c: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((r, c), &mut p[off..off + r * c]).expect("layout")
}

fn vector_mut(p: &mut [f64], off: usize, n: usize) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut p[off..off + n])
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, g: ArrayView1<f64>, b: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let rr = *r;
        row.mapv_inplace(|v| v * rr);
    }
    let y = &xhat * &g + &b;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_row(x: ArrayView1<f64>, g: ArrayView1<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let d = x.len() as f64;
    let mean = x.sum() / d;
    let c = x.mapv(|v| v - mean);
    let var = c.iter().map(|v| v * v).sum::<f64>() / d;
    let r = 1.0 / (var + LN_EPS).sqrt();
    c * r * &g + &b
}

/// Returns dx and accumulates dg, db.
fn layer_norm_backward(
    dy: &Array2<f64>,
    c: &LnCache,
    g: ArrayView1<f64>,
    mut dg: ArrayViewMut1<f64>,
    mut db: ArrayViewMut1<f64>,
) -> Array2<f64> {
    dg += &(dy * &c.xhat).sum_axis(Axis(0));
    db += &dy.sum_axis(Axis(0));
    let dxhat = dy * &g;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = c.xhat.row(i);
        let s1 = dh.sum();
        let s2 = dh.dot(&xh);
        let r = c.rstd[i];
        let mut out = dx.row_mut(i);
        for j in 0..dh.len() {
            out[j] = r / d * (d * dh[j] - s1 - xh[j] * s2);
        }
    }
    dx
}

fn add_bias(y: &mut Array2<f64>, b: ArrayView1<f64>) {
    *y += &b;
}

/// y = x·W (+ accumulates nothing); convenience wrapper.
fn matmul(x: &Array2<f64>, w: ArrayView2<f64>) -> Array2<f64> {
    x.dot(&w)
}

/// dW += xᵀ·dy, db += Σ dy, returns dy·Wᵀ.
fn linear_backward(
    x: &Array2<f64>,
    dy: &Array2<f64>,
    w: ArrayView2<f64>,
    grad: &mut [f64],
    w_off: usize,
    b_off: usize,
) -> Array2<f64> {
    let (r, c) = w.dim();
    {
        let mut gw = mat_mut(grad, w_off, r, c);
        general_mat_mul(1.0, &x.t(), dy, 1.0, &mut gw);
    }
    {
        let mut gb = vector_mut(grad, b_off, c);
        gb += &dy.sum_axis(Axis(0));
    }
    dy.dot(&w.t())
}

struct LayerCache {
    ln1: LnCache,
    a1: Array2<f64>,
    qkv: Array2<f64>,
    /// Attention probabilities per head, each T×T.
    probs: Vec<Array2<f64>>,
    att: Array2<f64>,
    ln2: LnCache,
    a2: Array2<f64>,
    h: Array2<f64>,
    g: Array2<f64>,
}

/// Activations retained for the backward pass.
pub struct Tape {
    ids: Vec<usize>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    af: Array2<f64>,
}

/// A transformer trunk with a linear readout of width `out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    dims: ModelDims,
    out_dim: usize,
    params: Vec<f64>,
}

impl Transformer {
    /// Random initialization: N(0, 0.02) weights, residual projections scaled
    /// by 1/sqrt(2·layers), zero biases, unit norm gains. `zero_head` zeroes
    /// the readout so initial outputs are exactly the bias.
    pub fn new<R: Rng>(dims: ModelDims, out_dim: usize, zero_head: bool, rng: &mut R) -> Self {
        let layout = Layout::new(&dims, out_dim);
        let mut params = vec![0.0; layout.total()];
        let std = 0.02;
        let normal = Normal::new(0.0, std).expect("valid std");
        let resid = Normal::new(0.0, std / (2.0 * dims.n_layers as f64).sqrt()).expect("valid std");
        let (m, f) = (dims.d_model, dims.d_ff);
        let mut fill = |p: &mut [f64], off: usize, n: usize, dist: &Normal<f64>| {
            for x in &mut p[off..off + n] {
                *x = dist.sample(rng);
            }
        };
        fill(&mut params, layout.tok, dims.vocab * m, &normal);
        fill(&mut params, layout.pos, dims.max_len * m, &normal);
        for l in &layout.layers {
            fill(&mut params, l.w_qkv, m * 3 * m, &normal);
            fill(&mut params, l.w_o, m * m, &resid);
            fill(&mut params, l.w1, m * f, &normal);
            fill(&mut params, l.w2, f * m, &resid);
            params[l.ln1_g..l.ln1_g + m].fill(1.0);
            params[l.ln2_g..l.ln2_g + m].fill(1.0);
        }
        params[layout.lnf_g..layout.lnf_g + m].fill(1.0);
        if !zero_head && !layout.tied {
            fill(&mut params, layout.w_out, m * out_dim, &normal);
        }
        Transformer {
            dims,
            out_dim,
            params,
        }
    }

    /// Wraps an existing parameter vector; fails if its length does not
    /// match the architecture.
    pub fn from_params(dims: ModelDims, out_dim: usize, params: Vec<f64>) -> Option<Self> {
        (params.len() == Layout::new(&dims, out_dim).total()).then_some(Transformer {
            dims,
            out_dim,
            params,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.dims, self.out_dim)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check(&self, ids: &[TokenId]) -> Result<Vec<usize>, ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if ids.len() > self.dims.max_len {
            return Err(ModelError::SequenceTooLong {
                len: ids.len(),
                max: self.dims.max_len,
            });
        }
        ids.iter()
            .map(|t| {
                if t.index() < self.dims.vocab {
                    Ok(t.index())
                } else {
                    Err(ModelError::UnknownToken(t.0))
                }
            })
            .collect()
    }

    /// Per-position outputs, shape (len, out_dim).
    pub fn forward(&self, ids: &[TokenId]) -> Result<Array2<f64>, ModelError> {
        self.forward_tape(ids).map(|(y, _)| y)
    }

    /// Forward pass that also records the activations for [`Self::backward`].
    pub fn forward_tape(&self, ids: &[TokenId]) -> Result<(Array2<f64>, Tape), ModelError> {
        let ids = self.check(ids)?;
        let lay = self.layout();
        let p = &self.params;
        let d = &self.dims;
        let (m, f, nh, dh) = (d.d_model, d.d_ff, d.n_heads, d.head_dim());
        let t_len = ids.len();
        let tok = mat(p, lay.tok, d.vocab, m);
        let pos = mat(p, lay.pos, d.max_len, m);
        let mut x = Array2::zeros((t_len, m));
        for (t, &id) in ids.iter().enumerate() {
            let mut row = x.row_mut(t);
            row.assign(&tok.row(id));
            row += &pos.row(t);
        }
        let scale = 1.0 / (dh as f64).sqrt();
        let mut layers = Vec::with_capacity(d.n_layers);
        for l in &lay.layers {
            let (a1, ln1) = layer_norm(&x, vector(p, l.ln1_g, m), vector(p, l.ln1_b, m));
            let mut qkv = matmul(&a1, mat(p, l.w_qkv, m, 3 * m));
            add_bias(&mut qkv, vector(p, l.b_qkv, 3 * m));
            let mut att = Array2::zeros((t_len, m));
            let mut probs = Vec::with_capacity(nh);
            for h in 0..nh {
                let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
                let k = qkv.slice(s![.., m + h * dh..m + (h + 1) * dh]);
                let v = qkv.slice(s![.., 2 * m + h * dh..2 * m + (h + 1) * dh]);
                let mut sc = q.dot(&k.t());
                for i in 0..t_len {
                    let mut row = sc.row_mut(i);
                    let mut mx = f64::NEG_INFINITY;
                    for j in 0..=i {
                        row[j] *= scale;
                        mx = mx.max(row[j]);
                    }
                    let mut z = 0.0;
                    for j in 0..=i {
                        row[j] = (row[j] - mx).exp();
                        z += row[j];
                    }
                    for j in 0..t_len {
                        row[j] = if j <= i { row[j] / z } else { 0.0 };
                    }
                }
                att.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&sc.dot(&v));
                probs.push(sc);
            }
            let mut o = matmul(&att, mat(p, l.w_o, m, m));
            add_bias(&mut o, vector(p, l.b_o, m));
            x += &o;
            let (a2, ln2) = layer_norm(&x, vector(p, l.ln2_g, m), vector(p, l.ln2_b, m));
            let mut h = matmul(&a2, mat(p, l.w1, m, f));
            add_bias(&mut h, vector(p, l.b1, f));
            let g = h.mapv(gelu);
            let mut ff = matmul(&g, mat(p, l.w2, f, m));
            add_bias(&mut ff, vector(p, l.b2, m));
            x += &ff;
            layers.push(LayerCache {
                ln1,
                a1,
                qkv,
                probs,
                att,
                ln2,
                a2,
                h,
                g,
            });
        }
        let (af, lnf) = layer_norm(&x, vector(p, lay.lnf_g, m), vector(p, lay.lnf_b, m));
        let mut y = matmul(&af, readout(p, &lay, d, self.out_dim));
        add_bias(&mut y, vector(p, lay.b_out, self.out_dim));
        Ok((
            y,
            Tape {
                ids,
                layers,
                lnf,
                af,
            },
        ))
    }

    /// Accumulates ∂L/∂θ into `grad` given ∂L/∂outputs.
    pub fn backward(&self, tape: &Tape, d_out: &Array2<f64>, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer length");
        let lay = self.layout();
        let p = &self.params;
        let d = &self.dims;
        let (m, f, nh, dh) = (d.d_model, d.d_ff, d.n_heads, d.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();

        let daf = if lay.tied {
            let w = mat(p, lay.tok, d.vocab, m);
            general_mat_mul(1.0, &d_out.t(), &tape.af, 1.0, &mut mat_mut(grad, lay.tok, d.vocab, m));
            let mut gb = vector_mut(grad, lay.b_out, self.out_dim);
            gb += &d_out.sum_axis(Axis(0));
            d_out.dot(&w)
        } else {
            linear_backward(&tape.af, d_out, mat(p, lay.w_out, m, self.out_dim), grad, lay.w_out, lay.b_out)
        };
        let mut dx = {
            let (gs, rest) = grad.split_at_mut(lay.lnf_b);
            layer_norm_backward(
                &daf,
                &tape.lnf,
                vector(p, lay.lnf_g, m),
                vector_mut(gs, lay.lnf_g, m),
                vector_mut(rest, 0, m),
            )
        };

        for (l, c) in lay.layers.iter().zip(&tape.layers).rev() {
            // Feed-forward sublayer.
            let dg = linear_backward(&c.g, &dx, mat(p, l.w2, f, m), grad, l.w2, l.b2);
            let mut dh_pre = dg;
            ndarray::Zip::from(&mut dh_pre).and(&c.h).for_each(|g, &h| *g *= gelu_grad(h));
            let da2 = linear_backward(&c.a2, &dh_pre, mat(p, l.w1, m, f), grad, l.w1, l.b1);
            {
                let (gs, rest) = grad.split_at_mut(l.ln2_b);
                dx += &layer_norm_backward(
                    &da2,
                    &c.ln2,
                    vector(p, l.ln2_g, m),
                    vector_mut(gs, l.ln2_g, m),
                    vector_mut(rest, 0, m),
                );
            }
            // Attention sublayer.
            let datt = linear_backward(&c.att, &dx, mat(p, l.w_o, m, m), grad, l.w_o, l.b_o);
            let mut dqkv = Array2::zeros(c.qkv.raw_dim());
            for h in 0..nh {
                let q = c.qkv.slice(s![.., h * dh..(h + 1) * dh]);
                let k = c.qkv.slice(s![.., m + h * dh..m + (h + 1) * dh]);
                let v = c.qkv.slice(s![.., 2 * m + h * dh..2 * m + (h + 1) * dh]);
                let pr = &c.probs[h];
                let d_o = datt.slice(s![.., h * dh..(h + 1) * dh]);
                let dp = d_o.dot(&v.t());
                let dv = pr.t().dot(&d_o);
                let mut ds = dp;
                for i in 0..ds.nrows() {
                    let mut row = ds.row_mut(i);
                    let pi = pr.row(i);
                    let dot = row.dot(&pi);
                    for j in 0..row.len() {
                        row[j] = pi[j] * (row[j] - dot) * scale;
                    }
                }
                let dq = ds.dot(&k);
                let dk = ds.t().dot(&q);
                dqkv.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&dq);
                dqkv.slice_mut(s![.., m + h * dh..m + (h + 1) * dh]).assign(&dk);
                dqkv.slice_mut(s![.., 2 * m + h * dh..2 * m + (h + 1) * dh]).assign(&dv);
            }
            let da1 = linear_backward(&c.a1, &dqkv, mat(p, l.w_qkv, m, 3 * m), grad, l.w_qkv, l.b_qkv);
            {
                let (gs, rest) = grad.split_at_mut(l.ln1_b);
                dx += &layer_norm_backward(
                    &da1,
                    &c.ln1,
                    vector(p, l.ln1_g, m),
                    vector_mut(gs, l.ln1_g, m),
                    vector_mut(rest, 0, m),
                );
            }
        }

        for (t, &id) in tape.ids.iter().enumerate() {
            let row = dx.row(t);
            let mut gt = vector_mut(grad, lay.tok + id * m, m);
            gt += &row;
            let mut gp = vector_mut(grad, lay.pos + t * m, m);
            gp += &row;
        }
    }

    /// Starts an incremental decoder with an empty key/value cache.
    pub fn decoder(&self) -> Decoder<'_> {
        let m = self.dims.d_model;
        Decoder {
            net: self,
            layout: self.layout(),
            keys: vec![Vec::with_capacity(self.dims.max_len * m); self.dims.n_layers],
            values: vec![Vec::with_capacity(self.dims.max_len * m); self.dims.n_layers],
            len: 0,
        }
    }
}

/// Key/value cached single-token decoding; numerically equivalent to
/// [`Transformer::forward`] up to summation order.
pub struct Decoder<'a> {
    net: &'a Transformer,
    layout: Layout,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl Decoder<'_> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Feeds one token and returns the outputs at its position.
    pub fn step(&mut self, tok: TokenId) -> Result<Array1<f64>, ModelError> {
        let net = self.net;
        let d = &net.dims;
        if self.len >= d.max_len {
            return Err(ModelError::SequenceTooLong {
                len: self.len + 1,
                max: d.max_len,
            });
        }
        if tok.index() >= d.vocab {
            return Err(ModelError::UnknownToken(tok.0));
        }
        let p = &net.params;
        let lay = &self.layout;
        let (m, f, nh, dh) = (d.d_model, d.d_ff, d.n_heads, d.head_dim());
        let t = self.len;
        let mut x = &mat(p, lay.tok, d.vocab, m).row(tok.index()) + &mat(p, lay.pos, d.max_len, m).row(t);
        let scale = 1.0 / (dh as f64).sqrt();
        for (li, l) in lay.layers.iter().enumerate() {
            let a1 = layer_norm_row(x.view(), vector(p, l.ln1_g, m), vector(p, l.ln1_b, m));
            let qkv = a1.dot(&mat(p, l.w_qkv, m, 3 * m)) + vector(p, l.b_qkv, 3 * m);
            self.keys[li].extend(qkv.slice(s![m..2 * m]).iter());
            self.values[li].extend(qkv.slice(s![2 * m..]).iter());
            let keys = ArrayView2::from_shape((t + 1, m), &self.keys[li][..]).expect("cache");
            let vals = ArrayView2::from_shape((t + 1, m), &self.values[li][..]).expect("cache");
            let mut att = Array1::zeros(m);
            for h in 0..nh {
                let q = qkv.slice(s![h * dh..(h + 1) * dh]);
                let kh = keys.slice(s![.., h * dh..(h + 1) * dh]);
                let mut sc = kh.dot(&q) * scale;
                let mx = sc.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                sc.mapv_inplace(|v| (v - mx).exp());
                let z = sc.sum();
                sc /= z;
                let vh = vals.slice(s![.., h * dh..(h + 1) * dh]);
                att.slice_mut(s![h * dh..(h + 1) * dh]).assign(&sc.dot(&vh));
            }
            x += &(att.dot(&mat(p, l.w_o, m, m)) + vector(p, l.b_o, m));
            let a2 = layer_norm_row(x.view(), vector(p, l.ln2_g, m), vector(p, l.ln2_b, m));
            let g = (a2.dot(&mat(p, l.w1, m, f)) + vector(p, l.b1, f)).mapv(gelu);
            x += &(g.dot(&mat(p, l.w2, f, m)) + vector(p, l.b2, m));
        }
        let af = layer_norm_row(x.view(), vector(p, lay.lnf_g, m), vector(p, lay.lnf_b, m));
        self.len += 1;
        Ok(af.dot(&readout(p, lay, d, net.out_dim)) + vector(p, lay.b_out, net.out_dim))
    }
}
