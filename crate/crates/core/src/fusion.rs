//! Cross-attention combiner.
//!
//! One layer computes, per head, `softmax((Q·Wq)(K·Wk)ᵀ / sqrt(d_h)) · (K·Wv)`,
//! concatenates heads, projects with `Wo`, applies (inverted) dropout in
//! training mode, adds the query stream back and layer-normalizes. Layers
//! are stacked: each takes the previous layer's output as its queries while
//! the key/value tokens stay fixed.

use serde::{Deserialize, Serialize};

use crate::error::{EchoError, Result};
use crate::nn::{Linear, Parameters};
use crate::numerics::{
    layer_norm_backward, layer_norm_in_place, softmax_in_place, Matrix, RngStream,
};

/// Where a token sequence came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenOrigin {
    Memory,
    Window,
    BaseOutput,
}

/// Ordered tokens of uniform width, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub tokens: Matrix,
    pub origin: TokenOrigin,
}

impl TokenSequence {
    pub fn new(tokens: Matrix, origin: TokenOrigin) -> Self {
        Self { tokens, origin }
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.tokens.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionLayer {
    /// Per-head `d_model × d_h` projections.
    pub wq: Vec<Matrix>,
    pub wk: Vec<Matrix>,
    pub wv: Vec<Matrix>,
    /// `d_model × d_model` output projection.
    pub wo: Matrix,
}

impl AttentionLayer {
    pub fn new(d_model: usize, heads: usize, rng: &mut RngStream) -> Self {
        let dh = d_model / heads;
        let bound = 1.0 / (d_model as f64).sqrt();
        let mut draw = |r: usize, c: usize| {
            let mut m = Matrix::zeros(r, c);
            m.as_mut_slice().iter_mut().for_each(|x| *x = rng.uniform(-bound, bound));
            m
        };
        let wq = (0..heads).map(|_| draw(d_model, dh)).collect();
        let wk = (0..heads).map(|_| draw(d_model, dh)).collect();
        let wv = (0..heads).map(|_| draw(d_model, dh)).collect();
        let wo = draw(d_model, d_model);
        Self { wq, wk, wv, wo }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |ms: &Vec<Matrix>| ms.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        Self {
            wq: z(&self.wq),
            wk: z(&self.wk),
            wv: z(&self.wv),
            wo: Matrix::zeros(self.wo.rows(), self.wo.cols()),
        }
    }

    pub fn heads(&self) -> usize {
        self.wq.len()
    }

    pub fn d_model(&self) -> usize {
        self.wo.rows()
    }
}

impl Parameters for AttentionLayer {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        v.extend(self.wq.iter().map(Matrix::as_slice));
        v.extend(self.wk.iter().map(Matrix::as_slice));
        v.extend(self.wv.iter().map(Matrix::as_slice));
        v.push(self.wo.as_slice());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        v.extend(self.wq.iter_mut().map(Matrix::as_mut_slice));
        v.extend(self.wk.iter_mut().map(Matrix::as_mut_slice));
        v.extend(self.wv.iter_mut().map(Matrix::as_mut_slice));
        v.push(self.wo.as_mut_slice());
        v
    }
}

/// Intermediate values of one layer, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct AttendCache {
    queries: Matrix,
    keys_values: Matrix,
    q: Vec<Matrix>,
    k: Vec<Matrix>,
    v: Vec<Matrix>,
    /// Row-stochastic attention weights per head.
    pub weights: Vec<Matrix>,
    concat: Matrix,
    mask: Option<Matrix>,
    output: Matrix,
    inv_std: Vec<f64>,
}

/// Dropout settings for a forward pass. `None` means evaluation mode.
pub struct DropoutCtx<'a> {
    pub rate: f64,
    pub rng: &'a mut RngStream,
}

fn check_width(context: &'static str, expected: usize, m: &Matrix) -> Result<()> {
    if m.cols() != expected {
        return Err(EchoError::Shape {
            context,
            expected,
            actual: m.cols(),
        });
    }
    if m.rows() == 0 {
        return Err(EchoError::Input(format!("{context}: empty token sequence")));
    }
    Ok(())
}

/// One cross-attention layer. Returns the fused tokens (one per query).
pub fn attend(
    layer: &AttentionLayer,
    queries: &Matrix,
    keys_values: &Matrix,
    dropout: Option<DropoutCtx<'_>>,
    eps: f64,
) -> Result<(Matrix, AttendCache)> {
    let d = layer.d_model();
    check_width("attention queries", d, queries)?;
    check_width("attention keys", d, keys_values)?;
    let heads = layer.heads();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let nq = queries.rows();

    let mut qs = Vec::with_capacity(heads);
    let mut ks = Vec::with_capacity(heads);
    let mut vs = Vec::with_capacity(heads);
    let mut ws = Vec::with_capacity(heads);
    let mut concat = Matrix::zeros(nq, d);
    for h in 0..heads {
        let q = queries.matmul(&layer.wq[h]);
        let k = keys_values.matmul(&layer.wk[h]);
        let v = keys_values.matmul(&layer.wv[h]);
        let mut s = q.matmul_nt(&k);
        for i in 0..nq {
            let row = s.row_mut(i);
            row.iter_mut().for_each(|x| *x *= scale);
            softmax_in_place(row);
        }
        let ctx = s.matmul(&v);
        for i in 0..nq {
            concat.row_mut(i)[h * dh..(h + 1) * dh].copy_from_slice(ctx.row(i));
        }
        qs.push(q);
        ks.push(k);
        vs.push(v);
        ws.push(s);
    }
    let mut attn = concat.matmul(&layer.wo);
    let mask = match dropout {
        Some(DropoutCtx { rate, rng }) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let mut m = Matrix::zeros(nq, d);
            for (mi, a) in m.as_mut_slice().iter_mut().zip(attn.as_mut_slice()) {
                *mi = if rng.bernoulli(rate) { 0.0 } else { keep };
                *a *= *mi;
            }
            Some(m)
        }
        _ => None,
    };
    let mut out = attn;
    let mut inv_std = Vec::with_capacity(nq);
    for i in 0..nq {
        let row = out.row_mut(i);
        for (o, q) in row.iter_mut().zip(queries.row(i)) {
            *o += q;
        }
        inv_std.push(layer_norm_in_place(row, eps));
    }
    let cache = AttendCache {
        queries: queries.clone(),
        keys_values: keys_values.clone(),
        q: qs,
        k: ks,
        v: vs,
        weights: ws,
        concat,
        mask,
        output: out.clone(),
        inv_std,
    };
    Ok((out, cache))
}

/// Backward of [`attend`]: accumulates into `grad`, returns
/// `(dL/dqueries, dL/dkeys_values)`.
pub fn attend_backward(
    layer: &AttentionLayer,
    cache: &AttendCache,
    d_out: &Matrix,
    grad: &mut AttentionLayer,
) -> (Matrix, Matrix) {
    let d = layer.d_model();
    let heads = layer.heads();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let nq = cache.queries.rows();

    // Through the layer norm to the residual sum.
    let mut d_res = Matrix::zeros(nq, d);
    for i in 0..nq {
        let g = layer_norm_backward(cache.output.row(i), cache.inv_std[i], d_out.row(i));
        d_res.row_mut(i).copy_from_slice(&g);
    }
    let mut d_queries = d_res.clone();
    let mut d_attn = d_res;
    if let Some(mask) = &cache.mask {
        for (g, m) in d_attn.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *g *= m;
        }
    }
    grad.wo.add_assign(&cache.concat.matmul_tn(&d_attn));
    let d_concat = d_attn.matmul_nt(&layer.wo);

    let mut d_kv = Matrix::zeros(cache.keys_values.rows(), d);
    for h in 0..heads {
        let mut d_ctx = Matrix::zeros(nq, dh);
        for i in 0..nq {
            d_ctx.row_mut(i).copy_from_slice(&d_concat.row(i)[h * dh..(h + 1) * dh]);
        }
        let p = &cache.weights[h];
        let d_p = d_ctx.matmul_nt(&cache.v[h]);
        let d_v = p.matmul_tn(&d_ctx);
        let mut d_s = Matrix::zeros(p.rows(), p.cols());
        for i in 0..nq {
            let pr = p.row(i);
            let gr = d_p.row(i);
            let inner: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
            for (j, ds) in d_s.row_mut(i).iter_mut().enumerate() {
                *ds = pr[j] * (gr[j] - inner) * scale;
            }
        }
        let d_q = d_s.matmul(&cache.k[h]);
        let d_k = d_s.matmul_tn(&cache.q[h]);

        grad.wq[h].add_assign(&cache.queries.matmul_tn(&d_q));
        grad.wk[h].add_assign(&cache.keys_values.matmul_tn(&d_k));
        grad.wv[h].add_assign(&cache.keys_values.matmul_tn(&d_v));
        d_queries.add_assign(&d_q.matmul_nt(&layer.wq[h]));
        d_kv.add_assign(&d_k.matmul_nt(&layer.wk[h]));
        d_kv.add_assign(&d_v.matmul_nt(&layer.wv[h]));
    }
    (d_queries, d_kv)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    pub norm_eps: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            layers: 2,
            dropout: 0.2,
            norm_eps: 1e-5,
        }
    }
}

impl FusionConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            v.push(format!(
                "fusion d_model ({}) must be a positive multiple of heads ({})",
                self.d_model, self.heads
            ));
        }
        if self.layers == 0 {
            v.push("fusion layers must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            v.push(format!("fusion dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.norm_eps >= 0.0) {
            v.push(format!("fusion norm_eps must be non-negative, got {}", self.norm_eps));
        }
        v
    }
}

/// The trainable combiner: token adapters plus a stack of attention layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossAttention {
    pub config: FusionConfig,
    /// Lifts memory tokens (readout width `m`) to `d_model`.
    pub memory_adapter: Linear,
    /// Lifts window tokens (embedding width) to `d_model`.
    pub window_adapter: Linear,
    pub layers: Vec<AttentionLayer>,
}

/// Caches for a whole layer stack.
#[derive(Clone, Debug)]
pub struct StackCache {
    pub layers: Vec<AttendCache>,
}

impl CrossAttention {
    pub fn new(
        config: FusionConfig,
        memory_width: usize,
        window_width: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let v = config.violations();
        if !v.is_empty() {
            return Err(EchoError::Config(v.join("; ")));
        }
        let memory_adapter = Linear::new(config.d_model, memory_width, rng);
        let window_adapter = Linear::new(config.d_model, window_width, rng);
        let layers = (0..config.layers)
            .map(|_| AttentionLayer::new(config.d_model, config.heads, rng))
            .collect();
        Ok(Self {
            config,
            memory_adapter,
            window_adapter,
            layers,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            memory_adapter: self.memory_adapter.zeros_like(),
            window_adapter: self.window_adapter.zeros_like(),
            layers: self.layers.iter().map(AttentionLayer::zeros_like).collect(),
        }
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    /// Runs the layer stack with `queries` attending over `keys_values`.
    pub fn stack_forward(
        &self,
        queries: &Matrix,
        keys_values: &Matrix,
        train_mode: bool,
        rng: &mut RngStream,
    ) -> Result<(Matrix, StackCache)> {
        let mut q = queries.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let dropout = train_mode.then_some(DropoutCtx {
                rate: self.config.dropout,
                rng: &mut *rng,
            });
            let (out, cache) = attend(layer, &q, keys_values, dropout, self.config.norm_eps)?;
            caches.push(cache);
            q = out;
        }
        Ok((q, StackCache { layers: caches }))
    }

    /// Backward through the stack; returns `(dL/dqueries, dL/dkeys_values)`.
    pub fn stack_backward(
        &self,
        cache: &StackCache,
        d_out: &Matrix,
        grad: &mut CrossAttention,
    ) -> (Matrix, Matrix) {
        let mut d_q = d_out.clone();
        let mut d_kv: Option<Matrix> = None;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (dq, dkv) = attend_backward(layer, &cache.layers[i], &d_q, &mut grad.layers[i]);
            d_q = dq;
            match &mut d_kv {
                Some(acc) => acc.add_assign(&dkv),
                None => d_kv = Some(dkv),
            }
        }
        (d_q, d_kv.expect("at least one attention layer"))
    }

    /// Memory tokens query the window tokens; one fused token per memory token.
    pub fn front_combine(
        &self,
        window: &TokenSequence,
        memory: &TokenSequence,
        train_mode: bool,
        rng: &mut RngStream,
    ) -> Result<(TokenSequence, StackCache)> {
        let (out, cache) = self.stack_forward(&memory.tokens, &window.tokens, train_mode, rng)?;
        Ok((TokenSequence::new(out, TokenOrigin::Memory), cache))
    }

    /// Base-model output tokens query the memory tokens.
    pub fn back_combine(
        &self,
        base_pred: &TokenSequence,
        memory: &TokenSequence,
        train_mode: bool,
        rng: &mut RngStream,
    ) -> Result<(TokenSequence, StackCache)> {
        let (out, cache) = self.stack_forward(&base_pred.tokens, &memory.tokens, train_mode, rng)?;
        Ok((TokenSequence::new(out, TokenOrigin::BaseOutput), cache))
    }
}

impl Parameters for CrossAttention {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.memory_adapter.tensors();
        v.extend(self.window_adapter.tensors());
        for l in &self.layers {
            v.extend(l.tensors());
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.memory_adapter.tensors_mut();
        v.extend(self.window_adapter.tensors_mut());
        for l in &mut self.layers {
            v.extend(l.tensors_mut());
        }
        v
    }
}
