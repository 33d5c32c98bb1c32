//! Batched forward and backward passes of the encoder.
//!
//! A batch is a `(B·T) × H` matrix: `B` sequences of `T` tokens stacked
//! row-wise. Linear layers run over the whole stack; attention runs per
//! sequence and head.

use crate::error::{Error, Result};
use crate::numerics::{gemm, softmax_in_place, Matrix};

use super::weights::{EncoderWeights, LayerNorm, Linear, Projection, TargetId};

/// Produces `x·W + b` for one attention projection. The default uses the
/// stored matrix; adapters can compose a low-rank update on the fly.
pub(crate) trait Projector {
    fn project(&self, target: TargetId, lin: &Linear, x: &Matrix) -> Result<Matrix>;
}

pub(crate) struct Stored;

impl Projector for Stored {
    fn project(&self, _: TargetId, lin: &Linear, x: &Matrix) -> Result<Matrix> {
        Ok(lin.forward(x))
    }
}

/// Which parameter gradients the backward pass fills in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    /// Every encoder parameter.
    All,
    /// Only the attention projection weight matrices.
    Projections,
}

struct NormCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

struct LayerCache {
    input: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Vec<Matrix>,
    context: Matrix,
    norm1: NormCache,
    h1: Matrix,
    ffn_pre: Matrix,
    /// `tanh` inside the GELU, reused by the backward pass.
    ffn_tanh: Matrix,
    ffn_act: Matrix,
    norm2: NormCache,
}

/// Activations kept for back-propagation.
pub struct ForwardCache {
    batch: usize,
    layers: Vec<LayerCache>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu_tanh(x: f64) -> f64 {
    (GELU_C * (x + 0.044715 * x * x * x)).tanh()
}

#[cfg(test)]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + gelu_tanh(x))
}

/// GELU derivative given `t = gelu_tanh(x)`.
fn gelu_grad(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn layer_norm(x: &Matrix, ln: &LayerNorm, eps: f64) -> (Matrix, NormCache) {
    let (n, d) = x.shape();
    let mut xhat = Matrix::zeros(n, d);
    let mut y = Matrix::zeros(n, d);
    let mut rstd = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + eps).sqrt();
        rstd.push(r);
        let xh = xhat.row_mut(i);
        for j in 0..d {
            xh[j] = (row[j] - mean) * r;
        }
        let yr = y.row_mut(i);
        for j in 0..d {
            yr[j] = ln.gain[j] * xh[j] + ln.bias[j];
        }
    }
    (y, NormCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &Matrix,
    cache: &NormCache,
    ln: &LayerNorm,
    grads: Option<&mut LayerNorm>,
) -> Matrix {
    let (n, d) = dy.shape();
    if let Some(g) = grads {
        for i in 0..n {
            let dyr = dy.row(i);
            let xh = cache.xhat.row(i);
            for j in 0..d {
                g.gain[j] += dyr[j] * xh[j];
                g.bias[j] += dyr[j];
            }
        }
    }
    let mut dx = Matrix::zeros(n, d);
    for i in 0..n {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        let mut mean_g = 0.0;
        let mut mean_gx = 0.0;
        for j in 0..d {
            let gj = dyr[j] * ln.gain[j];
            mean_g += gj;
            mean_gx += gj * xh[j];
        }
        mean_g /= d as f64;
        mean_gx /= d as f64;
        let r = cache.rstd[i];
        let out = dx.row_mut(i);
        for j in 0..d {
            out[j] = r * (dyr[j] * ln.gain[j] - mean_g - xh[j] * mean_gx);
        }
    }
    dx
}

/// Accumulates `dW += xᵀ·dy` and optionally `db += colsum(dy)`.
fn linear_param_grads(x: &Matrix, dy: &Matrix, grads: &mut Linear, with_bias: bool) {
    gemm(1.0, x, true, dy, false, 1.0, &mut grads.weight);
    if with_bias {
        for (b, s) in grads.bias.iter_mut().zip(dy.column_sums()) {
            *b += s;
        }
    }
}

/// `dx (+)= dy·Wᵀ`.
fn linear_input_grad(dy: &Matrix, lin: &Linear, dx: &mut Matrix, accumulate: bool) {
    gemm(1.0, dy, false, &lin.weight, true, if accumulate { 1.0 } else { 0.0 }, dx);
}

impl EncoderWeights {
    fn check_batch(&self, x: &Matrix) -> Result<usize> {
        let t = self.config.seq_len;
        if x.cols() != self.config.input_dim() {
            return Err(Error::dim(format!(
                "token width {} does not match encoder width {}",
                x.cols(),
                self.config.input_dim()
            )));
        }
        if x.rows() == 0 || x.rows() % t != 0 {
            return Err(Error::dim(format!(
                "{} rows is not a whole number of {t}-token sequences",
                x.rows()
            )));
        }
        Ok(x.rows() / t)
    }

    /// Token embeddings for a stacked batch.
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.run(x, &Stored, false)?.0)
    }

    /// Forward pass that records what [`backward`](Self::backward) needs.
    pub fn forward_train(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        let (out, cache) = self.run(x, &Stored, true)?;
        Ok((out, cache.expect("cache requested")))
    }

    pub(crate) fn run(
        &self,
        x: &Matrix,
        proj: &dyn Projector,
        keep: bool,
    ) -> Result<(Matrix, Option<ForwardCache>)> {
        let batch = self.check_batch(x)?;
        let cfg = &self.config;
        let t = cfg.seq_len;
        let heads = cfg.heads;
        let dh = cfg.head_dim();
        let inv_sqrt = 1.0 / (dh as f64).sqrt();

        let mut h = x.clone();
        for s in 0..batch {
            for p in 0..t {
                let row = h.row_mut(s * t + p);
                for (v, e) in row.iter_mut().zip(self.positional.row(p)) {
                    *v += e;
                }
            }
        }

        let mut caches = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            let target = |p| TargetId::new(li, p);
            let q = proj.project(target(Projection::Query), &layer.query, &h)?;
            let k = proj.project(target(Projection::Key), &layer.key, &h)?;
            let v = proj.project(target(Projection::Value), &layer.value, &h)?;

            let mut context = Matrix::zeros(h.rows(), cfg.hidden);
            let mut probs = Vec::with_capacity(if keep { batch * heads } else { 0 });
            for s in 0..batch {
                let rows = s * t..(s + 1) * t;
                let qs = q.slice_rows(rows.start, rows.end);
                let ks = k.slice_rows(rows.start, rows.end);
                let vs = v.slice_rows(rows.start, rows.end);
                for a in 0..heads {
                    let cols = a * dh..(a + 1) * dh;
                    let qa = qs.slice_cols(cols.start, cols.end);
                    let ka = ks.slice_cols(cols.start, cols.end);
                    let va = vs.slice_cols(cols.start, cols.end);
                    let mut scores = Matrix::zeros(t, t);
                    gemm(inv_sqrt, &qa, false, &ka, true, 0.0, &mut scores);
                    for i in 0..t {
                        softmax_in_place(scores.row_mut(i));
                    }
                    let ctx = scores.mul_unchecked(&va);
                    for i in 0..t {
                        context.row_mut(s * t + i)[cols.clone()].copy_from_slice(ctx.row(i));
                    }
                    if keep {
                        probs.push(scores);
                    }
                }
            }

            let attn_out = proj.project(target(Projection::Output), &layer.output, &context)?;
            let r1 = h.add(&attn_out)?;
            let (h1, norm1) = layer_norm(&r1, &layer.attn_norm, cfg.layer_norm_eps);
            let ffn_pre = layer.ffn_in.forward(&h1);
            let mut ffn_tanh = ffn_pre.clone();
            ffn_tanh.data_mut().iter_mut().for_each(|z| *z = gelu_tanh(*z));
            let mut ffn_act = ffn_pre.clone();
            for (a, t) in ffn_act.data_mut().iter_mut().zip(ffn_tanh.data()) {
                *a = 0.5 * *a * (1.0 + t);
            }
            let ffn_out = layer.ffn_out.forward(&ffn_act);
            let r2 = h1.add(&ffn_out)?;
            let (h2, norm2) = layer_norm(&r2, &layer.ffn_norm, cfg.layer_norm_eps);

            if keep {
                caches.push(LayerCache {
                    input: h,
                    q,
                    k,
                    v,
                    probs,
                    context,
                    norm1,
                    h1,
                    ffn_pre,
                    ffn_tanh,
                    ffn_act,
                    norm2,
                });
            }
            h = h2;
        }
        let cache = keep.then(|| ForwardCache {
            batch,
            layers: caches,
        });
        Ok((h, cache))
    }

    /// Back-propagates `d_out` (gradient w.r.t. the returned embeddings),
    /// accumulating parameter gradients into `grads`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_out: &Matrix,
        grads: &mut EncoderWeights,
        scope: GradScope,
    ) -> Result<()> {
        let cfg = &self.config;
        let t = cfg.seq_len;
        let heads = cfg.heads;
        let dh = cfg.head_dim();
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let batch = cache.batch;
        if d_out.shape() != (batch * t, cfg.hidden) {
            return Err(Error::dim("backward gradient shape does not match the cached batch"));
        }
        let all = scope == GradScope::All;
        let need_input_grad_at_bottom = all && cfg.positional == super::PositionalKind::Learned;

        let mut dh_out = d_out.clone();
        for (li, (layer, lc)) in self.layers.iter().zip(&cache.layers).enumerate().rev() {
            let g = &mut grads.layers[li];

            // FFN block.
            let d_r2 = layer_norm_backward(
                &dh_out,
                &lc.norm2,
                &layer.ffn_norm,
                all.then_some(&mut g.ffn_norm),
            );
            if all {
                linear_param_grads(&lc.ffn_act, &d_r2, &mut g.ffn_out, true);
            }
            let mut d_act = Matrix::zeros(d_r2.rows(), cfg.ffn);
            linear_input_grad(&d_r2, &layer.ffn_out, &mut d_act, false);
            for ((da, z), t) in d_act.data_mut().iter_mut().zip(lc.ffn_pre.data()).zip(lc.ffn_tanh.data()) {
                *da *= gelu_grad(*z, *t);
            }
            if all {
                linear_param_grads(&lc.h1, &d_act, &mut g.ffn_in, true);
            }
            let mut d_h1 = d_r2;
            linear_input_grad(&d_act, &layer.ffn_in, &mut d_h1, true);

            // Attention block.
            let d_r1 = layer_norm_backward(
                &d_h1,
                &lc.norm1,
                &layer.attn_norm,
                all.then_some(&mut g.attn_norm),
            );
            linear_param_grads(&lc.context, &d_r1, &mut g.output, all);
            let mut d_context = Matrix::zeros(d_r1.rows(), cfg.hidden);
            linear_input_grad(&d_r1, &layer.output, &mut d_context, false);

            let mut dq = Matrix::zeros(d_r1.rows(), cfg.hidden);
            let mut dk = Matrix::zeros(d_r1.rows(), cfg.hidden);
            let mut dv = Matrix::zeros(d_r1.rows(), cfg.hidden);
            for s in 0..batch {
                let (r0, r1) = (s * t, (s + 1) * t);
                for a in 0..heads {
                    let (c0, c1) = (a * dh, (a + 1) * dh);
                    let p = &lc.probs[s * heads + a];
                    let d_ctx = d_context.slice_rows(r0, r1).slice_cols(c0, c1);
                    let qa = lc.q.slice_rows(r0, r1).slice_cols(c0, c1);
                    let ka = lc.k.slice_rows(r0, r1).slice_cols(c0, c1);
                    let va = lc.v.slice_rows(r0, r1).slice_cols(c0, c1);

                    let mut dp = Matrix::zeros(t, t);
                    gemm(1.0, &d_ctx, false, &va, true, 0.0, &mut dp);
                    let mut dva = Matrix::zeros(t, dh);
                    gemm(1.0, p, true, &d_ctx, false, 0.0, &mut dva);
                    // Softmax Jacobian, row by row.
                    let mut ds = Matrix::zeros(t, t);
                    for i in 0..t {
                        let pr = p.row(i);
                        let dpr = dp.row(i);
                        let dot: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
                        let out = ds.row_mut(i);
                        for j in 0..t {
                            out[j] = pr[j] * (dpr[j] - dot);
                        }
                    }
                    let mut dqa = Matrix::zeros(t, dh);
                    gemm(inv_sqrt, &ds, false, &ka, false, 0.0, &mut dqa);
                    let mut dka = Matrix::zeros(t, dh);
                    gemm(inv_sqrt, &ds, true, &qa, false, 0.0, &mut dka);
                    for i in 0..t {
                        dq.row_mut(r0 + i)[c0..c1].copy_from_slice(dqa.row(i));
                        dk.row_mut(r0 + i)[c0..c1].copy_from_slice(dka.row(i));
                        dv.row_mut(r0 + i)[c0..c1].copy_from_slice(dva.row(i));
                    }
                }
            }
            linear_param_grads(&lc.input, &dq, &mut g.query, all);
            linear_param_grads(&lc.input, &dk, &mut g.key, all);
            linear_param_grads(&lc.input, &dv, &mut g.value, all);

            if li > 0 || need_input_grad_at_bottom {
                let mut d_in = d_r1;
                linear_input_grad(&dq, &layer.query, &mut d_in, true);
                linear_input_grad(&dk, &layer.key, &mut d_in, true);
                linear_input_grad(&dv, &layer.value, &mut d_in, true);
                dh_out = d_in;
            }
        }

        if need_input_grad_at_bottom {
            for s in 0..batch {
                for p in 0..t {
                    let src = dh_out.row(s * t + p);
                    for (g, d) in grads.positional.row_mut(p).iter_mut().zip(src) {
                        *g += d;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Mean over each sequence's tokens: `(B·T) × H → B × H`.
pub fn pool_batch(embeddings: &Matrix, seq_len: usize) -> Matrix {
    let batch = embeddings.rows() / seq_len;
    let h = embeddings.cols();
    let mut out = Matrix::zeros(batch, h);
    for s in 0..batch {
        let row = out.row_mut(s);
        for p in 0..seq_len {
            for (o, v) in row.iter_mut().zip(embeddings.row(s * seq_len + p)) {
                *o += v;
            }
        }
        row.iter_mut().for_each(|v| *v /= seq_len as f64);
    }
    out
}

pub fn pool_batch_backward(d_pooled: &Matrix, seq_len: usize) -> Matrix {
    let batch = d_pooled.rows();
    let h = d_pooled.cols();
    let mut out = Matrix::zeros(batch * seq_len, h);
    for s in 0..batch {
        for p in 0..seq_len {
            for (o, v) in out.row_mut(s * seq_len + p).iter_mut().zip(d_pooled.row(s)) {
                *o = v / seq_len as f64;
            }
        }
    }
    out
}
