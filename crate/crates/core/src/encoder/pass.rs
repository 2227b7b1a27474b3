use alloc::vec;
use alloc::vec::Vec;

use super::{dropout_mask, AttentionMode, Encoder, TransformerParams};
use crate::encoding::TokenSequence;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::StreamRng;
use crate::tensor::{
    add_bias, axpy, bias_grad_acc, dot, matmul_acc, matmul_nt_acc, matmul_tn_acc, softmax_in_place,
};

const LN_EPS: f64 = 1e-5;

/// Post-softmax attention over the real tokens of one sequence.
/// `layers[l][h]` is a row-major `len × len` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub len: usize,
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl AttentionRecord {
    pub fn row(&self, layer: usize, head: usize, i: usize) -> &[f64] {
        &self.layers[layer][head][i * self.len..(i + 1) * self.len]
    }

    /// Head-averaged attention of one layer.
    pub fn head_mean(&self, layer: usize) -> Vec<f64> {
        let heads = &self.layers[layer];
        let mut out = vec![0.0; self.len * self.len];
        for h in heads {
            for (o, v) in out.iter_mut().zip(h) {
                *o += v;
            }
        }
        let inv = 1.0 / heads.len() as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        out
    }

    /// Attention as it would look over a padded sequence of `max_len`
    /// positions; every entry to or from padding is zero.
    pub fn padded(&self, layer: usize, head: usize, max_len: usize) -> Vec<f64> {
        let mut out = vec![0.0; max_len * max_len];
        for i in 0..self.len {
            out[i * max_len..i * max_len + self.len].copy_from_slice(self.row(layer, head, i));
        }
        out
    }
}

struct LayerNormCache<F> {
    xhat: Vec<F>,
    inv_std: Vec<F>,
}

struct LayerCache<F> {
    x_in: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    probs: Vec<F>,
    ctx: Vec<F>,
    attn_drop: Option<Vec<F>>,
    ln1: LayerNormCache<F>,
    h1: Vec<F>,
    u: Vec<F>,
    g: Vec<F>,
    ff_drop: Option<Vec<F>>,
    ln2: LayerNormCache<F>,
}

pub(super) struct Pass<F> {
    pub logits: Vec<Vec<F>>,
    pub attention: Option<AttentionRecord>,
    emb_drop: Option<Vec<F>>,
    layers: Vec<LayerCache<F>>,
    hidden: Vec<F>,
}

fn layer_norm<F: Real>(z: &[F], gain: &[F], bias: &[F], d: usize) -> (Vec<F>, LayerNormCache<F>) {
    let n = z.len() / d;
    let mut out = vec![F::ZERO; z.len()];
    let mut xhat = vec![F::ZERO; z.len()];
    let mut inv_std = vec![F::ZERO; n];
    let inv_d = F::from_f64(1.0 / d as f64);
    let eps = F::from_f64(LN_EPS);
    for i in 0..n {
        let row = &z[i * d..(i + 1) * d];
        let mut mean = F::ZERO;
        for &v in row {
            mean += v;
        }
        mean *= inv_d;
        let mut var = F::ZERO;
        for &v in row {
            var += (v - mean) * (v - mean);
        }
        var *= inv_d;
        let s = F::ONE / (var + eps).sqrt();
        inv_std[i] = s;
        for j in 0..d {
            let xh = (row[j] - mean) * s;
            xhat[i * d + j] = xh;
            out[i * d + j] = xh * gain[j] + bias[j];
        }
    }
    (out, LayerNormCache { xhat, inv_std })
}

/// Returns `dz` for `y = LN(z)`; accumulates gain and bias gradients.
fn layer_norm_backward<F: Real>(
    dy: &[F],
    cache: &LayerNormCache<F>,
    gain: &[F],
    dgain: &mut [F],
    dbias: &mut [F],
    d: usize,
) -> Vec<F> {
    let n = dy.len() / d;
    let mut dz = vec![F::ZERO; dy.len()];
    let inv_d = F::from_f64(1.0 / d as f64);
    let mut dxhat = vec![F::ZERO; d];
    for i in 0..n {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        let mut sum = F::ZERO;
        let mut sum_x = F::ZERO;
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            sum += dxhat[j];
            sum_x += dxhat[j] * xh[j];
        }
        let s = cache.inv_std[i];
        for j in 0..d {
            dz[i * d + j] = s * (dxhat[j] - inv_d * sum - inv_d * xh[j] * sum_x);
        }
    }
    dz
}

fn gelu<F: Real>(u: F) -> F {
    let half = F::from_f64(0.5);
    half * u * (F::ONE + (u * F::from_f64(core::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<F: Real>(u: F) -> F {
    let half = F::from_f64(0.5);
    let cdf = half * (F::ONE + (u * F::from_f64(core::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = F::from_f64(0.398_942_280_401_432_7) * (-half * u * u).exp();
    cdf + u * pdf
}

/// `allowed[i * n + j]`: may token `i` attend to token `j`.
fn attention_mask(seq: &TokenSequence, mode: AttentionMode) -> Vec<bool> {
    let n = seq.len();
    match mode {
        AttentionMode::Bidirectional => vec![true; n * n],
        AttentionMode::NoFuture => {
            let off = seq.source_offsets();
            let mut m = vec![false; n * n];
            for i in 0..n {
                for j in 0..n {
                    m[i * n + j] = off[j] <= off[i];
                }
            }
            m
        }
    }
}

pub(super) fn forward<F: Real>(
    enc: &Encoder<F>,
    seq: &TokenSequence,
    mode: AttentionMode,
    mut dropout: Option<&mut StreamRng>,
    keep_cache: bool,
    record_attention: bool,
) -> Result<Pass<F>> {
    let cfg = &enc.config;
    let p = &enc.params;
    let (d, heads, dh, ff) = (cfg.hidden, cfg.num_heads, cfg.head_dim(), cfg.ff_hidden);
    let n = seq.len();
    let rate = if dropout.is_some() { cfg.dropout } else { 0.0 };
    let mut drop = |len: usize| -> Option<Vec<F>> {
        match dropout.as_deref_mut() {
            Some(rng) if rate > 0.0 => Some(dropout_mask(rng, len, rate)),
            _ => None,
        }
    };

    let mut x = vec![F::ZERO; n * d];
    for i in 0..n {
        let tok = seq.tokens[i] as usize;
        let pos = seq.positions[i] as usize;
        if tok >= cfg.vocab_size {
            return Err(Error::UnknownToken(seq.tokens[i]));
        }
        if pos >= cfg.max_positions {
            return Err(Error::PositionOverflow { position: pos, max_positions: cfg.max_positions });
        }
        let row = &mut x[i * d..(i + 1) * d];
        row.copy_from_slice(p.token_embedding.row(tok));
        axpy(F::ONE, p.position_embedding.row(pos), row);
    }
    let emb_drop = drop(n * d);
    if let Some(m) = &emb_drop {
        x.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
    }

    let allowed = attention_mask(seq, mode);
    let scale = F::from_f64(1.0 / libm::sqrt(dh as f64));
    let mut caches = Vec::new();
    let mut record = Vec::new();
    for lp in &p.layers {
        let x_in = x;
        let mut q = vec![F::ZERO; n * d];
        let mut k = vec![F::ZERO; n * d];
        let mut v = vec![F::ZERO; n * d];
        matmul_acc(&x_in, &lp.query.data, &mut q, n, d, d);
        matmul_acc(&x_in, &lp.key.data, &mut k, n, d, d);
        matmul_acc(&x_in, &lp.value.data, &mut v, n, d, d);

        let mut probs = vec![F::ZERO; heads * n * n];
        let mut ctx = vec![F::ZERO; n * d];
        for h in 0..heads {
            let o = h * dh;
            for i in 0..n {
                let row = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                let qi = &q[i * d + o..i * d + o + dh];
                for j in 0..n {
                    row[j] = if allowed[i * n + j] {
                        dot(qi, &k[j * d + o..j * d + o + dh]) * scale
                    } else {
                        F::neg_infinity()
                    };
                }
                softmax_in_place(row);
                let ci = &mut ctx[i * d + o..i * d + o + dh];
                for j in 0..n {
                    if row[j] != F::ZERO {
                        axpy(row[j], &v[j * d + o..j * d + o + dh], ci);
                    }
                }
            }
        }
        if record_attention {
            record.push(
                (0..heads)
                    .map(|h| probs[h * n * n..(h + 1) * n * n].iter().map(|v| v.to_f64()).collect())
                    .collect(),
            );
        }

        let mut z1 = vec![F::ZERO; n * d];
        matmul_acc(&ctx, &lp.output.data, &mut z1, n, d, d);
        let attn_drop = drop(n * d);
        if let Some(m) = &attn_drop {
            z1.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
        }
        z1.iter_mut().zip(&x_in).for_each(|(a, &r)| *a += r);
        let (h1, ln1) = layer_norm(&z1, &lp.ln1_gain.data, &lp.ln1_bias.data, d);

        let mut u = vec![F::ZERO; n * ff];
        matmul_acc(&h1, &lp.ff_in.data, &mut u, n, d, ff);
        add_bias(&mut u, &lp.ff_in_bias.data);
        let g: Vec<F> = u.iter().map(|&v| gelu(v)).collect();
        let mut z2 = vec![F::ZERO; n * d];
        matmul_acc(&g, &lp.ff_out.data, &mut z2, n, ff, d);
        add_bias(&mut z2, &lp.ff_out_bias.data);
        let ff_drop = drop(n * d);
        if let Some(m) = &ff_drop {
            z2.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
        }
        z2.iter_mut().zip(&h1).for_each(|(a, &r)| *a += r);
        let (out, ln2) = layer_norm(&z2, &lp.ln2_gain.data, &lp.ln2_bias.data, d);
        x = out;
        if keep_cache {
            caches.push(LayerCache { x_in, q, k, v, probs, ctx, attn_drop, ln1, h1, u, g, ff_drop, ln2 });
        }
    }

    let ne = cfg.num_entities;
    let logits = seq
        .mask_slots
        .iter()
        .map(|slot| {
            let mut out = p.output_bias.data.clone();
            matmul_acc(&x[slot.index * d..(slot.index + 1) * d], &p.output_weight.data, &mut out, 1, d, ne);
            out
        })
        .collect();

    Ok(Pass {
        logits,
        attention: record_attention.then_some(AttentionRecord { len: n, layers: record }),
        emb_drop,
        layers: caches,
        hidden: x,
    })
}

/// Accumulates into `grads` the gradient of `Σ dlogits · logits`.
pub(super) fn backward<F: Real>(
    enc: &Encoder<F>,
    seq: &TokenSequence,
    pass: &Pass<F>,
    dlogits: &[Vec<F>],
    grads: &mut TransformerParams<F>,
) {
    let cfg = &enc.config;
    let p = &enc.params;
    let (d, heads, dh, ff) = (cfg.hidden, cfg.num_heads, cfg.head_dim(), cfg.ff_hidden);
    let n = seq.len();
    let ne = cfg.num_entities;
    let scale = F::from_f64(1.0 / libm::sqrt(dh as f64));

    let mut dx = vec![F::ZERO; n * d];
    for (slot, dl) in seq.mask_slots.iter().zip(dlogits) {
        let hi = &pass.hidden[slot.index * d..(slot.index + 1) * d];
        matmul_tn_acc(hi, dl, &mut grads.output_weight.data, 1, d, ne);
        bias_grad_acc(dl, &mut grads.output_bias.data);
        matmul_nt_acc(dl, &p.output_weight.data, &mut dx[slot.index * d..(slot.index + 1) * d], 1, d, ne);
    }

    for (l, c) in pass.layers.iter().enumerate().rev() {
        let lp = &p.layers[l];
        let gl = &mut grads.layers[l];

        // second sublayer: out = LN2(h1 + drop(ff(h1)))
        let dz2 = layer_norm_backward(&dx, &c.ln2, &lp.ln2_gain.data, &mut gl.ln2_gain.data, &mut gl.ln2_bias.data, d);
        let mut dh1 = dz2.clone();
        let mut df = dz2;
        if let Some(m) = &c.ff_drop {
            df.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
        }
        bias_grad_acc(&df, &mut gl.ff_out_bias.data);
        matmul_tn_acc(&c.g, &df, &mut gl.ff_out.data, n, ff, d);
        let mut du = vec![F::ZERO; n * ff];
        matmul_nt_acc(&df, &lp.ff_out.data, &mut du, n, ff, d);
        du.iter_mut().zip(&c.u).for_each(|(g, &u)| *g *= gelu_grad(u));
        bias_grad_acc(&du, &mut gl.ff_in_bias.data);
        matmul_tn_acc(&c.h1, &du, &mut gl.ff_in.data, n, d, ff);
        matmul_nt_acc(&du, &lp.ff_in.data, &mut dh1, n, d, ff);

        // first sublayer: h1 = LN1(x + drop(attn(x)))
        let dz1 = layer_norm_backward(&dh1, &c.ln1, &lp.ln1_gain.data, &mut gl.ln1_gain.data, &mut gl.ln1_bias.data, d);
        let mut dxi = dz1.clone();
        let mut da = dz1;
        if let Some(m) = &c.attn_drop {
            da.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
        }
        matmul_tn_acc(&c.ctx, &da, &mut gl.output.data, n, d, d);
        let mut dctx = vec![F::ZERO; n * d];
        matmul_nt_acc(&da, &lp.output.data, &mut dctx, n, d, d);

        let mut dq = vec![F::ZERO; n * d];
        let mut dk = vec![F::ZERO; n * d];
        let mut dv = vec![F::ZERO; n * d];
        let mut dp = vec![F::ZERO; n];
        for h in 0..heads {
            let o = h * dh;
            for i in 0..n {
                let prow = &c.probs[(h * n + i) * n..(h * n + i + 1) * n];
                let dci = &dctx[i * d + o..i * d + o + dh];
                let mut weighted = F::ZERO;
                for j in 0..n {
                    if prow[j] == F::ZERO {
                        dp[j] = F::ZERO;
                        continue;
                    }
                    dp[j] = dot(dci, &c.v[j * d + o..j * d + o + dh]);
                    weighted += dp[j] * prow[j];
                    axpy(prow[j], dci, &mut dv[j * d + o..j * d + o + dh]);
                }
                for j in 0..n {
                    if prow[j] == F::ZERO {
                        continue;
                    }
                    let ds = prow[j] * (dp[j] - weighted) * scale;
                    axpy(ds, &c.k[j * d + o..j * d + o + dh], &mut dq[i * d + o..i * d + o + dh]);
                    axpy(ds, &c.q[i * d + o..i * d + o + dh], &mut dk[j * d + o..j * d + o + dh]);
                }
            }
        }
        for (dproj, w, gw) in [
            (&dq, &lp.query.data, &mut gl.query.data),
            (&dk, &lp.key.data, &mut gl.key.data),
            (&dv, &lp.value.data, &mut gl.value.data),
        ] {
            matmul_tn_acc(&c.x_in, dproj, gw, n, d, d);
            matmul_nt_acc(dproj, w, &mut dxi, n, d, d);
        }
        dx = dxi;
    }

    if let Some(m) = &pass.emb_drop {
        dx.iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
    }
    for i in 0..n {
        let g = &dx[i * d..(i + 1) * d];
        axpy(F::ONE, g, grads.token_embedding.row_mut(seq.tokens[i] as usize));
        axpy(F::ONE, g, grads.position_embedding.row_mut(seq.positions[i] as usize));
    }
}
