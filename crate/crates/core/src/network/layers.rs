//! Row-level (single utterance) forward and backward passes. Every forward
//! returns a cache holding exactly what its backward needs.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{EncoderParams, LayerNorm, Linear, TransformerLayerParams};

const LN_EPS: f64 = 1e-5;

pub(crate) fn linear(x: &ArrayView2<f64>, p: &Linear) -> Array2<f64> {
    x.dot(&p.weight) + &p.bias
}

/// Accumulates parameter gradients and returns the input gradient.
pub(crate) fn linear_backward(
    x: &ArrayView2<f64>,
    dy: &Array2<f64>,
    p: &Linear,
    g: &mut Linear,
) -> Array2<f64> {
    g.weight += &x.t().dot(dy);
    g.bias += &dy.sum_axis(Axis(0));
    dy.dot(&p.weight.t())
}

pub(crate) fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

pub(crate) fn relu_backward(pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut out = dy.clone();
    out.zip_mut_with(pre, |d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    out
}

struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, p: &LayerNorm) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * *inv);
    }
    let y = &xhat * &p.gamma + &p.beta;
    (y, NormCache { xhat, inv_std })
}

fn layer_norm_backward(
    cache: &NormCache,
    dy: &Array2<f64>,
    p: &LayerNorm,
    g: &mut LayerNorm,
) -> Array2<f64> {
    g.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    g.beta += &dy.sum_axis(Axis(0));
    let dxhat = dy * &p.gamma;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let sum_dh = dh.sum();
        let sum_dh_xh = dh.dot(&xh);
        let inv = cache.inv_std[i];
        for j in 0..dy.ncols() {
            dx[[i, j]] = inv / d * (d * dh[j] - sum_dh - xh[j] * sum_dh_xh);
        }
    }
    dx
}

/// Inverted dropout mask: entries are 0 or `1 / (1 - p)`.
fn dropout_mask(
    shape: (usize, usize),
    p: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Option<Array2<f64>> {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            Some(Array2::from_shape_fn(shape, |_| {
                if rng.random::<f64>() < p {
                    0.0
                } else {
                    keep
                }
            }))
        }
        _ => None,
    }
}

fn apply_mask(x: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x,
    }
}

fn apply_mask_ref(x: &Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => x * m,
        None => x.clone(),
    }
}

struct AttentionCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention probabilities per head, (L, L); masked keys hold exact zeros.
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
}

fn attention(
    x: &Array2<f64>,
    mask: &[bool],
    p: &TransformerLayerParams,
    heads: usize,
) -> (Array2<f64>, AttentionCache) {
    let xv = x.view();
    let q = linear(&xv, &p.query);
    let k = linear(&xv, &p.key);
    let v = linear(&xv, &p.value);
    let (len, dim) = x.dim();
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut context = Array2::zeros((len, dim));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let qh = q.slice(cols);
        let kh = k.slice(cols);
        let vh = v.slice(cols);
        let mut scores = qh.dot(&kh.t()) * scale;
        for mut row in scores.rows_mut() {
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&s, _)| s)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (s, &m) in row.iter_mut().zip(mask) {
                *s = if m { (*s - max).exp() } else { 0.0 };
                sum += *s;
            }
            row.mapv_inplace(|s| s / sum);
        }
        context.slice_mut(cols).assign(&scores.dot(&vh));
        probs.push(scores);
    }
    let out = linear(&context.view(), &p.output);
    (
        out,
        AttentionCache {
            q,
            k,
            v,
            probs,
            context,
        },
    )
}

fn attention_backward(
    x: &Array2<f64>,
    cache: &AttentionCache,
    dout: &Array2<f64>,
    p: &TransformerLayerParams,
    g: &mut TransformerLayerParams,
    heads: usize,
) -> Array2<f64> {
    let dcontext = linear_backward(&cache.context.view(), dout, &p.output, &mut g.output);
    let dim = x.ncols();
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(x.raw_dim());
    let mut dk = Array2::zeros(x.raw_dim());
    let mut dv = Array2::zeros(x.raw_dim());
    for (h, probs) in cache.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dctx = dcontext.slice(cols);
        let dprobs = dctx.dot(&cache.v.slice(cols).t());
        dv.slice_mut(cols).assign(&probs.t().dot(&dctx));
        let mut dscores = dprobs;
        for (mut ds, pr) in dscores.rows_mut().into_iter().zip(probs.rows()) {
            let dot = ds.dot(&pr);
            ds.zip_mut_with(&pr, |d, &pv| *d = pv * (*d - dot));
        }
        dscores *= scale;
        dq.slice_mut(cols)
            .assign(&dscores.dot(&cache.k.slice(cols)));
        dk.slice_mut(cols)
            .assign(&dscores.t().dot(&cache.q.slice(cols)));
    }
    let xv = x.view();
    let mut dx = linear_backward(&xv, &dq, &p.query, &mut g.query);
    dx += &linear_backward(&xv, &dk, &p.key, &mut g.key);
    dx += &linear_backward(&xv, &dv, &p.value, &mut g.value);
    dx
}

pub(crate) struct LayerCache {
    input: Array2<f64>,
    attn: AttentionCache,
    drop_attn: Option<Array2<f64>>,
    norm1: NormCache,
    normed1: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    drop_ff: Option<Array2<f64>>,
    drop_out: Option<Array2<f64>>,
    norm2: NormCache,
}

/// Post-norm layer: `y1 = LN(x + Drop(Attn(x)))`, `y = LN(y1 + Drop(FF(y1)))`.
pub(crate) fn transformer_layer(
    x: &Array2<f64>,
    mask: &[bool],
    p: &TransformerLayerParams,
    heads: usize,
    dropout: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Array2<f64>, LayerCache) {
    let (attn_out, attn) = attention(x, mask, p, heads);
    let drop_attn = dropout_mask(attn_out.dim(), dropout, rng.as_deref_mut());
    let (normed1, norm1) = layer_norm(&(x + &apply_mask(attn_out, &drop_attn)), &p.norm1);

    let ff_pre = linear(&normed1.view(), &p.ff1);
    let drop_ff = dropout_mask(ff_pre.dim(), dropout, rng.as_deref_mut());
    let ff_act = apply_mask(relu(&ff_pre), &drop_ff);
    let ff_out = linear(&ff_act.view(), &p.ff2);
    let drop_out = dropout_mask(ff_out.dim(), dropout, rng.as_deref_mut());
    let (y, norm2) = layer_norm(&(&normed1 + &apply_mask(ff_out, &drop_out)), &p.norm2);

    let cache = LayerCache {
        input: x.clone(),
        attn,
        drop_attn,
        norm1,
        normed1,
        ff_pre,
        ff_act,
        drop_ff,
        drop_out,
        norm2,
    };
    (y, cache)
}

pub(crate) fn transformer_layer_backward(
    cache: &LayerCache,
    dy: &Array2<f64>,
    p: &TransformerLayerParams,
    g: &mut TransformerLayerParams,
    heads: usize,
) -> Array2<f64> {
    let dr2 = layer_norm_backward(&cache.norm2, dy, &p.norm2, &mut g.norm2);
    let dff_out = apply_mask_ref(&dr2, &cache.drop_out);
    let dff_act = linear_backward(&cache.ff_act.view(), &dff_out, &p.ff2, &mut g.ff2);
    let dff_relu = apply_mask(dff_act, &cache.drop_ff);
    let dff_pre = relu_backward(&cache.ff_pre, &dff_relu);
    let mut dnormed1 = linear_backward(&cache.normed1.view(), &dff_pre, &p.ff1, &mut g.ff1);
    dnormed1 += &dr2;

    let dr1 = layer_norm_backward(&cache.norm1, &dnormed1, &p.norm1, &mut g.norm1);
    let dattn = apply_mask_ref(&dr1, &cache.drop_attn);
    let mut dx = attention_backward(&cache.input, &cache.attn, &dattn, p, g, heads);
    dx += &dr1;
    dx
}

/// Outputs of the base encoder for one row: both layer hidden states and
/// the masked-mean pooled vector.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub h1: Array2<f64>,
    pub h2: Array2<f64>,
    pub pooled: Array1<f64>,
}

pub(crate) struct EncoderCache {
    input: Array2<f64>,
    pre1: Array2<f64>,
    act1: Array2<f64>,
    layers: Vec<LayerCache>,
    mask: Vec<bool>,
}

pub(crate) fn masked_mean(h: &Array2<f64>, mask: &[bool]) -> Array1<f64> {
    let mut sum = Array1::zeros(h.ncols());
    let mut n = 0usize;
    for (row, &m) in h.rows().into_iter().zip(mask) {
        if m {
            sum += &row;
            n += 1;
        }
    }
    sum / n as f64
}

/// Row-level base encoder: projection `W2(relu(W1 x))`, two transformer
/// layers, masked mean pooling.
pub(crate) fn encoder(
    x: &Array2<f64>,
    mask: &[bool],
    p: &EncoderParams,
    heads: usize,
    dropout: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (EncoderOutput, EncoderCache) {
    let pre1 = linear(&x.view(), &p.input1);
    let act1 = relu(&pre1);
    let mut h = linear(&act1.view(), &p.input2);
    let mut hidden = Vec::with_capacity(p.layers.len());
    let mut caches = Vec::with_capacity(p.layers.len());
    for layer in &p.layers {
        let (y, c) = transformer_layer(&h, mask, layer, heads, dropout, rng.as_deref_mut());
        hidden.push(y.clone());
        caches.push(c);
        h = y;
    }
    let pooled = masked_mean(&h, mask);
    let mut hidden = hidden.into_iter();
    let out = EncoderOutput {
        h1: hidden.next().expect("two layers"),
        h2: hidden.next().expect("two layers"),
        pooled,
    };
    let cache = EncoderCache {
        input: x.clone(),
        pre1,
        act1,
        layers: caches,
        mask: mask.to_vec(),
    };
    (out, cache)
}

/// Backward through the encoder given gradients for any subset of its
/// outputs. Returns the gradient with respect to the encoder input.
pub(crate) fn encoder_backward(
    cache: &EncoderCache,
    dh1: Option<&Array2<f64>>,
    dh2: Option<&Array2<f64>>,
    dpooled: Option<&Array1<f64>>,
    p: &EncoderParams,
    g: &mut EncoderParams,
    heads: usize,
) -> Array2<f64> {
    let len = cache.input.nrows();
    let dim = p.input2.output_dim();
    let mut d2 = dh2.cloned().unwrap_or_else(|| Array2::zeros((len, dim)));
    if let Some(dp) = dpooled {
        let n = cache.mask.iter().filter(|&&m| m).count() as f64;
        let share = dp / n;
        for (mut row, &m) in d2.rows_mut().into_iter().zip(&cache.mask) {
            if m {
                row += &share;
            }
        }
    }
    let mut d1 =
        transformer_layer_backward(&cache.layers[1], &d2, &p.layers[1], &mut g.layers[1], heads);
    if let Some(dh) = dh1 {
        d1 += dh;
    }
    let dproj =
        transformer_layer_backward(&cache.layers[0], &d1, &p.layers[0], &mut g.layers[0], heads);
    let dact = linear_backward(&cache.act1.view(), &dproj, &p.input2, &mut g.input2);
    let dpre = relu_backward(&cache.pre1, &dact);
    linear_backward(&cache.input.view(), &dpre, &p.input1, &mut g.input1)
}
