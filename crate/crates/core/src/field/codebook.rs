//! Multi-head attention read of the codebook.
//!
//! For head `h` with columns `c = [h*dh, (h+1)*dh)`:
//! `q = f·W_q[:, c]`, `keys = B·W_k[:, c]`, `vals = B·W_v[:, c]`,
//! `a = softmax(q·keysᵀ / s)`, `o_h = a·vals`; the heads are concatenated and
//! projected by `W_out`. `s` is `sqrt(dh)` when `attn_scale` is set, else 1.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::{Codebook, FieldParams};
use crate::error::{contract, Result};

pub(crate) struct AttnCache {
    q: Array2<f64>,
    keys: Array2<f64>,
    vals: Array2<f64>,
    /// Per head, `n x K`.
    attn: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

fn score_scale(head_dim: usize, attn_scale: bool) -> f64 {
    if attn_scale {
        (head_dim as f64).sqrt()
    } else {
        1.0
    }
}

pub(crate) fn forward(
    cb: &Codebook,
    f: &ArrayView2<f64>,
    heads: usize,
    attn_scale: bool,
) -> (Array2<f64>, AttnCache) {
    let d = cb.w_q.nrows();
    let dh = d / heads;
    let scale = score_scale(dh, attn_scale);
    let q = f.dot(&cb.w_q);
    let keys = cb.words.dot(&cb.w_k);
    let vals = cb.words.dot(&cb.w_v);
    let mut concat = Array2::zeros((f.nrows(), d));
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&keys.slice(cols).t());
        scores.mapv_inplace(|v| v / scale);
        softmax_rows(&mut scores);
        concat.slice_mut(cols).assign(&scores.dot(&vals.slice(cols)));
        attn.push(scores);
    }
    let out = concat.dot(&cb.w_out);
    (out, AttnCache { q, keys, vals, attn, concat })
}

/// Accumulates parameter gradients into `grads` and returns `∂L/∂f`.
pub(crate) fn backward(
    cb: &Codebook,
    f: &ArrayView2<f64>,
    cache: &AttnCache,
    d_out: &Array2<f64>,
    heads: usize,
    attn_scale: bool,
    grads: &mut Codebook,
) -> Array2<f64> {
    let d = cb.w_q.nrows();
    let dh = d / heads;
    let scale = score_scale(dh, attn_scale);
    grads.w_out += &cache.concat.t().dot(d_out);
    let d_concat = d_out.dot(&cb.w_out.t());

    let mut d_q = Array2::zeros(cache.q.raw_dim());
    let mut d_keys = Array2::zeros(cache.keys.raw_dim());
    let mut d_vals = Array2::zeros(cache.vals.raw_dim());
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let a = &cache.attn[h];
        let d_o = d_concat.slice(cols);
        d_vals.slice_mut(cols).assign(&a.t().dot(&d_o));
        let d_a = d_o.dot(&cache.vals.slice(cols).t());
        // softmax backward: a ⊙ (d_a − Σ_j d_a_j a_j)
        let row_dot: Array1<f64> = (&d_a * a).sum_axis(Axis(1));
        let mut d_scores = &d_a - &row_dot.insert_axis(Axis(1));
        d_scores *= a;
        d_scores.mapv_inplace(|v| v / scale);
        d_q.slice_mut(cols).assign(&d_scores.dot(&cache.keys.slice(cols)));
        d_keys.slice_mut(cols).assign(&d_scores.t().dot(&cache.q.slice(cols)));
    }
    grads.w_q += &f.t().dot(&d_q);
    grads.w_k += &cb.words.t().dot(&d_keys);
    grads.w_v += &cb.words.t().dot(&d_vals);
    grads.words += &d_keys.dot(&cb.w_k.t());
    grads.words += &d_vals.dot(&cb.w_v.t());
    d_q.dot(&cb.w_q.t())
}

/// Result of reading the codebook with a single feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookQuery {
    /// `f_sr`, same length as the query.
    pub output: Vec<f64>,
    /// Per head, the softmax weights over the `K` words.
    pub weights: Vec<Vec<f64>>,
}

impl FieldParams {
    pub fn query_codebook(&self, f: &[f64]) -> Result<CodebookQuery> {
        let cb = self.codebook.as_ref().ok_or_else(|| contract("field has no codebook"))?;
        if f.len() != self.config.width {
            return Err(contract(format!("query has {} values, expected {}", f.len(), self.config.width)));
        }
        let fm = ArrayView2::from_shape((1, f.len()), f).expect("row vector");
        let (out, cache) = forward(cb, &fm, self.config.num_heads, self.config.attn_scale);
        Ok(CodebookQuery {
            output: out.row(0).to_vec(),
            weights: cache.attn.iter().map(|a| a.row(0).to_vec()).collect(),
        })
    }
}

/// Per-head attention weights for a query feature.
pub fn attention_weights(params: &FieldParams, f: &[f64]) -> Result<Vec<Vec<f64>>> {
    Ok(params.query_codebook(f)?.weights)
}
