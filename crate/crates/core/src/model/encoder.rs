//! Forward pass and exact reverse-mode gradients of the span scorer.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{Model, ModelError, Weights};
use crate::chart::{span_count, SpanScoreChart, NULL_INDEX};

const LN_EPS: f64 = 1e-5;

/// Fencepost vectors `y_0 .. y_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRepr {
    fenceposts: Array2<f64>,
}

impl SequenceRepr {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        SequenceRepr { fenceposts: Array2::from_shape_vec((rows.len(), d), flat).expect("rectangular rows") }
    }

    /// Sentence length `n` (one less than the fencepost count).
    pub fn len(&self) -> usize {
        self.fenceposts.nrows() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_fenceposts(&self) -> usize {
        self.fenceposts.nrows()
    }

    pub fn fencepost(&self, k: usize) -> ndarray::ArrayView1<'_, f64> {
        self.fenceposts.row(k)
    }
}

struct LayerNormCache {
    normed: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut normed = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in normed.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *is = 1.0 / (var + LN_EPS).sqrt();
        let s = *is;
        row.mapv_inplace(|v| v * s);
    }
    let out = &normed * gain + bias;
    (out, LayerNormCache { normed, inv_std })
}

/// Returns the input gradient; accumulates gain/bias gradients.
fn layer_norm_backward(
    grad_out: &Array2<f64>,
    cache: &LayerNormCache,
    gain: &Array1<f64>,
    d_gain: &mut Array1<f64>,
    d_bias: &mut Array1<f64>,
) -> Array2<f64> {
    *d_gain += &(grad_out * &cache.normed).sum_axis(Axis(0));
    *d_bias += &grad_out.sum_axis(Axis(0));
    let d = grad_out.ncols() as f64;
    let mut grad_in = grad_out * gain;
    for ((mut g, xhat), &is) in grad_in.rows_mut().into_iter().zip(cache.normed.rows()).zip(cache.inv_std.iter()) {
        let sum_g = g.sum();
        let sum_gx = g.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>();
        for (gv, &xv) in g.iter_mut().zip(xhat.iter()) {
            *gv = is / d * (d * *gv - sum_g - xv * sum_gx);
        }
    }
    grad_in
}

fn positional_encoding(n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |(t, k)| {
        let rate = 1.0 / 10000f64.powf((2 * (k / 2)) as f64 / d as f64);
        let angle = t as f64 * rate;
        if k % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn dropout_mask(rng: &mut dyn rand::RngCore, rows: usize, cols: usize, rate: f64) -> Array2<f64> {
    let keep = 1.0 - rate;
    Array2::from_shape_fn((rows, cols), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

struct LayerCache {
    ln1: LayerNormCache,
    normed1: Array2<f64>,
    query: Array2<f64>,
    key: Array2<f64>,
    value: Array2<f64>,
    attention: Vec<Array2<f64>>,
    context: Array2<f64>,
    ln2: LayerNormCache,
    normed2: Array2<f64>,
    hidden: Array2<f64>,
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardCache {
    ids: Vec<usize>,
    external: Option<Array2<f64>>,
    input_mask: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    final_ln: LayerNormCache,
    output_mask: Option<Array2<f64>>,
    fenceposts: Array2<f64>,
    span_pre: Array2<f64>,
    span_hidden: Array2<f64>,
}

impl ForwardCache {
    pub fn sequence_repr(&self) -> SequenceRepr {
        SequenceRepr { fenceposts: self.fenceposts.clone() }
    }

    /// Attention weights per layer, per head (`n x n`, rows sum to one).
    pub fn attention(&self) -> Vec<&[Array2<f64>]> {
        self.layers.iter().map(|l| l.attention.as_slice()).collect()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn spans(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..=n).map(move |j| (i, j)))
}

pub(super) fn forward(
    model: &Model,
    ids: &[usize],
    external: Option<&[Vec<f64>]>,
    mut noise: Option<&mut dyn rand::RngCore>,
) -> Result<(SpanScoreChart, ForwardCache), ModelError> {
    let cfg = &model.config;
    let w = &model.weights;
    let n = ids.len();
    let d = cfg.d_model;
    if n == 0 {
        return Err(ModelError::EmptySentence);
    }
    let mut x = Array2::zeros((n, d));
    for (t, &id) in ids.iter().enumerate() {
        x.row_mut(t).assign(&w.embedding.row(id));
    }
    let external = match external {
        None => None,
        Some(vecs) => {
            if cfg.external_dim == 0 {
                return Err(ModelError::ExternalMismatch {
                    expected: "no external vectors".into(),
                    got: format!("{} vectors", vecs.len()),
                });
            }
            if vecs.len() != n {
                return Err(ModelError::ExternalMismatch {
                    expected: format!("{n} vectors"),
                    got: format!("{} vectors", vecs.len()),
                });
            }
            if let Some(v) = vecs.iter().find(|v| v.len() != cfg.external_dim) {
                return Err(ModelError::ExternalMismatch {
                    expected: format!("width {}", cfg.external_dim),
                    got: format!("width {}", v.len()),
                });
            }
            let flat: Vec<f64> = vecs.iter().flatten().copied().collect();
            let e = Array2::from_shape_vec((n, cfg.external_dim), flat).expect("checked shape");
            x += &e.dot(&w.external_proj);
            Some(e)
        }
    };
    x += &positional_encoding(n, d);
    let input_mask = match noise.as_deref_mut() {
        Some(rng) if cfg.dropout > 0.0 => {
            let m = dropout_mask(rng, n, d, cfg.dropout);
            x *= &m;
            Some(m)
        }
        _ => None,
    };

    let heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for lw in &w.layers {
        let (normed1, ln1) = layer_norm(&x, &lw.ln1_gain, &lw.ln1_bias);
        let query = normed1.dot(&lw.w_query) + &lw.b_query;
        let key = normed1.dot(&lw.w_key) + &lw.b_key;
        let value = normed1.dot(&lw.w_value) + &lw.b_value;
        let mut context = Array2::zeros((n, d));
        let mut attention = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut a = query.slice(cols).dot(&key.slice(cols).t()) * scale;
            for mut row in a.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|v| v / sum);
            }
            context.slice_mut(cols).assign(&a.dot(&value.slice(cols)));
            attention.push(a);
        }
        x = x + context.dot(&lw.w_out) + &lw.b_out;
        let (normed2, ln2) = layer_norm(&x, &lw.ln2_gain, &lw.ln2_bias);
        let mut hidden = normed2.dot(&lw.w_ff1) + &lw.b_ff1;
        hidden.mapv_inplace(|v| v.max(0.0));
        x = x + hidden.dot(&lw.w_ff2) + &lw.b_ff2;
        layers.push(LayerCache { ln1, normed1, query, key, value, attention, context, ln2, normed2, hidden });
    }
    let (mut out, final_ln) = layer_norm(&x, &w.final_gain, &w.final_bias);
    let output_mask = match noise {
        Some(rng) if cfg.dropout > 0.0 => {
            let m = dropout_mask(rng, n, d, cfg.dropout);
            out *= &m;
            Some(m)
        }
        _ => None,
    };

    // y_k = [forward half of token k-1 ; backward half of token k], zero-padded.
    let half = d / 2;
    let mut fenceposts = Array2::zeros((n + 1, d));
    for k in 0..=n {
        if k >= 1 {
            fenceposts.slice_mut(s![k, ..half]).assign(&out.slice(s![k - 1, ..half]));
        }
        if k < n {
            fenceposts.slice_mut(s![k, half..]).assign(&out.slice(s![k, half..]));
        }
    }

    // W1 (y_j - y_i) = W1 y_j - W1 y_i, so project fenceposts once.
    let projected = fenceposts.dot(&w.span_w1);
    let num_spans = span_count(n);
    let mut span_pre = Array2::zeros((num_spans, cfg.d_span));
    for (row, (i, j)) in span_pre.rows_mut().into_iter().zip(spans(n)) {
        let mut row = row;
        row.assign(&projected.row(j));
        row -= &projected.row(i);
        row += &w.span_b1;
    }
    let span_hidden = span_pre.mapv(|v| v.max(0.0));
    let mut raw = span_hidden.dot(&w.span_w2) + &w.span_b2;
    for mut row in raw.rows_mut() {
        let null = row[NULL_INDEX];
        row.mapv_inplace(|v| v - null);
    }
    let labels = raw.ncols();
    let chart = SpanScoreChart::from_vec(n, labels, raw.into_raw_vec_and_offset().0)?;
    let cache = ForwardCache {
        ids: ids.to_vec(),
        external,
        input_mask,
        layers,
        final_ln,
        output_mask,
        fenceposts,
        span_pre,
        span_hidden,
    };
    Ok((chart, cache))
}

pub(super) fn backward(
    model: &Model,
    cache: &ForwardCache,
    chart_gradient: &SpanScoreChart,
    grads: &mut Weights,
) -> Result<(), ModelError> {
    let cfg = &model.config;
    let w = &model.weights;
    let n = cache.ids.len();
    let d = cfg.d_model;
    let labels = cfg.labels.len();
    if chart_gradient.n() != n || chart_gradient.num_labels() != labels {
        return Err(ModelError::GradientShape {
            expected: (n, labels),
            got: (chart_gradient.n(), chart_gradient.num_labels()),
        });
    }
    let num_spans = span_count(n);
    let mut g_out = Array2::from_shape_vec((num_spans, labels), chart_gradient.as_slice().to_vec())
        .expect("chart layout is span-major");
    // Pinning: s_l = f_l - f_null for l != null; s_null is constant.
    for mut row in g_out.rows_mut() {
        row[NULL_INDEX] = 0.0;
        let total = row.sum();
        row[NULL_INDEX] = -total;
    }
    grads.span_w2 += &cache.span_hidden.t().dot(&g_out);
    grads.span_b2 += &g_out.sum_axis(Axis(0));
    let mut g_pre = g_out.dot(&w.span_w2.t());
    g_pre.zip_mut_with(&cache.span_pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    grads.span_b1 += &g_pre.sum_axis(Axis(0));
    let mut g_projected = Array2::<f64>::zeros((n + 1, cfg.d_span));
    for (row, (i, j)) in g_pre.rows().into_iter().zip(spans(n)) {
        {
            let mut gj = g_projected.row_mut(j);
            gj += &row;
        }
        let mut gi = g_projected.row_mut(i);
        gi -= &row;
    }
    grads.span_w1 += &cache.fenceposts.t().dot(&g_projected);
    let g_fence = g_projected.dot(&w.span_w1.t());

    let half = d / 2;
    let mut g_x = Array2::<f64>::zeros((n, d));
    for k in 0..=n {
        if k >= 1 {
            let mut dst = g_x.slice_mut(s![k - 1, ..half]);
            dst += &g_fence.slice(s![k, ..half]);
        }
        if k < n {
            let mut dst = g_x.slice_mut(s![k, half..]);
            dst += &g_fence.slice(s![k, half..]);
        }
    }
    if let Some(m) = &cache.output_mask {
        g_x *= m;
    }
    g_x = layer_norm_backward(&g_x, &cache.final_ln, &w.final_gain, &mut grads.final_gain, &mut grads.final_bias);

    let heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    for (k, lc) in cache.layers.iter().enumerate().rev() {
        let lw = &w.layers[k];
        let lg = &mut grads.layers[k];
        // Feed-forward sublayer.
        lg.w_ff2 += &lc.hidden.t().dot(&g_x);
        lg.b_ff2 += &g_x.sum_axis(Axis(0));
        let mut g_hidden = g_x.dot(&lw.w_ff2.t());
        g_hidden.zip_mut_with(&lc.hidden, |g, &h| {
            if h <= 0.0 {
                *g = 0.0;
            }
        });
        lg.w_ff1 += &lc.normed2.t().dot(&g_hidden);
        lg.b_ff1 += &g_hidden.sum_axis(Axis(0));
        let g_normed2 = g_hidden.dot(&lw.w_ff1.t());
        g_x += &layer_norm_backward(&g_normed2, &lc.ln2, &lw.ln2_gain, &mut lg.ln2_gain, &mut lg.ln2_bias);

        // Attention sublayer.
        lg.w_out += &lc.context.t().dot(&g_x);
        lg.b_out += &g_x.sum_axis(Axis(0));
        let g_context = g_x.dot(&lw.w_out.t());
        let mut g_query = Array2::<f64>::zeros((n, d));
        let mut g_key = Array2::<f64>::zeros((n, d));
        let mut g_value = Array2::<f64>::zeros((n, d));
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let a = &lc.attention[h];
            let g_ctx_h: ArrayView2<f64> = g_context.slice(cols);
            let g_attn = g_ctx_h.dot(&lc.value.slice(cols).t());
            g_value.slice_mut(cols).assign(&a.t().dot(&g_ctx_h));
            let mut g_scores = g_attn;
            for (mut gr, ar) in g_scores.rows_mut().into_iter().zip(a.rows()) {
                let dot = gr.iter().zip(ar.iter()).map(|(x, y)| x * y).sum::<f64>();
                for (gv, &av) in gr.iter_mut().zip(ar.iter()) {
                    *gv = av * (*gv - dot) * scale;
                }
            }
            g_query.slice_mut(cols).assign(&g_scores.dot(&lc.key.slice(cols)));
            g_key.slice_mut(cols).assign(&g_scores.t().dot(&lc.query.slice(cols)));
        }
        lg.w_query += &lc.normed1.t().dot(&g_query);
        lg.b_query += &g_query.sum_axis(Axis(0));
        lg.w_key += &lc.normed1.t().dot(&g_key);
        lg.b_key += &g_key.sum_axis(Axis(0));
        lg.w_value += &lc.normed1.t().dot(&g_value);
        lg.b_value += &g_value.sum_axis(Axis(0));
        let g_normed1 = g_query.dot(&lw.w_query.t()) + g_key.dot(&lw.w_key.t()) + g_value.dot(&lw.w_value.t());
        g_x += &layer_norm_backward(&g_normed1, &lc.ln1, &lw.ln1_gain, &mut lg.ln1_gain, &mut lg.ln1_bias);
    }

    if let Some(m) = &cache.input_mask {
        g_x *= m;
    }
    for (t, &id) in cache.ids.iter().enumerate() {
        let mut row = grads.embedding.row_mut(id);
        row += &g_x.row(t);
    }
    if let Some(e) = &cache.external {
        grads.external_proj += &e.t().dot(&g_x);
    }
    Ok(())
}
