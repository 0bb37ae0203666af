use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EncoderConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub w_query: Array2<f64>,
    pub b_query: Array1<f64>,
    pub w_key: Array2<f64>,
    pub b_key: Array1<f64>,
    pub w_value: Array2<f64>,
    pub b_value: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub w_ff1: Array2<f64>,
    pub b_ff1: Array1<f64>,
    pub w_ff2: Array2<f64>,
    pub b_ff2: Array1<f64>,
}

/// Every trainable array. Gradients and optimizer moments use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub embedding: Array2<f64>,
    /// `external_dim x d_model`; zero rows when external vectors are disabled.
    pub external_proj: Array2<f64>,
    pub layers: Vec<LayerWeights>,
    pub final_gain: Array1<f64>,
    pub final_bias: Array1<f64>,
    pub span_w1: Array2<f64>,
    pub span_b1: Array1<f64>,
    pub span_w2: Array2<f64>,
    pub span_b2: Array1<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let limit = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

impl Weights {
    pub fn init(config: &EncoderConfig, vocab_size: usize) -> Weights {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let ones = || Array1::from_elem(d, 1.0);
        let zeros = Array1::<f64>::zeros;
        let embedding = uniform(&mut rng, vocab_size, d, 1);
        let external_proj = uniform(&mut rng, config.external_dim, d, config.external_dim);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                ln1_gain: ones(),
                ln1_bias: zeros(d),
                w_query: uniform(&mut rng, d, d, d),
                b_query: zeros(d),
                w_key: uniform(&mut rng, d, d, d),
                b_key: zeros(d),
                w_value: uniform(&mut rng, d, d, d),
                b_value: zeros(d),
                w_out: uniform(&mut rng, d, d, d),
                b_out: zeros(d),
                ln2_gain: ones(),
                ln2_bias: zeros(d),
                w_ff1: uniform(&mut rng, d, config.d_ff, d),
                b_ff1: zeros(config.d_ff),
                w_ff2: uniform(&mut rng, config.d_ff, d, config.d_ff),
                b_ff2: zeros(d),
            })
            .collect();
        let labels = config.labels.len();
        Weights {
            embedding,
            external_proj,
            layers,
            final_gain: ones(),
            final_bias: zeros(d),
            span_w1: uniform(&mut rng, d, config.d_span, d),
            span_b1: zeros(config.d_span),
            span_w2: uniform(&mut rng, config.d_span, labels, config.d_span),
            span_b2: zeros(labels),
        }
    }

    pub fn zeros_like(&self) -> Weights {
        let mut w = self.clone();
        w.for_each_mut(|_, v| v.fill(0.0));
        w
    }

    /// `(name, shape, values)` for every array, in a fixed order.
    pub fn fields(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        fn m(name: String, a: &Array2<f64>) -> (String, Vec<usize>, &[f64]) {
            (name, a.shape().to_vec(), a.as_slice().expect("standard layout"))
        }
        fn v(name: String, a: &Array1<f64>) -> (String, Vec<usize>, &[f64]) {
            (name, a.shape().to_vec(), a.as_slice().expect("standard layout"))
        }
        let mut out = vec![m("embedding".into(), &self.embedding), m("external_proj".into(), &self.external_proj)];
        for (k, l) in self.layers.iter().enumerate() {
            out.extend([
                v(format!("layer{k}.ln1_gain"), &l.ln1_gain),
                v(format!("layer{k}.ln1_bias"), &l.ln1_bias),
                m(format!("layer{k}.w_query"), &l.w_query),
                v(format!("layer{k}.b_query"), &l.b_query),
                m(format!("layer{k}.w_key"), &l.w_key),
                v(format!("layer{k}.b_key"), &l.b_key),
                m(format!("layer{k}.w_value"), &l.w_value),
                v(format!("layer{k}.b_value"), &l.b_value),
                m(format!("layer{k}.w_out"), &l.w_out),
                v(format!("layer{k}.b_out"), &l.b_out),
                v(format!("layer{k}.ln2_gain"), &l.ln2_gain),
                v(format!("layer{k}.ln2_bias"), &l.ln2_bias),
                m(format!("layer{k}.w_ff1"), &l.w_ff1),
                v(format!("layer{k}.b_ff1"), &l.b_ff1),
                m(format!("layer{k}.w_ff2"), &l.w_ff2),
                v(format!("layer{k}.b_ff2"), &l.b_ff2),
            ]);
        }
        out.extend([
            v("final_gain".into(), &self.final_gain),
            v("final_bias".into(), &self.final_bias),
            m("span_w1".into(), &self.span_w1),
            v("span_b1".into(), &self.span_b1),
            m("span_w2".into(), &self.span_w2),
            v("span_b2".into(), &self.span_b2),
        ]);
        out
    }

    /// Visits every array mutably, in the same order as [`Self::fields`].
    pub fn for_each_mut(&mut self, mut f: impl FnMut(usize, &mut [f64])) {
        let mut k = 0;
        let mut go = |s: &mut [f64]| {
            f(k, s);
            k += 1;
        };
        go(self.embedding.as_slice_mut().expect("standard layout"));
        go(self.external_proj.as_slice_mut().expect("standard layout"));
        for l in &mut self.layers {
            for a in [&mut l.ln1_gain, &mut l.ln1_bias] {
                go(a.as_slice_mut().expect("standard layout"));
            }
            for (w, b) in [
                (&mut l.w_query, &mut l.b_query),
                (&mut l.w_key, &mut l.b_key),
                (&mut l.w_value, &mut l.b_value),
                (&mut l.w_out, &mut l.b_out),
            ] {
                go(w.as_slice_mut().expect("standard layout"));
                go(b.as_slice_mut().expect("standard layout"));
            }
            for a in [&mut l.ln2_gain, &mut l.ln2_bias] {
                go(a.as_slice_mut().expect("standard layout"));
            }
            go(l.w_ff1.as_slice_mut().expect("standard layout"));
            go(l.b_ff1.as_slice_mut().expect("standard layout"));
            go(l.w_ff2.as_slice_mut().expect("standard layout"));
            go(l.b_ff2.as_slice_mut().expect("standard layout"));
        }
        go(self.final_gain.as_slice_mut().expect("standard layout"));
        go(self.final_bias.as_slice_mut().expect("standard layout"));
        go(self.span_w1.as_slice_mut().expect("standard layout"));
        go(self.span_b1.as_slice_mut().expect("standard layout"));
        go(self.span_w2.as_slice_mut().expect("standard layout"));
        go(self.span_b2.as_slice_mut().expect("standard layout"));
    }

    /// Applies `f(self_array, other_array)` pairwise over matching arrays.
    pub fn zip_mut(&mut self, other: &Weights, mut f: impl FnMut(&mut [f64], &[f64])) {
        let others: Vec<&[f64]> = other.fields().into_iter().map(|(_, _, v)| v).collect();
        self.for_each_mut(|k, s| f(s, others[k]));
    }

    pub fn add_assign(&mut self, other: &Weights) {
        self.zip_mut(other, |a, b| a.iter_mut().zip(b).for_each(|(x, y)| *x += y));
    }

    pub fn scale(&mut self, factor: f64) {
        self.for_each_mut(|_, s| s.iter_mut().for_each(|x| *x *= factor));
    }

    pub fn squared_norm(&self) -> f64 {
        self.fields().iter().flat_map(|(_, _, v)| v.iter()).map(|x| x * x).sum()
    }

    pub fn num_params(&self) -> usize {
        self.fields().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.fields().iter().all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }

    /// Reads flat parameter `index` (in [`Self::fields`] order).
    pub fn get_flat(&self, index: usize) -> f64 {
        let mut rem = index;
        for (_, _, v) in self.fields() {
            if rem < v.len() {
                return v[rem];
            }
            rem -= v.len();
        }
        panic!("flat index {index} out of range");
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        let mut rem = Some(index);
        self.for_each_mut(|_, s| {
            if let Some(r) = rem {
                if r < s.len() {
                    s[r] = value;
                    rem = None;
                } else {
                    rem = Some(r - s.len());
                }
            }
        });
        assert!(rem.is_none(), "flat index {index} out of range");
    }
}
