//! Self-attentive span scorer: token embeddings, a pre-norm transformer
//! encoder, fencepost span differences and a two-layer span classifier.

mod checkpoint;
mod encoder;
mod weights;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use encoder::{ForwardCache, SequenceRepr};
pub use weights::Weights;

pub use crate::chart::{tree_score, LabelSet, SpanScoreChart};
use crate::chart::ChartError;

pub const OOV_TOKEN: &str = "<OOV>";
pub const OOV_ID: usize = 0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("sentence is empty")]
    EmptySentence,
    #[error("external vectors: expected {expected}, got {got}")]
    ExternalMismatch { expected: String, got: String },
    #[error("span ({i}, {j}) is invalid for a sentence of length {n}")]
    BadSpan { i: usize, j: usize, n: usize },
    #[error("chart gradient shape {got:?} does not match chart shape {expected:?}")]
    GradientShape { expected: (usize, usize), got: (usize, usize) },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Architecture and label inventory. `external_dim == 0` disables the
/// external-vector projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub d_span: usize,
    pub external_dim: usize,
    pub dropout: f64,
    pub labels: LabelSet,
    pub seed: u64,
}

impl EncoderConfig {
    /// Desk-scale defaults: 128 wide, 2 layers of 4 heads, 256 feed-forward.
    pub fn new(labels: LabelSet, seed: u64) -> Self {
        EncoderConfig {
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            d_span: 128,
            external_dim: 0,
            dropout: 0.1,
            labels,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("d_span", self.d_span),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(ModelError::Config("d_model must be even for fencepost halves".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config("dropout must be in [0, 1)".into()));
        }
        if self.labels.len() < 2 || self.labels.name(0) != crate::chart::NULL_LABEL {
            return Err(ModelError::Config("label set must hold the null label and one real label".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Surface-to-id map; id 0 is the shared out-of-vocabulary entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from the given words; order is sorted and
    /// duplicates dropped so the ids are independent of corpus order.
    pub fn from_words<I, S>(words: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut w: Vec<String> = words.into_iter().map(Into::into).filter(|w| w != OOV_TOKEN).collect();
        if w.is_empty() {
            return Err(ModelError::EmptyVocabulary);
        }
        w.sort();
        w.dedup();
        let mut all = vec![OOV_TOKEN.to_string()];
        all.extend(w);
        Ok(Self::from_ordered(all))
    }

    pub(crate) fn from_ordered(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(OOV_ID)
    }

    pub fn ids(&self, sentence: &[String]) -> Vec<usize> {
        sentence.iter().map(|w| self.id(w)).collect()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// A scorer: configuration, vocabulary and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: EncoderConfig,
    pub vocab: Vocabulary,
    pub weights: Weights,
}

impl Model {
    /// Fan-in scaled uniform initialization, deterministic in `config.seed`.
    pub fn init(config: EncoderConfig, vocab: Vocabulary) -> Result<Self, ModelError> {
        config.validate()?;
        if vocab.is_empty() {
            return Err(ModelError::EmptyVocabulary);
        }
        let weights = Weights::init(&config, vocab.len());
        Ok(Model { config, vocab, weights })
    }

    pub fn labels(&self) -> &LabelSet {
        &self.config.labels
    }

    /// Fencepost representations `y_0 .. y_n` for a sentence.
    pub fn encode(&self, sentence: &[String], external: Option<&[Vec<f64>]>) -> Result<SequenceRepr, ModelError> {
        let ids = self.vocab.ids(sentence);
        let (_, cache) = self.forward_ids(&ids, external, None)?;
        Ok(cache.sequence_repr())
    }

    /// Null-pinned label scores for every span of the sentence.
    pub fn score_spans(&self, sentence: &[String], external: Option<&[Vec<f64>]>) -> Result<SpanScoreChart, ModelError> {
        let ids = self.vocab.ids(sentence);
        Ok(self.forward_ids(&ids, external, None)?.0)
    }

    /// Forward pass over token ids. With `noise`, dropout is applied using
    /// the given RNG (training mode).
    pub fn forward_ids(
        &self,
        ids: &[usize],
        external: Option<&[Vec<f64>]>,
        noise: Option<&mut dyn rand::RngCore>,
    ) -> Result<(SpanScoreChart, ForwardCache), ModelError> {
        encoder::forward(self, ids, external, noise)
    }

    /// Parameter gradients of `sum(chart_gradient * chart)` for a cached forward pass.
    pub fn backward_cached(&self, cache: &ForwardCache, chart_gradient: &SpanScoreChart) -> Result<Weights, ModelError> {
        let mut grads = self.weights.zeros_like();
        encoder::backward(self, cache, chart_gradient, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates gradients into `grads` instead of allocating.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        chart_gradient: &SpanScoreChart,
        grads: &mut Weights,
    ) -> Result<(), ModelError> {
        encoder::backward(self, cache, chart_gradient, grads)
    }

    /// Recomputes the (noise-free) forward pass, then backpropagates.
    pub fn backward(
        &self,
        sentence: &[String],
        external: Option<&[Vec<f64>]>,
        chart_gradient: &SpanScoreChart,
    ) -> Result<Weights, ModelError> {
        let ids = self.vocab.ids(sentence);
        let (_, cache) = self.forward_ids(&ids, external, None)?;
        self.backward_cached(&cache, chart_gradient)
    }
}

/// `y_j - y_i` for fenceposts `0 <= i < j <= n`.
pub fn span_vector(repr: &SequenceRepr, i: usize, j: usize) -> Result<Vec<f64>, ModelError> {
    let n = repr.len();
    if i >= j || j > n {
        return Err(ModelError::BadSpan { i, j, n });
    }
    let yi = repr.fencepost(i);
    let yj = repr.fencepost(j);
    Ok(yj.iter().zip(yi.iter()).map(|(a, b)| a - b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config(seed: u64) -> EncoderConfig {
        EncoderConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 12,
            d_span: 6,
            external_dim: 0,
            dropout: 0.0,
            labels: LabelSet::from_labels(["S", "NP", "EDITED"]),
            seed,
        }
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_words(["a", "b", "c", "the", "dog"]).unwrap()
    }

    fn sent(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn init_is_deterministic() {
        let a = Model::init(small_config(5), vocab()).unwrap();
        let b = Model::init(small_config(5), vocab()).unwrap();
        assert_eq!(a, b);
        let c = Model::init(small_config(6), vocab()).unwrap();
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn init_rejects_bad_dims() {
        let mut cfg = EncoderConfig::new(LabelSet::from_labels(["S"]), 1);
        cfg.d_model = 64;
        cfg.n_heads = 5;
        assert!(matches!(Model::init(cfg, vocab()), Err(ModelError::Config(_))));
        let mut cfg = small_config(1);
        cfg.d_span = 0;
        assert!(matches!(Model::init(cfg, vocab()), Err(ModelError::Config(_))));
    }

    #[test]
    fn init_rejects_empty_vocab() {
        assert!(matches!(Vocabulary::from_words(Vec::<String>::new()), Err(ModelError::EmptyVocabulary)));
    }

    #[test]
    fn oov_maps_to_zero() {
        let v = vocab();
        assert_eq!(v.id("zebra"), OOV_ID);
        assert_ne!(v.id("dog"), OOV_ID);
    }

    #[test]
    fn single_token_has_two_fenceposts() {
        let m = Model::init(small_config(1), vocab()).unwrap();
        let r = m.encode(&sent(&["a"]), None).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r.num_fenceposts(), 2);
    }

    #[test]
    fn encode_is_deterministic() {
        let m = Model::init(small_config(1), vocab()).unwrap();
        let s = sent(&["the", "dog", "a"]);
        assert_eq!(m.encode(&s, None).unwrap(), m.encode(&s, None).unwrap());
    }

    #[test]
    fn encode_rejects_empty() {
        let m = Model::init(small_config(1), vocab()).unwrap();
        assert!(matches!(m.encode(&[], None), Err(ModelError::EmptySentence)));
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let m = Model::init(small_config(2), vocab()).unwrap();
        let ids = m.vocab.ids(&sent(&["the", "dog", "a", "b", "c"]));
        let (_, cache) = m.forward_ids(&ids, None, None).unwrap();
        for layer in cache.attention() {
            for head in layer {
                for row in head.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn span_vector_contract() {
        let m = Model::init(small_config(1), vocab()).unwrap();
        let r = m.encode(&sent(&["the", "dog", "a"]), None).unwrap();
        assert!(matches!(span_vector(&r, 1, 1), Err(ModelError::BadSpan { .. })));
        assert!(matches!(span_vector(&r, 0, 4), Err(ModelError::BadSpan { .. })));
        let v = span_vector(&r, 0, 3).unwrap();
        let expect: Vec<f64> = r.fencepost(3).iter().zip(r.fencepost(0).iter()).map(|(a, b)| a - b).collect();
        assert_eq!(v, expect);
        let same = SequenceRepr::from_rows(vec![vec![1.0, 2.0], vec![1.0, 2.0]]);
        assert_eq!(span_vector(&same, 0, 1).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn chart_shape_and_null_pinning() {
        let m = Model::init(small_config(3), vocab()).unwrap();
        let s = sent(&["the", "dog", "a", "b"]);
        let c = m.score_spans(&s, None).unwrap();
        assert_eq!(c.num_spans(), 10);
        assert_eq!(c.as_slice().len(), 10 * m.labels().len());
        for (i, j) in c.spans() {
            assert_eq!(c.get(i, j, 0), 0.0);
        }
        assert_eq!(c, m.score_spans(&s, None).unwrap());
    }

    #[test]
    fn external_vectors_are_projected() {
        let mut cfg = small_config(4);
        cfg.external_dim = 3;
        let m = Model::init(cfg, vocab()).unwrap();
        let s = sent(&["the", "dog"]);
        let ext = vec![vec![1.0, 0.0, -1.0], vec![0.5, 0.5, 0.5]];
        let a = m.score_spans(&s, Some(&ext)).unwrap();
        let b = m.score_spans(&s, None).unwrap();
        assert_ne!(a, b);
        let bad = vec![vec![1.0, 0.0, -1.0]];
        assert!(matches!(m.score_spans(&s, Some(&bad)), Err(ModelError::ExternalMismatch { .. })));
        let bad = vec![vec![1.0], vec![2.0]];
        assert!(matches!(m.score_spans(&s, Some(&bad)), Err(ModelError::ExternalMismatch { .. })));
    }

    #[test]
    fn zero_gradient_gives_zero_grads() {
        let m = Model::init(small_config(3), vocab()).unwrap();
        let s = sent(&["the", "dog", "a"]);
        let g = SpanScoreChart::zeros(3, m.labels().len());
        let grads = m.backward(&s, None, &g).unwrap();
        assert!(grads.fields().iter().all(|(_, _, v)| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn backward_rejects_shape_mismatch() {
        let m = Model::init(small_config(3), vocab()).unwrap();
        let s = sent(&["the", "dog", "a"]);
        let g = SpanScoreChart::zeros(2, m.labels().len());
        assert!(matches!(m.backward(&s, None, &g), Err(ModelError::GradientShape { .. })));
    }

    #[test]
    fn backward_is_linear() {
        use rand::{Rng, SeedableRng};
        let m = Model::init(small_config(9), vocab()).unwrap();
        let s = sent(&["the", "dog", "a", "c"]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut g1 = SpanScoreChart::zeros(4, m.labels().len());
        let mut g2 = g1.clone();
        g1.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        g2.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let mut sum = g1.clone();
        sum.as_mut_slice().iter_mut().zip(g2.as_slice()).for_each(|(a, b)| *a += b);
        let a = m.backward(&s, None, &g1).unwrap();
        let b = m.backward(&s, None, &g2).unwrap();
        let c = m.backward(&s, None, &sum).unwrap();
        for ((_, _, x), ((_, _, y), (_, _, z))) in a.fields().iter().zip(b.fields().iter().zip(c.fields().iter())) {
            for k in 0..x.len() {
                assert!((x[k] + y[k] - z[k]).abs() < 1e-8);
            }
        }
    }
}
