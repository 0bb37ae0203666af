//! Training, gold/silver batch mixing, self-training, ensembling and the
//! multi-seed protocol.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart::{decode, hinge_loss, ChartError, LabelSet, SpanScoreChart};
use crate::eval::{evaluate, EvalError, EvalReport};
use crate::model::{save_checkpoint, EncoderConfig, Model, ModelError, Vocabulary, Weights, OOV_ID};
use crate::treebank::{Corpus, CorpusEntry, ParseTree, Provenance, TreebankError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("gold corpus is empty")]
    EmptyGold,
    #[error("silver proportion {0} needs a non-empty silver corpus")]
    EmptySilver(f64),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {what}")]
    Diverged { step: usize, what: String },
    #[error("ensemble needs at least one member")]
    NoMembers,
    #[error("ensemble member {member} has a different label set")]
    LabelSetMismatch { member: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Treebank(#[from] TreebankError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Encoder hyperparameters other than labels and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub d_span: usize,
    pub dropout: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture { d_model: 64, n_layers: 4, n_heads: 8, d_ff: 128, d_span: 64, dropout: 0.2 }
    }
}

impl Architecture {
    pub fn encoder_config(&self, labels: LabelSet, seed: u64) -> EncoderConfig {
        EncoderConfig {
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            d_span: self.d_span,
            external_dim: 0,
            dropout: self.dropout,
            labels,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Linear warmup length in optimizer steps.
    pub warmup_steps: usize,
    /// Dev evaluations without a new best F(S_E) before the rate is cut.
    pub decay_patience: usize,
    /// Multiplier applied on a stall; 1.0 (the default) keeps the rate constant.
    pub decay_factor: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub silver_proportion: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0: only the final one).
    pub checkpoint_every: usize,
    /// Evaluate on dev every this many epochs.
    pub eval_every: usize,
    /// Probability of replacing a training-singleton word with the OOV id.
    pub oov_prob: f64,
    /// Sentences processed concurrently within a batch (1: sequential).
    pub workers: usize,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 30,
            epochs: 100,
            learning_rate: 3e-3,
            warmup_steps: 160,
            decay_patience: 2,
            decay_factor: 1.0,
            clip_norm: 5.0,
            silver_proportion: 0.0,
            seed: 1,
            checkpoint_every: 0,
            eval_every: 1,
            oov_prob: 0.3,
            workers: 1,
            architecture: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.silver_proportion) {
            return bad("silver proportion must be in [0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.oov_prob) || !(0.0 < self.decay_factor && self.decay_factor <= 1.0) {
            return bad("oov_prob must be in [0, 1] and decay_factor in (0, 1]");
        }
        if self.eval_every == 0 || self.workers == 0 {
            return bad("eval_every and workers must be at least 1");
        }
        Ok(())
    }

    /// Silver entries per batch: `round(p * batch_size)`.
    pub fn silver_per_batch(&self) -> usize {
        (self.silver_proportion * self.batch_size as f64).round() as usize
    }

    /// Strings recorded in every artifact written for this config.
    pub fn metadata(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("seed".into(), self.seed.to_string());
        m.insert("silver_proportion".into(), self.silver_proportion.to_string());
        m.insert("train_config".into(), serde_json::to_string(self).expect("serializable"));
        m
    }
}

/// Deterministic RNG for a `(seed, purpose, a, b)` tuple.
pub fn derived_rng(seed: u64, purpose: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    for (k, v) in [seed, purpose, a, b].iter().enumerate() {
        bytes[8 * k..8 * k + 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

const STREAM_GOLD_ORDER: u64 = 1;
const STREAM_SILVER_ORDER: u64 = 2;
const STREAM_SENTENCE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchItem {
    pub provenance: Provenance,
    /// Index into the gold or silver corpus.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub items: Vec<BatchItem>,
    /// Set on the batch that exhausts the current gold pass.
    pub ends_epoch: bool,
}

impl Batch {
    pub fn silver_count(&self) -> usize {
        self.items.iter().filter(|i| i.provenance == Provenance::Silver).count()
    }
}

/// Without-replacement cursor over a shuffled index order that reshuffles
/// each time it wraps.
#[derive(Debug, Clone)]
struct Cycle {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Cycle {
    fn new(len: usize, rng: ChaCha8Rng) -> Self {
        let mut c = Cycle { order: (0..len).collect(), pos: len, rng };
        c.reshuffle_if_done();
        c
    }

    fn reshuffle_if_done(&mut self) -> bool {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            true
        } else {
            false
        }
    }

    fn remaining(&self) -> usize {
        self.order.len() - self.pos
    }

    fn take(&mut self) -> usize {
        self.reshuffle_if_done();
        let v = self.order[self.pos];
        self.pos += 1;
        v
    }
}

/// Draws mixed batches: exactly `round(p * batch_size)` silver entries,
/// the rest gold. Gold passes define epochs; silver cycles on its own.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    gold: Cycle,
    silver: Option<Cycle>,
    batch_size: usize,
    silver_per_batch: usize,
}

impl BatchSampler {
    pub fn new(gold_len: usize, silver_len: usize, config: &TrainConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        if gold_len == 0 {
            return Err(PipelineError::EmptyGold);
        }
        let silver_per_batch = config.silver_per_batch();
        if config.silver_proportion > 0.0 && silver_len == 0 {
            return Err(PipelineError::EmptySilver(config.silver_proportion));
        }
        if silver_per_batch == config.batch_size && config.silver_proportion < 1.0 {
            return Err(PipelineError::Config("p rounds to an all-silver batch; use p=1 explicitly".into()));
        }
        let silver = (silver_per_batch > 0)
            .then(|| Cycle::new(silver_len, derived_rng(config.seed, STREAM_SILVER_ORDER, 0, 0)));
        Ok(BatchSampler {
            gold: Cycle::new(gold_len, derived_rng(config.seed, STREAM_GOLD_ORDER, 0, 0)),
            silver,
            batch_size: config.batch_size,
            silver_per_batch,
        })
    }

    /// Batches in one gold pass (the last may hold fewer gold entries).
    pub fn batches_per_epoch(&self) -> usize {
        let gold_per = self.batch_size - self.silver_per_batch;
        if gold_per == 0 {
            // All-silver training: an epoch is one pass over silver.
            let s = self.silver.as_ref().map_or(1, |c| c.order.len());
            s.div_ceil(self.batch_size)
        } else {
            self.gold.order.len().div_ceil(gold_per)
        }
    }

    pub fn next_batch(&mut self) -> Batch {
        let gold_per = self.batch_size - self.silver_per_batch;
        let mut items = Vec::with_capacity(self.batch_size);
        let ends_epoch;
        if gold_per == 0 {
            let silver = self.silver.as_mut().expect("silver present when p = 1");
            silver.reshuffle_if_done();
            let take = silver.remaining().min(self.batch_size);
            for _ in 0..take {
                items.push(BatchItem { provenance: Provenance::Silver, index: silver.take() });
            }
            // Top up so every batch is full silver.
            while items.len() < self.batch_size {
                items.push(BatchItem { provenance: Provenance::Silver, index: silver.take() });
            }
            ends_epoch = take < self.batch_size || silver.remaining() == 0;
        } else {
            self.gold.reshuffle_if_done();
            let take = self.gold.remaining().min(gold_per);
            for _ in 0..take {
                items.push(BatchItem { provenance: Provenance::Gold, index: self.gold.take() });
            }
            ends_epoch = self.gold.remaining() == 0;
            if let Some(silver) = self.silver.as_mut() {
                for _ in 0..self.silver_per_batch {
                    items.push(BatchItem { provenance: Provenance::Silver, index: silver.take() });
                }
            }
        }
        Batch { items, ends_epoch }
    }
}

/// One batch drawn from a fresh sampler; see [`BatchSampler`].
pub fn make_batch<'a>(
    gold: &'a Corpus,
    silver: &'a Corpus,
    config: &TrainConfig,
) -> Result<Vec<(&'a CorpusEntry, Provenance)>, PipelineError> {
    let mut sampler = BatchSampler::new(gold.len(), silver.len(), config)?;
    Ok(resolve(&sampler.next_batch(), gold, silver))
}

fn resolve<'a>(batch: &Batch, gold: &'a Corpus, silver: &'a Corpus) -> Vec<(&'a CorpusEntry, Provenance)> {
    batch
        .items
        .iter()
        .map(|it| {
            let c = if it.provenance == Provenance::Gold { gold } else { silver };
            (&c.entries[it.index], it.provenance)
        })
        .collect()
}

/// Adam moments.
#[derive(Debug, Clone)]
struct Adam {
    m: Weights,
    v: Weights,
    t: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.98;
const ADAM_EPS: f64 = 1e-9;

impl Adam {
    fn new(w: &Weights) -> Self {
        Adam { m: w.zeros_like(), v: w.zeros_like(), t: 0 }
    }

    fn step(&mut self, weights: &mut Weights, grads: &Weights, lr: f64) {
        self.t += 1;
        self.m.scale(ADAM_BETA1);
        self.m.zip_mut(grads, |m, g| m.iter_mut().zip(g).for_each(|(m, g)| *m += (1.0 - ADAM_BETA1) * g));
        self.v.scale(ADAM_BETA2);
        self.v.zip_mut(grads, |v, g| v.iter_mut().zip(g).for_each(|(v, g)| *v += (1.0 - ADAM_BETA2) * g * g));
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        let m: Vec<Vec<f64>> = self.m.fields().into_iter().map(|(_, _, v)| v.to_vec()).collect();
        let v: Vec<&[f64]> = self.v.fields().into_iter().map(|(_, _, v)| v).collect();
        weights.for_each_mut(|k, w| {
            for ((w, m), v) in w.iter_mut().zip(&m[k]).zip(v[k]) {
                *w -= lr * (m / c1) / ((v / c2).sqrt() + ADAM_EPS);
            }
        });
    }
}

/// Word types seen exactly once across the training corpora.
fn singletons<'a>(entries: impl Iterator<Item = &'a CorpusEntry>) -> HashMap<String, usize> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for e in entries {
        for w in &e.words {
            *counts.entry(w.clone()).or_insert(0) += 1;
        }
    }
    counts.retain(|_, c| *c == 1);
    counts
}

/// Vocabulary and label set for a training run. Silver contributes only when
/// it is actually sampled, so `p = 0` matches gold-only training exactly.
pub fn training_inventory(gold: &Corpus, silver: Option<&Corpus>, config: &TrainConfig) -> Result<(Vocabulary, LabelSet), PipelineError> {
    let silver = silver.filter(|_| config.silver_per_batch() > 0);
    let entries = || gold.entries.iter().chain(silver.into_iter().flat_map(|s| s.entries.iter()));
    let vocab = Vocabulary::from_words(entries().flat_map(|e| e.words.iter().cloned()))?;
    let labels = LabelSet::from_trees(entries().map(|e| &e.tree));
    Ok((vocab, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub step: usize,
    pub learning_rate: f64,
    /// Mean per-sentence hinge loss over the epoch.
    pub train_loss: f64,
    pub dev: Option<EvalReport>,
}

impl EvalRecord {
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "epoch={} step={} lr={:.6e} train_loss={:.6}",
            self.epoch, self.step, self.learning_rate, self.train_loss
        );
        if let Some(d) = &self.dev {
            let _ = write!(
                s,
                " dev_F_S={:.6} dev_F_SE={:.6} dev_F_WE={:.6} dev_F_WEIP={:.6}",
                d.s.f_score, d.s_e.f_score, d.w_e.f_score, d.w_eip.f_score
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Dev-best model by F(S_E), or the last one when no dev set is given.
    pub model: Model,
    pub best_epoch: usize,
    pub history: Vec<EvalRecord>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainOutput {
    pub fn epoch_losses(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.train_loss).collect()
    }
}

/// Where `train` writes checkpoints and its metrics log.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub dir: PathBuf,
    /// File-name prefix for this run's files.
    pub prefix: String,
}

pub const METRICS_LOG: &str = "metrics.log";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

/// Parses every sentence with `model` (no dropout).
pub fn parse_sentences(model: &Model, sentences: &[Vec<String>], workers: usize) -> Result<Vec<ParseTree>, PipelineError> {
    let one = |s: &Vec<String>| -> Result<ParseTree, PipelineError> {
        let chart = model.score_spans(s, None)?;
        Ok(decode(&chart, model.labels(), s)?.tree)
    };
    if workers > 1 {
        sentences.par_iter().map(one).collect()
    } else {
        sentences.iter().map(one).collect()
    }
}

/// Parses and scores a dev corpus.
pub fn evaluate_model(model: &Model, dev: &Corpus, workers: usize) -> Result<EvalReport, PipelineError> {
    let sentences: Vec<Vec<String>> = dev.entries.iter().map(|e| e.words.clone()).collect();
    let pred = parse_sentences(model, &sentences, workers)?;
    let gold: Vec<ParseTree> = dev.trees().cloned().collect();
    Ok(evaluate(&gold, &pred, None)?)
}

struct SentenceGrad {
    loss: f64,
    grads: Option<Weights>,
}

fn sentence_step(
    model: &Model,
    entry: &CorpusEntry,
    singles: &HashMap<String, usize>,
    oov_prob: f64,
    mut rng: ChaCha8Rng,
) -> Result<SentenceGrad, PipelineError> {
    let mut ids = model.vocab.ids(&entry.words);
    for (id, w) in ids.iter_mut().zip(&entry.words) {
        if singles.contains_key(w) && rng.random::<f64>() < oov_prob {
            *id = OOV_ID;
        }
    }
    let (chart, cache) = model.forward_ids(&ids, None, Some(&mut rng))?;
    let hinge = hinge_loss(&chart, model.labels(), &entry.tree)?;
    let grads = if hinge.loss > 0.0 { Some(model.backward_cached(&cache, &hinge.chart_gradient)?) } else { None };
    Ok(SentenceGrad { loss: hinge.loss, grads })
}

/// Trains a fresh model on gold (plus silver mixed at `p`), selecting the
/// dev-best epoch by F(S_E).
pub fn train(
    gold: &Corpus,
    silver: Option<&Corpus>,
    dev: Option<&Corpus>,
    config: &TrainConfig,
    artifacts: Option<&TrainArtifacts>,
) -> Result<TrainOutput, PipelineError> {
    config.validate()?;
    let empty = Corpus::new(Provenance::Silver);
    let silver = silver.unwrap_or(&empty);
    let mut sampler = BatchSampler::new(gold.len(), silver.len(), config)?;
    let (vocab, labels) = training_inventory(gold, Some(silver), config)?;
    let mut model = Model::init(config.architecture.encoder_config(labels, config.seed), vocab)?;
    let sampled_silver = (config.silver_per_batch() > 0).then_some(silver);
    let singles = singletons(gold.entries.iter().chain(sampled_silver.into_iter().flat_map(|s| s.entries.iter())));
    let mut adam = Adam::new(&model.weights);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut log_file = String::new();
    if let Some(a) = artifacts {
        fs::create_dir_all(&a.dir).map_err(io_err(&a.dir))?;
        let _ = writeln!(log_file, "# seed={} p={}", config.seed, config.silver_proportion);
    }

    let mut history = Vec::new();
    let mut checkpoints = Vec::new();
    let mut best: Option<((f64, f64), usize, Weights)> = None;
    let mut lr_scale = 1.0;
    let mut stalls = 0;
    let mut step = 0usize;
    let per_epoch = sampler.batches_per_epoch();
    for epoch in 1..=config.epochs {
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for _ in 0..per_epoch {
            let batch = sampler.next_batch();
            let entries = resolve(&batch, gold, silver);
            let work = |k: usize| {
                let rng = derived_rng(config.seed, STREAM_SENTENCE, step as u64, k as u64);
                sentence_step(&model, entries[k].0, &singles, config.oov_prob, rng)
            };
            let results: Vec<Result<SentenceGrad, PipelineError>> = if config.workers > 1 {
                pool.install(|| (0..entries.len()).into_par_iter().map(work).collect())
            } else {
                (0..entries.len()).map(work).collect()
            };
            // Fixed-order reduction keeps results independent of worker count.
            let mut grads = model.weights.zeros_like();
            let mut batch_loss = 0.0;
            for r in results {
                let r = r?;
                batch_loss += r.loss;
                if let Some(g) = r.grads {
                    grads.add_assign(&g);
                }
            }
            step += 1;
            if !batch_loss.is_finite() {
                return Err(PipelineError::Diverged { step, what: format!("batch loss {batch_loss}") });
            }
            let norm = grads.squared_norm().sqrt();
            if !norm.is_finite() {
                return Err(PipelineError::Diverged { step, what: format!("gradient norm {norm}") });
            }
            if config.clip_norm > 0.0 && norm > config.clip_norm {
                grads.scale(config.clip_norm / norm);
            }
            let warm = if config.warmup_steps == 0 { 1.0 } else { (step as f64 / config.warmup_steps as f64).min(1.0) };
            adam.step(&mut model.weights, &grads, config.learning_rate * lr_scale * warm);
            if !model.weights.is_finite() {
                return Err(PipelineError::Diverged { step, what: "non-finite parameters".into() });
            }
            loss_sum += batch_loss;
            count += entries.len();
        }
        let train_loss = loss_sum / count.max(1) as f64;
        let mut record = EvalRecord { epoch, step, learning_rate: config.learning_rate * lr_scale, train_loss, dev: None };
        if let Some(dev) = dev.filter(|_| epoch % config.eval_every == 0 || epoch == config.epochs) {
            let report = pool.install(|| evaluate_model(&model, dev, config.workers))?;
            // F(S_E) decides; F(S) breaks ties (e.g. before any EDITED span is found).
            let score = (report.s_e.f_score, report.s.f_score);
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, epoch, model.weights.clone()));
                stalls = 0;
            } else {
                stalls += 1;
                if stalls >= config.decay_patience.max(1) {
                    lr_scale *= config.decay_factor;
                    stalls = 0;
                }
            }
            record.dev = Some(report);
        }
        log::info!("seed {} {}", config.seed, record.to_line());
        if let Some(a) = artifacts {
            log_file.push_str(&record.to_line());
            log_file.push('\n');
            if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
                let path = a.dir.join(format!("{}epoch{epoch}.ckpt", a.prefix));
                let mut meta = config.metadata();
                meta.insert("epoch".into(), epoch.to_string());
                save_checkpoint(&model, &meta, &path)?;
                checkpoints.push(path);
            }
        }
        history.push(record);
    }
    let best_epoch = match best {
        Some((_, epoch, weights)) => {
            model.weights = weights;
            epoch
        }
        None => config.epochs,
    };
    if let Some(a) = artifacts {
        let log_path = a.dir.join(format!("{}{METRICS_LOG}", a.prefix));
        fs::write(&log_path, &log_file).map_err(io_err(&log_path))?;
        let path = a.dir.join(format!("{}{BEST_CHECKPOINT}", a.prefix));
        let mut meta = config.metadata();
        meta.insert("epoch".into(), best_epoch.to_string());
        save_checkpoint(&model, &meta, &path)?;
        checkpoints.push(path);
    }
    Ok(TrainOutput { model, best_epoch, history, checkpoints })
}

/// Silver corpus from a model's parses of raw sentences.
pub fn parse_corpus(model: &Model, sentences: &[Vec<String>], workers: usize) -> Result<Corpus, PipelineError> {
    let kept: Vec<Vec<String>> = sentences.iter().filter(|s| !s.is_empty()).cloned().collect();
    let trees = parse_sentences(model, &kept, workers)?;
    Ok(Corpus::from_trees(trees, Provenance::Silver))
}

#[derive(Debug, Clone)]
pub struct SelfTrainOutput {
    pub baseline: TrainOutput,
    pub silver: Corpus,
    pub retrained: TrainOutput,
}

/// Trains a gold baseline, parses the unlabeled sentences into silver trees,
/// then trains a freshly initialized model on the gold/silver mixture at
/// `config.silver_proportion`.
pub fn self_train(
    gold: &Corpus,
    unlabeled: &[Vec<String>],
    dev: Option<&Corpus>,
    config: &TrainConfig,
    artifacts: Option<&TrainArtifacts>,
) -> Result<SelfTrainOutput, PipelineError> {
    let base_config = TrainConfig { silver_proportion: 0.0, ..config.clone() };
    let stage = |name: &str| {
        artifacts.map(|a| TrainArtifacts { dir: a.dir.clone(), prefix: format!("{}{name}.", a.prefix) })
    };
    let baseline = train(gold, None, dev, &base_config, stage("baseline").as_ref())?;
    let silver = parse_corpus(&baseline.model, unlabeled, config.workers)?;
    if let Some(a) = artifacts {
        let path = a.dir.join(format!("{}silver.trees", a.prefix));
        silver.write(&path)?;
    }
    let retrained = train(gold, Some(&silver), dev, config, stage("selftrained").as_ref())?;
    Ok(SelfTrainOutput { baseline, silver, retrained })
}

/// Pairwise (tree-shaped) summation in member order, for stable rounding.
fn pairwise_sum(charts: &[SpanScoreChart]) -> SpanScoreChart {
    match charts.len() {
        1 => charts[0].clone(),
        len => {
            let (a, b) = charts.split_at(len / 2);
            let mut left = pairwise_sum(a);
            let right = pairwise_sum(b);
            left.as_mut_slice().iter_mut().zip(right.as_slice()).for_each(|(x, y)| *x += y);
            left
        }
    }
}

/// Elementwise mean of same-shape charts: pairwise sum, then divide by N.
pub fn average_charts(charts: &[SpanScoreChart]) -> Result<SpanScoreChart, PipelineError> {
    let first = charts.first().ok_or(PipelineError::NoMembers)?;
    if charts.iter().any(|c| c.n() != first.n() || c.num_labels() != first.num_labels()) {
        return Err(ChartError::Shape("ensemble charts differ in shape".into()).into());
    }
    let mut sum = pairwise_sum(charts);
    let k = charts.len() as f64;
    sum.as_mut_slice().iter_mut().for_each(|x| *x /= k);
    Ok(sum)
}

/// Checks that every member shares the first member's label order.
pub fn check_members(members: &[Model]) -> Result<&LabelSet, PipelineError> {
    let first = members.first().ok_or(PipelineError::NoMembers)?;
    for (k, m) in members.iter().enumerate() {
        if m.labels() != first.labels() {
            return Err(PipelineError::LabelSetMismatch { member: k });
        }
    }
    Ok(first.labels())
}

/// Mean of the members' null-pinned span scores.
pub fn ensemble_chart(members: &[Model], sentence: &[String]) -> Result<SpanScoreChart, PipelineError> {
    check_members(members)?;
    let charts = members.iter().map(|m| m.score_spans(sentence, None)).collect::<Result<Vec<_>, _>>()?;
    average_charts(&charts)
}

pub fn ensemble_decode(members: &[Model], sentence: &[String]) -> Result<ParseTree, PipelineError> {
    let labels = check_members(members)?;
    let chart = ensemble_chart(members, sentence)?;
    Ok(decode(&chart, labels, sentence)?.tree)
}

pub fn ensemble_parse(members: &[Model], sentences: &[Vec<String>], workers: usize) -> Result<Vec<ParseTree>, PipelineError> {
    check_members(members)?;
    let one = |s: &Vec<String>| ensemble_decode(members, s);
    if workers > 1 {
        sentences.par_iter().map(one).collect()
    } else {
        sentences.iter().map(one).collect()
    }
}

#[derive(Debug, Clone)]
pub struct MultiSeedOutput {
    pub runs: Vec<(u64, TrainOutput, EvalReport)>,
    pub mean: EvalReport,
}

impl MultiSeedOutput {
    /// One line per seed, then the mean.
    pub fn to_report(&self) -> String {
        let mut out = String::new();
        for (seed, _, r) in &self.runs {
            let _ = writeln!(
                out,
                "seed={seed} F_S={:.6} F_SE={:.6} F_SEIP={:.6} F_WE={:.6} F_WEIP={:.6}",
                r.s.f_score, r.s_e.f_score, r.s_eip.f_score, r.w_e.f_score, r.w_eip.f_score
            );
        }
        let m = &self.mean;
        let _ = writeln!(
            out,
            "mean F_S={:.6} F_SE={:.6} F_SEIP={:.6} F_WE={:.6} F_WEIP={:.6}",
            m.s.f_score, m.s_e.f_score, m.s_eip.f_score, m.w_e.f_score, m.w_eip.f_score
        );
        out
    }
}

/// Runs `run(config_with_seed)` for seeds `seed + 0 .. seed + k - 1` and
/// scores each resulting model on `eval_set`.
pub fn multi_seed(
    config: &TrainConfig,
    k: usize,
    eval_set: &Corpus,
    mut run: impl FnMut(&TrainConfig) -> Result<TrainOutput, PipelineError>,
) -> Result<MultiSeedOutput, PipelineError> {
    if k == 0 {
        return Err(PipelineError::Config("need at least one seed".into()));
    }
    let mut runs = Vec::with_capacity(k);
    for s in 0..k as u64 {
        let cfg = TrainConfig { seed: config.seed + s, ..config.clone() };
        let out = run(&cfg)?;
        let report = evaluate_model(&out.model, eval_set, config.workers)?;
        runs.push((cfg.seed, out, report));
    }
    let reports: Vec<EvalReport> = runs.iter().map(|(_, _, r)| r.clone()).collect();
    let mean = EvalReport::mean(&reports).expect("k >= 1");
    Ok(MultiSeedOutput { runs, mean })
}

/// One row of a silver-proportion sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub p: f64,
    pub report: EvalReport,
}

/// Retrains at each `p` against a shared silver corpus.
pub fn sweep_p(
    gold: &Corpus,
    silver: &Corpus,
    dev: &Corpus,
    config: &TrainConfig,
    values: &[f64],
) -> Result<Vec<SweepRow>, PipelineError> {
    values
        .iter()
        .map(|&p| {
            let cfg = TrainConfig { silver_proportion: p, ..config.clone() };
            let out = train(gold, Some(silver), Some(dev), &cfg, None)?;
            let report = evaluate_model(&out.model, dev, config.workers)?;
            Ok(SweepRow { p, report })
        })
        .collect()
}

/// Consolidated F(S_E)-vs-p table.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = format!("{:>6} {:>10} {:>10} {:>10}\n", "p", "F(S_E)", "F(W_E)", "F(S)");
    for r in rows {
        let _ = writeln!(
            out,
            "{:>6.2} {:>10.6} {:>10.6} {:>10.6}",
            r.p, r.report.s_e.f_score, r.report.w_e.f_score, r.report.s.f_score
        );
    }
    out
}

/// Parses `values` given as `a..b` with an optional step (`a..b:step` or a
/// separate step), or as a comma-separated list.
pub fn parse_p_values(spec: &str, step: Option<f64>) -> Result<Vec<f64>, PipelineError> {
    let bad = || PipelineError::Config(format!("cannot parse p values `{spec}`"));
    let values: Vec<f64> = if let Some((a, rest)) = spec.split_once("..") {
        let (b, inline_step) = match rest.split_once(':') {
            Some((b, s)) => (b, Some(s.trim().parse::<f64>().map_err(|_| bad())?)),
            None => (rest, None),
        };
        let a: f64 = a.trim().parse().map_err(|_| bad())?;
        let b: f64 = b.trim().parse().map_err(|_| bad())?;
        let step = inline_step.or(step).unwrap_or(0.1);
        if step.is_nan() || step <= 0.0 || b < a {
            return Err(bad());
        }
        let count = ((b - a) / step + 1e-9).floor() as usize + 1;
        // Round to the step's decimal grid so 0.1 * 3 prints as 0.3.
        (0..count).map(|k| ((a + k as f64 * step) * 1e9).round() / 1e9).collect()
    } else {
        spec.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if values.is_empty() || values.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(bad());
    }
    Ok(values)
}
