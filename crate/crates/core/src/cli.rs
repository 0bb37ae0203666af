//! The `disfl` command line: subcommands, flat key=value config files, run
//! directories and manifests.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error
//! (missing or malformed input files, I/O), 4 model error (checkpoint
//! problems, label-set mismatch, divergence).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eval::{evaluate, typology_report, EvalReport};
use crate::model::{load_checkpoint, Model};
use crate::pipeline::{
    self, ensemble_parse, evaluate_model, multi_seed, parse_corpus, parse_p_values, self_train, sweep_table, train,
    Architecture, PipelineError, TrainArtifacts, TrainConfig,
};
use crate::synthgen::{self, read_type_sidecar, CorpusSizes, DisfluencyConfig, GrammarSpec, SynthConfig, SynthError};
use crate::treebank::{read_sentences, Corpus, ParseTree, Provenance, TreebankError};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_MODEL: i32 = 4;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_SNAPSHOT: &str = "config.txt";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";
pub const PARSED_TREES: &str = "parsed.trees";
pub const SWEEP_TABLE: &str = "sweep.tsv";

/// An error with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(m: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: m.into() }
    }
    pub fn data(m: impl Into<String>) -> Self {
        CliError { code: EXIT_DATA, message: m.into() }
    }
    pub fn model(m: impl Into<String>) -> Self {
        CliError { code: EXIT_MODEL, message: m.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<TreebankError> for CliError {
    fn from(e: TreebankError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io { .. } => CliError::data(e.to_string()),
            _ => CliError::usage(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) | PipelineError::NoMembers => CliError::usage(e.to_string()),
            PipelineError::Treebank(_) | PipelineError::Io { .. } | PipelineError::Eval(_) => CliError::data(e.to_string()),
            PipelineError::EmptyGold | PipelineError::EmptySilver(_) => CliError::data(e.to_string()),
            _ => CliError::model(e.to_string()),
        }
    }
}

impl From<crate::eval::EvalError> for CliError {
    fn from(e: crate::eval::EvalError) -> Self {
        CliError::data(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "disfl", version, about = "Joint disfluency detection and constituency parsing")]
pub struct Cli {
    /// Log at debug level.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic gold and unlabeled corpora.
    GenData(GenDataArgs),
    /// Train a parser on gold (optionally mixed with silver) trees.
    Train(TrainArgs),
    /// Baseline, silver parsing of unlabeled text, then retraining on the mixture.
    SelfTrain(SelfTrainArgs),
    /// Parse a tokenized sentence file with one checkpoint.
    Parse(ParseArgs),
    /// Parse with the averaged span scores of several checkpoints.
    EnsembleParse(EnsembleArgs),
    /// Score predicted trees against gold trees.
    Eval(EvalArgs),
    /// Per-type F(W_E) for repetitions, corrections and restarts.
    TypologyReport(EvalArgs),
    /// Self-training at a range of silver proportions.
    SweepP(SweepArgs),
    /// Re-run the invocation recorded in a run manifest into a new directory.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Flat key=value config file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory. An existing non-empty directory gets a numeric suffix.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Grammar file for the gold corpora (default: bundled conversational grammar).
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    /// Grammar file for the unlabeled corpus (default: same as --grammar).
    #[arg(long)]
    pub unlabeled_grammar: Option<PathBuf>,
    /// Draw the unlabeled corpus from the bundled out-of-domain grammar.
    #[arg(long)]
    pub out_of_domain: bool,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub dev_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long)]
    pub unlabeled_size: Option<usize>,
    /// Probability that a sentence receives an edit disfluency.
    #[arg(long)]
    pub disfluency_rate: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Share of edit disfluencies that are repetitions.
    #[arg(long)]
    pub repetition_weight: Option<f64>,
    #[arg(long)]
    pub correction_weight: Option<f64>,
    #[arg(long)]
    pub restart_weight: Option<f64>,
    /// Probability of a filler and/or discourse marker after the reparandum.
    #[arg(long)]
    pub interregnum_prob: Option<f64>,
    /// Probability of a free-standing filler per sentence.
    #[arg(long)]
    pub filler_prob: Option<f64>,
    /// Longest reparandum in words.
    #[arg(long)]
    pub max_reparandum: Option<usize>,
    /// Per-word substitution rate inside corrections.
    #[arg(long)]
    pub substitution_rate: Option<f64>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train this many models with seeds seed..seed+k-1 and average their scores.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub clip: Option<f64>,
    /// Dev evaluations without improvement before the learning rate is cut.
    #[arg(long)]
    pub decay_patience: Option<usize>,
    /// Learning-rate multiplier on a stall (1 disables decay).
    #[arg(long)]
    pub decay_factor: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub oov_prob: Option<f64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub d_span: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Silver trees to mix into each batch at proportion --p.
    #[arg(long)]
    pub silver: Option<PathBuf>,
    #[arg(long)]
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SelfTrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    /// Silver proportion per batch (default 0.4).
    #[arg(long)]
    pub p: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ParseArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Whitespace-tokenized sentences, one per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
pub enum SelectionOrder {
    /// Rank candidates individually on dev, then ensemble the top N.
    SelectFirst,
    /// Score every N-member ensemble on dev and keep the best.
    EnsembleFirst,
    /// Run both and report each; parse with the select-first ensemble.
    Both,
}

impl FromStr for SelectionOrder {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Clone, Args)]
pub struct EnsembleArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Member checkpoint (repeatable; order is kept).
    #[arg(long = "members")]
    pub members: Vec<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Dev trees for choosing members among the candidates.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Ensemble size when choosing members on dev (default: all members).
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long, value_enum)]
    pub selection: Option<SelectionOrder>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Disfluency-type sidecar for the gold trees (JSON lines).
    #[arg(long)]
    pub types: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    /// `a..b`, `a..b:step` or a comma list (default 0.1..0.9).
    #[arg(long)]
    pub values: Option<String>,
    /// Step for an `a..b` range; `step 0.1` after --values also works.
    #[arg(long)]
    pub step: Option<f64>,
    /// Accepts the `--values 0.1..0.9 step 0.1` spelling.
    #[arg(hide = true, num_args = 0..)]
    pub trailing: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Flat `key=value` settings: config-file entries overlaid with flags.
#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
    consumed: BTreeSet<String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse_file(text: &str) -> CliResult<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("config line {}: expected key=value", k + 1)))?;
            out.insert(key.trim().replace('_', "-"), value.trim().to_string());
        }
        Ok(out)
    }

    pub fn load(path: Option<&Path>) -> CliResult<Settings> {
        let values = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
                Self::parse_file(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Settings { values, ..Settings::default() })
    }

    /// Flag value if given, else the file's, else `None`.
    pub fn get<T: FromStr + ToString + Clone>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
        self.consumed.insert(key.to_string());
        let v = match flag {
            Some(v) => Some(v),
            None => match self.values.get(key) {
                Some(s) => Some(
                    s.parse::<T>().map_err(|_| CliError::usage(format!("config key {key}: cannot parse `{s}`")))?,
                ),
                None => None,
            },
        };
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    pub fn get_or<T: FromStr + ToString + Clone>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T> {
        let v = self.get(key, flag)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> CliResult<Option<PathBuf>> {
        let v = flag.or_else(|| self.values.get(key).map(PathBuf::from));
        self.consumed.insert(key.to_string());
        if let Some(p) = &v {
            self.resolved.insert(key.to_string(), p.display().to_string());
        }
        Ok(v)
    }

    pub fn require_path(&mut self, key: &str, flag: Option<PathBuf>) -> CliResult<PathBuf> {
        self.path(key, flag)?.ok_or_else(|| CliError::usage(format!("--{key} is required")))
    }

    /// Fails on config-file keys that no setting read.
    pub fn finish(&self) -> CliResult<()> {
        let unknown: Vec<&String> = self.values.keys().filter(|k| !self.consumed.contains(*k)).collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::usage(format!("unknown config keys: {unknown:?}")))
        }
    }

    /// The resolved settings in config-file form.
    /// The resolved settings minus the run directory, which the manifest
    /// already records and which differs between a run and its replay.
    pub fn snapshot(&self) -> String {
        self.resolved.iter().filter(|(k, _)| k.as_str() != "out").map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Written first in every run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub arguments: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<InputDigest>,
    pub started_unix: u64,
    pub run_dir: String,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

/// `base` if absent or empty, otherwise the first free `base.1`, `base.2`, ...
pub fn fresh_run_dir(base: &Path) -> CliResult<PathBuf> {
    let free = |p: &Path| match fs::read_dir(p) {
        Ok(mut it) => it.next().is_none(),
        Err(_) => !p.exists(),
    };
    let mut candidate = base.to_path_buf();
    let mut k = 0;
    while !free(&candidate) {
        k += 1;
        let mut name = base.file_name().map(|s| s.to_os_string()).unwrap_or_default();
        name.push(format!(".{k}"));
        candidate = base.with_file_name(name);
    }
    fs::create_dir_all(&candidate).map_err(|e| CliError::data(format!("{}: {e}", candidate.display())))?;
    Ok(candidate)
}

struct Run {
    dir: PathBuf,
}

impl Run {
    fn start(
        subcommand: &str,
        arguments: &[String],
        out: Option<PathBuf>,
        settings: &Settings,
        seeds: Vec<u64>,
        inputs: &[&Path],
    ) -> CliResult<Run> {
        settings.finish()?;
        let base = out.ok_or_else(|| CliError::usage("--out is required"))?;
        let inputs = inputs
            .iter()
            .map(|p| Ok(InputDigest { path: p.display().to_string(), sha256: sha256_file(p)? }))
            .collect::<CliResult<Vec<_>>>()?;
        let dir = fresh_run_dir(&base)?;
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            arguments: arguments.to_vec(),
            config: settings.resolved.clone(),
            seeds,
            inputs,
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            run_dir: dir.display().to_string(),
        };
        let run = Run { dir };
        run.write(MANIFEST_FILE, &serde_json::to_string_pretty(&manifest).expect("serializable"))?;
        run.write(CONFIG_SNAPSHOT, &settings.snapshot())?;
        log::info!("run directory {}", run.dir.display());
        Ok(run)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, text: &str) -> CliResult<()> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| CliError::data(format!("{}: {e}", p.display())))
    }

    fn artifacts(&self, prefix: &str) -> TrainArtifacts {
        TrainArtifacts { dir: self.dir.clone(), prefix: prefix.to_string() }
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn workers(settings: &mut Settings, common: &CommonArgs) -> CliResult<usize> {
    // Not recorded: results are identical for any worker count.
    let w = common.workers.unwrap_or_else(default_workers);
    settings.consumed.insert("workers".into());
    if w == 0 {
        return Err(CliError::usage("--workers must be at least 1"));
    }
    Ok(w)
}

fn resolve_train_config(s: &mut Settings, f: &TrainFlags, p: Option<f64>, default_p: f64, workers: usize) -> CliResult<(TrainConfig, usize)> {
    let d = TrainConfig::default();
    let a = Architecture::default();
    let config = TrainConfig {
        batch_size: s.get_or("batch-size", f.batch_size, d.batch_size)?,
        epochs: s.get_or("epochs", f.epochs, d.epochs)?,
        learning_rate: s.get_or("lr", f.lr, d.learning_rate)?,
        warmup_steps: s.get_or("warmup", f.warmup, d.warmup_steps)?,
        decay_patience: s.get_or("decay-patience", f.decay_patience, d.decay_patience)?,
        decay_factor: s.get_or("decay-factor", f.decay_factor, d.decay_factor)?,
        clip_norm: s.get_or("clip", f.clip, d.clip_norm)?,
        silver_proportion: s.get_or("p", p, default_p)?,
        seed: s.get_or("seed", f.seed, d.seed)?,
        checkpoint_every: s.get_or("checkpoint-every", f.checkpoint_every, d.checkpoint_every)?,
        eval_every: s.get_or("eval-every", f.eval_every, d.eval_every)?,
        oov_prob: s.get_or("oov-prob", f.oov_prob, d.oov_prob)?,
        workers,
        architecture: Architecture {
            d_model: s.get_or("d-model", f.d_model, a.d_model)?,
            n_layers: s.get_or("layers", f.layers, a.n_layers)?,
            n_heads: s.get_or("heads", f.heads, a.n_heads)?,
            d_ff: s.get_or("d-ff", f.d_ff, a.d_ff)?,
            d_span: s.get_or("d-span", f.d_span, a.d_span)?,
            dropout: s.get_or("dropout", f.dropout, a.dropout)?,
        },
    };
    config.validate()?;
    let seeds = s.get_or("seeds", f.seeds, 1)?;
    if seeds == 0 {
        return Err(CliError::usage("--seeds must be at least 1"));
    }
    Ok((config, seeds))
}

fn read_gold(path: &Path) -> CliResult<Corpus> {
    let (corpus, skipped) = Corpus::read(path, Provenance::Gold, true)?;
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} trees that normalize to nothing", path.display());
    }
    Ok(corpus)
}

fn read_trees(path: &Path) -> CliResult<Vec<ParseTree>> {
    Ok(read_gold(path)?.entries.into_iter().map(|e| e.tree).collect())
}

fn load_model(path: &Path) -> CliResult<Model> {
    if !path.exists() {
        return Err(CliError::data(format!("{}: no such file", path.display())));
    }
    load_checkpoint(path).map(|(m, _)| m).map_err(|e| CliError::model(format!("{}: {e}", path.display())))
}

fn write_report(run: &Run, name: &str, report: &EvalReport) -> CliResult<()> {
    run.write(&format!("{name}{REPORT_TXT}"), &report.to_records())?;
    run.write(&format!("{name}{REPORT_JSON}"), &serde_json::to_string_pretty(report).expect("serializable"))
}

fn seed_list(config: &TrainConfig, k: usize) -> Vec<u64> {
    (0..k as u64).map(|s| config.seed + s).collect()
}

fn cmd_gen_data(a: &GenDataArgs, argv: &[String]) -> CliResult<()> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    workers(&mut s, &a.common)?;
    let d = CorpusSizes::default();
    let seed = s.get_or("seed", a.seed, 1)?;
    let grammar_path = s.path("grammar", a.grammar.clone())?;
    let unlabeled_path = s.path("unlabeled-grammar", a.unlabeled_grammar.clone())?;
    let ood = s.get_or("out-of-domain", a.out_of_domain.then_some(true), false)?;
    if ood && unlabeled_path.is_some() {
        return Err(CliError::usage("--out-of-domain conflicts with --unlabeled-grammar"));
    }
    let sizes = CorpusSizes {
        train: s.get_or("train-size", a.train_size, d.train)?,
        dev: s.get_or("dev-size", a.dev_size, d.dev)?,
        test: s.get_or("test-size", a.test_size, d.test)?,
        unlabeled: s.get_or("unlabeled-size", a.unlabeled_size, d.unlabeled)?,
    };
    let dd = DisfluencyConfig::default();
    let disfluency = DisfluencyConfig {
        rate: s.get_or("disfluency-rate", a.disfluency_rate, dd.rate)?,
        repetition_weight: s.get_or("repetition-weight", a.repetition_weight, dd.repetition_weight)?,
        correction_weight: s.get_or("correction-weight", a.correction_weight, dd.correction_weight)?,
        restart_weight: s.get_or("restart-weight", a.restart_weight, dd.restart_weight)?,
        interregnum_prob: s.get_or("interregnum-prob", a.interregnum_prob, dd.interregnum_prob)?,
        filler_prob: s.get_or("filler-prob", a.filler_prob, dd.filler_prob)?,
        max_reparandum: s.get_or("max-reparandum", a.max_reparandum, dd.max_reparandum)?,
        substitution_rate: s.get_or("substitution-rate", a.substitution_rate, dd.substitution_rate)?,
        ..dd
    };
    let max_len = s.get_or("max-len", a.max_len, synthgen::DEFAULT_MAX_LEN)?;
    let grammar = match &grammar_path {
        Some(p) => GrammarSpec::from_file(p)?,
        None => GrammarSpec::default_conversational(),
    };
    let unlabeled_grammar = match (&unlabeled_path, ood) {
        (Some(p), _) => Some(GrammarSpec::from_file(p)?),
        (None, true) => Some(GrammarSpec::out_of_domain()),
        (None, false) => None,
    };
    disfluency.validate()?;
    let mut inputs: Vec<&Path> = Vec::new();
    inputs.extend(a.common.config.as_deref());
    inputs.extend(grammar_path.as_deref());
    inputs.extend(unlabeled_path.as_deref());
    let run = Run::start("gen-data", argv, s.path("out", a.common.out.clone())?, &s, vec![seed], &inputs)?;
    let config = SynthConfig { grammar, unlabeled_grammar, disfluency, sizes, max_len, seed };
    let emitted = synthgen::emit_corpora(&config, &run.dir)?;
    let stats = serde_json::to_string_pretty(&emitted.stats).expect("serializable");
    run.write("generation_stats.json", &stats)?;
    for (name, st) in &emitted.stats {
        println!("{name}: {} sentences, {:.2}% EDITED words", st.sentences, 100.0 * st.edited_rate());
    }
    println!("{}", run.dir.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs, argv: &[String]) -> CliResult<()> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let w = workers(&mut s, &a.common)?;
    let (config, k) = resolve_train_config(&mut s, &a.train, a.p, 0.0, w)?;
    let gold_path = s.require_path("gold", a.gold.clone())?;
    let dev_path = s.path("dev", a.dev.clone())?;
    let silver_path = s.path("silver", a.silver.clone())?;
    if config.silver_proportion > 0.0 && silver_path.is_none() {
        return Err(CliError::usage("--p > 0 needs --silver"));
    }
    let mut inputs: Vec<&Path> = vec![&gold_path];
    inputs.extend(dev_path.as_deref());
    inputs.extend(silver_path.as_deref());
    inputs.extend(a.common.config.as_deref());
    let gold = read_gold(&gold_path)?;
    let dev = dev_path.as_deref().map(read_gold).transpose()?;
    let silver = match &silver_path {
        Some(p) => Some(Corpus::read(p, Provenance::Silver, true)?.0),
        None => None,
    };
    let run = Run::start("train", argv, s.path("out", a.common.out.clone())?, &s, seed_list(&config, k), &inputs)?;
    let train_one = |cfg: &TrainConfig, prefix: String| {
        train(&gold, silver.as_ref(), dev.as_ref(), cfg, Some(&run.artifacts(&prefix)))
    };
    match &dev {
        Some(dev) => {
            let out = multi_seed(&config, k, dev, |cfg| train_one(cfg, prefix_for(k, cfg.seed)))?;
            run.write(REPORT_TXT, &out.to_report())?;
            write_report(&run, "mean.", &out.mean)?;
            print!("{}", out.mean.to_table());
        }
        None => {
            for seed in seed_list(&config, k) {
                train_one(&TrainConfig { seed, ..config.clone() }, prefix_for(k, seed))?;
            }
        }
    }
    println!("{}", run.dir.display());
    Ok(())
}

fn prefix_for(k: usize, seed: u64) -> String {
    if k == 1 {
        String::new()
    } else {
        format!("seed{seed}.")
    }
}

fn cmd_self_train(a: &SelfTrainArgs, argv: &[String]) -> CliResult<()> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let w = workers(&mut s, &a.common)?;
    let (config, k) = resolve_train_config(&mut s, &a.train, a.p, 0.4, w)?;
    let gold_path = s.require_path("gold", a.gold.clone())?;
    let dev_path = s.require_path("dev", a.dev.clone())?;
    let unlabeled_path = s.require_path("unlabeled", a.unlabeled.clone())?;
    let mut inputs: Vec<&Path> = vec![&gold_path, &dev_path, &unlabeled_path];
    inputs.extend(a.common.config.as_deref());
    let gold = read_gold(&gold_path)?;
    let dev = read_gold(&dev_path)?;
    let (unlabeled, blank) = read_sentences(&unlabeled_path)?;
    if blank > 0 {
        log::warn!("{}: skipped {blank} empty lines", unlabeled_path.display());
    }
    let run = Run::start("self-train", argv, s.path("out", a.common.out.clone())?, &s, seed_list(&config, k), &inputs)?;
    let mut base_reports = Vec::new();
    let mut st_reports = Vec::new();
    let mut text = String::new();
    for seed in seed_list(&config, k) {
        let cfg = TrainConfig { seed, ..config.clone() };
        let out = self_train(&gold, &unlabeled, Some(&dev), &cfg, Some(&run.artifacts(&prefix_for(k, seed))))?;
        let b = evaluate_model(&out.baseline.model, &dev, w)?;
        let r = evaluate_model(&out.retrained.model, &dev, w)?;
        let _ = writeln!(
            text,
            "seed={seed} p={} baseline_F_WE={:.6} selftrained_F_WE={:.6} delta_F_WE={:+.6} baseline_F_SE={:.6} selftrained_F_SE={:.6}",
            cfg.silver_proportion,
            b.w_e.f_score,
            r.w_e.f_score,
            r.w_e.f_score - b.w_e.f_score,
            b.s_e.f_score,
            r.s_e.f_score
        );
        base_reports.push(b);
        st_reports.push(r);
    }
    let b = EvalReport::mean(&base_reports).expect("k >= 1");
    let r = EvalReport::mean(&st_reports).expect("k >= 1");
    let _ = writeln!(
        text,
        "mean baseline_F_WE={:.6} selftrained_F_WE={:.6} delta_F_WE={:+.6}",
        b.w_e.f_score,
        r.w_e.f_score,
        r.w_e.f_score - b.w_e.f_score
    );
    run.write(REPORT_TXT, &text)?;
    write_report(&run, "baseline.", &b)?;
    write_report(&run, "selftrained.", &r)?;
    print!("{text}");
    println!("{}", run.dir.display());
    Ok(())
}

fn write_trees(run: &Run, name: &str, trees: &[ParseTree]) -> CliResult<()> {
    let mut text = String::new();
    for t in trees {
        text.push_str(&crate::treebank::serialize(t));
        text.push('\n');
    }
    run.write(name, &text)
}

fn read_input(path: &Path) -> CliResult<Vec<Vec<String>>> {
    let (sentences, blank) = read_sentences(path)?;
    if blank > 0 {
        log::info!("{}: skipped {blank} empty lines", path.display());
    }
    Ok(sentences)
}

fn cmd_parse(a: &ParseArgs, argv: &[String]) -> CliResult<()> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let w = workers(&mut s, &a.common)?;
    let ckpt = s.require_path("checkpoint", a.checkpoint.clone())?;
    let input = s.require_path("input", a.input.clone())?;
    let model = load_model(&ckpt)?;
    let sentences = read_input(&input)?;
    let run = Run::start("parse", argv, s.path("out", a.common.out.clone())?, &s, vec![model.config.seed], &[&ckpt, &input])?;
    let corpus = parse_corpus(&model, &sentences, w)?;
    corpus.write(&run.path(PARSED_TREES))?;
    println!("{}", run.dir.display());
    Ok(())
}

/// Candidate subsets of size `n` from `m` members, in lexicographic order.
fn combinations(m: usize, n: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, m: usize, n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for k in start..m {
            cur.push(k);
            go(k + 1, m, n, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, m, n, &mut Vec::new(), &mut out);
    out
}

const MAX_ENSEMBLE_SUBSETS: usize = 500;

fn ensemble_dev_score(members: &[Model], dev: &Corpus, workers: usize) -> CliResult<EvalReport> {
    let sentences: Vec<Vec<String>> = dev.entries.iter().map(|e| e.words.clone()).collect();
    let pred = ensemble_parse(members, &sentences, workers)?;
    let gold: Vec<ParseTree> = dev.trees().cloned().collect();
    Ok(evaluate(&gold, &pred, None)?)
}

fn cmd_ensemble_parse(a: &EnsembleArgs, argv: &[String]) -> CliResult<()> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let w = workers(&mut s, &a.common)?;
    if a.members.is_empty() {
        return Err(CliError::usage("at least one --members checkpoint is required"));
    }
    let input = s.require_path("input", a.input.clone())?;
    let dev_path = s.path("dev", a.dev.clone())?;
    let size = s.get_or("size", a.size, a.members.len())?;
    let flag = a.selection.and_then(|x| x.to_possible_value()).map(|v| v.get_name().to_string());
    let selection = s.get_or("selection", flag, "select-first".to_string())?;
    let selection = <SelectionOrder as ValueEnum>::from_str(&selection, true).map_err(CliError::usage)?;
    if size == 0 || size > a.members.len() {
        return Err(CliError::usage(format!("--size must be in 1..={}", a.members.len())));
    }
    if size < a.members.len() && dev_path.is_none() {
        return Err(CliError::usage("choosing a subset of members needs --dev"));
    }
    let models = a.members.iter().map(|p| load_model(p)).collect::<CliResult<Vec<_>>>()?;
    pipeline::check_members(&models)?;
    let sentences = read_input(&input)?;
    let mut inputs: Vec<&Path> = a.members.iter().map(PathBuf::as_path).collect();
    inputs.push(&input);
    inputs.extend(dev_path.as_deref());
    let seeds = models.iter().map(|m| m.config.seed).collect();
    let run = Run::start("ensemble-parse", argv, s.path("out", a.common.out.clone())?, &s, seeds, &inputs)?;

    let mut chosen: Vec<usize> = (0..models.len()).collect();
    if let Some(dev_path) = &dev_path {
        let dev = read_gold(dev_path)?;
        let mut report = String::new();
        let pick = |idx: &[usize]| idx.iter().map(|&k| models[k].clone()).collect::<Vec<_>>();
        let mut select_first = None;
        if matches!(selection, SelectionOrder::SelectFirst | SelectionOrder::Both) {
            let mut scored = Vec::new();
            for (k, m) in models.iter().enumerate() {
                scored.push((evaluate_model(m, &dev, w)?.s_e.f_score, k));
            }
            // Stable: ties keep the command-line order.
            scored.sort_by(|x, y| y.0.total_cmp(&x.0));
            let mut idx: Vec<usize> = scored.iter().take(size).map(|(_, k)| *k).collect();
            idx.sort_unstable();
            let r = ensemble_dev_score(&pick(&idx), &dev, w)?;
            let _ = writeln!(report, "order=select-first members={idx:?} dev_F_SE={:.6} dev_F_WE={:.6}", r.s_e.f_score, r.w_e.f_score);
            select_first = Some(idx);
        }
        let mut ensemble_first = None;
        if matches!(selection, SelectionOrder::EnsembleFirst | SelectionOrder::Both) {
            let subsets = combinations(models.len(), size);
            if subsets.len() > MAX_ENSEMBLE_SUBSETS {
                return Err(CliError::usage(format!("{} candidate ensembles exceed the limit of {MAX_ENSEMBLE_SUBSETS}", subsets.len())));
            }
            let mut best: Option<(f64, Vec<usize>, EvalReport)> = None;
            for idx in subsets {
                let r = ensemble_dev_score(&pick(&idx), &dev, w)?;
                if best.as_ref().is_none_or(|(b, _, _)| r.s_e.f_score > *b) {
                    best = Some((r.s_e.f_score, idx, r));
                }
            }
            let (_, idx, r) = best.expect("at least one subset");
            let _ = writeln!(report, "order=ensemble-first members={idx:?} dev_F_SE={:.6} dev_F_WE={:.6}", r.s_e.f_score, r.w_e.f_score);
            ensemble_first = Some(idx);
        }
        run.write("selection.txt", &report)?;
        print!("{report}");
        chosen = select_first.or(ensemble_first).expect("one order ran");
    }
    let members: Vec<Model> = chosen.iter().map(|&k| models[k].clone()).collect();
    let trees = ensemble_parse(&members, &sentences, w)?;
    write_trees(&run, PARSED_TREES, &trees)?;
    println!("{}", run.dir.display());
    Ok(())
}

fn eval_inputs(a: &EvalArgs, s: &mut Settings) -> CliResult<(PathBuf, PathBuf, Option<PathBuf>)> {
    Ok((s.require_path("gold", a.gold.clone())?, s.require_path("pred", a.pred.clone())?, s.path("types", a.types.clone())?))
}

/// Gold trees, predicted trees and, when given, the gold type records.
type EvalData = (Vec<ParseTree>, Vec<ParseTree>, Option<Vec<Vec<crate::eval::TypedRegion>>>);

fn load_eval_data(gold: &Path, pred: &Path, types: Option<&Path>) -> CliResult<EvalData> {
    let g = read_trees(gold)?;
    let p = read_trees(pred)?;
    let t = types.map(read_type_sidecar).transpose().map_err(|e| CliError::data(e.to_string()))?;
    Ok((g, p, t))
}

fn cmd_eval(a: &EvalArgs, argv: &[String], typology_only: bool) -> CliResult<()> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    workers(&mut s, &a.common)?;
    let (gold, pred, types) = eval_inputs(a, &mut s)?;
    let mut inputs: Vec<&Path> = vec![&gold, &pred];
    inputs.extend(types.as_deref());
    let (g, p, t) = load_eval_data(&gold, &pred, types.as_deref())?;
    let name = if typology_only { "typology-report" } else { "eval" };
    let run = Run::start(name, argv, s.path("out", a.common.out.clone())?, &s, Vec::new(), &inputs)?;
    if typology_only {
        let rows = typology_report(&g, &p, t.as_deref())?;
        let mut text = String::new();
        let mut table = format!("{:<20} {:>8} {:>8} {:>8}\n", "type", "matched", "gold", "F(W_E)");
        for r in rows.values() {
            text.push_str(&r.to_record_line());
            text.push('\n');
            let _ = writeln!(table, "{:<20} {:>8} {:>8} {:>8.4}", r.category, r.matched, r.gold, r.f_score);
        }
        run.write(REPORT_TXT, &text)?;
        run.write(REPORT_JSON, &serde_json::to_string_pretty(&rows).expect("serializable"))?;
        print!("{table}");
    } else {
        let report = evaluate(&g, &p, t.as_deref())?;
        write_report(&run, "", &report)?;
        print!("{}", report.to_table());
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs, argv: &[String]) -> CliResult<()> {
    let mut s = Settings::load(a.common.config.as_deref())?;
    let w = workers(&mut s, &a.common)?;
    let (config, k) = resolve_train_config(&mut s, &a.train, None, 0.0, w)?;
    if k != 1 {
        return Err(CliError::usage("sweep-p trains one seed per p value"));
    }
    let mut step = a.step;
    match a.trailing.as_slice() {
        [] => {}
        [word, v] if word == "step" && step.is_none() => {
            step = Some(v.parse().map_err(|_| CliError::usage(format!("bad step `{v}`")))?);
        }
        other => return Err(CliError::usage(format!("unexpected arguments {other:?}"))),
    }
    let values = s.get_or("values", a.values.clone(), "0.1..0.9".to_string())?;
    let step = s.get("step", step)?;
    let values = parse_p_values(&values, step)?;
    let gold_path = s.require_path("gold", a.gold.clone())?;
    let dev_path = s.require_path("dev", a.dev.clone())?;
    let unlabeled_path = s.require_path("unlabeled", a.unlabeled.clone())?;
    let mut inputs: Vec<&Path> = vec![&gold_path, &dev_path, &unlabeled_path];
    inputs.extend(a.common.config.as_deref());
    let gold = read_gold(&gold_path)?;
    let dev = read_gold(&dev_path)?;
    let unlabeled = read_input(&unlabeled_path)?;
    let run = Run::start("sweep-p", argv, s.path("out", a.common.out.clone())?, &s, vec![config.seed], &inputs)?;
    let base_cfg = TrainConfig { silver_proportion: 0.0, ..config.clone() };
    let baseline = train(&gold, None, Some(&dev), &base_cfg, Some(&run.artifacts("baseline.")))?;
    let silver = parse_corpus(&baseline.model, &unlabeled, w)?;
    silver.write(&run.path("silver.trees"))?;
    let mut rows = Vec::new();
    for &p in &values {
        let cfg = TrainConfig { silver_proportion: p, ..config.clone() };
        let out = train(&gold, Some(&silver), Some(&dev), &cfg, Some(&run.artifacts(&format!("p{p}."))))?;
        let report = evaluate_model(&out.model, &dev, w)?;
        log::info!("p={p} dev F(S_E)={:.4}", report.s_e.f_score);
        rows.push(pipeline::SweepRow { p, report });
    }
    let table = sweep_table(&rows);
    run.write(SWEEP_TABLE, &table)?;
    print!("{table}");
    println!("{}", run.dir.display());
    Ok(())
}

fn cmd_replay(a: &ReplayArgs) -> CliResult<()> {
    let text = fs::read_to_string(&a.manifest).map_err(|e| CliError::data(format!("{}: {e}", a.manifest.display())))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| CliError::data(format!("bad manifest: {e}")))?;
    for input in &manifest.inputs {
        let now = sha256_file(Path::new(&input.path))?;
        if now != input.sha256 {
            return Err(CliError::data(format!("{} changed since the recorded run", input.path)));
        }
    }
    let mut args = manifest.arguments.clone();
    // Swap the recorded output location for the new one.
    if let Some(k) = args.iter().position(|x| x == "--out") {
        args.drain(k..(k + 2).min(args.len()));
    }
    args.retain(|x| !x.starts_with("--out="));
    args.push("--out".into());
    args.push(a.out.display().to_string());
    let cli = Cli::try_parse_from(&args).map_err(|e| CliError::usage(e.to_string()))?;
    dispatch(&cli, &args)
}

fn dispatch(cli: &Cli, argv: &[String]) -> CliResult<()> {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a, argv),
        Command::Train(a) => cmd_train(a, argv),
        Command::SelfTrain(a) => cmd_self_train(a, argv),
        Command::Parse(a) => cmd_parse(a, argv),
        Command::EnsembleParse(a) => cmd_ensemble_parse(a, argv),
        Command::Eval(a) => cmd_eval(a, argv, false),
        Command::TypologyReport(a) => cmd_eval(a, argv, true),
        Command::SweepP(a) => cmd_sweep(a, argv),
        Command::Replay(a) => cmd_replay(a),
    }
}

/// Runs the command line `argv` (including the program name); returns the
/// process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.verbose { "debug" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(&cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parsing() {
        let m = Settings::parse_file("# comment\nepochs = 3\nbatch_size=10\n\n").unwrap();
        assert_eq!(m["epochs"], "3");
        assert_eq!(m["batch-size"], "10");
        assert_eq!(Settings::parse_file("nonsense").unwrap_err().code, EXIT_USAGE);
    }

    #[test]
    fn flags_override_file() {
        let mut s = Settings { values: Settings::parse_file("epochs=3\nlr=0.5").unwrap(), ..Settings::default() };
        assert_eq!(s.get_or("epochs", Some(7usize), 1).unwrap(), 7);
        assert_eq!(s.get_or("lr", None, 1e-3).unwrap(), 0.5);
        assert!(s.finish().is_ok());
        assert_eq!(s.snapshot(), "epochs=7\nlr=0.5\n");
        let mut s = Settings { values: Settings::parse_file("bogus=1").unwrap(), ..Settings::default() };
        let _ = s.get_or("epochs", None, 1usize);
        assert_eq!(s.finish().unwrap_err().code, EXIT_USAGE);
    }

    #[test]
    fn run_dirs_are_never_reused() {
        let tmp = tempfile::tempdir().unwrap();
        let base = tmp.path().join("run");
        let a = fresh_run_dir(&base).unwrap();
        assert_eq!(a, base);
        fs::write(a.join("x"), "1").unwrap();
        let b = fresh_run_dir(&base).unwrap();
        assert_eq!(b, tmp.path().join("run.1"));
        fs::write(b.join("x"), "1").unwrap();
        assert_eq!(fresh_run_dir(&base).unwrap(), tmp.path().join("run.2"));
    }

    #[test]
    fn subset_enumeration() {
        assert_eq!(combinations(4, 2).len(), 6);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn digest_of_known_bytes() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("abc");
        fs::write(&p, "abc").unwrap();
        assert_eq!(sha256_file(&p).unwrap(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
