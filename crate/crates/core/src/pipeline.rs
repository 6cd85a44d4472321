//! End-to-end runs driven by one JSON run config: corpus, tokenizer,
//! pre-training, fine-tuning, evaluation and the objective ablation. Each
//! command writes its artifacts and a manifest with their checksums into
//! the output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{segment_groups, segment_vectors};
use crate::corpus::{generate_corpus, read_corpus, read_json, write_corpus, write_json, CorpusConfig, DocumentFile};
use crate::doc_model::{tokenize, train_bpe, RawDocument, TokenizedDocument, TokenizerModel};
use crate::encoder::{EncoderConfig, Model};
use crate::error::{Error, Result};
use crate::finetune::{
    evaluate_qa, evaluate_sec, finetune, qa_examples, sec_example, BioLabelSet, FinetuneConfig, QaExample, QaModel,
    QaPrediction, SecExample, SecModel, OUTSIDE_LABEL,
};
use crate::objectives::{pretrain, EpochReport, PretrainConfig};
use crate::tensor::checkpoint::{config_hash, sha256_hex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Semantic entity labeling: BIO tags per word.
    Sec,
    /// Extractive question answering over the page's words.
    Qa,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sec" => Ok(Self::Sec),
            "qa" => Ok(Self::Qa),
            _ => Err(Error::config("task", format!("must be sec or qa, got {s:?}"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sec => "sec",
            Self::Qa => "qa",
        })
    }
}

/// A corpus directory, a corpus config file, or an inline corpus config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CorpusSource {
    Path(PathBuf),
    Inline(CorpusConfig),
}

/// Which segmentation the documents carry into pre-training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segments {
    /// The OCR text segments as stored.
    #[default]
    Ocr,
    /// Segments replaced by the annotated semantic groups.
    Groups,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSettings {
    pub task: Task,
    /// Labeled documents, taken just before the evaluation documents.
    pub train_docs: usize,
    /// Held-out documents at the end of the corpus; never pre-trained on.
    pub eval_docs: usize,
    pub train: FinetuneConfig,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        Self { task: Task::Sec, train_docs: 20, eval_docs: 60, train: FinetuneConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSource,
    pub segments: Segments,
    /// Trained from the pre-training documents when absent.
    pub tokenizer: Option<PathBuf>,
    pub bpe_merges: usize,
    /// `vocab_size` is always taken from the tokenizer.
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneSettings,
    /// Where artifacts go. Not serialized, so hashes and checkpoints do not
    /// depend on the output location.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    /// Overrides every other seed: corpus, initialization, masking,
    /// shuffling, dropout, fine-tuning.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSource::Inline(CorpusConfig {
                document_count: 200,
                segment_split_prob: 0.5,
                ..CorpusConfig::default()
            }),
            segments: Segments::Ocr,
            tokenizer: None,
            bpe_merges: 512,
            encoder: EncoderConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneSettings::default(),
            out: PathBuf::from("runs/default"),
            seed: 7,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Field constraints plus existence of every referenced path.
    pub fn validate(&self) -> Result<()> {
        match &self.corpus {
            CorpusSource::Path(p) if !p.exists() => {
                return Err(Error::config("corpus", format!("path {} does not exist", p.display())))
            }
            CorpusSource::Inline(c) => c.validate()?,
            CorpusSource::Path(_) => {}
        }
        if let Some(p) = &self.tokenizer {
            if !p.is_file() {
                return Err(Error::config("tokenizer", format!("file {} does not exist", p.display())));
            }
        }
        self.pretrain.validate()?;
        self.finetune.train.validate()?;
        if self.finetune.eval_docs == 0 {
            return Err(Error::config("finetune.eval_docs", "must be > 0"));
        }
        if self.finetune.train_docs == 0 {
            return Err(Error::config("finetune.train_docs", "must be > 0"));
        }
        Ok(())
    }

    /// The config as actually run: `seed` copied into every component.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        if let CorpusSource::Inline(cc) = &mut c.corpus {
            cc.rng_seed = c.seed;
        }
        c.pretrain.rng_seed = c.seed;
        c.finetune.train.seed = c.seed;
        c
    }

    pub fn hash(&self) -> String {
        config_hash(&serde_json::to_value(self).unwrap_or_default())
    }
}

/// Written next to every command's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    /// File name to SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    fn new(command: &str, seed: u64, config: &impl Serialize) -> Self {
        let config = serde_json::to_value(config).unwrap_or_default();
        Self { command: command.into(), seed, config_hash: config_hash(&config), config, artifacts: BTreeMap::new() }
    }

    fn record(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.artifacts.insert(name, sha256_hex(&bytes));
        Ok(())
    }

    fn write(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join(format!("{}.manifest.json", self.command));
        write_json(&p, self)?;
        Ok(p)
    }
}

/// Documents of one run, split into pre-training, fine-tuning and held-out
/// evaluation parts.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub config: RunConfig,
    pub docs: Vec<DocumentFile>,
    pub tokenizer: TokenizerModel,
}

impl Workspace {
    /// Loads the corpus and builds or loads the tokenizer. `tokenizer`
    /// (e.g. from a checkpoint) takes precedence over the config.
    pub fn prepare(config: &RunConfig, tokenizer: Option<TokenizerModel>) -> Result<Self> {
        config.validate()?;
        let config = config.effective();
        let mut docs = load_corpus(&config.corpus, config.seed)?;
        if config.segments == Segments::Groups {
            for (i, d) in docs.iter_mut().enumerate() {
                let truth = d.truth.as_ref().ok_or_else(|| {
                    Error::config("segments", format!("groups requires annotations; document {i} has none"))
                })?;
                d.document.segments = truth.semantic_groups.clone();
                d.document.validate()?;
            }
        }
        let need = config.finetune.eval_docs + 1;
        if docs.len() < need {
            return Err(Error::config(
                "finetune.eval_docs",
                format!("leaves no pre-training documents in a corpus of {}", docs.len()),
            ));
        }
        let mut ws = Self { config, docs, tokenizer: TokenizerModel::bytes_only() };
        ws.tokenizer = match (tokenizer, &ws.config.tokenizer) {
            (Some(t), Some(p)) => {
                let from_file = TokenizerModel::load(p)?;
                if from_file.fingerprint() != t.fingerprint() {
                    return Err(Error::TokenizerMismatch(format!(
                        "{} differs from the checkpoint's tokenizer",
                        p.display()
                    )));
                }
                t
            }
            (Some(t), None) => t,
            (None, Some(p)) => TokenizerModel::load(p)?,
            (None, None) => {
                let raws: Vec<RawDocument> = ws.pretrain_docs().iter().map(|d| d.document.clone()).collect();
                train_bpe(&raws, ws.config.bpe_merges)?
            }
        };
        ws.config.encoder.vocab_size = ws.tokenizer.vocab_size();
        ws.config.encoder.validate()?;
        Ok(ws)
    }

    fn eval_start(&self) -> usize {
        self.docs.len() - self.config.finetune.eval_docs
    }

    pub fn pretrain_docs(&self) -> &[DocumentFile] {
        &self.docs[..self.eval_start()]
    }

    pub fn finetune_docs(&self) -> &[DocumentFile] {
        let end = self.eval_start();
        &self.docs[end.saturating_sub(self.config.finetune.train_docs)..end]
    }

    pub fn eval_docs(&self) -> &[DocumentFile] {
        &self.docs[self.eval_start()..]
    }

    /// Pre-training documents tokenized and truncated to the encoder length.
    pub fn tokenized_pretrain(&self) -> Result<Vec<TokenizedDocument>> {
        self.pretrain_docs()
            .iter()
            .map(|d| {
                let mut t = tokenize(&d.document, &self.tokenizer)?;
                t.truncate(self.config.encoder.max_seq_len);
                Ok(t)
            })
            .collect()
    }

    /// Label inventory over every annotated document, sorted.
    pub fn labels(&self) -> BioLabelSet {
        label_set(&self.docs)
    }

    /// Checkpoint metadata that lets later commands rebuild the tokenizer.
    fn checkpoint_meta(&self) -> serde_json::Value {
        serde_json::json!({
            "tokenizer": self.tokenizer.to_json(),
            "tokenizer_fingerprint": self.tokenizer.fingerprint(),
            "run": self.config,
        })
    }
}

fn label_set(docs: &[DocumentFile]) -> BioLabelSet {
    let names: BTreeSet<&str> = docs
        .iter()
        .filter_map(|d| d.truth.as_ref())
        .flat_map(|t| t.entity_labels.iter().map(String::as_str))
        .filter(|&l| l != OUTSIDE_LABEL)
        .collect();
    BioLabelSet::new(&names.into_iter().collect::<Vec<_>>())
}

fn load_corpus(source: &CorpusSource, seed: u64) -> Result<Vec<DocumentFile>> {
    let generated = |cfg: &CorpusConfig| -> Result<Vec<DocumentFile>> {
        Ok(generate_corpus(cfg)?
            .into_iter()
            .map(|g| DocumentFile { document: g.raw, truth: Some(g.truth) })
            .collect())
    };
    match source {
        CorpusSource::Inline(cfg) => generated(cfg),
        CorpusSource::Path(p) if p.is_dir() => read_corpus(p),
        CorpusSource::Path(p) => {
            let mut cfg: CorpusConfig = read_json(p)?;
            cfg.rng_seed = seed;
            generated(&cfg)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint and the tokenizer stored in its metadata.
pub fn load_checkpoint(path: &Path) -> Result<(Model, TokenizerModel, serde_json::Value)> {
    let (model, meta) = Model::load(path)?;
    let text = meta
        .get("tokenizer")
        .and_then(|t| t.as_str())
        .ok_or_else(|| Error::Checkpoint(format!("{}: no tokenizer in metadata", path.display())))?;
    let tok = TokenizerModel::from_json(text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if meta.get("tokenizer_fingerprint").and_then(|f| f.as_str()) != Some(tok.fingerprint().as_str()) {
        return Err(Error::TokenizerMismatch(format!("{}: stored fingerprint does not match", path.display())));
    }
    if tok.vocab_size() != model.config.vocab_size {
        return Err(Error::TokenizerMismatch(format!(
            "tokenizer has {} symbols, encoder expects {}",
            tok.vocab_size(),
            model.config.vocab_size
        )));
    }
    Ok((model, tok, meta))
}

/// Writes the corpus described by the config as one JSON file per document.
pub fn gen_corpus(config: &RunConfig) -> Result<Manifest> {
    config.validate()?;
    let config = config.effective();
    let cfg = match &config.corpus {
        CorpusSource::Inline(c) => c.clone(),
        CorpusSource::Path(p) if p.is_file() => CorpusConfig { rng_seed: config.seed, ..read_json(p)? },
        CorpusSource::Path(p) => {
            return Err(Error::config("corpus", format!("{} is already a corpus directory", p.display())))
        }
    };
    let docs: Vec<DocumentFile> = generate_corpus(&cfg)?
        .into_iter()
        .map(|g| DocumentFile { document: g.raw, truth: Some(g.truth) })
        .collect();
    let mut manifest = Manifest::new("gen-corpus", config.seed, &cfg);
    for p in write_corpus(&config.out, &docs, &cfg)? {
        manifest.record(&p)?;
    }
    manifest.write(&config.out)?;
    Ok(manifest)
}

/// Trains a tokenizer on every document in `corpus_dir`.
pub fn train_tokenizer(corpus_dir: &Path, merges: usize, out: &Path) -> Result<Manifest> {
    let raws: Vec<RawDocument> = read_corpus(corpus_dir)?.into_iter().map(|d| d.document).collect();
    let tok = train_bpe(&raws, merges)?;
    tok.save(out)?;
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let config = serde_json::json!({ "corpus": corpus_dir, "merges": merges });
    let mut manifest = Manifest::new("train-bpe", 0, &config);
    manifest.record(out)?;
    manifest.write(dir)?;
    Ok(manifest)
}

pub struct Pretrained {
    pub workspace: Workspace,
    pub model: Model,
    pub reports: Vec<EpochReport>,
}

/// Initializes an encoder from the run seed and pre-trains it.
pub fn run_pretrain(config: &RunConfig) -> Result<Pretrained> {
    let workspace = Workspace::prepare(config, None)?;
    let docs = workspace.tokenized_pretrain()?;
    let mut model = Model::init(workspace.config.encoder.clone(), workspace.config.seed)?;
    let reports = pretrain(&mut model, &docs, &workspace.config.pretrain)?;
    Ok(Pretrained { workspace, model, reports })
}

pub const PRETRAINED: &str = "pretrained.ckpt";
pub const PRETRAIN_REPORT: &str = "pretrain_report.jsonl";

/// Pre-trains and writes the checkpoint, tokenizer and per-epoch report.
pub fn cmd_pretrain(config: &RunConfig) -> Result<Manifest> {
    let run = run_pretrain(config)?;
    let cfg = &run.workspace.config;
    create_dir(&cfg.out)?;
    let mut manifest = Manifest::new("pretrain", cfg.seed, cfg);
    let tok = cfg.out.join("tokenizer.json");
    run.workspace.tokenizer.save(&tok)?;
    let report = cfg.out.join(PRETRAIN_REPORT);
    write_jsonl(&report, &run.reports)?;
    let ckpt = cfg.out.join(PRETRAINED);
    run.model.save(&ckpt, run.workspace.checkpoint_meta())?;
    for p in [&tok, &report, &ckpt] {
        manifest.record(p)?;
    }
    manifest.write(&cfg.out)?;
    Ok(manifest)
}

/// Fine-tuned task model with its held-out metrics.
pub struct Finetuned {
    pub model: TaskModelKind,
    pub report: FinetuneReport,
}

pub enum TaskModelKind {
    Sec(SecModel),
    Qa(QaModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub task: Task,
    pub epoch_losses: Vec<f64>,
    pub metrics: TaskMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskMetrics {
    Sec(crate::finetune::SecReport),
    Qa(crate::finetune::QaReport),
}

impl TaskMetrics {
    /// F1 for labeling, ANLS for question answering.
    pub fn headline(&self) -> f64 {
        match self {
            Self::Sec(r) => r.f1,
            Self::Qa(r) => r.anls,
        }
    }
}

fn sec_examples(docs: &[DocumentFile], ws: &Workspace, labels: &BioLabelSet) -> Result<Vec<SecExample>> {
    docs.iter()
        .map(|d| {
            let truth = d.truth.as_ref().ok_or_else(|| Error::InvalidDocument("document has no annotation".into()))?;
            sec_example(&d.document, truth, &ws.tokenizer, labels, ws.config.encoder.max_seq_len)
        })
        .collect()
}

fn qa_examples_of(docs: &[DocumentFile], ws: &Workspace) -> Result<Vec<QaExample>> {
    let mut out = Vec::new();
    for d in docs {
        let truth = d.truth.as_ref().ok_or_else(|| Error::InvalidDocument("document has no annotation".into()))?;
        out.extend(qa_examples(&d.document, truth, &ws.tokenizer, &ws.config.encoder)?);
    }
    Ok(out)
}

/// Fine-tunes `model` on the workspace's labeled documents and scores the
/// held-out ones.
pub fn run_finetune(ws: &Workspace, model: Model) -> Result<Finetuned> {
    let s = &ws.config.finetune;
    match s.task {
        Task::Sec => {
            let labels = ws.labels();
            let train = sec_examples(ws.finetune_docs(), ws, &labels)?;
            let eval = sec_examples(ws.eval_docs(), ws, &labels)?;
            let mut m = SecModel::new(model, labels, s.train.seed)?;
            let epoch_losses = finetune(&mut m, &train, &s.train)?;
            let (metrics, _) = evaluate_sec(&m, &eval, s.train.f1_mode)?;
            let report = FinetuneReport { task: Task::Sec, epoch_losses, metrics: TaskMetrics::Sec(metrics) };
            Ok(Finetuned { model: TaskModelKind::Sec(m), report })
        }
        Task::Qa => {
            let train = qa_examples_of(ws.finetune_docs(), ws)?;
            let eval = qa_examples_of(ws.eval_docs(), ws)?;
            let mut m = QaModel::new(model, s.train.seed)?;
            let epoch_losses = finetune(&mut m, &train, &s.train)?;
            let (metrics, _) = evaluate_qa(&m, &eval, s.train.span_cap)?;
            let report = FinetuneReport { task: Task::Qa, epoch_losses, metrics: TaskMetrics::Qa(metrics) };
            Ok(Finetuned { model: TaskModelKind::Qa(m), report })
        }
    }
}

pub fn finetuned_name(task: Task) -> String {
    format!("finetuned_{task}.ckpt")
}

pub fn finetune_report_name(task: Task) -> String {
    format!("finetune_{task}_report.json")
}

/// Fine-tunes a pre-trained checkpoint; `task` overrides the config's.
pub fn cmd_finetune(config: &RunConfig, checkpoint: &Path, task: Option<Task>) -> Result<Manifest> {
    let (model, tok, _) = load_checkpoint(checkpoint)?;
    let mut config = config.clone();
    if let Some(t) = task {
        config.finetune.task = t;
    }
    let mut ws = Workspace::prepare(&config, Some(tok))?;
    if ws.config.encoder != model.config {
        // the checkpoint defines the architecture
        ws.config.encoder = model.config.clone();
    }
    let task = ws.config.finetune.task;
    let out = run_finetune(&ws, model)?;
    let cfg = &ws.config;
    create_dir(&cfg.out)?;
    let mut manifest = Manifest::new("finetune", cfg.seed, cfg);
    let report = cfg.out.join(finetune_report_name(task));
    write_json(&report, &out.report)?;
    let ckpt = cfg.out.join(finetuned_name(task));
    let mut meta = ws.checkpoint_meta();
    meta["task"] = serde_json::to_value(task).unwrap_or_default();
    match &out.model {
        TaskModelKind::Sec(m) => {
            meta["labels"] = serde_json::to_value(&m.labels).unwrap_or_default();
            m.model.save(&ckpt, meta)?;
        }
        TaskModelKind::Qa(m) => m.model.save(&ckpt, meta)?,
    }
    manifest.record(&report)?;
    manifest.record(&ckpt)?;
    manifest.write(&cfg.out)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub task: Task,
    pub documents: usize,
    pub metrics: TaskMetrics,
    /// Per-question predictions; empty for labeling.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub answers: Vec<QaPrediction>,
}

/// Scores a fine-tuned checkpoint on every annotated document of `dataset`.
pub fn evaluate(checkpoint: &Path, dataset: &Path) -> Result<EvaluationReport> {
    let (model, tok, meta) = load_checkpoint(checkpoint)?;
    let task: Task = meta
        .get("task")
        .cloned()
        .and_then(|t| serde_json::from_value(t).ok())
        .ok_or_else(|| Error::Checkpoint(format!("{}: not a fine-tuned checkpoint", checkpoint.display())))?;
    let run: RunConfig = serde_json::from_value(meta.get("run").cloned().unwrap_or_default())
        .map_err(|e| Error::Checkpoint(format!("{}: bad run config: {e}", checkpoint.display())))?;
    let docs = read_corpus(dataset)?;
    let ws = Workspace {
        config: RunConfig { encoder: model.config.clone(), ..run },
        docs: docs.clone(),
        tokenizer: tok,
    };
    let s = &ws.config.finetune.train;
    match task {
        Task::Sec => {
            let labels: BioLabelSet = serde_json::from_value(meta.get("labels").cloned().unwrap_or_default())
                .map_err(|e| Error::Checkpoint(format!("{}: bad label set: {e}", checkpoint.display())))?;
            let examples = sec_examples(&docs, &ws, &labels)?;
            let m = SecModel::from_model(model, labels)?;
            let (metrics, _) = evaluate_sec(&m, &examples, s.f1_mode)?;
            Ok(EvaluationReport { task, documents: docs.len(), metrics: TaskMetrics::Sec(metrics), answers: Vec::new() })
        }
        Task::Qa => {
            let examples = qa_examples_of(&docs, &ws)?;
            let m = QaModel::from_model(model)?;
            let (metrics, answers) = evaluate_qa(&m, &examples, s.span_cap)?;
            Ok(EvaluationReport { task, documents: docs.len(), metrics: TaskMetrics::Qa(metrics), answers })
        }
    }
}

/// [`evaluate`], writing the report and a manifest into `out`.
pub fn cmd_evaluate(checkpoint: &Path, dataset: &Path, out: &Path) -> Result<(EvaluationReport, Manifest)> {
    let report = evaluate(checkpoint, dataset)?;
    create_dir(out)?;
    let path = out.join(format!("evaluate_{}.json", report.task));
    write_json(&path, &report)?;
    let config = serde_json::json!({ "checkpoint": checkpoint, "dataset": dataset });
    let mut manifest = Manifest::new("evaluate", 0, &config);
    manifest.record(checkpoint)?;
    manifest.record(&path)?;
    manifest.write(out)?;
    Ok((report, manifest))
}

/// One row of the objective ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub objectives: String,
    pub alpha: f64,
    pub gamma: f64,
    pub metric: f64,
    pub config_hash: String,
}

/// The four objective combinations, as `(name, alpha, gamma)` given the
/// weights used when a term is on.
pub fn ablation_variants(alpha: f64, gamma: f64) -> [(&'static str, f64, f64); 4] {
    [
        ("MLM", 0.0, 0.0),
        ("MLM+1-LOP", alpha, 0.0),
        ("MLM+2-TSC", 0.0, gamma),
        ("MLM+1-LOP+2-TSC", alpha, gamma),
    ]
}

/// Effective configs of the four ablation runs; they differ only in
/// `pretrain.alpha` and `pretrain.gamma`.
pub fn ablation_configs(config: &RunConfig) -> Vec<(&'static str, RunConfig)> {
    let base = config.effective();
    ablation_variants(base.pretrain.alpha, base.pretrain.gamma)
        .into_iter()
        .map(|(name, alpha, gamma)| {
            let mut c = base.clone();
            c.pretrain.alpha = alpha;
            c.pretrain.gamma = gamma;
            (name, c)
        })
        .collect()
}

/// Pre-trains and fine-tunes once per objective combination.
pub fn ablation(config: &RunConfig) -> Result<Vec<AblationRow>> {
    ablation_configs(config)
        .into_iter()
        .map(|(name, c)| {
            let run = run_pretrain(&c)?;
            let ft = run_finetune(&run.workspace, run.model)?;
            Ok(AblationRow {
                objectives: name.into(),
                alpha: c.pretrain.alpha,
                gamma: c.pretrain.gamma,
                metric: ft.report.metrics.headline(),
                config_hash: run.workspace.config.hash(),
            })
        })
        .collect()
}

/// Markdown table of ablation rows.
pub fn ablation_table(rows: &[AblationRow], task: Task) -> String {
    let metric = match task {
        Task::Sec => "F1",
        Task::Qa => "ANLS",
    };
    let mut s = format!("| objectives | alpha | gamma | {metric} |\n|---|---|---|---|\n");
    for r in rows {
        s.push_str(&format!("| {} | {} | {} | {:.2} |\n", r.objectives, r.alpha, r.gamma, 100.0 * r.metric));
    }
    s
}

pub fn cmd_ablate(config: &RunConfig) -> Result<(Vec<AblationRow>, Manifest)> {
    let rows = ablation(config)?;
    let cfg = config.effective();
    create_dir(&cfg.out)?;
    let mut manifest = Manifest::new("ablate", cfg.seed, &cfg);
    let json = cfg.out.join("ablation.json");
    write_json(&json, &rows)?;
    let table = cfg.out.join("ablation.md");
    fs::write(&table, ablation_table(&rows, cfg.finetune.task)).map_err(|e| Error::io(&table, e))?;
    manifest.record(&json)?;
    manifest.record(&table)?;
    manifest.write(&cfg.out)?;
    Ok((rows, manifest))
}

/// CSV of token rows and pooled segment rows for one document:
/// `kind,id,segment,group,dim0..dim{d-1}`, group empty when unannotated.
pub fn dump_reps(checkpoint: &Path, document: &Path, out: &Path) -> Result<Manifest> {
    let (model, tok, _) = load_checkpoint(checkpoint)?;
    let file: DocumentFile = read_json(document)?;
    let mut doc = tokenize(&file.document, &tok)?;
    doc.truncate(model.config.max_seq_len);
    let groups = match &file.truth {
        Some(t) => segment_groups(&doc, &file.document, t),
        None => vec![None; doc.token_segments.len()],
    };
    let (reps, pooled) = segment_vectors(&model, &doc)?;
    let segment_of = doc.segment_of_token();
    let d = model.config.hidden_dim;
    let mut text = String::from("kind,id,segment,group");
    for i in 0..d {
        text.push_str(&format!(",dim{i}"));
    }
    text.push('\n');
    let group = |k: usize| groups[k].map(|g| g.to_string()).unwrap_or_default();
    let mut row = |kind: &str, id: usize, seg: usize, values: &[f64]| {
        text.push_str(&format!("{kind},{id},{seg},{}", group(seg)));
        for v in values {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    };
    for t in 0..doc.len() {
        row("token", t, segment_of[t], reps.row(t));
    }
    for (k, p) in pooled.iter().enumerate() {
        row("segment", k, k, p);
    }
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut f = fs::File::create(out).map_err(|e| Error::io(out, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(out, e))?;
    let config = serde_json::json!({ "checkpoint": checkpoint, "document": document });
    let mut manifest = Manifest::new("dump-reps", 0, &config);
    manifest.record(out)?;
    manifest.write(out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")))?;
    Ok(manifest)
}
