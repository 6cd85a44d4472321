use serde::{Deserialize, Serialize};

use super::bio::{bio_encode, BioLabelSet};
use super::metrics::{corpus_f1, F1Mode, Prf};
use super::train::TaskModel;
use crate::doc_model::{tokenize, GroundTruth, RawDocument, TokenizedDocument, TokenizerModel};
use crate::encoder::params::{Initializer, Resolver};
use crate::encoder::{linear, Linear, Model, ModelInput};
use crate::error::Result;
use crate::exec;
use crate::objectives::Term;
use crate::rng::{self, domain, Rng};
use crate::tensor::{argmax, Graph, Var};

const HEAD: &str = "sec_head";

/// A document with per-word gold tags (indexed by source word).
#[derive(Debug, Clone, PartialEq)]
pub struct SecExample {
    pub doc: TokenizedDocument,
    pub tags: Vec<usize>,
}

/// Tokenizes `raw` (truncated to `max_seq_len`) and derives BIO tags from
/// the annotation.
pub fn sec_example(
    raw: &RawDocument,
    truth: &GroundTruth,
    tok: &TokenizerModel,
    labels: &BioLabelSet,
    max_seq_len: usize,
) -> Result<SecExample> {
    truth.validate(raw.len())?;
    let mut doc = tokenize(raw, tok)?;
    doc.truncate(max_seq_len);
    let tags = bio_encode(&truth.entity_labels, &truth.semantic_groups, labels)?;
    Ok(SecExample { doc, tags })
}

/// Encoder with a linear word-tagging head; a word is classified from its first token.
#[derive(Debug, Clone)]
pub struct SecModel {
    pub model: Model,
    pub head: Linear,
    pub labels: BioLabelSet,
}

impl SecModel {
    /// Adds a freshly initialized head (N(0, init_std) weights, zero bias).
    pub fn new(mut model: Model, labels: BioLabelSet, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, domain::INIT, 1);
        let std = model.config.init_std;
        let (d, t) = (model.config.hidden_dim, labels.tag_count());
        let head = Linear::build(&mut Initializer::new(&mut model.params, &mut r, std), HEAD, d, t)?;
        Ok(Self { model, head, labels })
    }

    /// Wraps a model whose store already holds the head (e.g. a loaded checkpoint).
    pub fn from_model(model: Model, labels: BioLabelSet) -> Result<Self> {
        let (d, t) = (model.config.hidden_dim, labels.tag_count());
        let head = Linear::build(&mut Resolver::new(&model.params), HEAD, d, t)?;
        Ok(Self { model, head, labels })
    }

    /// Tag logits for every word present in `doc` (rows in reading order)
    /// and the matching source word indices.
    pub fn word_logits(&self, g: &mut Graph, doc: &TokenizedDocument, dropout: Option<&mut Rng>) -> Result<(Var, Vec<usize>)> {
        let reps = self.model.forward(g, &ModelInput::from_document(doc), dropout)?;
        let spans = doc.word_spans();
        let rows: Vec<usize> = spans.iter().map(|(_, r)| r.start).collect();
        let words = spans.iter().map(|(w, _)| *w).collect();
        let x = g.select_rows(reps, &rows)?;
        Ok((linear(g, x, &self.head)?, words))
    }

    /// Argmax tag (ties to the lowest tag id) per present word: `(word, tag)`.
    pub fn predict(&self, doc: &TokenizedDocument) -> Result<Vec<(usize, usize)>> {
        let mut g = self.model.graph();
        let (logits, words) = self.word_logits(&mut g, doc, None)?;
        let v = g.value(logits);
        Ok(words.into_iter().enumerate().map(|(i, w)| (w, argmax(v.row(i)))).collect())
    }

    /// Predicted tags indexed by source word; words cut by truncation get `O`.
    pub fn predict_tags(&self, doc: &TokenizedDocument, word_count: usize) -> Result<Vec<usize>> {
        let mut tags = vec![0; word_count];
        for (w, t) in self.predict(doc)? {
            tags[w] = t;
        }
        Ok(tags)
    }
}

impl TaskModel for SecModel {
    type Example = SecExample;

    fn encoder(&self) -> &Model {
        &self.model
    }

    fn encoder_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    fn example_loss<'p>(&'p self, ex: &SecExample, dropout: Option<&mut Rng>) -> Result<(Graph<'p>, Term)> {
        let mut g = self.model.graph();
        let (logits, words) = self.word_logits(&mut g, &ex.doc, dropout)?;
        let targets: Vec<usize> = words.iter().map(|&w| ex.tags[w]).collect();
        let sum = g.cross_entropy_sum(logits, &targets)?;
        Ok((g, Term { sum: Some(sum), count: targets.len(), correct: 0 }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecReport {
    pub task: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<Prf> for SecReport {
    fn from(p: Prf) -> Self {
        Self { task: "sec".into(), precision: p.precision, recall: p.recall, f1: p.f1 }
    }
}

/// Micro-averaged F1 over all examples, plus per-example predicted tags.
pub fn evaluate_sec(model: &SecModel, examples: &[SecExample], mode: F1Mode) -> Result<(SecReport, Vec<Vec<usize>>)> {
    let preds = exec::map_indexed(examples, |_, ex| model.predict_tags(&ex.doc, ex.tags.len()))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(Vec<usize>, Vec<usize>)> = preds.iter().cloned().zip(examples.iter().map(|e| e.tags.clone())).collect();
    Ok((corpus_f1(&pairs, mode, &model.labels)?.into(), preds))
}
