//! Downstream tasks on top of a pre-trained encoder: semantic entity
//! classification as BIO word tagging, extractive QA with start/end
//! classifiers, and their metrics (word-level F1, ANLS).
//!
//! Ground-truth annotations are only read when building labels and
//! answers; model inputs always come from the tokenized document.

mod bio;
mod metrics;
mod qa;
mod sec;
mod train;
#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bio::{bio_decode, bio_encode, BioLabelSet, EntitySpan, OUTSIDE_LABEL};
pub use metrics::{
    anls, corpus_f1, dataset_anls, levenshtein, normalized_similarity, span_f1, word_f1, F1Mode, Prf, ANLS_THRESHOLD,
};
pub use qa::{best_span, evaluate_qa, qa_examples, QaExample, QaModel, QaPrediction, QaReport};
pub use sec::{evaluate_sec, sec_example, SecExample, SecModel, SecReport};
pub use train::{finetune, TaskModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Longest answer, in words beyond the first.
    pub span_cap: usize,
    pub f1_mode: F1Mode,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 4,
            lr: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            span_cap: 30,
            f1_mode: F1Mode::Tag,
            seed: 7,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be > 0"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be finite and >= 0"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config("beta1", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("beta2", "must be in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps", "must be > 0"));
        }
        Ok(())
    }
}
