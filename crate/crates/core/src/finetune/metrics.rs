use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::bio::{bio_decode, BioLabelSet};
use crate::error::{Error, Result};

/// Minimum normalized similarity credited by ANLS.
pub const ANLS_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// From true positives and predicted/gold positive counts. With nothing
    /// predicted and nothing to find, all three are 1.
    pub fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let frac = |num: usize, den: usize, empty: f64| if den == 0 { empty } else { num as f64 / den as f64 };
        let precision = frac(tp, predicted, if gold == 0 { 1.0 } else { 0.0 });
        let recall = frac(tp, gold, if predicted == 0 { 1.0 } else { 0.0 });
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { precision, recall, f1 }
    }
}

/// How predicted tags are scored against gold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Mode {
    /// Per word: a non-`O` prediction is correct when it equals the gold tag.
    #[default]
    Tag,
    /// Per decoded entity: exact start, end and class.
    Span,
}

/// Micro-averaged tag-level F1 (`O` = tag 0 is the negative class).
pub fn word_f1(pred: &[usize], gold: &[usize]) -> Result<Prf> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch { what: "tags", left: pred.len(), right: gold.len() });
    }
    let tp = pred.iter().zip(gold).filter(|&(p, g)| *p != 0 && p == g).count();
    let predicted = pred.iter().filter(|&&p| p != 0).count();
    let gold_n = gold.iter().filter(|&&g| g != 0).count();
    Ok(Prf::from_counts(tp, predicted, gold_n))
}

/// Entity-level F1 over relaxed-decoded spans.
pub fn span_f1(pred: &[usize], gold: &[usize], set: &BioLabelSet) -> Result<Prf> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch { what: "tags", left: pred.len(), right: gold.len() });
    }
    let p: HashSet<_> = bio_decode(pred, set).into_iter().collect();
    let g: HashSet<_> = bio_decode(gold, set).into_iter().collect();
    Ok(Prf::from_counts(p.intersection(&g).count(), p.len(), g.len()))
}

/// Micro-averaged F1 over many documents' tag sequences.
pub fn corpus_f1(docs: &[(Vec<usize>, Vec<usize>)], mode: F1Mode, set: &BioLabelSet) -> Result<Prf> {
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for (pred, gold) in docs {
        if pred.len() != gold.len() {
            return Err(Error::LengthMismatch { what: "tags", left: pred.len(), right: gold.len() });
        }
        match mode {
            F1Mode::Tag => {
                tp += pred.iter().zip(gold).filter(|&(p, g)| *p != 0 && p == g).count();
                np += pred.iter().filter(|&&p| p != 0).count();
                ng += gold.iter().filter(|&&g| g != 0).count();
            }
            F1Mode::Span => {
                let p: HashSet<_> = bio_decode(pred, set).into_iter().collect();
                let g: HashSet<_> = bio_decode(gold, set).into_iter().collect();
                tp += p.intersection(&g).count();
                np += p.len();
                ng += g.len();
            }
        }
    }
    Ok(Prf::from_counts(tp, np, ng))
}

/// Character-level edit distance (insert, delete, substitute; unit costs).
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

/// `1 - dist / max(len)` on trimmed, lowercased strings; 1 for two empty strings.
pub fn normalized_similarity(a: &str, b: &str) -> f64 {
    let (a, b) = (normalize(a), normalize(b));
    let len = a.chars().count().max(b.chars().count());
    if len == 0 {
        return 1.0;
    }
    1.0 - levenshtein(&a, &b) as f64 / len as f64
}

/// Best thresholded similarity of `pred` against any gold answer.
pub fn anls(pred: &str, golds: &[String]) -> Result<f64> {
    if golds.is_empty() {
        return Err(Error::EmptyGold);
    }
    Ok(golds
        .iter()
        .map(|g| normalized_similarity(pred, g))
        .map(|s| if s >= ANLS_THRESHOLD { s } else { 0.0 })
        .fold(0.0, f64::max))
}

/// Mean per-example ANLS.
pub fn dataset_anls(examples: &[(String, Vec<String>)]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (pred, golds) in examples {
        total += anls(pred, golds)?;
    }
    Ok(total / examples.len() as f64)
}
