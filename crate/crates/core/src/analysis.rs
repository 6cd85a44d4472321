//! Evaluation-side views of learned representations: pooled segment
//! vectors and how they cluster by annotated semantic group.

use serde::{Deserialize, Serialize};

use crate::doc_model::{GroundTruth, RawDocument, TokenizedDocument};
use crate::encoder::{Model, ModelInput};
use crate::error::Result;
use crate::exec;
use crate::tensor::{cosine, Tensor};

/// Annotated group of every token segment (by its first word); `None` when
/// the word is in no group.
pub fn segment_groups(doc: &TokenizedDocument, raw: &RawDocument, truth: &GroundTruth) -> Vec<Option<usize>> {
    let group_of = truth.group_of_word(raw.len());
    doc.token_segments
        .iter()
        .map(|seg| seg.iter().min().and_then(|&t| group_of[doc.word_of_token[t]]))
        .collect()
}

/// Token representations (unmasked, dropout off) and their per-segment means.
pub fn segment_vectors(model: &Model, doc: &TokenizedDocument) -> Result<(Tensor, Vec<Vec<f64>>)> {
    let reps = model.representations(&ModelInput::from_document(doc))?;
    let pooled = crate::objectives::pooled_rows(reps.data(), model.config.hidden_dim, &doc.token_segments);
    Ok((reps, pooled))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSimilarity {
    /// Mean cosine over unordered segment pairs of the same group.
    pub same_group: f64,
    /// Mean cosine over unordered segment pairs of different groups.
    pub different_group: f64,
    pub same_pairs: usize,
    pub different_pairs: usize,
}

impl GroupSimilarity {
    pub fn margin(&self) -> f64 {
        self.same_group - self.different_group
    }
}

/// Within-document segment-pair similarity split by group membership.
/// `docs` pairs each tokenized document with [`segment_groups`].
pub fn group_similarity(model: &Model, docs: &[(TokenizedDocument, Vec<Option<usize>>)]) -> Result<GroupSimilarity> {
    let parts = exec::map_indexed(docs, |_, (doc, groups)| -> Result<[f64; 4]> {
        let (_, pooled) = segment_vectors(model, doc)?;
        let mut acc = [0.0; 4];
        for a in 0..pooled.len() {
            for b in a + 1..pooled.len() {
                let (Some(ga), Some(gb)) = (groups[a], groups[b]) else { continue };
                let s = cosine(&pooled[a], &pooled[b]);
                let k = if ga == gb { 0 } else { 2 };
                acc[k] += s;
                acc[k + 1] += 1.0;
            }
        }
        Ok(acc)
    });
    let mut total = [0.0; 4];
    for p in parts {
        for (t, x) in total.iter_mut().zip(p?) {
            *t += x;
        }
    }
    let mean = |s: f64, n: f64| if n > 0.0 { s / n } else { 0.0 };
    Ok(GroupSimilarity {
        same_group: mean(total[0], total[1]),
        different_group: mean(total[2], total[3]),
        same_pairs: total[1] as usize,
        different_pairs: total[3] as usize,
    })
}
