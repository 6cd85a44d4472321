use rand::Rng as _;

use super::PretrainConfig;
use crate::doc_model::{local_positions, special, TokenizedDocument, BYTE_SYMBOLS};
use crate::encoder::{EncoderConfig, ModelInput};
use crate::error::Result;
use crate::rng::Rng;

/// A token whose global position is hidden, with its 1-based position
/// inside its text segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LopTarget {
    pub token: usize,
    pub local_position: usize,
    /// Index into `TokenizedDocument::token_segments`.
    pub segment: usize,
}

/// What an MLM-selected token is shown as.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Replacement {
    Mask,
    /// Uniform draw in `[0, 1)` mapped onto the non-special vocabulary.
    Random(f64),
    Keep,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaskPlan {
    /// Source word indices, in reading order.
    pub mlm_masked_words: Vec<usize>,
    /// Indices into `token_segments`.
    pub lop_masked_segments: Vec<usize>,
    /// `(token index, original token id)`.
    pub mlm_targets: Vec<(usize, usize)>,
    pub lop_targets: Vec<LopTarget>,
    /// One entry per MLM target.
    pub replacements: Vec<Replacement>,
}

impl MaskPlan {
    pub fn is_empty(&self) -> bool {
        self.mlm_targets.is_empty() && self.lop_targets.is_empty()
    }

    /// Model input with both masks superposed: selected tokens replaced and
    /// selected global positions pointed at the reserved masked row.
    pub fn apply(&self, doc: &TokenizedDocument, enc: &EncoderConfig) -> ModelInput {
        let mut input = ModelInput::from_document(doc);
        for (&(t, _), r) in self.mlm_targets.iter().zip(&self.replacements) {
            input.tokens[t] = match *r {
                Replacement::Mask => special::MASK,
                Replacement::Keep => doc.tokens[t],
                Replacement::Random(u) => {
                    let pool = enc.vocab_size.saturating_sub(special::COUNT).max(1);
                    let idx = ((u * pool as f64) as usize).min(pool - 1);
                    if idx < BYTE_SYMBOLS {
                        idx
                    } else {
                        idx + special::COUNT
                    }
                }
            };
        }
        for target in &self.lop_targets {
            input.positions[target.token] = enc.masked_position();
        }
        input
    }
}

/// Draws an MLM plan (each word independently with `p_mlm`, all its tokens
/// together) and then an LOP plan (each segment independently with `p_lop`,
/// all its positions together).
pub fn sample_masks(doc: &TokenizedDocument, cfg: &PretrainConfig, rng: &mut Rng) -> Result<MaskPlan> {
    let mut plan = MaskPlan::default();
    for (word, span) in doc.word_spans() {
        if rng.random::<f64>() < cfg.p_mlm {
            plan.mlm_masked_words.push(word);
            for t in span {
                plan.mlm_targets.push((t, doc.tokens[t]));
                let r = if cfg.mask_token_prob >= 1.0 {
                    Replacement::Mask
                } else {
                    let u: f64 = rng.random();
                    if u < cfg.mask_token_prob {
                        Replacement::Mask
                    } else if u < cfg.mask_token_prob + cfg.random_token_prob {
                        Replacement::Random(rng.random())
                    } else {
                        Replacement::Keep
                    }
                };
                plan.replacements.push(r);
            }
        }
    }
    for (k, seg) in doc.token_segments.iter().enumerate() {
        if rng.random::<f64>() < cfg.p_lop {
            plan.lop_masked_segments.push(k);
            let mut sorted = seg.clone();
            sorted.sort_unstable();
            for (&token, local_position) in sorted.iter().zip(local_positions(&sorted)?) {
                plan.lop_targets.push(LopTarget { token, local_position, segment: k });
            }
        }
    }
    Ok(plan)
}
