//! Pre-training objectives: word-level masked language modeling, local
//! order prediction within text segments, and segment clustering with a
//! predictor and stop-gradient; plus the scheduled total loss and the
//! training loop.

mod losses;
mod masking;
mod train;
#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use losses::{
    lop_loss, mlm_loss, segment_representation, select_pairs, total_loss, tsc_active, tsc_loss, PairSet, Term,
};
pub use masking::{sample_masks, LopTarget, MaskPlan, Replacement};
pub use train::{
    evaluate_masked_accuracy, forward_document, pooled_rows, pretrain, DocumentPass, EpochReport, MaskedAccuracy, Pretrainer,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    /// Per-word masking probability for MLM.
    pub p_mlm: f64,
    /// Per-segment probability of hiding all global positions.
    pub p_lop: f64,
    /// Segment-center distance gate, in normalized grid units (strict `<`).
    pub theta_dis: f64,
    /// Pooled-representation cosine gate (strict `>`).
    pub theta_sim: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub tsc_final_epoch_only: bool,
    /// Use both directions of every gated pair; otherwise only `k < k'`.
    pub tsc_symmetric: bool,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Of the MLM-selected tokens, the fraction shown as `[mask]`.
    pub mask_token_prob: f64,
    /// Of the MLM-selected tokens, the fraction shown as a random token;
    /// the remainder keeps the original token.
    pub random_token_prob: f64,
    pub rng_seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            p_mlm: 0.2,
            p_lop: 0.3,
            theta_dis: 120.0,
            theta_sim: 0.9,
            alpha: 0.5,
            gamma: 0.5,
            epochs: 10,
            tsc_final_epoch_only: true,
            tsc_symmetric: true,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            mask_token_prob: 1.0,
            random_token_prob: 0.0,
            rng_seed: 7,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |field: &'static str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(field, "must be in [0, 1]"))
            }
        };
        unit("p_mlm", self.p_mlm)?;
        unit("p_lop", self.p_lop)?;
        unit("mask_token_prob", self.mask_token_prob)?;
        unit("random_token_prob", self.random_token_prob)?;
        if self.mask_token_prob + self.random_token_prob > 1.0 {
            return Err(Error::config("random_token_prob", "must be <= 1 - mask_token_prob"));
        }
        if !(-1.0..=1.0).contains(&self.theta_sim) {
            return Err(Error::config("theta_sim", "must be in [-1, 1]"));
        }
        if self.theta_dis.is_nan() {
            return Err(Error::config("theta_dis", "must be a number"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", "must be finite and >= 0"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("gamma", "must be finite and >= 0"));
        }
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
