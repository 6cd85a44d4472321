use rand::seq::SliceRandom;

use super::FinetuneConfig;
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::exec;
use crate::objectives::Term;
use crate::rng::{self, domain, Rng};
use crate::tensor::{adamw_step, Graph, OptimizerState, ParamGrads};

/// A task head over the encoder that can score one training example.
pub trait TaskModel: Sync {
    type Example: Sync;

    fn encoder(&self) -> &Model;

    fn encoder_mut(&mut self) -> &mut Model;

    /// Summed loss over the example's targets, on a graph over the encoder's params.
    fn example_loss<'p>(&'p self, example: &Self::Example, dropout: Option<&mut Rng>) -> Result<(Graph<'p>, Term)>;
}

/// Trains every parameter with AdamW and linear learning-rate decay;
/// returns the mean per-target loss of each epoch.
pub fn finetune<T: TaskModel>(model: &mut T, examples: &[T::Example], cfg: &FinetuneConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let steps_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let total_steps = (steps_per_epoch * cfg.epochs).max(1);
    let mut opt = OptimizerState::new(
        &model.encoder().params,
        cfg.lr,
        cfg.weight_decay,
        (cfg.beta1, cfg.beta2),
        cfg.eps,
    );
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, domain::FINETUNE, epoch as u64));
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let m: &T = model;
            let dropout_on = m.encoder().config.dropout_prob > 0.0;
            let passes = exec::map_indexed(batch, |_, &i| {
                let mut r = dropout_on.then(|| rng::stream2(cfg.seed, domain::DROPOUT, epoch as u64, i as u64));
                m.example_loss(&examples[i], r.as_mut())
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let count: usize = passes.iter().map(|(_, t)| t.count).sum();
            loss_sum += passes.iter().map(|(g, t)| t.sum_value(g)).sum::<f64>();
            loss_n += count;
            if count == 0 {
                continue;
            }
            let w = 1.0 / count as f64;
            let grads = exec::map_indexed(&passes, |_, (g, t)| -> Result<ParamGrads> {
                match t.sum {
                    Some(s) => Ok(g.backward_seeded(&[(s, w)])?.into_param_grads()),
                    None => Ok(ParamGrads::default()),
                }
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            drop(passes);
            let params = &mut model.encoder_mut().params;
            params.zero_grad();
            for g in &grads {
                params.accumulate(g);
            }
            let step = epoch * steps_per_epoch + b;
            opt.lr = cfg.lr * (1.0 - step as f64 / total_steps as f64);
            adamw_step(params, &mut opt)?;
        }
        history.push(if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 });
    }
    Ok(history)
}
