use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::losses::{lop_loss, mlm_loss, select_pairs, total_loss, tsc_active, tsc_loss, Term};
use super::masking::{sample_masks, MaskPlan};
use super::PretrainConfig;
use crate::doc_model::TokenizedDocument;
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::{self, domain, Rng};
use crate::tensor::{adamw_step, argmax, Graph, OptimizerState, ParamGrads, Var};

/// Forward pass of one masked document with its loss terms.
pub struct DocumentPass<'p> {
    pub graph: Graph<'p>,
    pub reps: Var,
    pub mlm: Term,
    pub lop: Term,
    pub tsc: Term,
}

/// Runs the encoder on the masked view of `doc` and builds the enabled loss
/// terms. Local-order targets are only scored when `alpha > 0`; clustering
/// pairs are gated on this same pass's pooled representations.
pub fn forward_document<'p>(
    model: &'p Model,
    doc: &TokenizedDocument,
    plan: &MaskPlan,
    cfg: &PretrainConfig,
    with_tsc: bool,
    dropout: Option<&mut Rng>,
) -> Result<DocumentPass<'p>> {
    let input = plan.apply(doc, &model.config);
    let mut g = model.graph();
    let reps = model.forward(&mut g, &input, dropout)?;

    let mut mlm = Term::default();
    if !plan.mlm_targets.is_empty() {
        let rows: Vec<usize> = plan.mlm_targets.iter().map(|&(t, _)| t).collect();
        let logits = model.mlm_logits(&mut g, reps, &rows)?;
        mlm = mlm_loss(&mut g, logits, &plan.mlm_targets)?;
    }

    let mut lop = Term::default();
    if cfg.alpha > 0.0 && !plan.lop_targets.is_empty() {
        let rows: Vec<usize> = plan.lop_targets.iter().map(|t| t.token).collect();
        let logits = model.lop_logits(&mut g, reps, &rows)?;
        lop = lop_loss(&mut g, logits, &plan.lop_targets, model.config.max_local_pos)?;
    }

    let mut tsc = Term::default();
    if with_tsc && doc.token_segments.len() > 1 {
        let pooled = pooled_rows(g.value(reps).data(), model.config.hidden_dim, &doc.token_segments);
        let mut pairs = select_pairs(&doc.token_segments, &doc.token_boxes, &pooled, cfg.theta_dis, cfg.theta_sim)?;
        if !cfg.tsc_symmetric {
            pairs = pairs.one_direction();
        }
        tsc = tsc_loss(&mut g, reps, &doc.token_segments, &pairs, |g, x| model.predict(g, x))?;
    }
    Ok(DocumentPass { graph: g, reps, mlm, lop, tsc })
}

/// Mean row of each segment, computed outside the graph.
pub fn pooled_rows(data: &[f64], d: usize, segments: &[Vec<usize>]) -> Vec<Vec<f64>> {
    segments
        .iter()
        .map(|seg| {
            let mut acc = vec![0.0; d];
            for &t in seg {
                for (a, x) in acc.iter_mut().zip(&data[t * d..(t + 1) * d]) {
                    *a += x;
                }
            }
            let n = seg.len().max(1) as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        })
        .collect()
}

/// Per-epoch training record; component means exclude batches without targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mlm: Option<f64>,
    pub lop: Option<f64>,
    pub tsc: Option<f64>,
    pub total: f64,
    pub mlm_acc: Option<f64>,
    pub lop_acc: Option<f64>,
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, v: Option<f64>) {
        if let Some(v) = v {
            self.sum += v;
            self.n += 1;
        }
    }

    fn get(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// AdamW training over a fixed corpus with linear learning-rate decay to 0.
#[derive(Debug, Clone)]
pub struct Pretrainer {
    pub config: PretrainConfig,
    optimizer: OptimizerState,
    steps_per_epoch: usize,
    total_steps: usize,
}

impl Pretrainer {
    pub fn new(model: &Model, config: PretrainConfig, corpus_len: usize) -> Result<Self> {
        config.validate()?;
        if corpus_len == 0 {
            return Err(Error::EmptyCorpus);
        }
        let steps_per_epoch = corpus_len.div_ceil(config.batch_size);
        let optimizer = OptimizerState::new(
            &model.params,
            config.lr,
            config.weight_decay,
            (config.beta1, config.beta2),
            config.eps,
        );
        Ok(Self { total_steps: steps_per_epoch * config.epochs, steps_per_epoch, config, optimizer })
    }

    pub fn steps_taken(&self) -> usize {
        self.optimizer.step as usize
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    fn lr_at(&self, step: usize) -> f64 {
        let frac = step as f64 / self.total_steps.max(1) as f64;
        self.config.lr * (1.0 - frac).max(0.0)
    }

    /// One pass over `corpus` in a seeded shuffled order.
    pub fn run_epoch(&mut self, model: &mut Model, corpus: &[TokenizedDocument], epoch: usize) -> Result<EpochReport> {
        let cfg = self.config.clone();
        let with_tsc = tsc_active(&cfg, epoch);
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut rng::stream(cfg.rng_seed, domain::SHUFFLE, epoch as u64));

        let (mut mlm, mut lop, mut tsc, mut total) = (Mean::default(), Mean::default(), Mean::default(), Mean::default());
        let (mut mlm_hits, mut mlm_n, mut lop_hits, mut lop_n) = (0, 0, 0, 0);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let step = epoch * self.steps_per_epoch + b;
            let m: &Model = model;
            let passes = exec::map_indexed(batch, |_, &i| -> Result<DocumentPass<'_>> {
                let plan = plan_for(&cfg, &corpus[i], epoch, i)?;
                let mut dropout = (m.config.dropout_prob > 0.0)
                    .then(|| rng::stream2(cfg.rng_seed, domain::DROPOUT, epoch as u64, i as u64));
                forward_document(m, &corpus[i], &plan, &cfg, with_tsc, dropout.as_mut())
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;

            let (mut j, mut mm, mut pp) = (0, 0, 0);
            let (mut sum_mlm, mut sum_lop, mut sum_tsc) = (0.0, 0.0, 0.0);
            for p in &passes {
                j += p.mlm.count;
                mm += p.lop.count;
                pp += p.tsc.count;
                sum_mlm += p.mlm.sum_value(&p.graph);
                sum_lop += p.lop.sum_value(&p.graph);
                sum_tsc += p.tsc.sum_value(&p.graph);
            }
            let batch_mlm = (j > 0).then(|| sum_mlm / j as f64);
            let batch_lop = (mm > 0).then(|| sum_lop / mm as f64);
            let batch_tsc = (pp > 0).then(|| sum_tsc / pp as f64);
            mlm.add(batch_mlm);
            lop.add(batch_lop);
            tsc.add(batch_tsc);
            if batch_mlm.is_some() || batch_lop.is_some() || batch_tsc.is_some() {
                total.add(Some(total_loss(batch_mlm, batch_lop, batch_tsc, &cfg, epoch)));
            }
            mlm_hits += passes.iter().map(|p| p.mlm.correct).sum::<usize>();
            lop_hits += passes.iter().map(|p| p.lop.correct).sum::<usize>();
            mlm_n += j;
            lop_n += mm;

            if j + mm + pp == 0 {
                continue;
            }
            let weights = (
                1.0 / j.max(1) as f64,
                cfg.alpha / mm.max(1) as f64,
                cfg.gamma / pp.max(1) as f64,
            );
            let grads = exec::map_indexed(&passes, |_, p| -> Result<ParamGrads> {
                let seeds: Vec<(Var, f64)> = [(p.mlm.sum, weights.0), (p.lop.sum, weights.1), (p.tsc.sum, weights.2)]
                    .into_iter()
                    .filter_map(|(v, w)| v.map(|v| (v, w)))
                    .collect();
                Ok(p.graph.backward_seeded(&seeds)?.into_param_grads())
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            drop(passes);

            model.params.zero_grad();
            for g in &grads {
                model.params.accumulate(g);
            }
            self.optimizer.lr = self.lr_at(step);
            adamw_step(&mut model.params, &mut self.optimizer)?;
        }
        Ok(EpochReport {
            epoch,
            mlm: mlm.get(),
            lop: lop.get(),
            tsc: tsc.get(),
            total: total.get().unwrap_or(0.0),
            mlm_acc: ratio(mlm_hits, mlm_n),
            lop_acc: ratio(lop_hits, lop_n),
        })
    }
}

/// Mask plan of document `doc_index` in `epoch`. Local-order masking is
/// skipped when its loss weight is zero, so the input is not corrupted
/// for nothing.
fn plan_for(cfg: &PretrainConfig, doc: &TokenizedDocument, epoch: usize, doc_index: usize) -> Result<MaskPlan> {
    let mut rng = rng::stream2(cfg.rng_seed, domain::MASK, epoch as u64, doc_index as u64);
    if cfg.alpha > 0.0 {
        sample_masks(doc, cfg, &mut rng)
    } else {
        let cfg = PretrainConfig { p_lop: 0.0, ..cfg.clone() };
        sample_masks(doc, &cfg, &mut rng)
    }
}

/// Trains for `cfg.epochs` epochs, returning one report per epoch.
pub fn pretrain(model: &mut Model, corpus: &[TokenizedDocument], cfg: &PretrainConfig) -> Result<Vec<EpochReport>> {
    let mut trainer = Pretrainer::new(model, cfg.clone(), corpus.len())?;
    (0..cfg.epochs).map(|e| trainer.run_epoch(model, corpus, e)).collect()
}

/// Argmax accuracy on freshly sampled masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskedAccuracy {
    pub mlm_acc: Option<f64>,
    pub lop_acc: Option<f64>,
    pub mlm_targets: usize,
    pub lop_targets: usize,
}

/// Masked-token and local-position accuracy over `rounds` independent mask
/// draws per document (dropout off).
pub fn evaluate_masked_accuracy(
    model: &Model,
    corpus: &[TokenizedDocument],
    cfg: &PretrainConfig,
    seed: u64,
    rounds: usize,
) -> Result<MaskedAccuracy> {
    let jobs: Vec<(usize, usize)> = (0..rounds).flat_map(|r| (0..corpus.len()).map(move |d| (r, d))).collect();
    let counts = exec::map_indexed(&jobs, |_, &(r, d)| -> Result<[usize; 4]> {
        let doc = &corpus[d];
        let plan = sample_masks(doc, cfg, &mut rng::stream2(seed, domain::EVAL, r as u64, d as u64))?;
        let input = plan.apply(doc, &model.config);
        let mut g = model.graph();
        let reps = model.forward(&mut g, &input, None)?;
        let mut out = [0, plan.mlm_targets.len(), 0, plan.lop_targets.len()];
        if !plan.mlm_targets.is_empty() {
            let rows: Vec<usize> = plan.mlm_targets.iter().map(|&(t, _)| t).collect();
            let logits = model.mlm_logits(&mut g, reps, &rows)?;
            let v = g.value(logits);
            out[0] = plan.mlm_targets.iter().enumerate().filter(|&(i, &(_, id))| argmax(v.row(i)) == id).count();
        }
        if !plan.lop_targets.is_empty() {
            let rows: Vec<usize> = plan.lop_targets.iter().map(|t| t.token).collect();
            let logits = model.lop_logits(&mut g, reps, &rows)?;
            let v = g.value(logits);
            out[2] = plan
                .lop_targets
                .iter()
                .enumerate()
                .filter(|&(i, t)| argmax(v.row(i)) + 1 == t.local_position)
                .count();
        }
        Ok(out)
    });
    let mut total = [0usize; 4];
    for c in counts {
        for (t, x) in total.iter_mut().zip(c?) {
            *t += x;
        }
    }
    Ok(MaskedAccuracy {
        mlm_acc: ratio(total[0], total[1]),
        lop_acc: ratio(total[2], total[3]),
        mlm_targets: total[1],
        lop_targets: total[3],
    })
}
