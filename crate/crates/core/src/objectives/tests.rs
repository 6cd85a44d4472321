use std::f64::consts::LN_2;

use proptest::prelude::*;

use super::*;
use crate::corpus::{generate_corpus, CorpusConfig};
use crate::doc_model::{segment_center_distance, special, tokenize, GridBox, TokenizedDocument, TokenizerModel};
use crate::encoder::{EncoderConfig, Model};
use crate::rng::{self, domain};
use crate::tensor::{Graph, Tensor};

fn docs(count: usize, seed: u64) -> Vec<TokenizedDocument> {
    let cfg = CorpusConfig { document_count: count, rng_seed: seed, segment_split_prob: 0.3, ..CorpusConfig::default() };
    let tok = TokenizerModel::bytes_only();
    generate_corpus(&cfg).unwrap().iter().map(|d| tokenize(&d.raw, &tok).unwrap()).collect()
}

fn micro_encoder() -> EncoderConfig {
    EncoderConfig {
        vocab_size: 300,
        hidden_dim: 8,
        layers: 1,
        heads: 2,
        ffn_dim: 16,
        max_seq_len: 512,
        max_local_pos: 32,
        init_std: 0.2,
        ..EncoderConfig::default()
    }
}

fn log_probs(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn zero_probabilities_give_empty_plan() {
    let cfg = PretrainConfig { p_mlm: 0.0, p_lop: 0.0, ..PretrainConfig::default() };
    let d = &docs(1, 1)[0];
    let plan = sample_masks(d, &cfg, &mut rng::stream(0, domain::MASK, 0)).unwrap();
    assert!(plan.is_empty());
    assert!(plan.mlm_masked_words.is_empty() && plan.lop_masked_segments.is_empty());
}

#[test]
fn full_mlm_masks_every_token() {
    let cfg = PretrainConfig { p_mlm: 1.0, ..PretrainConfig::default() };
    let d = &docs(1, 2)[0];
    let plan = sample_masks(d, &cfg, &mut rng::stream(0, domain::MASK, 0)).unwrap();
    assert_eq!(plan.mlm_targets.len(), d.len());
    let input = plan.apply(d, &micro_encoder());
    assert!(input.tokens.iter().all(|&t| t == special::MASK));
}

#[test]
fn masked_positions_use_reserved_row() {
    let cfg = PretrainConfig { p_mlm: 0.0, p_lop: 1.0, ..PretrainConfig::default() };
    let d = &docs(1, 3)[0];
    let enc = micro_encoder();
    let plan = sample_masks(d, &cfg, &mut rng::stream(0, domain::MASK, 0)).unwrap();
    let input = plan.apply(d, &enc);
    assert_eq!(plan.lop_targets.len(), d.len());
    assert!(input.positions.iter().all(|&p| p == enc.masked_position()));
    assert_eq!(input.tokens, d.tokens);
}

#[test]
fn lop_targets_restart_at_one_per_segment() {
    let cfg = PretrainConfig { p_mlm: 0.0, p_lop: 1.0, ..PretrainConfig::default() };
    let d = &docs(1, 4)[0];
    let plan = sample_masks(d, &cfg, &mut rng::stream(0, domain::MASK, 0)).unwrap();
    let ones = plan.lop_targets.iter().filter(|t| t.local_position == 1).count();
    assert_eq!(ones, d.token_segments.len());
    for t in &plan.lop_targets {
        let seg = &d.token_segments[t.segment];
        let first = *seg.iter().min().unwrap();
        assert_eq!(t.local_position, t.token - first + 1);
    }
}

#[test]
fn replacement_split_is_configurable() {
    let cfg = PretrainConfig { p_mlm: 1.0, mask_token_prob: 0.0, random_token_prob: 1.0, ..PretrainConfig::default() };
    let d = &docs(1, 5)[0];
    let plan = sample_masks(d, &cfg, &mut rng::stream(0, domain::MASK, 0)).unwrap();
    let input = plan.apply(d, &micro_encoder());
    assert!(input.tokens.iter().all(|&t| t < 300 && !(256..256 + special::COUNT).contains(&t)));
    let keep = PretrainConfig { mask_token_prob: 0.0, random_token_prob: 0.0, ..cfg };
    let plan = sample_masks(d, &keep, &mut rng::stream(0, domain::MASK, 0)).unwrap();
    assert_eq!(plan.apply(d, &micro_encoder()).tokens, d.tokens);
}

#[test]
fn mlm_rate_matches_probability() {
    let cfg = PretrainConfig::default();
    let corpus = docs(20, 6);
    let (mut masked, mut words) = (0usize, 0usize);
    let mut round = 0;
    while words < 100_000 {
        for (i, d) in corpus.iter().enumerate() {
            let plan = sample_masks(d, &cfg, &mut rng::stream2(1, domain::MASK, round, i as u64)).unwrap();
            masked += plan.mlm_masked_words.len();
            words += d.word_spans().len();
        }
        round += 1;
    }
    let rate = masked as f64 / words as f64;
    assert!((rate - 0.2).abs() < 0.01, "{rate}");
}

#[test]
fn mlm_loss_examples() {
    let mut g = Graph::new();
    let logits = g.input(Tensor::zeros(&[3, 7]));
    let t = mlm_loss(&mut g, logits, &[(0, 1), (1, 4), (2, 6)]).unwrap();
    assert!((t.mean_value(&g).unwrap() - 7f64.ln()).abs() < 1e-12);

    let logits = g.input(Tensor::from_rows(&[vec![0.0, 2000.0], vec![2000.0, 0.0]]).unwrap());
    let t = mlm_loss(&mut g, logits, &[(0, 1), (5, 0)]).unwrap();
    assert_eq!(t.mean_value(&g), Some(0.0));
    assert_eq!(t.correct, 2);

    let logits = g.input(log_probs(&[&[0.5, 0.5], &[0.25, 0.75]]));
    let t = mlm_loss(&mut g, logits, &[(0, 0), (1, 0)]).unwrap();
    assert!((t.mean_value(&g).unwrap() - 1.5 * LN_2).abs() < 1e-12);

    let logits = g.input(Tensor::zeros(&[0, 7]));
    let t = mlm_loss(&mut g, logits, &[]).unwrap();
    assert!(t.is_absent());
    assert_eq!(t.mean_value(&g), None);
}

#[test]
fn lop_loss_examples() {
    let target = |p| LopTarget { token: 0, local_position: p, segment: 4 };
    let mut g = Graph::new();
    let logits = g.input(Tensor::zeros(&[2, 128]));
    let t = lop_loss(&mut g, logits, &[target(1), target(77)], 128).unwrap();
    assert!((t.mean_value(&g).unwrap() - 128f64.ln()).abs() < 1e-12);

    let logits = g.input(log_probs(&[&[0.5, 0.5, 1e-300], &[0.25, 0.5, 0.25], &[0.25, 0.25, 0.5]]));
    let t = lop_loss(&mut g, logits, &[target(1), target(2), target(2)], 3).unwrap();
    assert!((t.mean_value(&g).unwrap() - 4.0 / 3.0 * LN_2).abs() < 1e-12);

    let logits = g.input(Tensor::from_rows(&[vec![-900.0, 900.0, -900.0]]).unwrap());
    let t = lop_loss(&mut g, logits, &[target(2)], 3).unwrap();
    assert_eq!(t.mean_value(&g), Some(0.0));

    let logits = g.input(Tensor::zeros(&[1, 3]));
    match lop_loss(&mut g, logits, &[target(4)], 3) {
        Err(crate::Error::LocalPositionOverflow { segment: 4, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn segment_representation_is_mean() {
    let mut g = Graph::new();
    let reps = g.input(Tensor::from_rows(&[vec![1.0, 3.0], vec![3.0, 5.0], vec![7.0, -1.0]]).unwrap());
    let v = segment_representation(&mut g, reps, &[0, 1]).unwrap();
    assert_eq!(g.value(v).data(), &[2.0, 4.0]);
    let v = segment_representation(&mut g, reps, &[2]).unwrap();
    assert_eq!(g.value(v).data(), &[7.0, -1.0]);
    assert!(segment_representation(&mut g, reps, &[]).is_err());

    let rows: Vec<Vec<f64>> = (0..4).map(|i| (0..5).map(|j| ((i * 5 + j) as f64 * 0.37).sin()).collect()).collect();
    let reps = g.input(Tensor::from_rows(&rows).unwrap());
    let v = segment_representation(&mut g, reps, &[0, 1, 2, 3]).unwrap();
    for (j, x) in g.value(v).data().iter().enumerate() {
        let mut s = 0.0;
        for r in &rows {
            s += r[j];
        }
        assert!((x - s / 4.0).abs() < 1e-15);
    }
}

fn boxes_at(centers: &[(u32, u32)]) -> (Vec<Vec<usize>>, Vec<GridBox>) {
    let boxes = centers.iter().map(|&(x, y)| GridBox([x - 10, y - 5, x + 10, y + 5])).collect();
    ((0..centers.len()).map(|i| vec![i]).collect(), boxes)
}

#[test]
fn select_pairs_examples() {
    let (segs, boxes) = boxes_at(&[(100, 100), (150, 100)]);
    let v = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
    let p = select_pairs(&segs, &boxes, &v, 120.0, 0.9).unwrap();
    assert_eq!(p.pairs, vec![(0, 1), (1, 0)]);
    assert_eq!(p.clone().one_direction().pairs, vec![(0, 1)]);

    let (segs, boxes) = boxes_at(&[(100, 100), (300, 100)]);
    assert!(select_pairs(&segs, &boxes, &v, 120.0, 0.9).unwrap().is_empty());

    // boundaries: distance exactly theta_dis, similarity exactly theta_sim
    let (segs, boxes) = boxes_at(&[(100, 100), (220, 100)]);
    assert!(select_pairs(&segs, &boxes, &v, 120.0, 0.9).unwrap().is_empty());
    let (segs, boxes) = boxes_at(&[(100, 100), (110, 100)]);
    assert!(select_pairs(&segs, &boxes, &v, 120.0, 1.0).unwrap().is_empty());
    let orth = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    assert!(select_pairs(&segs, &boxes, &orth, 120.0, 0.0).unwrap().is_empty());
    assert_eq!(select_pairs(&segs, &boxes, &orth, 120.0, -0.01).unwrap().len(), 2);
}

/// Independent oracle: every ordered pair, distance from raw member boxes,
/// cosine from its definition.
fn brute_force(segs: &[Vec<usize>], boxes: &[GridBox], v: &[Vec<f64>], td: f64, ts: f64) -> Vec<(usize, usize)> {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    };
    let mut out = Vec::new();
    for a in 0..segs.len() {
        for b in 0..segs.len() {
            if a != b
                && segment_center_distance(&segs[a], &segs[b], boxes).unwrap() < td
                && cos(&v[a], &v[b]) > ts
            {
                out.push((a, b));
            }
        }
    }
    out
}

#[test]
fn tsc_loss_examples() {
    let mut g = Graph::new();
    let reps = g.variable(Tensor::from_rows(&[vec![0.6, 0.8], vec![0.6, 0.8], vec![0.8, -0.6]]).unwrap());
    let segs = vec![vec![0], vec![1], vec![2]];
    let identity = |_: &mut Graph, x| Ok(x);
    let same = tsc_loss(&mut g, reps, &segs, &PairSet { pairs: vec![(0, 1)] }, identity).unwrap();
    assert!((same.mean_value(&g).unwrap() + 1.0).abs() < 1e-12);
    let orth = tsc_loss(&mut g, reps, &segs, &PairSet { pairs: vec![(0, 2)] }, identity).unwrap();
    assert!(orth.mean_value(&g).unwrap().abs() < 1e-12);
    assert!(tsc_loss(&mut g, reps, &segs, &PairSet::default(), identity).unwrap().is_absent());
}

#[test]
fn tsc_gradient_skips_target_path() {
    let mut g = Graph::new();
    let rows: Vec<Vec<f64>> = (0..4).map(|i| (0..3).map(|j| ((i * 3 + j) as f64).cos()).collect()).collect();
    let reps = g.variable(Tensor::from_rows(&rows).unwrap());
    let segs = vec![vec![0, 1], vec![2, 3]];
    let t = tsc_loss(&mut g, reps, &segs, &PairSet { pairs: vec![(0, 1)] }, |g, x| Ok(g.scale(x, 2.0))).unwrap();
    let grads = g.backward(t.sum.unwrap()).unwrap();
    let gr = grads.wrt(reps).unwrap();
    assert!(gr[6..].iter().all(|&x| x == 0.0));
    assert!(gr[..6].iter().any(|&x| x != 0.0));
}

#[test]
fn total_loss_examples() {
    let cfg = PretrainConfig { epochs: 3, ..PretrainConfig::default() };
    assert_eq!(total_loss(Some(1.0), Some(0.4), Some(-0.8), &cfg, 2), 1.0 + 0.2 - 0.4);
    assert_eq!(total_loss(Some(1.0), Some(0.4), Some(-0.8), &cfg, 1), 1.2);
    let zero = PretrainConfig { alpha: 0.0, gamma: 0.0, ..cfg.clone() };
    assert_eq!(total_loss(Some(1.3), Some(0.4), Some(-0.8), &zero, 2), 1.3);
    assert!(tsc_active(&cfg, 2) && !tsc_active(&cfg, 1));
    let every = PretrainConfig { tsc_final_epoch_only: false, ..cfg };
    assert!(tsc_active(&every, 0));
}

#[test]
fn invalid_pretrain_configs_are_rejected() {
    let bad = [
        PretrainConfig { p_mlm: 1.5, ..PretrainConfig::default() },
        PretrainConfig { theta_sim: 1.1, ..PretrainConfig::default() },
        PretrainConfig { alpha: -0.1, ..PretrainConfig::default() },
        PretrainConfig { batch_size: 0, ..PretrainConfig::default() },
        PretrainConfig { mask_token_prob: 0.8, random_token_prob: 0.3, ..PretrainConfig::default() },
    ];
    for cfg in bad {
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.starts_with("invalid config:"), "{err}");
    }
}

#[test]
fn zero_epochs_leave_model_unchanged() {
    let corpus = docs(2, 7);
    let mut model = Model::init(micro_encoder(), 1).unwrap();
    let before = model.params.clone();
    let cfg = PretrainConfig { epochs: 0, ..PretrainConfig::default() };
    assert!(pretrain(&mut model, &corpus, &cfg).unwrap().is_empty());
    for ((_, a), (_, b)) in before.iter().zip(model.params.iter()) {
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn pretraining_is_deterministic_and_reports_clustering_last() {
    let corpus = docs(4, 8);
    let cfg = PretrainConfig { epochs: 2, batch_size: 2, theta_sim: -1.0, theta_dis: 2000.0, ..PretrainConfig::default() };
    let run = || {
        let mut model = Model::init(micro_encoder(), 3).unwrap();
        let reports = pretrain(&mut model, &corpus, &cfg).unwrap();
        (reports, model.params.value(model.layout.embeddings.token).clone())
    };
    let (a, wa) = run();
    let (b, wb) = run();
    assert_eq!(a, b);
    assert_eq!(wa, wb);
    assert_eq!(a.len(), 2);
    assert!(a[0].tsc.is_none());
    let tsc = a[1].tsc.unwrap();
    assert!((-1.0..=1.0).contains(&tsc));
    let json = serde_json::to_value(&a[0]).unwrap();
    let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys.len(), 7);
    for k in ["epoch", "mlm", "lop", "tsc", "total", "mlm_acc", "lop_acc"] {
        assert!(keys.contains(&k));
    }
}

#[test]
fn empty_corpus_is_rejected() {
    let mut model = Model::init(micro_encoder(), 1).unwrap();
    assert!(matches!(pretrain(&mut model, &[], &PretrainConfig::default()), Err(crate::Error::EmptyCorpus)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masking_is_atomic(seed in 0u64..10_000, p_mlm in 0.0f64..1.0, p_lop in 0.0f64..1.0) {
        let corpus = docs(1, seed % 50);
        let d = &corpus[0];
        let cfg = PretrainConfig { p_mlm, p_lop, ..PretrainConfig::default() };
        let plan = sample_masks(d, &cfg, &mut rng::stream(seed, domain::MASK, 0)).unwrap();
        let masked: std::collections::HashSet<usize> = plan.mlm_targets.iter().map(|&(t, _)| t).collect();
        for (_, span) in d.word_spans() {
            let hit = span.clone().filter(|t| masked.contains(t)).count();
            prop_assert!(hit == 0 || hit == span.len());
        }
        let hidden: std::collections::HashSet<usize> = plan.lop_targets.iter().map(|t| t.token).collect();
        for seg in &d.token_segments {
            let hit = seg.iter().filter(|t| hidden.contains(t)).count();
            prop_assert!(hit == 0 || hit == seg.len());
        }
        prop_assert_eq!(masked.len(), plan.mlm_targets.len());
    }

    #[test]
    fn select_pairs_matches_exhaustive_oracle(
        layout in prop::collection::vec(((20u32..980, 10u32..990), prop::collection::vec(-1.0f64..1.0, 3)), 1..=12),
        theta_dis in 0.0f64..600.0,
        theta_sim in -1.0f64..1.0,
    ) {
        let centers: Vec<(u32, u32)> = layout.iter().map(|(c, _)| *c).collect();
        let (segs, boxes) = boxes_at(&centers);
        let pooled: Vec<Vec<f64>> = layout.iter().map(|(_, v)| v.clone()).collect();
        let got = select_pairs(&segs, &boxes, &pooled, theta_dis, theta_sim).unwrap();
        prop_assert_eq!(got.pairs, brute_force(&segs, &boxes, &pooled, theta_dis, theta_sim));
    }
}
