use proptest::prelude::*;

use super::*;
use crate::corpus::{generate_corpus, CorpusConfig};
use crate::doc_model::{tokenize, train_bpe, TokenizerModel};
use crate::encoder::{EncoderConfig, Model};
use crate::rng::{self, domain};
use rand::Rng as _;

fn labels() -> BioLabelSet {
    BioLabelSet::new(&["question", "answer", "header", "other"])
}

#[test]
fn tag_inventory() {
    let set = labels();
    assert_eq!(set.tag_count(), 7);
    assert_eq!(set.tag_names(), ["O", "B-question", "I-question", "B-answer", "I-answer", "B-header", "I-header"]);
}

#[test]
fn bio_encode_examples() {
    let set = labels();
    let q = set.begin(0);
    let t = bio_encode(&["question"; 3], &[vec![0, 1, 2]], &set).unwrap();
    assert_eq!(t, [q, q + 1, q + 1]);
    let t = bio_encode(&["other"; 4], &[vec![0, 1], vec![2, 3]], &set).unwrap();
    assert_eq!(t, [0; 4]);
    let t = bio_encode(&["question", "answer", "question", "answer"], &[vec![0], vec![1], vec![2], vec![3]], &set).unwrap();
    assert_eq!(t, [set.begin(0), set.begin(1), set.begin(0), set.begin(1)]);
    match bio_encode(&["nope"], &[vec![0]], &set) {
        Err(crate::Error::UnknownLabel { valid, .. }) => assert!(valid.contains(&"question".to_string())),
        other => panic!("{other:?}"),
    }
}

#[test]
fn bio_decode_examples() {
    let set = labels();
    let (b, i) = (set.begin(0), set.inside(0));
    assert_eq!(bio_decode(&[b, i, 0], &set), [EntitySpan { start: 0, end: 1, class: 0 }]);
    assert_eq!(bio_decode(&[i], &set), [EntitySpan { start: 0, end: 0, class: 0 }]);
    // I of another class after an open span starts a new span
    assert_eq!(
        bio_decode(&[b, set.inside(1)], &set),
        [EntitySpan { start: 0, end: 0, class: 0 }, EntitySpan { start: 1, end: 1, class: 1 }]
    );
    assert_eq!(
        bio_decode(&[b, b], &set),
        [EntitySpan { start: 0, end: 0, class: 0 }, EntitySpan { start: 1, end: 1, class: 0 }]
    );
}

#[test]
fn word_f1_examples() {
    let p = word_f1(&[1, 2, 0, 3], &[1, 2, 0, 3]).unwrap();
    assert_eq!(p.f1, 1.0);
    let p = word_f1(&[0, 0, 0], &[1, 2, 2]).unwrap();
    assert_eq!((p.recall, p.f1), (0.0, 0.0));
    // 3 gold non-O, 2 right, 1 missed, 1 spurious elsewhere
    let p = word_f1(&[1, 2, 0, 5], &[1, 2, 2, 0]).unwrap();
    assert!((p.precision - 2.0 / 3.0).abs() < 1e-15);
    assert!((p.recall - 2.0 / 3.0).abs() < 1e-15);
    assert!((p.f1 - 2.0 / 3.0).abs() < 1e-15);
    assert!(word_f1(&[0], &[0, 1]).is_err());
}

#[test]
fn span_f1_scores_whole_entities() {
    let set = labels();
    let gold = [1, 2, 0, 3];
    let pred = [1, 0, 0, 3];
    assert_eq!(word_f1(&pred, &gold).unwrap().recall, 2.0 / 3.0);
    let p = span_f1(&pred, &gold, &set).unwrap();
    assert_eq!((p.precision, p.recall), (0.5, 0.5));
}

/// Full-matrix edit distance, written independently of the two-row version.
fn edit_oracle(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
        }
    }
    d[a.len()][b.len()]
}

#[test]
fn levenshtein_matches_oracle_on_random_pairs() {
    let mut r = rng::stream(3, domain::EVAL, 0);
    let alphabet: Vec<char> = "abcdé ".chars().collect();
    let word = |r: &mut crate::rng::Rng| -> String {
        let n = r.random_range(0..12);
        (0..n).map(|_| alphabet[r.random_range(0..alphabet.len())]).collect()
    };
    for _ in 0..1000 {
        let (a, b) = (word(&mut r), word(&mut r));
        assert_eq!(levenshtein(&a, &b), edit_oracle(&a, &b), "{a:?} {b:?}");
    }
}

#[test]
fn anls_examples() {
    assert_eq!(anls("Total", &["total ".into()]).unwrap(), 1.0);
    assert!((anls("abc", &["abd".into()]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    // distance 3 over length 5: NLS 0.4 falls under the threshold
    assert_eq!(edit_oracle("abcde", "abxyz"), 3);
    assert_eq!(anls("abcde", &["abxyz".into()]).unwrap(), 0.0);
    assert_eq!(anls("abcde", &["abxyz".into(), "abcdf".into()]).unwrap(), 0.8);
    assert!(matches!(anls("x", &[]), Err(crate::Error::EmptyGold)));
    assert_eq!(dataset_anls(&[("a".into(), vec!["a".into()]), ("b".into(), vec!["zzzz".into()])]).unwrap(), 0.5);
}

#[test]
fn best_span_examples() {
    let mut start = vec![0.0; 8];
    let mut end = vec![0.0; 8];
    start[3] = 5.0;
    end[5] = 5.0;
    assert_eq!(best_span(&start, &end, 30).unwrap(), [3, 5]);

    // end peaks (0, 1) precede the start peak (2); only (2, 2) combines both well
    let start = [0.0, 0.0, 3.0, 0.0];
    let end = [4.0, 4.0, 3.0, 0.0];
    assert_eq!(best_span(&start, &end, 30).unwrap(), [2, 2]);
    assert!(matches!(best_span(&[], &[], 30), Err(crate::Error::NoValidSpan)));
}

struct Fixture {
    tok: TokenizerModel,
    docs: Vec<crate::corpus::GeneratedDocument>,
}

fn fixture(count: usize, seed: u64) -> Fixture {
    let cfg = CorpusConfig { document_count: count, rng_seed: seed, ..CorpusConfig::default() };
    let docs = generate_corpus(&cfg).unwrap();
    let raws: Vec<_> = docs.iter().map(|d| d.raw.clone()).collect();
    Fixture { tok: train_bpe(&raws, 256).unwrap(), docs }
}

fn encoder_for(tok: &TokenizerModel) -> EncoderConfig {
    EncoderConfig { vocab_size: tok.vocab_size(), hidden_dim: 32, heads: 2, ffn_dim: 64, ..EncoderConfig::default() }
}

#[test]
fn zero_head_predicts_outside_everywhere() {
    let f = fixture(2, 1);
    let model = Model::init(encoder_for(&f.tok), 1).unwrap();
    let mut sec = SecModel::new(model, labels(), 1).unwrap();
    for id in [sec.head.weight, sec.head.bias] {
        sec.model.params.get_mut(id).value.data_mut().fill(0.0);
    }
    let doc = tokenize(&f.docs[0].raw, &f.tok).unwrap();
    assert!(sec.predict(&doc).unwrap().iter().all(|&(_, t)| t == 0));
}

#[test]
fn word_predictions_follow_joint_permutation() {
    let f = fixture(1, 2);
    let sec = SecModel::new(Model::init(encoder_for(&f.tok), 2).unwrap(), labels(), 2).unwrap();
    let raw = &f.docs[0].raw;
    let doc = tokenize(raw, &f.tok).unwrap();
    // reverse the word list while keeping each word's position and box
    let n = raw.len();
    let mut rev = raw.clone();
    rev.words.reverse();
    rev.global_positions.reverse();
    rev.word_boxes.reverse();
    rev.segments = raw.segments.iter().map(|s| s.iter().map(|&w| n - 1 - w).collect()).collect();
    let rdoc = tokenize(&rev, &f.tok).unwrap();
    let a = sec.predict(&doc).unwrap();
    let b = sec.predict(&rdoc).unwrap();
    let remapped: Vec<(usize, usize)> = b.iter().map(|&(w, t)| (n - 1 - w, t)).collect();
    assert_eq!(a, remapped);
}

#[test]
fn sec_overfits_a_few_documents() {
    let f = fixture(5, 3);
    let set = labels();
    let enc = encoder_for(&f.tok);
    let examples: Vec<SecExample> =
        f.docs.iter().map(|d| sec_example(&d.raw, &d.truth, &f.tok, &set, enc.max_seq_len).unwrap()).collect();
    let mut sec = SecModel::new(Model::init(enc, 3).unwrap(), set, 3).unwrap();
    let cfg = FinetuneConfig { epochs: 60, batch_size: 1, lr: 3e-3, ..FinetuneConfig::default() };
    let losses = finetune(&mut sec, &examples, &cfg).unwrap();
    assert!(losses.last().unwrap() < &losses[0]);
    let (mut right, mut total) = (0, 0);
    for ex in &examples {
        let pred = sec.predict_tags(&ex.doc, ex.tags.len()).unwrap();
        right += pred.iter().zip(&ex.tags).filter(|(p, g)| p == g).count();
        total += ex.tags.len();
    }
    let acc = right as f64 / total as f64;
    assert!(acc >= 0.99, "word accuracy {acc}");
    let (report, _) = evaluate_sec(&sec, &examples, F1Mode::Tag).unwrap();
    assert_eq!(report.task, "sec");
    assert!(report.f1 >= 0.98);
}

#[test]
fn qa_overfits_ten_questions() {
    let f = fixture(4, 4);
    let enc = encoder_for(&f.tok);
    let mut examples = Vec::new();
    for d in &f.docs {
        examples.extend(qa_examples(&d.raw, &d.truth, &f.tok, &enc).unwrap());
    }
    examples.truncate(10);
    assert_eq!(examples.len(), 10);
    for ex in &examples {
        assert_eq!(ex.input.tokens[0], crate::doc_model::special::CLS);
        assert!(ex.input.tokens.contains(&crate::doc_model::special::SEP));
    }
    let mut qa = QaModel::new(Model::init(enc, 4).unwrap(), 4).unwrap();
    let cfg = FinetuneConfig { epochs: 300, batch_size: 2, lr: 3e-3, ..FinetuneConfig::default() };
    finetune(&mut qa, &examples, &cfg).unwrap();
    let (report, preds) = evaluate_qa(&qa, &examples, cfg.span_cap).unwrap();
    assert_eq!(report.exact_match, 1.0, "{preds:?}");
    assert_eq!(report.anls, 1.0);
    for p in preds {
        assert!(p.span[0] <= p.span[1] && p.span[1] - p.span[0] <= cfg.span_cap);
    }
}

#[test]
fn qa_rejects_answers_cut_by_truncation() {
    let f = fixture(1, 5);
    let raw = &f.docs[0].raw;
    let doc = tokenize(raw, &f.tok).unwrap();
    let enc = EncoderConfig { max_seq_len: 8, ..encoder_for(&f.tok) };
    let last = raw.len() - 1;
    assert!(QaExample::assemble("where", &doc, &raw.words, Some([last, last]), &f.tok, &enc).is_err());
}

fn partition() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    // run lengths and a label index per run (3 = other)
    prop::collection::vec((1usize..5, 0usize..4), 1..10).prop_map(|runs| {
        let sizes = runs.iter().map(|r| r.0).collect();
        let classes = runs.iter().map(|r| r.1).collect();
        (sizes, classes)
    })
}

proptest! {
    #[test]
    fn bio_round_trip((sizes, classes) in partition()) {
        let set = labels();
        let names = ["question", "answer", "header", "other"];
        let mut groups = Vec::new();
        let mut word_labels = Vec::new();
        let mut next = 0;
        for (&n, &c) in sizes.iter().zip(&classes) {
            groups.push((next..next + n).collect::<Vec<_>>());
            word_labels.extend(std::iter::repeat_n(names[c], n));
            next += n;
        }
        let tags = bio_encode(&word_labels, &groups, &set).unwrap();
        let spans = bio_decode(&tags, &set);
        let expected: Vec<EntitySpan> = groups
            .iter()
            .zip(&classes)
            .filter(|(_, &c)| c != 3)
            .map(|(g, &c)| EntitySpan { start: g[0], end: *g.last().unwrap(), class: c })
            .collect();
        prop_assert_eq!(spans, expected);
    }

    #[test]
    fn word_f1_is_symmetric(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..40)) {
        let (p, g): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let a = word_f1(&p, &g).unwrap();
        let b = word_f1(&g, &p).unwrap();
        prop_assert_eq!(a.precision, b.recall);
        prop_assert_eq!(a.recall, b.precision);
        prop_assert!((a.f1 - b.f1).abs() < 1e-15);
    }

    #[test]
    fn anls_bounds_and_order(pred in "[a-c ]{0,6}", golds in prop::collection::vec("[a-cA-C ]{0,6}", 1..5)) {
        let s = anls(&pred, &golds).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        let mut rev = golds.clone();
        rev.reverse();
        prop_assert_eq!(s, anls(&pred, &rev).unwrap());
        let exact = golds.iter().any(|g| g.trim().to_lowercase() == pred.trim().to_lowercase());
        prop_assert_eq!(s == 1.0, exact);
    }

    #[test]
    fn best_span_respects_cap(scores in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40), cap in 0usize..10) {
        let (s, e): (Vec<f64>, Vec<f64>) = scores.into_iter().unzip();
        let [a, b] = best_span(&s, &e, cap).unwrap();
        prop_assert!(a <= b && b - a <= cap);
        for i in 0..s.len() {
            for j in i..s.len().min(i + cap + 1) {
                prop_assert!(s[i] + e[j] <= s[a] + e[b]);
            }
        }
    }
}
