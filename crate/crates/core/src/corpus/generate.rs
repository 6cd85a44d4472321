use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::doc_model::{GroundTruth, PixelBox, QaSpan, RawDocument};
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::{self, domain, Rng};

/// Layout constants in page pixels.
const CHAR_W: f64 = 8.0;
const LINE_H: f64 = 18.0;
const BOX_H: f64 = 14.0;
const MARGIN: f64 = 40.0;
const ROW_GAP: f64 = 16.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub document_count: usize,
    pub vocab: Vec<String>,
    /// Inclusive range.
    pub groups_per_doc: [usize; 2],
    /// Inclusive range.
    pub words_per_group: [usize; 2],
    /// Maximum characters per line inside a group block.
    pub line_width_chars: usize,
    pub label_set: Vec<String>,
    /// Probability of an extra OCR split at each word boundary inside a line.
    pub segment_split_prob: f64,
    /// Probability that a word is drawn from its label's share of the vocabulary
    /// instead of the whole pool.
    pub label_vocab_bias: f64,
    pub page_size: [f64; 2],
    pub rng_seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            document_count: 10,
            vocab: default_vocab(96),
            groups_per_doc: [6, 10],
            words_per_group: [1, 6],
            line_width_chars: 24,
            label_set: ["question", "answer", "header", "other"].map(String::from).to_vec(),
            segment_split_prob: 0.0,
            label_vocab_bias: 0.5,
            page_size: [800.0, 1000.0],
            rng_seed: 7,
        }
    }
}

/// Deterministic pool of pronounceable pseudo-words.
pub fn default_vocab(n: usize) -> Vec<String> {
    const SYL: [&str; 12] = ["ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "da", "pe", "zu", "fi"];
    (0..n)
        .map(|i| {
            let a = SYL[i % 12];
            let b = SYL[(i / 12) % 12];
            if i % 3 == 0 {
                format!("{a}{b}{}", SYL[(i * 7 + 5) % 12])
            } else {
                format!("{a}{b}")
            }
        })
        .collect()
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab.is_empty() || self.vocab.iter().any(String::is_empty) {
            return Err(Error::InfeasibleCorpus("vocab must be non-empty with non-empty words".into()));
        }
        for (name, [lo, hi]) in [("groups_per_doc", self.groups_per_doc), ("words_per_group", self.words_per_group)] {
            if lo == 0 || lo > hi {
                return Err(Error::config(name, format!("must be a range 1 <= lo <= hi, got [{lo}, {hi}]")));
            }
        }
        if self.line_width_chars == 0 {
            return Err(Error::config("line_width_chars", "must be > 0"));
        }
        if self.label_set.is_empty() {
            return Err(Error::config("label_set", "must be non-empty"));
        }
        for (name, p) in [("segment_split_prob", self.segment_split_prob), ("label_vocab_bias", self.label_vocab_bias)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(name, "must be in [0, 1]"));
            }
        }
        let [w, h] = self.page_size;
        if !(w > 2.0 * MARGIN && h > 2.0 * MARGIN + LINE_H) {
            return Err(Error::InfeasibleCorpus(format!("page {w}x{h} is too small")));
        }
        Ok(())
    }

    fn label_index(&self, name: &str) -> Option<usize> {
        self.label_set.iter().position(|l| l == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedDocument {
    pub raw: RawDocument,
    pub truth: GroundTruth,
}

impl GeneratedDocument {
    /// Same page with text segments replaced by the annotated semantic groups.
    pub fn with_group_segments(&self) -> Self {
        let mut out = self.clone();
        out.raw.segments = self.truth.semantic_groups.clone();
        out
    }
}

pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Vec<GeneratedDocument>> {
    cfg.validate()?;
    exec::map_range(cfg.document_count, |i| generate_document(cfg, i))
        .into_iter()
        .collect()
}

struct PlacedGroup {
    label: usize,
    words: Vec<String>,
    boxes: Vec<PixelBox>,
    lines: Vec<usize>,
}

/// One document. Layout and text come from the layout stream, OCR noise from
/// a separate stream, so changing the split probability leaves the words,
/// boxes and groups untouched.
pub fn generate_document(cfg: &CorpusConfig, index: usize) -> Result<GeneratedDocument> {
    let mut r = rng::stream(cfg.rng_seed, domain::LAYOUT, index as u64);
    let n_groups = r.random_range(cfg.groups_per_doc[0]..=cfg.groups_per_doc[1]);
    let [page_w, page_h] = cfg.page_size;
    let header = cfg.label_index("header");
    let question = cfg.label_index("question");
    let answer = cfg.label_index("answer");
    let other = cfg.label_index("other");

    let mut groups: Vec<PlacedGroup> = Vec::new();
    let mut y = MARGIN + r.random_range(0.0..20.0);
    let mut placed = 0;
    let mut line_counter = 0;
    while placed < n_groups {
        let remaining = n_groups - placed;
        let row: Vec<(usize, f64)> = match (header, question, answer) {
            (Some(h), _, _) if placed == 0 && r.random_bool(0.7) => {
                vec![(h, page_w * 0.3 + r.random_range(0.0..40.0))]
            }
            (_, Some(q), Some(a)) if remaining >= 2 && r.random_bool(0.75) => vec![
                (q, MARGIN + r.random_range(0.0..20.0)),
                (a, page_w * 0.5 + r.random_range(0.0..30.0)),
            ],
            _ => {
                let label = other.unwrap_or_else(|| r.random_range(0..cfg.label_set.len()));
                vec![(label, MARGIN + r.random_range(0.0..30.0))]
            }
        };
        let mut row_groups = Vec::new();
        let mut row_lines = 0;
        for (label, x) in row {
            let count = r.random_range(cfg.words_per_group[0]..=cfg.words_per_group[1]);
            let words: Vec<String> = (0..count).map(|_| draw_word(cfg, label, &mut r)).collect();
            let g = place_block(words, label, x, y, cfg.line_width_chars, page_w, &mut line_counter);
            row_lines = row_lines.max(g.lines.last().map_or(0, |&l| l + 1 - g.lines[0]));
            row_groups.push(g);
        }
        let bottom = y + row_lines as f64 * LINE_H;
        if bottom > page_h - MARGIN {
            break;
        }
        placed += row_groups.len();
        groups.extend(row_groups);
        y = bottom + ROW_GAP + r.random_range(0.0..12.0);
    }
    if groups.is_empty() {
        return Err(Error::InfeasibleCorpus("no group fits on the page".into()));
    }

    let mut raw = RawDocument {
        words: Vec::new(),
        global_positions: Vec::new(),
        word_boxes: Vec::new(),
        segments: Vec::new(),
        page_size: cfg.page_size,
    };
    let mut truth = GroundTruth {
        semantic_groups: Vec::new(),
        entity_labels: Vec::new(),
        qa_spans: Vec::new(),
    };
    let mut line_of_word = Vec::new();
    let mut label_seen = vec![0usize; cfg.label_set.len()];
    for g in groups {
        let start = raw.words.len();
        for ((w, b), l) in g.words.into_iter().zip(g.boxes).zip(g.lines) {
            raw.global_positions.push(raw.words.len() as u64 + 1);
            raw.words.push(w);
            raw.word_boxes.push(b);
            line_of_word.push(l);
            truth.entity_labels.push(cfg.label_set[g.label].clone());
        }
        let end = raw.words.len();
        truth.semantic_groups.push((start..end).collect());
        label_seen[g.label] += 1;
        if Some(g.label) != other {
            truth.qa_spans.push(QaSpan {
                question: format!("{} {}", cfg.label_set[g.label], label_seen[g.label]),
                answer: [start, end - 1],
            });
        }
    }
    let mut noise = rng::stream(cfg.rng_seed, domain::NOISE, index as u64);
    raw.segments = fragment_groups(&truth.semantic_groups, &line_of_word, cfg.segment_split_prob, &mut noise);
    Ok(GeneratedDocument { raw, truth })
}

fn draw_word(cfg: &CorpusConfig, label: usize, r: &mut Rng) -> String {
    let n_labels = cfg.label_set.len();
    let share: Vec<&String> = cfg
        .vocab
        .iter()
        .enumerate()
        .filter(|(i, _)| i % n_labels == label)
        .map(|(_, w)| w)
        .collect();
    if !share.is_empty() && r.random_bool(cfg.label_vocab_bias) {
        share[r.random_range(0..share.len())].clone()
    } else {
        cfg.vocab[r.random_range(0..cfg.vocab.len())].clone()
    }
}

/// Flows words left-to-right, top-to-bottom inside a block starting at `(x, y)`.
fn place_block(
    words: Vec<String>,
    label: usize,
    x: f64,
    y: f64,
    line_width_chars: usize,
    page_w: f64,
    line_counter: &mut usize,
) -> PlacedGroup {
    let max_w = (line_width_chars as f64 * CHAR_W).min(page_w - x - 1.0).max(CHAR_W);
    let mut boxes = Vec::with_capacity(words.len());
    let mut lines = Vec::with_capacity(words.len());
    let mut cx = x;
    let mut line = 0;
    for w in &words {
        let ww = w.chars().count() as f64 * CHAR_W;
        if cx > x && cx + ww > x + max_w {
            line += 1;
            cx = x;
        }
        let top = y + line as f64 * LINE_H;
        let x1 = (cx + ww).min(page_w);
        boxes.push([cx.min(x1), top, x1, top + BOX_H]);
        lines.push(*line_counter + line);
        cx += ww + CHAR_W;
    }
    *line_counter += line + 1;
    PlacedGroup {
        label,
        words,
        boxes,
        lines,
    }
}

/// Splits every group at its line breaks, and additionally at each
/// in-line word boundary with probability `split_prob`. Groups must list
/// their words in reading order.
pub fn fragment_groups(groups: &[Vec<usize>], line_of_word: &[usize], split_prob: f64, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut segments = Vec::new();
    for g in groups {
        let mut current: Vec<usize> = Vec::new();
        for &w in g {
            if let Some(&prev) = current.last() {
                let new_line = line_of_word[prev] != line_of_word[w];
                if new_line || rng.random_bool(split_prob) {
                    segments.push(std::mem::take(&mut current));
                }
            }
            current.push(w);
        }
        if !current.is_empty() {
            segments.push(current);
        }
    }
    segments
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let cfg = CorpusConfig::default();
        let a = serde_json::to_string(&generate_corpus(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_corpus(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn documents_satisfy_contract() {
        let cfg = CorpusConfig {
            document_count: 30,
            segment_split_prob: 0.3,
            ..Default::default()
        };
        for d in generate_corpus(&cfg).unwrap() {
            d.raw.validate().unwrap();
            d.truth.validate(d.raw.len()).unwrap();
            let group_of = d.truth.group_of_word(d.raw.len());
            for s in &d.raw.segments {
                let g = group_of[s[0]];
                assert!(g.is_some() && s.iter().all(|&w| group_of[w] == g));
            }
        }
    }

    #[test]
    fn two_words_per_line_gives_two_segments() {
        // 4-char words are 32px wide with an 8px gap: 9 chars fit two words, not three.
        let cfg = CorpusConfig {
            vocab: vec!["abcd".into(), "wxyz".into()],
            words_per_group: [4, 4],
            line_width_chars: 9,
            document_count: 5,
            ..Default::default()
        };
        for d in generate_corpus(&cfg).unwrap() {
            assert_eq!(d.raw.segments.len(), 2 * d.truth.semantic_groups.len());
            assert!(d.raw.segments.iter().all(|s| s.len() == 2));
        }
    }

    #[test]
    fn no_noise_and_wide_lines_align_segments_with_groups() {
        let cfg = CorpusConfig {
            line_width_chars: 60,
            words_per_group: [1, 4],
            document_count: 5,
            ..Default::default()
        };
        for d in generate_corpus(&cfg).unwrap() {
            assert_eq!(d.raw.segments, d.truth.semantic_groups);
        }
    }

    #[test]
    fn noise_does_not_move_words() {
        let base = CorpusConfig::default();
        let noisy = CorpusConfig {
            segment_split_prob: 0.5,
            ..base.clone()
        };
        for (a, b) in generate_corpus(&base).unwrap().iter().zip(generate_corpus(&noisy).unwrap().iter()) {
            assert_eq!(a.raw.words, b.raw.words);
            assert_eq!(a.raw.word_boxes, b.raw.word_boxes);
            assert_eq!(a.truth, b.truth);
            assert!(b.raw.segments.len() >= a.raw.segments.len());
        }
    }

    #[test]
    fn fragment_split_probability_extremes() {
        let mut r = rng::stream(1, 2, 3);
        assert_eq!(fragment_groups(&[vec![0, 1, 2]], &[0, 0, 0], 0.0, &mut r), vec![vec![0, 1, 2]]);
        assert_eq!(
            fragment_groups(&[vec![0, 1, 2]], &[0, 0, 0], 1.0, &mut r),
            vec![vec![0], vec![1], vec![2]]
        );
    }

    #[test]
    fn fragment_split_rate_is_binomial() {
        let mut r = rng::stream(99, 0, 0);
        let groups: Vec<Vec<usize>> = (0..1000).map(|i| vec![2 * i, 2 * i + 1]).collect();
        let lines: Vec<usize> = (0..2000).map(|w| w / 2).collect();
        let segs = fragment_groups(&groups, &lines, 0.5, &mut r);
        let split = segs.len() - 1000;
        // sd = sqrt(1000 * 0.25) ~ 15.8; ±0.05 is > 3 sd
        assert!((split as f64 / 1000.0 - 0.5).abs() <= 0.05, "{split}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = CorpusConfig {
            vocab: vec![],
            ..Default::default()
        };
        assert!(matches!(generate_corpus(&bad), Err(Error::InfeasibleCorpus(_))));
        let bad = CorpusConfig {
            segment_split_prob: 1.5,
            ..Default::default()
        };
        assert!(generate_corpus(&bad).unwrap_err().to_string().contains("segment_split_prob"));
    }
}
