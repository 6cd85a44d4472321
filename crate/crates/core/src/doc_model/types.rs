use serde::{Deserialize, Serialize};

use super::geometry::GridBox;
use crate::error::{Error, Result};

/// Box in page pixel units: `[x0, y0, x1, y1]`.
pub type PixelBox = [f64; 4];

/// OCR-level view of one page: words, their global reading-order
/// positions, word-wise boxes and text segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub words: Vec<String>,
    #[serde(rename = "positions")]
    pub global_positions: Vec<u64>,
    #[serde(rename = "boxes")]
    pub word_boxes: Vec<PixelBox>,
    pub segments: Vec<Vec<usize>>,
    #[serde(rename = "page")]
    pub page_size: [f64; 2],
}

impl RawDocument {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Word indices sorted by global position.
    pub fn reading_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.words.len()).collect();
        order.sort_by_key(|&i| self.global_positions[i]);
        order
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.words.len();
        if self.global_positions.len() != l || self.word_boxes.len() != l {
            return Err(Error::InvalidDocument(format!(
                "{} words, {} positions, {} boxes",
                l,
                self.global_positions.len(),
                self.word_boxes.len()
            )));
        }
        let [w, h] = self.page_size;
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidBox(format!("page size {w}x{h}")));
        }
        let mut positions = self.global_positions.clone();
        positions.sort_unstable();
        if positions.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::InvalidDocument("duplicate global positions".into()));
        }
        for (i, b) in self.word_boxes.iter().enumerate() {
            let [x0, y0, x1, y1] = *b;
            let ok = x0 <= x1 && y0 <= y1 && x0 >= 0.0 && y0 >= 0.0 && x1 <= w && y1 <= h;
            if !ok {
                return Err(Error::InvalidBox(format!("word {i}: {b:?} on page {w}x{h}")));
            }
        }
        let rank = ranks(&self.reading_order());
        let mut owner = vec![None; l];
        for (k, seg) in self.segments.iter().enumerate() {
            if seg.is_empty() {
                return Err(Error::EmptySegment);
            }
            for &i in seg {
                if i >= l {
                    return Err(Error::InvalidDocument(format!("segment {k} references word {i}")));
                }
                if owner[i].replace(k).is_some() {
                    return Err(Error::InvalidDocument(format!("word {i} is in two segments")));
                }
            }
            let mut r: Vec<usize> = seg.iter().map(|&i| rank[i]).collect();
            r.sort_unstable();
            if r.windows(2).any(|p| p[1] != p[0] + 1) {
                return Err(Error::NonContiguousSegment(seg.clone()));
            }
        }
        if let Some(i) = owner.iter().position(Option::is_none) {
            return Err(Error::InvalidDocument(format!("word {i} belongs to no segment")));
        }
        Ok(())
    }
}

/// `ranks(order)[word] == position of word in order`
pub(crate) fn ranks(order: &[usize]) -> Vec<usize> {
    let mut r = vec![0; order.len()];
    for (pos, &i) in order.iter().enumerate() {
        r[i] = pos;
    }
    r
}

/// An extractive question with its answer as an inclusive word range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaSpan {
    pub question: String,
    pub answer: [usize; 2],
}

/// Annotation used for labels and evaluation only. No model-input builder
/// accepts this type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "groups")]
    pub semantic_groups: Vec<Vec<usize>>,
    #[serde(rename = "labels")]
    pub entity_labels: Vec<String>,
    #[serde(rename = "qa", default)]
    pub qa_spans: Vec<QaSpan>,
}

impl GroundTruth {
    pub fn validate(&self, word_count: usize) -> Result<()> {
        if self.entity_labels.len() != word_count {
            return Err(Error::LengthMismatch {
                what: "entity labels",
                left: self.entity_labels.len(),
                right: word_count,
            });
        }
        let mut seen = vec![false; word_count];
        for g in &self.semantic_groups {
            for &i in g {
                if i >= word_count || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidDocument(format!(
                        "semantic groups do not partition words (word {i})"
                    )));
                }
            }
        }
        for qa in &self.qa_spans {
            let [s, e] = qa.answer;
            if s > e || e >= word_count {
                return Err(Error::InvalidDocument(format!("qa answer {s}..={e} out of range")));
            }
        }
        Ok(())
    }

    /// Group index of every word, `None` for unlabeled words.
    pub fn group_of_word(&self, word_count: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; word_count];
        for (k, g) in self.semantic_groups.iter().enumerate() {
            for &i in g {
                if i < word_count {
                    out[i] = Some(k);
                }
            }
        }
        out
    }
}

/// Token stream after BPE with reassigned positions, remapped boxes and
/// segments. Tokens are stored in reading order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub tokens: Vec<usize>,
    /// 1-based sequential positions over tokens.
    pub token_global_positions: Vec<usize>,
    pub token_boxes: Vec<GridBox>,
    /// Token index sets, ordered by their first token.
    pub token_segments: Vec<Vec<usize>>,
    /// Source word index (into `RawDocument::words`) of every token.
    pub word_of_token: Vec<usize>,
    /// Source segment index (into `RawDocument::segments`) of every entry
    /// in `token_segments`.
    pub segment_source: Vec<usize>,
}

impl TokenizedDocument {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Distinct source words in reading order with their token ranges.
    pub fn word_spans(&self) -> Vec<(usize, std::ops::Range<usize>)> {
        let mut out: Vec<(usize, std::ops::Range<usize>)> = Vec::new();
        for (t, &w) in self.word_of_token.iter().enumerate() {
            match out.last_mut() {
                Some((lw, r)) if *lw == w => r.end = t + 1,
                _ => out.push((w, t..t + 1)),
            }
        }
        out
    }

    pub fn segment_of_token(&self) -> Vec<usize> {
        let mut out = vec![0; self.tokens.len()];
        for (k, seg) in self.token_segments.iter().enumerate() {
            for &t in seg {
                out[t] = k;
            }
        }
        out
    }

    /// Keeps a reading-order prefix of at most `max_len` tokens, cutting at
    /// a segment boundary whenever one exists.
    pub fn truncate(&mut self, max_len: usize) {
        if self.tokens.len() <= max_len {
            return;
        }
        let boundary = self
            .token_segments
            .iter()
            .map(|s| s.iter().max().map_or(0, |m| m + 1))
            .filter(|&end| end <= max_len)
            .max()
            .unwrap_or(max_len);
        let cut = if boundary == 0 { max_len } else { boundary };
        self.tokens.truncate(cut);
        self.token_global_positions.truncate(cut);
        self.token_boxes.truncate(cut);
        self.word_of_token.truncate(cut);
        let mut segments = Vec::new();
        let mut sources = Vec::new();
        for (seg, src) in self.token_segments.iter().zip(&self.segment_source) {
            let kept: Vec<usize> = seg.iter().copied().filter(|&t| t < cut).collect();
            if !kept.is_empty() {
                segments.push(kept);
                sources.push(*src);
            }
        }
        self.token_segments = segments;
        self.segment_source = sources;
    }
}
