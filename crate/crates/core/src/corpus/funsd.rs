//! Loader for FUNSD-style annotation JSON.
//!
//! ```json
//! {
//!   "page": [762, 1000],
//!   "form": [
//!     { "id": 0, "label": "question", "box": [..],
//!       "words": [ { "text": "Date:", "box": [x0, y0, x1, y1] } ],
//!       "lines": [ { "words": [0] } ] }
//!   ]
//! }
//! ```
//!
//! Blocks are read in `id` order and words in listed order; that is the
//! reading order. Each block becomes one semantic group. Per-block `lines`
//! (indices into the block's words) become text segments; when no block has
//! them, segments are recovered from the words alone by y-overlap line
//! grouping. `page` defaults to the extent of the boxes.

use std::path::Path;

use serde::Deserialize;

use crate::doc_model::{GroundTruth, PixelBox, RawDocument};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct FunsdFile {
    #[serde(default)]
    page: Option<[f64; 2]>,
    form: Vec<FunsdBlock>,
}

#[derive(Debug, Deserialize)]
struct FunsdBlock {
    #[serde(default)]
    id: Option<i64>,
    label: String,
    words: Vec<FunsdWord>,
    #[serde(default)]
    lines: Option<Vec<FunsdLine>>,
}

#[derive(Debug, Deserialize)]
struct FunsdWord {
    text: String,
    #[serde(rename = "box")]
    bbox: PixelBox,
}

#[derive(Debug, Deserialize)]
struct FunsdLine {
    words: Vec<usize>,
}

pub fn load_funsd_json(path: &Path, label_set: &[String]) -> Result<(RawDocument, GroundTruth)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_funsd(&text, label_set).map_err(|e| match e {
        Error::Json { source, .. } => Error::Json {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn parse_funsd(text: &str, label_set: &[String]) -> Result<(RawDocument, GroundTruth)> {
    let mut file: FunsdFile = serde_json::from_str(text).map_err(|e| Error::Json {
        path: "<funsd>".into(),
        source: e,
    })?;
    file.form.sort_by_key(|b| b.id.unwrap_or(i64::MAX));
    let has_lines = file.form.iter().any(|b| b.lines.is_some());

    let mut raw = RawDocument {
        words: Vec::new(),
        global_positions: Vec::new(),
        word_boxes: Vec::new(),
        segments: Vec::new(),
        page_size: [0.0, 0.0],
    };
    let mut truth = GroundTruth {
        semantic_groups: Vec::new(),
        entity_labels: Vec::new(),
        qa_spans: Vec::new(),
    };
    for block in &file.form {
        let label = label_set
            .iter()
            .find(|l| l.eq_ignore_ascii_case(&block.label))
            .ok_or_else(|| Error::UnknownLabel {
                label: block.label.clone(),
                valid: label_set.to_vec(),
            })?;
        if block.words.is_empty() {
            continue;
        }
        let start = raw.words.len();
        for w in &block.words {
            raw.global_positions.push(raw.words.len() as u64 + 1);
            raw.words.push(w.text.clone());
            raw.word_boxes.push(w.bbox);
            truth.entity_labels.push(label.clone());
        }
        truth.semantic_groups.push((start..raw.words.len()).collect());
        if has_lines {
            let lines = block
                .lines
                .as_ref()
                .map(|ls| ls.iter().map(|l| l.words.clone()).collect())
                .unwrap_or_else(|| vec![(0..block.words.len()).collect::<Vec<_>>()]);
            for line in lines {
                if let Some(&bad) = line.iter().find(|&&i| i >= block.words.len()) {
                    return Err(Error::InvalidDocument(format!("line references word {bad} of a {}-word block", block.words.len())));
                }
                if !line.is_empty() {
                    raw.segments.push(line.iter().map(|i| start + i).collect());
                }
            }
        }
    }
    if !has_lines {
        raw.segments = lines_by_y_overlap(&raw.word_boxes);
    }
    raw.page_size = file.page.unwrap_or_else(|| {
        let w = raw.word_boxes.iter().map(|b| b[2]).fold(1.0, f64::max);
        let h = raw.word_boxes.iter().map(|b| b[3]).fold(1.0, f64::max);
        [w, h]
    });
    raw.validate()?;
    truth.validate(raw.len())?;
    Ok((raw, truth))
}

/// Groups consecutive words (in reading order) into lines: a word continues
/// the current line when it overlaps the previous word vertically by at
/// least half the smaller height and does not start left of it.
pub fn lines_by_y_overlap(boxes: &[PixelBox]) -> Vec<Vec<usize>> {
    let mut lines: Vec<Vec<usize>> = Vec::new();
    for (i, b) in boxes.iter().enumerate() {
        let continues = i > 0 && {
            let p = boxes[i - 1];
            let overlap = p[3].min(b[3]) - p[1].max(b[1]);
            let min_h = (p[3] - p[1]).min(b[3] - b[1]);
            overlap > 0.0 && overlap >= 0.5 * min_h && b[0] >= p[0]
        };
        if continues {
            lines.last_mut().expect("previous line").push(i);
        } else {
            lines.push(vec![i]);
        }
    }
    lines
}
