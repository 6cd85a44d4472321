use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label that maps to the outside tag.
pub const OUTSIDE_LABEL: &str = "other";

/// Tag inventory `O, B-c1, I-c1, B-c2, I-c2, ...` with `O = 0`,
/// `B-ci = 1 + 2i`, `I-ci = 2 + 2i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BioLabelSet {
    classes: Vec<String>,
}

impl BioLabelSet {
    /// Builds the tag set from entity labels; `"other"` is dropped (it is `O`).
    pub fn new<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut classes: Vec<String> = Vec::new();
        for l in labels {
            let l = l.as_ref();
            if l != OUTSIDE_LABEL && !classes.iter().any(|c| c == l) {
                classes.push(l.to_string());
            }
        }
        Self { classes }
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn tag_count(&self) -> usize {
        2 * self.classes.len() + 1
    }

    pub fn tag_names(&self) -> Vec<String> {
        let mut out = vec!["O".to_string()];
        for c in &self.classes {
            out.push(format!("B-{c}"));
            out.push(format!("I-{c}"));
        }
        out
    }

    pub fn begin(&self, class: usize) -> usize {
        1 + 2 * class
    }

    pub fn inside(&self, class: usize) -> usize {
        2 + 2 * class
    }

    /// Class index of a tag, or `None` for `O`.
    pub fn class_of(&self, tag: usize) -> Option<usize> {
        (tag > 0).then(|| (tag - 1) / 2)
    }

    pub fn is_begin(&self, tag: usize) -> bool {
        tag > 0 && tag % 2 == 1
    }

    fn class_index(&self, label: &str) -> Result<Option<usize>> {
        if label == OUTSIDE_LABEL {
            return Ok(None);
        }
        self.classes.iter().position(|c| c == label).map(Some).ok_or_else(|| Error::UnknownLabel {
            label: label.to_string(),
            valid: self.classes.iter().cloned().chain([OUTSIDE_LABEL.to_string()]).collect(),
        })
    }
}

/// Per-word BIO tags: the first word (lowest index) of every labeled group
/// gets `B-c`, the rest `I-c`; `"other"` words get `O`. Words outside every
/// group are treated as singleton groups.
pub fn bio_encode<S: AsRef<str>>(labels: &[S], groups: &[Vec<usize>], set: &BioLabelSet) -> Result<Vec<usize>> {
    let mut tags = vec![usize::MAX; labels.len()];
    for group in groups {
        let first = group.iter().copied().min().ok_or(Error::EmptySegment)?;
        for &w in group {
            let label = labels.get(w).ok_or(Error::IdOutOfRange { what: "word", id: w, limit: labels.len() })?;
            tags[w] = match set.class_index(label.as_ref())? {
                None => 0,
                Some(c) if w == first => set.begin(c),
                Some(c) => set.inside(c),
            };
        }
    }
    for (w, t) in tags.iter_mut().enumerate() {
        if *t == usize::MAX {
            *t = set.class_index(labels[w].as_ref())?.map_or(0, |c| set.begin(c));
        }
    }
    Ok(tags)
}

/// Entity span over word indices `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub class: usize,
}

/// Relaxed decoding: `B-c` opens a span, `I-c` extends an open span of class
/// `c` and otherwise opens one, `O` closes.
pub fn bio_decode(tags: &[usize], set: &BioLabelSet) -> Vec<EntitySpan> {
    let mut spans: Vec<EntitySpan> = Vec::new();
    let mut open = false;
    for (i, &tag) in tags.iter().enumerate() {
        match set.class_of(tag) {
            None => open = false,
            Some(c) => {
                let extends = open && !set.is_begin(tag) && spans.last().is_some_and(|s| s.class == c);
                if extends {
                    spans.last_mut().expect("open span").end = i;
                } else {
                    spans.push(EntitySpan { start: i, end: i, class: c });
                    open = true;
                }
            }
        }
    }
    spans
}
