use super::bpe::TokenizerModel;
use super::geometry::normalize_box;
use super::types::{ranks, RawDocument, TokenizedDocument};
use crate::error::{Error, Result};

/// Tokenizes every word, reassigns 1-based sequential positions over the
/// tokens in reading order, and gives each token its word's normalized box
/// and segment.
pub fn tokenize(doc: &RawDocument, tok: &TokenizerModel) -> Result<TokenizedDocument> {
    doc.validate()?;
    let order = doc.reading_order();
    let mut tokens = Vec::new();
    let mut boxes = Vec::new();
    let mut word_of_token = Vec::new();
    let mut first_token = vec![0; doc.len()];
    let mut token_count = vec![0; doc.len()];
    for &w in &order {
        let ids = tok.encode_word(&doc.words[w]);
        if ids.is_empty() {
            return Err(Error::EmptyTokenization {
                word: w,
                text: doc.words[w].clone(),
            });
        }
        let b = normalize_box(doc.word_boxes[w], doc.page_size)?;
        first_token[w] = tokens.len();
        token_count[w] = ids.len();
        for id in ids {
            tokens.push(id);
            boxes.push(b);
            word_of_token.push(w);
        }
    }
    let rank = ranks(&order);
    let mut segs: Vec<(usize, Vec<usize>)> = doc
        .segments
        .iter()
        .enumerate()
        .map(|(k, seg)| {
            let mut words = seg.clone();
            words.sort_by_key(|&w| rank[w]);
            let toks = words
                .iter()
                .flat_map(|&w| first_token[w]..first_token[w] + token_count[w])
                .collect();
            (k, toks)
        })
        .collect();
    segs.sort_by_key(|(_, t): &(usize, Vec<usize>)| t[0]);
    let n = tokens.len();
    Ok(TokenizedDocument {
        tokens,
        token_global_positions: (1..=n).collect(),
        token_boxes: boxes,
        segment_source: segs.iter().map(|(k, _)| *k).collect(),
        token_segments: segs.into_iter().map(|(_, t)| t).collect(),
        word_of_token,
    })
}
