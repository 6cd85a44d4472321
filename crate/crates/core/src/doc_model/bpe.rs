//! Byte-level BPE with deterministic merge order.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::RawDocument;
use crate::error::{Error, Result};

/// Fixed special-token ids, placed right after the 256 byte symbols.
pub mod special {
    pub const PAD: usize = 256;
    pub const UNK: usize = 257;
    pub const CLS: usize = 258;
    pub const SEP: usize = 259;
    pub const MASK: usize = 260;
    pub const COUNT: usize = 5;
    pub const NAMES: [(&str, usize); COUNT] = [
        ("pad", PAD),
        ("unk", UNK),
        ("cls", CLS),
        ("sep", SEP),
        ("mask", MASK),
    ];
}

pub const BYTE_SYMBOLS: usize = 256;
pub const FIRST_MERGE_ID: usize = BYTE_SYMBOLS + special::COUNT;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerModel {
    merges: Vec<(usize, usize)>,
    symbols: Vec<Vec<u8>>,
    ranks: HashMap<(usize, usize), usize>,
}

impl TokenizerModel {
    /// Pure byte tokenizer.
    pub fn bytes_only() -> Self {
        let mut symbols: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        symbols.extend(std::iter::repeat_n(Vec::new(), special::COUNT));
        Self {
            merges: Vec::new(),
            symbols,
            ranks: HashMap::new(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.symbols.len()
    }

    pub fn merges(&self) -> &[(usize, usize)] {
        &self.merges
    }

    pub fn symbol_bytes(&self, id: usize) -> Option<&[u8]> {
        self.symbols.get(id).map(Vec::as_slice)
    }

    fn push_merge(&mut self, left: usize, right: usize) -> usize {
        let id = self.symbols.len();
        let mut bytes = self.symbols[left].clone();
        bytes.extend_from_slice(&self.symbols[right]);
        self.ranks.insert((left, right), self.merges.len());
        self.merges.push((left, right));
        self.symbols.push(bytes);
        id
    }

    /// Token ids of a single word. Merges are applied by rank until none applies.
    pub fn encode_word(&self, word: &str) -> Vec<usize> {
        let mut ids: Vec<usize> = word.bytes().map(usize::from).collect();
        loop {
            let best = ids
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, w[0], w[1])))
                .min();
            let Some((rank, l, r)) = best else { break };
            ids = merge_pair(&ids, l, r, FIRST_MERGE_ID + rank);
        }
        ids
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        let bytes: Vec<u8> = ids
            .iter()
            .flat_map(|&i| self.symbols.get(i).cloned().unwrap_or_default())
            .collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }

    /// Stable digest of the merge list, used to match checkpoints to tokenizers.
    pub fn fingerprint(&self) -> String {
        crate::tensor::checkpoint::sha256_hex(self.to_json().as_bytes())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("tokenizer serializes")
    }

    fn to_file(&self) -> TokenizerFile {
        let table = byte_to_char();
        let render = |id: usize| -> String { self.symbols[id].iter().map(|&b| table[b as usize]).collect() };
        TokenizerFile {
            merges: self.merges.iter().map(|&(l, r)| [render(l), render(r)]).collect(),
            specials: special::NAMES.iter().map(|&(n, id)| (n.to_string(), id)).collect(),
            vocab_size: self.vocab_size(),
        }
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let file: TokenizerFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        for &(name, id) in &special::NAMES {
            if file.specials.get(name) != Some(&id) {
                return Err(format!("special token {name} must have id {id}"));
            }
        }
        let decode: HashMap<char, u8> = byte_to_char()
            .iter()
            .enumerate()
            .map(|(b, &c)| (c, b as u8))
            .collect();
        let mut model = Self::bytes_only();
        let mut by_bytes: HashMap<Vec<u8>, usize> = (0..=255u8).map(|b| (vec![b], b as usize)).collect();
        for [l, r] in &file.merges {
            let lookup = |s: &str| -> std::result::Result<usize, String> {
                let bytes = s
                    .chars()
                    .map(|c| decode.get(&c).copied().ok_or_else(|| format!("bad symbol char {c:?}")))
                    .collect::<std::result::Result<Vec<u8>, String>>()?;
                by_bytes.get(&bytes).copied().ok_or_else(|| format!("unknown symbol {s:?}"))
            };
            let (li, ri) = (lookup(l)?, lookup(r)?);
            let id = model.push_merge(li, ri);
            by_bytes.entry(model.symbols[id].clone()).or_insert(id);
        }
        if file.vocab_size != model.vocab_size() {
            return Err(format!(
                "vocab_size {} does not match {} merges",
                file.vocab_size,
                file.merges.len()
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::TokenizerMismatch(format!("{}: {e}", path.display())))
    }
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    merges: Vec<[String; 2]>,
    specials: BTreeMap<String, usize>,
    vocab_size: usize,
}

fn merge_pair(ids: &[usize], l: usize, r: usize, new_id: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == l && ids[i + 1] == r {
            out.push(new_id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    out
}

/// Printable stand-in for each byte so merges serialize as readable JSON
/// strings. Printable Latin-1 bytes map to themselves.
fn byte_to_char() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut next = 256u32;
    for b in 0..=255u32 {
        let printable = (0x21..=0x7e).contains(&b) || (0xa1..=0xac).contains(&b) || (0xae..=0xff).contains(&b);
        table[b as usize] = if printable {
            char::from_u32(b).expect("latin-1")
        } else {
            next += 1;
            char::from_u32(next - 1).expect("valid codepoint")
        };
    }
    table
}

/// Learns `merge_count` merges over the words of `corpus`. The most frequent
/// adjacent pair wins; ties go to the lexicographically smallest pair.
/// Training stops early when no adjacent pair is left.
pub fn train_bpe(corpus: &[RawDocument], merge_count: usize) -> Result<TokenizerModel> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    train_bpe_words(corpus.iter().flat_map(|d| d.words.iter().map(String::as_str)), merge_count)
}

pub fn train_bpe_words<'a>(words: impl IntoIterator<Item = &'a str>, merge_count: usize) -> Result<TokenizerModel> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for w in words {
        *counts.entry(w).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut model = TokenizerModel::bytes_only();
    let mut types: Vec<(Vec<usize>, u64)> = counts
        .into_iter()
        .map(|(w, c)| (w.bytes().map(usize::from).collect(), c))
        .collect();
    for _ in 0..merge_count {
        let mut pairs: HashMap<(usize, usize), u64> = HashMap::new();
        for (ids, c) in &types {
            for w in ids.windows(2) {
                *pairs.entry((w[0], w[1])).or_default() += c;
            }
        }
        let best = pairs.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (&model.symbols[pa.0], &model.symbols[pa.1]);
                let kb = (&model.symbols[pb.0], &model.symbols[pb.1]);
                kb.cmp(&ka)
            })
        });
        let Some(((l, r), _)) = best else { break };
        let id = model.push_merge(l, r);
        for (ids, _) in &mut types {
            if ids.len() > 1 {
                *ids = merge_pair(ids, l, r, id);
            }
        }
    }
    Ok(model)
}
