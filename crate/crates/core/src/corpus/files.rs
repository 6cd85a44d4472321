use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CorpusConfig;
use crate::doc_model::{GroundTruth, RawDocument};
use crate::error::{Error, Result};

/// On-disk form of one document: the OCR view plus, when known, its
/// annotation as a sibling object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentFile {
    pub document: RawDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<GroundTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub count: usize,
    pub seed: u64,
    pub config: CorpusConfig,
}

pub const MANIFEST: &str = "manifest.json";

pub fn document_file_name(index: usize) -> String {
    format!("doc_{index:05}.json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes one JSON file per document plus the manifest; returns the written paths.
pub fn write_corpus(dir: &Path, docs: &[DocumentFile], cfg: &CorpusConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(docs.len() + 1);
    for (i, d) in docs.iter().enumerate() {
        let p = dir.join(document_file_name(i));
        write_json(&p, d)?;
        paths.push(p);
    }
    let manifest = CorpusManifest {
        count: docs.len(),
        seed: cfg.rng_seed,
        config: cfg.clone(),
    };
    let p = dir.join(MANIFEST);
    write_json(&p, &manifest)?;
    paths.push(p);
    Ok(paths)
}

/// Reads every `doc_*.json` in `dir`, in file-name order.
pub fn read_corpus(dir: &Path) -> Result<Vec<DocumentFile>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("doc_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    let docs: Vec<DocumentFile> = paths.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    for (d, p) in docs.iter().zip(&paths) {
        d.document
            .validate()
            .map_err(|e| Error::InvalidDocument(format!("{}: {e}", p.display())))?;
    }
    Ok(docs)
}
