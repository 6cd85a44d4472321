//! Desk-scale corpora: a synthetic form generator with known semantic
//! groups fragmented into OCR-style line segments, and a FUNSD-format loader.

mod files;
mod funsd;
mod generate;

pub use files::{document_file_name, read_corpus, read_json, write_corpus, write_json, CorpusManifest, DocumentFile, MANIFEST};
pub use funsd::{lines_by_y_overlap, load_funsd_json, parse_funsd};
pub use generate::{default_vocab, fragment_groups, generate_corpus, generate_document, CorpusConfig, GeneratedDocument};
