//! Document data contract and deterministic preprocessing.

mod bpe;
mod geometry;
mod tokenize;
mod types;

pub use bpe::{special, train_bpe, train_bpe_words, TokenizerModel, BYTE_SYMBOLS, FIRST_MERGE_ID};
pub use geometry::{local_positions, merged_box, normalize_box, segment_center_distance, GridBox, GRID_MAX};
pub use tokenize::tokenize;
pub use types::{GroundTruth, PixelBox, QaSpan, RawDocument, TokenizedDocument};
