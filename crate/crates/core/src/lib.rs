//! Layout-aware document encoder pre-training on OCR-level inputs.
//!
//! The crate covers the whole pipeline at desk scale: the document data
//! contract and byte-level BPE ([`doc_model`]), a synthetic form generator
//! and FUNSD-style loader ([`corpus`]), a reverse-mode autodiff engine
//! ([`tensor`]), the embedding sum and transformer encoder ([`encoder`]),
//! the three pre-training objectives and training loop ([`objectives`]),
//! and downstream heads with their metrics ([`finetune`]).

pub mod error;
pub mod exec;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub mod doc_model;
pub mod corpus;
pub mod encoder;
pub mod objectives;
pub mod finetune;
pub mod analysis;
pub mod gradsuite;
pub mod pipeline;
