//! Summed token/position/layout embeddings and a pre-norm transformer
//! encoder, together with the prediction heads that sit on top of it.

mod layers;
pub(crate) mod params;

use serde::{Deserialize, Serialize};

use crate::doc_model::{GridBox, TokenizedDocument};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

pub use layers::{block_forward, dropout, head_forward, layer_norm_affine, linear, predictor_forward, LN_EPS};
pub use params::{Block, Embeddings, Head, Layout, Linear, Norm, Predictor, BOX_FEATURES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub max_local_pos: usize,
    /// Rows per 2D coordinate table (grid values 0..=1000).
    pub grid_size: usize,
    pub dropout_prob: f64,
    pub init_std: f64,
    /// Bottleneck width of the segment predictor; `None` means `hidden_dim / 4`.
    pub predictor_dim: Option<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: crate::doc_model::FIRST_MERGE_ID + 512,
            hidden_dim: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 128,
            max_seq_len: 512,
            max_local_pos: 128,
            grid_size: 1001,
            dropout_prob: 0.0,
            init_std: 0.02,
            predictor_dim: None,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("max_seq_len", self.max_seq_len),
            ("max_local_pos", self.max_local_pos),
            ("grid_size", self.grid_size),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be > 0"));
            }
        }
        if self.hidden_dim % self.heads != 0 {
            return Err(Error::config("hidden_dim", "must be divisible by heads"));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::config("dropout_prob", "must be in [0, 1)"));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::config("init_std", "must be finite and >= 0"));
        }
        if self.predictor_dim == Some(0) {
            return Err(Error::config("predictor_dim", "must be > 0"));
        }
        Ok(())
    }

    pub fn predictor_width(&self) -> usize {
        self.predictor_dim.unwrap_or((self.hidden_dim / 4).max(1))
    }

    /// Row of the 1D position table reserved for masked positions.
    pub fn masked_position(&self) -> usize {
        self.max_seq_len + 1
    }

    pub fn position_rows(&self) -> usize {
        self.max_seq_len + 2
    }
}

/// Model input built from a tokenized document only.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub tokens: Vec<usize>,
    /// Rows of the 1D position table; `EncoderConfig::masked_position` hides a position.
    pub positions: Vec<usize>,
    pub boxes: Vec<GridBox>,
    /// `true` marks padding that no token may attend to.
    pub padding: Vec<bool>,
}

impl ModelInput {
    pub fn from_document(doc: &TokenizedDocument) -> Self {
        Self {
            tokens: doc.tokens.clone(),
            positions: doc.token_global_positions.clone(),
            boxes: doc.token_boxes.clone(),
            padding: vec![false; doc.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.tokens.len();
        for (what, len) in [("positions", self.positions.len()), ("boxes", self.boxes.len()), ("padding", self.padding.len())] {
            if len != n {
                return Err(Error::LengthMismatch { what, left: n, right: len });
            }
        }
        Ok(())
    }
}

/// Encoder parameters plus their named layout.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: EncoderConfig,
    pub params: ParamStore,
    pub layout: Layout,
}

impl Model {
    /// Gaussian initialization N(0, init_std) of every weight and table;
    /// biases start at zero and layer-norm gains at one.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = crate::rng::stream(seed, crate::rng::domain::INIT, 0);
        let layout = Layout::build(&config, &mut params::Initializer::new(&mut params, &mut rng, config.init_std))?;
        Ok(Self { config, params, layout })
    }

    /// Wraps an existing store (e.g. a loaded checkpoint), checking that every
    /// parameter is present with the configured shape.
    pub fn from_params(config: EncoderConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = Layout::build(&config, &mut params::Resolver::new(&params))?;
        Ok(Self { config, params, layout })
    }

    pub fn graph(&self) -> Graph<'_> {
        Graph::with_params(&self.params)
    }

    /// Per-token sum of token, 1D position and six box-feature embeddings.
    /// `g` must be built over `self.params`.
    pub fn embed(&self, g: &mut Graph, input: &ModelInput) -> Result<Var> {
        input.check()?;
        let e = &self.layout.embeddings;
        let table = g.param(e.token);
        let mut sum = g.embedding(table, &input.tokens)?;
        let table = g.param(e.pos1d);
        let pos = g.embedding(table, &input.positions)?;
        sum = g.add(sum, pos)?;
        let features: Vec<[usize; 6]> = input.boxes.iter().map(GridBox::features).collect();
        for (f, id) in e.pos2d.iter().enumerate() {
            let ids: Vec<usize> = features.iter().map(|b| b[f]).collect();
            let table = g.param(*id);
            let part = g.embedding(table, &ids)?;
            sum = g.add(sum, part)?;
        }
        Ok(sum)
    }

    /// Runs the block stack over `x` (N×d). Dropout is applied only when an
    /// RNG is supplied and `dropout_prob > 0`.
    pub fn encode(&self, g: &mut Graph, x: Var, padding: &[bool], mut rng: Option<&mut Rng>) -> Result<Var> {
        let n = g.shape(x)[0];
        if padding.len() != n {
            return Err(Error::LengthMismatch { what: "padding", left: n, right: padding.len() });
        }
        let bias = if padding.iter().any(|&p| p) {
            let mut data = vec![0.0; n * n];
            for row in data.chunks_mut(n) {
                for (j, &p) in padding.iter().enumerate() {
                    if p {
                        row[j] = -1e9;
                    }
                }
            }
            Some(g.input(Tensor::new(vec![n, n], data)?))
        } else {
            None
        };
        let p = self.config.dropout_prob;
        let mut h = x;
        if let Some(r) = rng.as_deref_mut() {
            h = dropout(g, h, p, r)?;
        }
        for block in &self.layout.blocks {
            h = block_forward(g, h, block, self.config.heads, bias, p, rng.as_deref_mut())?;
        }
        if let Some(norm) = &self.layout.final_norm {
            h = layer_norm_affine(g, h, norm)?;
        }
        Ok(h)
    }

    pub fn forward(&self, g: &mut Graph, input: &ModelInput, rng: Option<&mut Rng>) -> Result<Var> {
        let x = self.embed(g, input)?;
        self.encode(g, x, &input.padding, rng)
    }

    /// Final representations (N×d) with dropout disabled.
    pub fn representations(&self, input: &ModelInput) -> Result<Tensor> {
        let mut g = self.graph();
        let out = self.forward(&mut g, input, None)?;
        Ok(g.value(out).clone())
    }

    /// Masked-token logits (rows.len()×V) for the given representation rows.
    pub fn mlm_logits(&self, g: &mut Graph, reps: Var, rows: &[usize]) -> Result<Var> {
        let x = g.select_rows(reps, rows)?;
        head_forward(g, x, &self.layout.mlm_head)
    }

    /// Local-position logits (rows.len()×max_local_pos); class `c` is local position `c + 1`.
    pub fn lop_logits(&self, g: &mut Graph, reps: Var, rows: &[usize]) -> Result<Var> {
        let x = g.select_rows(reps, rows)?;
        head_forward(g, x, &self.layout.lop_head)
    }

    /// Token-wise predictor d → d/4 → d.
    pub fn predict(&self, g: &mut Graph, reps: Var) -> Result<Var> {
        predictor_forward(g, reps, &self.layout.predictor)
    }

    /// Checkpoint metadata describing this model's architecture.
    pub fn meta(&self) -> serde_json::Value {
        serde_json::json!({ "encoder": self.config })
    }

    pub fn save(&self, path: &std::path::Path, extra: serde_json::Value) -> Result<()> {
        let mut meta = self.meta();
        if let (Some(m), serde_json::Value::Object(extra)) = (meta.as_object_mut(), extra) {
            m.extend(extra);
        }
        crate::tensor::checkpoint::save(path, &self.params, &meta)
    }

    /// Loads a checkpoint written by [`Model::save`], returning its metadata.
    pub fn load(path: &std::path::Path) -> Result<(Self, serde_json::Value)> {
        let (params, meta) = crate::tensor::checkpoint::load(path)?;
        let config: EncoderConfig = serde_json::from_value(meta.get("encoder").cloned().unwrap_or_default())
            .map_err(|e| Error::Checkpoint(format!("{}: bad encoder config: {e}", path.display())))?;
        Ok((Self::from_params(config, params)?, meta))
    }
}
