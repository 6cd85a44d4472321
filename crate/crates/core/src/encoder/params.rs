//! Named parameter layout shared by initialization and checkpoint loading.

use rand_distr::{Distribution, StandardNormal};

use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Box features embedded by the six 2D tables, in `GridBox::features` order.
pub const BOX_FEATURES: [&str; 6] = ["x0", "y0", "x1", "y1", "width", "height"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Fill {
    Normal,
    Zeros,
    Ones,
}

pub(crate) trait Alloc {
    fn alloc(&mut self, name: &str, shape: &[usize], fill: Fill) -> Result<ParamId>;
}

pub(crate) struct Initializer<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut Rng,
    std: f64,
}

impl<'a> Initializer<'a> {
    pub(crate) fn new(store: &'a mut ParamStore, rng: &'a mut Rng, std: f64) -> Self {
        Self { store, rng, std }
    }
}

impl Alloc for Initializer<'_> {
    fn alloc(&mut self, name: &str, shape: &[usize], fill: Fill) -> Result<ParamId> {
        let mut t = Tensor::zeros(shape);
        match fill {
            Fill::Zeros => {}
            Fill::Ones => t.data_mut().fill(1.0),
            Fill::Normal => {
                for x in t.data_mut() {
                    let z: f64 = StandardNormal.sample(self.rng);
                    *x = z * self.std;
                }
            }
        }
        self.store.insert(name, t)
    }
}

pub(crate) struct Resolver<'a> {
    store: &'a ParamStore,
}

impl<'a> Resolver<'a> {
    pub(crate) fn new(store: &'a ParamStore) -> Self {
        Self { store }
    }
}

impl Alloc for Resolver<'_> {
    fn alloc(&mut self, name: &str, shape: &[usize], _fill: Fill) -> Result<ParamId> {
        let id = self
            .store
            .id(name)
            .map_err(|_| Error::Checkpoint(format!("missing parameter {name}")))?;
        let found = self.store.value(id).shape();
        if found != shape {
            return Err(Error::Checkpoint(format!("parameter {name} has shape {found:?}, expected {shape:?}")));
        }
        Ok(id)
    }
}

/// Affine map `x W + b` with `W` of shape in×out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub(crate) fn build(a: &mut dyn Alloc, name: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            weight: a.alloc(&format!("{name}.weight"), &[input, output], Fill::Normal)?,
            bias: a.alloc(&format!("{name}.bias"), &[output], Fill::Zeros)?,
        })
    }
}

/// Layer-norm gain and bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub(crate) fn build(a: &mut dyn Alloc, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: a.alloc(&format!("{name}.gain"), &[dim], Fill::Ones)?,
            bias: a.alloc(&format!("{name}.bias"), &[dim], Fill::Zeros)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Embeddings {
    pub token: ParamId,
    pub pos1d: ParamId,
    pub pos2d: [ParamId; 6],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub ln1: Norm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ln2: Norm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl Block {
    pub(crate) fn build(a: &mut dyn Alloc, name: &str, d: usize, ffn: usize) -> Result<Self> {
        Ok(Self {
            ln1: Norm::build(a, &format!("{name}.ln1"), d)?,
            query: Linear::build(a, &format!("{name}.attn.query"), d, d)?,
            key: Linear::build(a, &format!("{name}.attn.key"), d, d)?,
            value: Linear::build(a, &format!("{name}.attn.value"), d, d)?,
            output: Linear::build(a, &format!("{name}.attn.output"), d, d)?,
            ln2: Norm::build(a, &format!("{name}.ln2"), d)?,
            ffn_in: Linear::build(a, &format!("{name}.ffn.in"), d, ffn)?,
            ffn_out: Linear::build(a, &format!("{name}.ffn.out"), ffn, d)?,
        })
    }
}

/// Nonlinear classification head: dense d→d, GELU, layer norm, dense d→classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Head {
    pub dense: Linear,
    pub norm: Norm,
    pub out: Linear,
}

impl Head {
    pub(crate) fn build(a: &mut dyn Alloc, name: &str, d: usize, classes: usize) -> Result<Self> {
        Ok(Self {
            dense: Linear::build(a, &format!("{name}.dense"), d, d)?,
            norm: Norm::build(a, &format!("{name}.norm"), d)?,
            out: Linear::build(a, &format!("{name}.out"), d, classes)?,
        })
    }
}

/// Two-layer feed-forward predictor d → p → d with a GELU in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Predictor {
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub embeddings: Embeddings,
    pub blocks: Vec<Block>,
    /// Present when the stack has at least one block.
    pub final_norm: Option<Norm>,
    pub mlm_head: Head,
    pub lop_head: Head,
    pub predictor: Predictor,
}

impl Layout {
    pub(crate) fn build(cfg: &EncoderConfig, a: &mut dyn Alloc) -> Result<Self> {
        let d = cfg.hidden_dim;
        let mut pos2d = Vec::with_capacity(6);
        let token = a.alloc("embed.token", &[cfg.vocab_size, d], Fill::Normal)?;
        let pos1d = a.alloc("embed.pos1d", &[cfg.position_rows(), d], Fill::Normal)?;
        for f in BOX_FEATURES {
            pos2d.push(a.alloc(&format!("embed.pos2d.{f}"), &[cfg.grid_size, d], Fill::Normal)?);
        }
        let embeddings = Embeddings { token, pos1d, pos2d: pos2d.try_into().expect("six box features") };
        let blocks = (0..cfg.layers)
            .map(|i| Block::build(a, &format!("layer{i}"), d, cfg.ffn_dim))
            .collect::<Result<Vec<_>>>()?;
        let final_norm = if cfg.layers > 0 { Some(Norm::build(a, "final_norm", d)?) } else { None };
        let mlm_head = Head::build(a, "mlm_head", d, cfg.vocab_size)?;
        let lop_head = Head::build(a, "lop_head", d, cfg.max_local_pos)?;
        let p = cfg.predictor_width();
        let predictor = Predictor {
            hidden: Linear::build(a, "predictor.hidden", d, p)?,
            out: Linear::build(a, "predictor.out", p, d)?,
        };
        Ok(Self { embeddings, blocks, final_norm, mlm_head, lop_head, predictor })
    }
}
