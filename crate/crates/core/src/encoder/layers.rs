//! Graph-building functions for the encoder's layers. Each takes the
//! graph, the input variable and the parameter handles, so they compose
//! freely and can be gradient-checked in isolation.

use rand::Rng as _;

use super::params::{Block, Head, Linear, Norm, Predictor};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

pub fn linear(g: &mut Graph, x: Var, p: &Linear) -> Result<Var> {
    let w = g.param(p.weight);
    let b = g.param(p.bias);
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

/// Row-wise layer norm followed by a learned gain and bias.
pub fn layer_norm_affine(g: &mut Graph, x: Var, p: &Norm) -> Result<Var> {
    let axis = g.shape(x).len() - 1;
    let n = g.layer_norm(x, axis, LN_EPS)?;
    let gain = g.param(p.gain);
    let bias = g.param(p.bias);
    let y = g.mul(n, gain)?;
    g.add(y, bias)
}

/// Inverted dropout: zeroes each entry with probability `p` and rescales the rest.
pub fn dropout(g: &mut Graph, x: Var, p: f64, rng: &mut Rng) -> Result<Var> {
    if p <= 0.0 {
        return Ok(x);
    }
    let shape = g.shape(x).to_vec();
    let mut mask = Tensor::zeros(&shape);
    let keep = 1.0 / (1.0 - p);
    for m in mask.data_mut() {
        if rng.random::<f64>() >= p {
            *m = keep;
        }
    }
    let m = g.input(mask);
    g.mul(x, m)
}

/// Multi-head scaled dot-product self-attention over rows of `x`.
/// `bias` (N×N) is added to every head's scores before the softmax.
fn attention(g: &mut Graph, x: Var, block: &Block, heads: usize, bias: Option<Var>) -> Result<Var> {
    let d = g.shape(x)[1];
    let dk = d / heads;
    let q = linear(g, x, &block.query)?;
    let k = linear(g, x, &block.key)?;
    let v = linear(g, x, &block.value)?;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (s, e) = (h * dk, (h + 1) * dk);
        let qh = g.slice(q, 1, s, e)?;
        let kh = g.slice(k, 1, s, e)?;
        let vh = g.slice(v, 1, s, e)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let mut scores = g.scale(scores, scale);
        if let Some(b) = bias {
            scores = g.add(scores, b)?;
        }
        let attn = g.softmax(scores, 1)?;
        outs.push(g.matmul(attn, vh)?);
    }
    let joined = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
    linear(g, joined, &block.output)
}

/// Pre-norm transformer block:
/// `x + Attn(LN(x))`, then `h + FFN(LN(h))` with a GELU feed-forward.
pub fn block_forward(
    g: &mut Graph,
    x: Var,
    block: &Block,
    heads: usize,
    bias: Option<Var>,
    dropout_prob: f64,
    mut rng: Option<&mut Rng>,
) -> Result<Var> {
    let n1 = layer_norm_affine(g, x, &block.ln1)?;
    let mut a = attention(g, n1, block, heads, bias)?;
    if let Some(r) = rng.as_deref_mut() {
        a = dropout(g, a, dropout_prob, r)?;
    }
    let h = g.add(x, a)?;
    let n2 = layer_norm_affine(g, h, &block.ln2)?;
    let f = linear(g, n2, &block.ffn_in)?;
    let f = g.gelu(f);
    let mut f = linear(g, f, &block.ffn_out)?;
    if let Some(r) = rng {
        f = dropout(g, f, dropout_prob, r)?;
    }
    g.add(h, f)
}

pub fn head_forward(g: &mut Graph, x: Var, head: &Head) -> Result<Var> {
    let h = linear(g, x, &head.dense)?;
    let h = g.gelu(h);
    let h = layer_norm_affine(g, h, &head.norm)?;
    linear(g, h, &head.out)
}

pub fn predictor_forward(g: &mut Graph, x: Var, p: &Predictor) -> Result<Var> {
    let h = linear(g, x, &p.hidden)?;
    let h = g.gelu(h);
    linear(g, h, &p.out)
}
