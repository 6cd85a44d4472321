//! Finite-difference gradient checks over every differentiable primitive,
//! one encoder block, and each pre-training loss on a micro model.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::doc_model::{GridBox, TokenizedDocument};
use crate::encoder::{EncoderConfig, Model};
use crate::error::{Error, Result};
use crate::objectives::{forward_document, pooled_rows, DocumentPass, LopTarget, MaskPlan, PretrainConfig, Replacement};
use crate::rng::{self, domain, Rng};
use crate::tensor::{
    grad_check, grad_check_inputs, grad_check_params, select_coords, Coords, GradCheck, Graph, ParamGrads, ParamId, Tensor, Var,
};

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Primitives,
    Encoder,
    Losses,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Primitives, Scope::Encoder, Scope::Losses];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "primitives" => Some(Self::Primitives),
            "encoder" => Some(Self::Encoder),
            "losses" => Some(Self::Losses),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub scope: Scope,
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub pass: bool,
}

impl CheckRow {
    fn new(scope: Scope, name: &str, r: GradCheck) -> Self {
        Self {
            scope,
            name: name.to_string(),
            max_rel_error: r.max_rel_error,
            checked: r.checked,
            pass: r.passes(TOLERANCE) && r.checked > 0,
        }
    }
}

pub fn run(scope: Scope) -> Result<Vec<CheckRow>> {
    match scope {
        Scope::Primitives => primitives(),
        Scope::Encoder => encoder(),
        Scope::Losses => losses(),
    }
}

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    t
}

/// Values bounded away from zero, for the ReLU kink.
fn off_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let mut t = random(rng, shape);
    t.data_mut().iter_mut().for_each(|x| *x = x.signum() * (0.1 + x.abs()));
    t
}

/// `sum(x * w)` for a fixed random `w`, so every output coordinate matters.
fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let w = random(&mut rng::stream(seed, domain::EVAL, 99), &shape);
    let w = g.input(w);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

type Check = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

fn primitives() -> Result<Vec<CheckRow>> {
    let mut r = rng::stream(11, domain::EVAL, 0);
    let m34 = random(&mut r, &[3, 4]);
    let m34b = random(&mut r, &[3, 4]);
    let m45 = random(&mut r, &[4, 5]);
    let v4 = random(&mut r, &[4]);
    let u6 = random(&mut r, &[6]);
    let w6 = random(&mut r, &[6]);
    let kinks = off_zero(&mut r, &[3, 4]);
    let ln8 = random(&mut r, &[8]);
    let table = random(&mut r, &[5, 3]);
    let logits = random(&mut r, &[4, 6]);
    let m32 = random(&mut r, &[3, 2]);

    let cases: Vec<(&str, Check, Vec<Tensor>)> = vec![
        ("matmul", Box::new(|g, v| { let y = g.matmul(v[0], v[1])?; weighted_sum(g, y, 1) }), vec![m34.clone(), m45.clone()]),
        ("add", Box::new(|g, v| { let y = g.add(v[0], v[1])?; weighted_sum(g, y, 2) }), vec![m34.clone(), m34b.clone()]),
        ("add (row broadcast)", Box::new(|g, v| { let y = g.add(v[0], v[1])?; weighted_sum(g, y, 3) }), vec![m34.clone(), v4.clone()]),
        ("mul", Box::new(|g, v| { let y = g.mul(v[0], v[1])?; weighted_sum(g, y, 4) }), vec![m34.clone(), m34b.clone()]),
        ("mul (row broadcast)", Box::new(|g, v| { let y = g.mul(v[0], v[1])?; weighted_sum(g, y, 5) }), vec![m34.clone(), v4.clone()]),
        ("scale", Box::new(|g, v| { let y = g.scale(v[0], -1.7); weighted_sum(g, y, 6) }), vec![m34.clone()]),
        ("sub", Box::new(|g, v| { let y = g.sub(v[0], v[1])?; weighted_sum(g, y, 7) }), vec![m34.clone(), m34b.clone()]),
        ("relu", Box::new(|g, v| { let y = g.relu(v[0]); weighted_sum(g, y, 8) }), vec![kinks]),
        ("gelu", Box::new(|g, v| { let y = g.gelu(v[0]); weighted_sum(g, y, 9) }), vec![m34.clone()]),
        ("softmax (axis 1)", Box::new(|g, v| { let y = g.softmax(v[0], 1)?; weighted_sum(g, y, 10) }), vec![m34.clone()]),
        ("softmax (axis 0)", Box::new(|g, v| { let y = g.softmax(v[0], 0)?; weighted_sum(g, y, 11) }), vec![m34.clone()]),
        ("layer_norm", Box::new(|g, v| { let y = g.layer_norm(v[0], 0, 1e-5)?; weighted_sum(g, y, 12) }), vec![ln8]),
        ("layer_norm (rows)", Box::new(|g, v| { let y = g.layer_norm(v[0], 1, 1e-5)?; weighted_sum(g, y, 13) }), vec![m34.clone()]),
        ("embedding_lookup", Box::new(|g, v| { let y = g.embedding(v[0], &[4, 0, 4, 2])?; weighted_sum(g, y, 14) }), vec![table]),
        ("mean_pool", Box::new(|g, v| { let y = g.mean_pool(v[0], &[0, 2])?; weighted_sum(g, y, 15) }), vec![m34.clone()]),
        ("select_rows", Box::new(|g, v| { let y = g.select_rows(v[0], &[2, 0, 2])?; weighted_sum(g, y, 16) }), vec![m34.clone()]),
        ("cross_entropy", Box::new(|g, v| g.cross_entropy(v[0], &[1, 5, 0, 3])), vec![logits]),
        ("cosine_sim", Box::new(|g, v| g.cosine_sim(v[0], v[1])), vec![u6, w6]),
        ("concat", Box::new(|g, v| { let y = g.concat(&[v[0], v[1]], 1)?; weighted_sum(g, y, 17) }), vec![m34.clone(), m32]),
        ("slice", Box::new(|g, v| { let y = g.slice(v[0], 1, 1, 3)?; weighted_sum(g, y, 18) }), vec![m34.clone()]),
        ("transpose", Box::new(|g, v| { let y = g.transpose(v[0])?; weighted_sum(g, y, 19) }), vec![m34.clone()]),
        ("sum", Box::new(|g, v| Ok(g.sum(v[0]))), vec![m34.clone()]),
        ("mean", Box::new(|g, v| Ok(g.mean(v[0]))), vec![m34]),
    ];
    let mut rows = Vec::with_capacity(cases.len() + 1);
    for (name, f, inputs) in cases {
        rows.push(CheckRow::new(Scope::Primitives, name, grad_check(f, &inputs, STEP)?));
    }
    rows.push(detach_row(&m34b)?);
    Ok(rows)
}

/// Stop-gradient has no finite-difference counterpart: it passes when the
/// value is unchanged and the gradient through it is exactly zero.
fn detach_row(x: &Tensor) -> Result<CheckRow> {
    let mut g = Graph::new();
    let v = g.variable(x.clone());
    let d = g.detach(v);
    let s = weighted_sum(&mut g, d, 20)?;
    let grads = g.backward(s)?;
    let zero = grads.wrt(v).is_none_or(|gr| gr.iter().all(|&x| x == 0.0));
    let same = g.value(d) == g.value(v);
    Ok(CheckRow {
        scope: Scope::Primitives,
        name: "detach".into(),
        max_rel_error: if zero && same { 0.0 } else { f64::INFINITY },
        checked: x.len(),
        pass: zero && same,
    })
}

/// d=8 model small enough to perturb every parameter.
pub fn micro_config() -> EncoderConfig {
    EncoderConfig {
        vocab_size: 270,
        hidden_dim: 8,
        layers: 1,
        heads: 2,
        ffn_dim: 16,
        max_seq_len: 16,
        max_local_pos: 8,
        grid_size: 1001,
        dropout_prob: 0.0,
        init_std: 0.3,
        predictor_dim: None,
    }
}

fn encoder() -> Result<Vec<CheckRow>> {
    let model = Model::init(micro_config(), 21)?;
    let x = random(&mut rng::stream(21, domain::EVAL, 1), &[4, 8]);
    let block = model.layout.blocks[0];
    let loss = |g: &mut Graph, x: Var| -> Result<Var> {
        let y = crate::encoder::block_forward(g, x, &block, model.config.heads, None, 0.0, None)?;
        weighted_sum(g, y, 22)
    };
    let inputs = grad_check_inputs(Some(&model.params), |g, v| loss(g, v[0]), std::slice::from_ref(&x), STEP)?;
    let params = grad_check_params(
        &model.params,
        |g| {
            let v = g.input(x.clone());
            loss(g, v)
        },
        STEP,
        Coords::NonzeroPlusSample { extra_per_param: 4, seed: 23 },
    )?;
    let doc = micro_document();
    let input = crate::encoder::ModelInput::from_document(&doc);
    let embed = grad_check_params(
        &model.params,
        |g| {
            let e = model.embed(g, &input)?;
            weighted_sum(g, e, 24)
        },
        STEP,
        Coords::NonzeroPlusSample { extra_per_param: 4, seed: 25 },
    )?;
    Ok(vec![
        CheckRow::new(Scope::Encoder, "encoder block (inputs)", inputs),
        CheckRow::new(Scope::Encoder, "encoder block (params)", params),
        CheckRow::new(Scope::Encoder, "embedding sum (params)", embed),
    ])
}

/// Six tokens in two three-token segments side by side.
pub fn micro_document() -> TokenizedDocument {
    let boxes = [
        [100, 100, 140, 120],
        [150, 100, 190, 120],
        [200, 100, 240, 120],
        [100, 130, 140, 150],
        [150, 130, 190, 150],
        [200, 130, 240, 150],
    ];
    TokenizedDocument {
        tokens: vec![97, 98, 99, 100, 101, 102],
        token_global_positions: (1..=6).collect(),
        token_boxes: boxes.iter().map(|&b| GridBox(b)).collect(),
        token_segments: vec![vec![0, 1, 2], vec![3, 4, 5]],
        word_of_token: (0..6).collect(),
        segment_source: vec![0, 1],
    }
}

fn micro_plan(doc: &TokenizedDocument) -> MaskPlan {
    MaskPlan {
        mlm_masked_words: vec![1, 4],
        lop_masked_segments: vec![1],
        mlm_targets: vec![(1, doc.tokens[1]), (4, doc.tokens[4])],
        lop_targets: (0..3).map(|i| LopTarget { token: 3 + i, local_position: i + 1, segment: 1 }).collect(),
        replacements: vec![Replacement::Mask; 2],
    }
}

/// Coefficients of the MLM, LOP and TSC sums in one checked loss.
type Weights = fn(&DocumentPass) -> [f64; 3];

fn combine(g: &mut Graph, terms: [Option<Var>; 3], weights: [f64; 3]) -> Result<Var> {
    let mut total = None;
    for (sum, w) in terms.into_iter().zip(weights) {
        if let (Some(v), true) = (sum, w != 0.0) {
            let t = g.scale(v, w);
            total = Some(match total {
                Some(acc) => g.add(acc, t)?,
                None => t,
            });
        }
    }
    total.ok_or_else(|| Error::InvalidDocument("micro instance produced no loss term".into()))
}

/// Clustering sum with every target held at a fixed value. Central
/// differences of this match the stop-gradient derivative exactly, since
/// the targets then no longer move with the parameters.
fn frozen_clustering(model: &Model, g: &mut Graph, reps: Var, doc: &TokenizedDocument, targets: &[Vec<f64>]) -> Result<Var> {
    let projected = model.predict(g, reps)?;
    let k = doc.token_segments.len();
    let mut total: Option<Var> = None;
    for a in 0..k {
        for b in (0..k).filter(|&b| b != a) {
            let z = g.mean_pool(projected, &doc.token_segments[a])?;
            let v = g.input(Tensor::vector(targets[b].clone()));
            let c = g.cosine_sim(z, v)?;
            total = Some(match total {
                Some(acc) => g.add(acc, c)?,
                None => c,
            });
        }
    }
    let total = total.ok_or_else(|| Error::InvalidDocument("micro instance has one segment".into()))?;
    Ok(g.scale(total, -1.0))
}

/// Central differences over the parameters of `model`, perturbed in place.
fn check_model(model: &mut Model, loss: impl Fn(&Model) -> Result<f64>, analytic: &ParamGrads, seed: u64) -> Result<GradCheck> {
    let coords = Coords::NonzeroPlusSample { extra_per_param: 2, seed };
    let ids: Vec<ParamId> = model.params.iter().map(|(id, _)| id).collect();
    let mut report = GradCheck::empty();
    for id in ids {
        let n = model.params.value(id).len();
        let grad = analytic.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for j in select_coords(&grad, id, coords) {
            let orig = model.params.value(id).data()[j];
            model.params.get_mut(id).value.data_mut()[j] = orig + STEP;
            let plus = loss(model)?;
            model.params.get_mut(id).value.data_mut()[j] = orig - STEP;
            let minus = loss(model)?;
            model.params.get_mut(id).value.data_mut()[j] = orig;
            report.record(id.0, j, grad[j], (plus - minus) / (2.0 * STEP));
        }
    }
    Ok(report)
}

fn losses() -> Result<Vec<CheckRow>> {
    let mut model = Model::init(micro_config(), 31)?;
    let doc = micro_document();
    let plan = micro_plan(&doc);
    // gates wide open so the two segments always form a pair
    let cfg = PretrainConfig { theta_dis: 1e4, theta_sim: -1.0, ..PretrainConfig::default() };

    let cases: [(&str, Weights); 4] = [
        ("masked language modeling", |p| [1.0 / p.mlm.count as f64, 0.0, 0.0]),
        ("local order prediction", |p| [0.0, 1.0 / p.lop.count as f64, 0.0]),
        ("segment clustering", |p| [0.0, 0.0, 1.0 / p.tsc.count as f64]),
        ("total loss", |p| {
            let d = PretrainConfig::default();
            [1.0 / p.mlm.count as f64, d.alpha / p.lop.count as f64, d.gamma / p.tsc.count as f64]
        }),
    ];
    let mut rows = Vec::with_capacity(cases.len());
    for (i, (name, weights)) in cases.into_iter().enumerate() {
        let (analytic, targets, w) = {
            let pass = forward_document(&model, &doc, &plan, &cfg, true, None)?;
            // all ordered pairs are gated, which frozen_clustering relies on
            let k = doc.token_segments.len();
            if pass.tsc.count != k * (k - 1) {
                return Err(Error::InvalidDocument("micro instance gated only some pairs".into()));
            }
            let targets = pooled_rows(pass.graph.value(pass.reps).data(), model.config.hidden_dim, &doc.token_segments);
            let w = weights(&pass);
            let DocumentPass { mut graph, mlm, lop, tsc, .. } = pass;
            let loss = combine(&mut graph, [mlm.sum, lop.sum, tsc.sum], w)?;
            (graph.backward(loss)?.into_param_grads(), targets, w)
        };
        let loss = |m: &Model| -> Result<f64> {
            let pass = forward_document(m, &doc, &plan, &cfg, false, None)?;
            let DocumentPass { mut graph, reps, mlm, lop, .. } = pass;
            let tsc = frozen_clustering(m, &mut graph, reps, &doc, &targets)?;
            let v = combine(&mut graph, [mlm.sum, lop.sum, Some(tsc)], w)?;
            Ok(graph.value(v).item())
        };
        let report = check_model(&mut model, loss, &analytic, 32 + i as u64)?;
        rows.push(CheckRow::new(Scope::Losses, name, report));
    }
    Ok(rows)
}
