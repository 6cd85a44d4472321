//! Central-difference gradient checking.

use rand::seq::index::sample;

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;
use crate::rng;

/// Outcome of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheck {
    pub(crate) fn empty() -> Self {
        Self {
            max_rel_error: 0.0,
            worst_input: 0,
            worst_index: 0,
            checked: 0,
        }
    }

    pub(crate) fn record(&mut self, input: usize, index: usize, analytic: f64, numeric: f64) {
        let err = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
        if err > self.max_rel_error || err.is_nan() {
            self.max_rel_error = err;
            self.worst_input = input;
            self.worst_index = index;
        }
        self.checked += 1;
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Checks the gradient of a scalar function of `inputs` against central
/// differences with step `h`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_inputs(None, f, inputs, h)
}

/// Like [`grad_check`], for functions that also read (fixed) parameters
/// from `store`.
pub fn grad_check_inputs<F>(store: Option<&ParamStore>, f: F, inputs: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let graph = || match store {
        Some(s) => Graph::with_params(s),
        None => Graph::new(),
    };
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = graph();
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = graph();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = GradCheck::empty();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for j in 0..inputs[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            report.record(i, j, analytic[j], (plus - minus) / (2.0 * h));
        }
    }
    Ok(report)
}

/// Which parameter coordinates [`grad_check_params`] perturbs.
#[derive(Debug, Clone, Copy)]
pub enum Coords {
    All,
    /// Every coordinate with a nonzero analytic gradient plus up to
    /// `extra_per_param` randomly chosen others per parameter.
    NonzeroPlusSample { extra_per_param: usize, seed: u64 },
}

/// Gradient check with respect to the parameters of a store.
pub fn grad_check_params<F>(store: &ParamStore, f: F, h: f64, coords: Coords) -> Result<GradCheck>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::with_params(store);
        let out = f(&mut g)?;
        g.backward(out)?.into_param_grads()
    };
    let mut work = store.clone();
    let mut report = GradCheck::empty();
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.value(id).len();
        let grad = analytic.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        let selected = select_coords(&grad, id, coords);
        for j in selected {
            let orig = work.value(id).data()[j];
            work.get_mut(id).value.data_mut()[j] = orig + h;
            let plus = eval_params(&work, &f)?;
            work.get_mut(id).value.data_mut()[j] = orig - h;
            let minus = eval_params(&work, &f)?;
            work.get_mut(id).value.data_mut()[j] = orig;
            report.record(id.0, j, grad[j], (plus - minus) / (2.0 * h));
        }
    }
    Ok(report)
}

fn eval_params<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::with_params(store);
    let out = f(&mut g)?;
    Ok(g.value(out).item())
}

/// Coordinates of one parameter that a check with `coords` perturbs.
pub(crate) fn select_coords(grad: &[f64], id: ParamId, coords: Coords) -> Vec<usize> {
    let n = grad.len();
    match coords {
        Coords::All => (0..n).collect(),
        Coords::NonzeroPlusSample { extra_per_param, seed } => {
            let mut sel: Vec<usize> = (0..n).filter(|&j| grad[j] != 0.0).collect();
            let mut r = rng::stream(seed, id.0 as u64, 0);
            sel.extend(sample(&mut r, n, extra_per_param.min(n)));
            sel.sort_unstable();
            sel.dedup();
            sel
        }
    }
}
