use super::{LopTarget, PretrainConfig};
use crate::doc_model::{merged_box, GridBox};
use crate::error::{Error, Result};
use crate::tensor::{argmax, cosine, Graph, Var};

/// A loss summed over its targets. `sum` is `None` when there were no
/// targets (or pairs); such terms are excluded from averages.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Term {
    pub sum: Option<Var>,
    pub count: usize,
    /// Targets whose argmax prediction is correct (classification terms only).
    pub correct: usize,
}

impl Term {
    pub fn is_absent(&self) -> bool {
        self.sum.is_none()
    }

    pub fn sum_value(&self, g: &Graph) -> f64 {
        self.sum.map_or(0.0, |s| g.value(s).item())
    }

    /// Mean over targets, or `None` if absent.
    pub fn mean_value(&self, g: &Graph) -> Option<f64> {
        self.sum.map(|s| g.value(s).item() / self.count as f64)
    }

    /// Mean over targets as a graph node, or `None` if absent.
    pub fn mean(&self, g: &mut Graph) -> Option<Var> {
        self.sum.map(|s| g.scale(s, 1.0 / self.count as f64))
    }
}

fn classification(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Term> {
    if targets.is_empty() {
        return Ok(Term::default());
    }
    let sum = g.cross_entropy_sum(logits, targets)?;
    let value = g.value(logits);
    let correct = targets.iter().enumerate().filter(|&(i, &t)| argmax(value.row(i)) == t).count();
    Ok(Term { sum: Some(sum), count: targets.len(), correct })
}

/// Negative log-likelihood of the original tokens at masked positions.
/// `logits` has one row per target.
pub fn mlm_loss(g: &mut Graph, logits: Var, targets: &[(usize, usize)]) -> Result<Term> {
    let ids: Vec<usize> = targets.iter().map(|&(_, id)| id).collect();
    classification(g, logits, &ids)
}

/// Negative log-likelihood of local positions; class `c` is position `c + 1`.
pub fn lop_loss(g: &mut Graph, logits: Var, targets: &[LopTarget], max_local_pos: usize) -> Result<Term> {
    let mut classes = Vec::with_capacity(targets.len());
    for t in targets {
        if t.local_position == 0 || t.local_position > max_local_pos {
            return Err(Error::LocalPositionOverflow {
                segment: t.segment,
                length: t.local_position,
                max: max_local_pos,
            });
        }
        classes.push(t.local_position - 1);
    }
    classification(g, logits, &classes)
}

/// Mean of the segment's token rows.
pub fn segment_representation(g: &mut Graph, reps: Var, segment: &[usize]) -> Result<Var> {
    g.mean_pool(reps, segment)
}

/// Ordered segment pairs passing both gates.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairSet {
    /// Sorted lexicographically.
    pub pairs: Vec<(usize, usize)>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Keeps one direction (`k < k'`) of every pair.
    pub fn one_direction(mut self) -> Self {
        self.pairs.retain(|&(a, b)| a < b);
        self
    }
}

/// All ordered pairs `(k, k')`, `k != k'`, with center distance `< theta_dis`
/// and pooled cosine `> theta_sim`.
pub fn select_pairs(
    segments: &[Vec<usize>],
    boxes: &[GridBox],
    pooled: &[Vec<f64>],
    theta_dis: f64,
    theta_sim: f64,
) -> Result<PairSet> {
    if pooled.len() != segments.len() {
        return Err(Error::LengthMismatch { what: "pooled", left: segments.len(), right: pooled.len() });
    }
    let centers = segments
        .iter()
        .map(|s| merged_box(s, boxes).map(|b| b.center()))
        .collect::<Result<Vec<_>>>()?;
    let mut pairs = Vec::new();
    for (a, &(ax, ay)) in centers.iter().enumerate() {
        for (b, &(bx, by)) in centers.iter().enumerate().skip(a + 1) {
            if (ax - bx).hypot(ay - by) < theta_dis && cosine(&pooled[a], &pooled[b]) > theta_sim {
                pairs.push((a, b));
                pairs.push((b, a));
            }
        }
    }
    pairs.sort_unstable();
    Ok(PairSet { pairs })
}

/// Summed negative cosine between the predicted pooled representation of
/// `k` and the detached pooled representation of `k'`, over all pairs.
/// `predictor` is applied token-wise before pooling.
pub fn tsc_loss<F>(g: &mut Graph, reps: Var, segments: &[Vec<usize>], pairs: &PairSet, predictor: F) -> Result<Term>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var>,
{
    if pairs.is_empty() {
        return Ok(Term::default());
    }
    let projected = predictor(g, reps)?;
    let mut z: Vec<Option<Var>> = vec![None; segments.len()];
    let mut v: Vec<Option<Var>> = vec![None; segments.len()];
    let mut terms = Vec::with_capacity(pairs.len());
    for &(k, k2) in &pairs.pairs {
        let zk = match z[k] {
            Some(x) => x,
            None => *z[k].insert(segment_representation(g, projected, &segments[k])?),
        };
        let vk = match v[k2] {
            Some(x) => x,
            None => {
                let pooled = segment_representation(g, reps, &segments[k2])?;
                *v[k2].insert(g.detach(pooled))
            }
        };
        terms.push(g.cosine_sim(zk, vk)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(Term { sum: Some(g.scale(total, -1.0)), count: pairs.len(), correct: 0 })
}

/// Whether the clustering term participates in `epoch` (0-based).
pub fn tsc_active(cfg: &PretrainConfig, epoch: usize) -> bool {
    cfg.gamma > 0.0 && (!cfg.tsc_final_epoch_only || epoch + 1 == cfg.epochs)
}

/// `L_mlm + alpha * L_lop + gamma * L_tsc`, with absent components omitted
/// and the clustering term only in epochs where it is active.
pub fn total_loss(mlm: Option<f64>, lop: Option<f64>, tsc: Option<f64>, cfg: &PretrainConfig, epoch: usize) -> f64 {
    let mut total = mlm.unwrap_or(0.0) + cfg.alpha * lop.unwrap_or(0.0);
    if !cfg.tsc_final_epoch_only || epoch + 1 == cfg.epochs {
        total += cfg.gamma * tsc.unwrap_or(0.0);
    }
    total
}
