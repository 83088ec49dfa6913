//! Mask-aware bipartite matching between queries and ground-truth objects.
//!
//! Costs combine focal-style classification, box L1 and −GIoU with two mask
//! terms evaluated over the FULL mask-head map: `1 − dice` on probabilities and
//! the mean per-pixel sigmoid focal cost on logits. Losses, by contrast, are
//! ROI-cropped.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{generalized_iou, CxCyWh};
use crate::losses::{focal, l1_box, InstanceTarget, DICE_EPS, FOCAL_ALPHA, FOCAL_GAMMA};
use crate::tensor::{sigmoid_scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Independent per-class sigmoid probabilities.
    pub class_probs: Vec<f64>,
    pub bbox: CxCyWh,
    /// `h' × w'` mask logits.
    pub mask_logits: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub class: f64,
    pub l1: f64,
    pub giou: f64,
    pub dice: f64,
    pub focal_mask: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            class: 2.0,
            l1: 5.0,
            giou: 2.0,
            dice: 1.0,
            focal_mask: 1.0,
        }
    }
}

impl CostWeights {
    pub fn zero() -> Self {
        Self {
            class: 0.0,
            l1: 0.0,
            giou: 0.0,
            dice: 0.0,
            focal_mask: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(query_index, target_index)`, sorted by query index.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

/// Dense row-major cost matrix; rows are queries, columns are targets.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("cost matrix", &[rows, cols], &[data.len()]));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged cost matrix rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Focal-style classification cost at probability `p` of the target class.
pub fn class_cost(p: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    let pos = FOCAL_ALPHA * (1.0 - p).powf(FOCAL_GAMMA) * -(p.max(f64::MIN_POSITIVE)).ln();
    let neg = (1.0 - FOCAL_ALPHA) * p.powf(FOCAL_GAMMA) * -((1.0 - p).max(f64::MIN_POSITIVE)).ln();
    pos - neg
}

/// `1 − dice` between `σ(logits)` and a soft target over the full map.
pub fn dice_cost(logits: &Tensor, target: &Tensor) -> f64 {
    let (mut inter, mut sp, mut st) = (0.0, 0.0, 0.0);
    for (&z, &t) in logits.data().iter().zip(target.data()) {
        let p = sigmoid_scalar(z);
        inter += p * t;
        sp += p;
        st += t;
    }
    1.0 - (2.0 * inter + DICE_EPS) / (sp + st + DICE_EPS)
}

/// Mean per-pixel sigmoid focal cost over the full map.
pub fn focal_mask_cost(logits: &Tensor, target: &Tensor) -> f64 {
    let sum: f64 = logits
        .data()
        .iter()
        .zip(target.data())
        .map(|(&z, &t)| focal(z, t, FOCAL_ALPHA, FOCAL_GAMMA))
        .sum();
    sum / logits.len() as f64
}

pub fn cost_matrix(preds: &[Prediction], targets: &[InstanceTarget], weights: &CostWeights) -> Result<CostMatrix> {
    let mut data = Vec::with_capacity(preds.len() * targets.len());
    for pred in preds {
        for target in targets {
            if pred.mask_logits.dims() != target.soft_mask.dims() {
                return Err(Error::shape(
                    "cost_matrix masks",
                    pred.mask_logits.dims(),
                    target.soft_mask.dims(),
                ));
            }
            let p = pred.class_probs.get(target.class_id).copied().ok_or_else(|| {
                Error::invalid(format!(
                    "target class {} outside the {} predicted classes",
                    target.class_id,
                    pred.class_probs.len()
                ))
            })?;
            let giou = generalized_iou(pred.bbox.to_xyxy(), target.bbox.to_xyxy());
            let mut c = 0.0;
            // skip disabled terms so zero weights give exact zeros
            if weights.class != 0.0 {
                c += weights.class * class_cost(p);
            }
            if weights.l1 != 0.0 {
                c += weights.l1 * l1_box(pred.bbox, target.bbox);
            }
            if weights.giou != 0.0 {
                c += weights.giou * -giou;
            }
            if weights.dice != 0.0 {
                c += weights.dice * dice_cost(&pred.mask_logits, &target.soft_mask);
            }
            if weights.focal_mask != 0.0 {
                c += weights.focal_mask * focal_mask_cost(&pred.mask_logits, &target.soft_mask);
            }
            data.push(c);
        }
    }
    CostMatrix::new(preds.len(), targets.len(), data)
}

/// Shortest-augmenting-path Hungarian solver for `n ≤ m`; returns the row
/// potentials, column potentials and the column assigned to each row.
fn solve_rectangular(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    debug_assert!(n <= m);
    // 1-based; index 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_col = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            row_col[owner[j] - 1] = j - 1;
        }
    }
    (u[1..].to_vec(), v[1..].to_vec(), row_col)
}

/// Square view of the problem with targets on one side and queries on the
/// other, padded with constant-zero dummies, plus optimal dual potentials.
/// Every optimal assignment is a perfect matching on the zero-reduced-cost
/// ("tight") edges.
struct TightGraph<'a> {
    cost: &'a CostMatrix,
    size: usize,
    target_pot: Vec<f64>,
    query_pot: Vec<f64>,
    tol: f64,
}

impl TightGraph<'_> {
    fn cost(&self, t: usize, q: usize) -> f64 {
        if t < self.cost.cols && q < self.cost.rows {
            self.cost.get(q, t)
        } else {
            0.0
        }
    }

    fn tight(&self, t: usize, q: usize) -> bool {
        (self.cost(t, q) - self.target_pot[t] - self.query_pot[q]).abs() <= self.tol
    }
}

/// Re-matches target `t` to query `q` by finding an alternating path that
/// frees `q` while every other unfixed target stays matched.
fn try_rematch(
    g: &TightGraph,
    t: usize,
    q: usize,
    fixed_targets: usize,
    target_of: &mut [usize],
    query_of: &mut [usize],
) -> bool {
    let freed = query_of[t];
    if freed == q {
        return true;
    }
    let displaced = target_of[q];
    if displaced < fixed_targets || displaced == t {
        return false;
    }
    // BFS over targets: a target may move to any tight query except `q`
    let n = g.size;
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut seen_target = vec![false; n];
    seen_target[displaced] = true;
    let mut queue = VecDeque::from([displaced]);
    let mut end = None;
    'search: while let Some(cur) = queue.pop_front() {
        for nq in 0..n {
            if nq == q || nq == query_of[cur] || !g.tight(cur, nq) {
                continue;
            }
            if nq == freed {
                parent[nq] = Some(cur);
                end = Some(nq);
                break 'search;
            }
            let owner = target_of[nq];
            if owner < fixed_targets || owner == t || seen_target[owner] || parent[nq].is_some() {
                continue;
            }
            parent[nq] = Some(cur);
            seen_target[owner] = true;
            queue.push_back(owner);
        }
    }
    let Some(mut nq) = end else {
        return false;
    };
    // shift every target on the path onto its new query
    loop {
        let cur = parent[nq].expect("path");
        let prev = query_of[cur];
        query_of[cur] = nq;
        target_of[nq] = cur;
        if cur == displaced {
            break;
        }
        nq = prev;
    }
    query_of[t] = q;
    target_of[q] = t;
    true
}

/// Minimum-cost one-to-one assignment of size `min(N_q, N_t)`.
///
/// Among optimal assignments the one whose pairs, ordered by target index,
/// have the lexicographically smallest query indices is returned.
pub fn hungarian(cost: &CostMatrix) -> Result<Assignment> {
    let (nq, nt) = (cost.rows, cost.cols);
    if nq == 0 || nt == 0 {
        return Err(Error::invalid("hungarian needs at least one row and one column"));
    }
    if cost.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cost matrix"));
    }
    let size = nq.max(nt);
    let mut target_pot = vec![0.0; size];
    let mut query_pot = vec![0.0; size];
    let mut query_of = vec![usize::MAX; size];
    let mut target_of = vec![usize::MAX; size];
    if nt <= nq {
        let (u, v, row_col) = solve_rectangular(nt, nq, |t, q| cost.get(q, t));
        target_pot[..nt].copy_from_slice(&u);
        query_pot[..nq].copy_from_slice(&v);
        for (t, &q) in row_col.iter().enumerate() {
            query_of[t] = q;
            target_of[q] = t;
        }
    } else {
        let (u, v, row_col) = solve_rectangular(nq, nt, |q, t| cost.get(q, t));
        query_pot[..nq].copy_from_slice(&u);
        target_pot[..nt].copy_from_slice(&v);
        for (q, &t) in row_col.iter().enumerate() {
            query_of[t] = q;
            target_of[q] = t;
        }
    }
    // dummies fill the leftover slots; their potential stays 0
    let spare_queries: Vec<usize> = (0..size).filter(|&q| target_of[q] == usize::MAX).collect();
    let mut spare = spare_queries.into_iter();
    for (t, slot) in query_of.iter_mut().enumerate() {
        if *slot == usize::MAX {
            let q = spare.next().expect("square padding");
            *slot = q;
            target_of[q] = t;
        }
    }

    let scale = cost.data.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let graph = TightGraph {
        cost,
        size,
        target_pot,
        query_pot,
        tol: 1e-10 * scale * size as f64,
    };
    for t in 0..nt {
        // real queries in ascending order, then the first dummy
        let candidates = (0..nq).chain((nq < size).then_some(nq));
        for q in candidates {
            let ok = if q >= nq {
                // any dummy will do: take whichever one is cheapest to reach
                (nq..size).any(|d| graph.tight(t, d) && try_rematch(&graph, t, d, t, &mut target_of, &mut query_of))
            } else {
                graph.tight(t, q) && try_rematch(&graph, t, q, t, &mut target_of, &mut query_of)
            };
            if ok {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (0..nt)
        .filter(|&t| query_of[t] < nq)
        .map(|t| (query_of[t], t))
        .collect();
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(q, t)| cost.get(q, t)).sum();
    Ok(Assignment { pairs, total_cost })
}

/// `hungarian(cost_matrix(..))`; no targets gives an empty assignment.
pub fn match_instances(preds: &[Prediction], targets: &[InstanceTarget], weights: &CostWeights) -> Result<Assignment> {
    if preds.is_empty() || targets.is_empty() {
        return Ok(Assignment {
            pairs: Vec::new(),
            total_cost: 0.0,
        });
    }
    hungarian(&cost_matrix(preds, targets, weights)?)
}
