//! Hierarchical bipartite matching.
//!
//! Instance level: a Hungarian assignment over `focal class cost + position
//! cost`, where the position cost is the permutation-group-minimal mean
//! Manhattan distance. Point level: for every positive pair, the member of
//! the ground truth's permutation group with the lowest summed Manhattan
//! distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ElementClass, MapElement, PermutationGroup, Point};
use crate::losses::{focal_neg, focal_pos, FocalParams};

/// One predicted element: per-class logits and `N_v` points.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub points: Vec<Point>,
}

impl Prediction {
    pub fn new(logits: Vec<f64>, points: Vec<Point>) -> Self {
        Prediction { logits, points }
    }

    /// Highest-probability class and its sigmoid score.
    pub fn top_class(&self) -> (ElementClass, f64) {
        let (idx, &logit) =
            self.logits
                .iter()
                .enumerate()
                .fold((0, &f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        (ElementClass::from_index(idx).unwrap_or(ElementClass::PedCrossing), sigmoid(logit))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// How ground-truth point order is treated during matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Modeling {
    /// Every element keeps its stored order: each group is `{identity}`.
    FixedOrder,
    #[default]
    PermutationEquivalent,
}

/// Ground-truth elements together with the permutation group used for each.
#[derive(Debug, Clone)]
pub struct GtSet {
    pub elements: Vec<MapElement>,
    pub groups: Vec<PermutationGroup>,
}

impl GtSet {
    pub fn new(elements: Vec<MapElement>, modeling: Modeling) -> Self {
        let groups = elements
            .iter()
            .map(|e| match modeling {
                Modeling::FixedOrder => PermutationGroup::identity(e.len()),
                Modeling::PermutationEquivalent => e.permutation_group(),
            })
            .collect();
        GtSet { elements, groups }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// Focal class cost of assigning a prediction to `target`:
/// `FL(p, 1) - FL(p, 0)` on the target class, `0` for the empty class.
///
/// Every prediction pays `sum_k FL(p_k, 0)` whatever its slot, so this
/// difference is exactly how the classification loss depends on the
/// assignment.
pub fn focal_cost(logits: &[f64], target: Option<ElementClass>, params: &FocalParams) -> f64 {
    match target {
        Some(class) => {
            let x = logits[class.index()];
            focal_pos(x, params).0 - focal_neg(x, params).0
        }
        None => 0.0,
    }
}

/// Result of scanning a permutation group for the best point order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMatch {
    /// Index into the permutation group.
    pub perm_index: usize,
    /// Summed Manhattan distance under that permutation.
    pub cost: f64,
}

/// `argmin_{perm in group} sum_j |pred_j - gt_{perm(j)}|_1`.
///
/// L1 sums tie exactly on open sets of configurations, so equal costs are
/// broken by summed squared Euclidean distance and only then by lowest group
/// index. Both keys depend on the point correspondence alone, never on the
/// stored order, so the chosen correspondence survives relabeling.
pub fn point_level_match(pred: &[Point], gt: &[Point], group: &PermutationGroup) -> Result<PointMatch> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch { expected: gt.len(), got: pred.len() });
    }
    if group.domain() != gt.len() {
        return Err(Error::ShapeMismatch { expected: group.domain(), got: gt.len() });
    }
    let sq = |perm: &[usize]| -> f64 { pred.iter().zip(perm).map(|(p, &g)| (*p - gt[g]).dot(*p - gt[g])).sum() };
    let mut best = PointMatch { perm_index: 0, cost: f64::INFINITY };
    let mut best_sq = f64::INFINITY;
    for (k, perm) in group.iter().enumerate() {
        let mut cost = 0.0;
        for (p, &g) in pred.iter().zip(perm) {
            cost += p.manhattan(gt[g]);
            if cost > best.cost {
                break;
            }
        }
        if cost < best.cost {
            best = PointMatch { perm_index: k, cost };
            best_sq = f64::NAN;
        } else if cost == best.cost {
            if best_sq.is_nan() {
                best_sq = sq(group.get(best.perm_index));
            }
            let s = sq(perm);
            if s < best_sq {
                best = PointMatch { perm_index: k, cost };
                best_sq = s;
            }
        }
    }
    Ok(best)
}

/// Group-minimal mean Manhattan distance between a prediction and an element.
pub fn position_cost(pred: &[Point], gt: &MapElement) -> Result<f64> {
    position_cost_with(pred, &gt.points, &gt.permutation_group())
}

pub fn position_cost_with(pred: &[Point], gt: &[Point], group: &PermutationGroup) -> Result<f64> {
    Ok(point_level_match(pred, gt, group)?.cost / gt.len() as f64)
}

/// Dense row-major square cost matrix: rows are predictions, columns target slots.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::ShapeMismatch { expected: n * n, got: data.len() });
        }
        Ok(CostMatrix { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::ShapeMismatch { expected: n, got: bad.len() });
        }
        Self::new(n, rows.concat())
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Total cost of `row -> assignment[row]`.
    pub fn assignment_cost(&self, assignment: &[usize]) -> f64 {
        assignment.iter().enumerate().map(|(r, &c)| self.get(r, c)).sum()
    }
}

/// A target slot: a ground-truth index, or `None` for the empty class.
pub type Slot = Option<usize>;

/// Pads `0..n_gts` with empty slots up to `n`.
pub fn pad_targets(n_gts: usize, n: usize) -> Result<Vec<Slot>> {
    one_to_many_targets(n_gts, 1, n)
}

/// Every ground truth repeated `k` times, padded with empty slots to `t`.
pub fn one_to_many_targets(n_gts: usize, k: usize, t: usize) -> Result<Vec<Slot>> {
    if k == 0 {
        return Err(Error::InvalidArgument("repeat count must be >= 1".into()));
    }
    let needed = k * n_gts;
    if needed > t {
        return Err(Error::CapacityExceeded { needed, available: t });
    }
    let mut slots: Vec<Slot> = (0..k).flat_map(|_| (0..n_gts).map(Some)).collect();
    slots.resize(t, None);
    Ok(slots)
}

fn check_shapes(preds: &[Prediction], gts: &GtSet, slots: &[Slot]) -> Result<()> {
    if preds.len() != slots.len() {
        return Err(Error::ShapeMismatch { expected: slots.len(), got: preds.len() });
    }
    for slot in slots.iter().flatten() {
        if *slot >= gts.len() {
            return Err(Error::InvalidArgument(format!("slot references missing ground truth {slot}")));
        }
    }
    for p in preds {
        if p.logits.len() != ElementClass::COUNT {
            return Err(Error::ShapeMismatch { expected: ElementClass::COUNT, got: p.logits.len() });
        }
    }
    Ok(())
}

/// Per-(ground truth, prediction) point matches. Repeated slots share a row.
fn point_matches(preds: &[Prediction], gts: &GtSet, used: &[bool]) -> Result<Vec<Vec<PointMatch>>> {
    (0..gts.len())
        .into_par_iter()
        .map(|g| {
            if !used[g] {
                return Ok(Vec::new());
            }
            preds.iter().map(|p| point_level_match(&p.points, &gts.elements[g].points, &gts.groups[g])).collect()
        })
        .collect()
}

/// Entry `(i, k)`: focal class cost plus position cost for a real slot,
/// class cost alone for an empty slot.
pub fn instance_cost_matrix(
    preds: &[Prediction],
    gts: &GtSet,
    slots: &[Slot],
    focal: &FocalParams,
) -> Result<CostMatrix> {
    check_shapes(preds, gts, slots)?;
    let mut used = vec![false; gts.len()];
    slots.iter().flatten().for_each(|&g| used[g] = true);
    let pm = point_matches(preds, gts, &used)?;
    let n = preds.len();
    let mut data = Vec::with_capacity(n * n);
    for (i, pred) in preds.iter().enumerate() {
        for slot in slots {
            data.push(match *slot {
                Some(g) => {
                    focal_cost(&pred.logits, Some(gts.elements[g].class), focal)
                        + pm[g][i].cost / gts.elements[g].len() as f64
                }
                None => focal_cost(&pred.logits, None, focal),
            });
        }
    }
    CostMatrix::new(n, data)
}

/// Shortest-augmenting-path assignment for a `rows x cols` matrix with
/// `rows <= cols`. Returns the column chosen for every row.
fn solve_lsap(cost: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    debug_assert!(rows <= cols);
    let at = |r: usize, c: usize| cost[r * cols + c];
    // 1-based potentials with a virtual column 0.
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for row in 1..=rows {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_slack = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for c in 1..=cols {
                if used[c] {
                    continue;
                }
                let cur = at(r0 - 1, c - 1) - u[r0] - v[c];
                if cur < min_slack[c] {
                    min_slack[c] = cur;
                    way[c] = col0;
                }
                if min_slack[c] < delta {
                    delta = min_slack[c];
                    col1 = c;
                }
            }
            for c in 0..=cols {
                if used[c] {
                    u[owner[c]] += delta;
                    v[c] -= delta;
                } else {
                    min_slack[c] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; rows];
    for c in 1..=cols {
        if owner[c] != 0 {
            assignment[owner[c] - 1] = c - 1;
        }
    }
    assignment
}

/// Minimum-cost bijection `row -> column` of a square matrix.
pub fn hungarian(cost: &CostMatrix) -> Result<Vec<usize>> {
    let n = cost.size();
    if let Some(pos) = cost.as_slice().iter().position(|c| !c.is_finite()) {
        return Err(Error::InvalidCost { row: pos / n.max(1), col: pos % n.max(1) });
    }
    Ok(solve_lsap(cost.as_slice(), n, n))
}

/// A prediction matched to a real ground-truth slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveMatch {
    pub slot: usize,
    pub gt: usize,
    pub pred: usize,
    /// Index of the chosen permutation in the ground truth's group.
    pub perm_index: usize,
    pub class_cost: f64,
    /// Summed Manhattan distance under the chosen permutation.
    pub point_cost: f64,
}

impl PositiveMatch {
    pub fn position_cost(&self, n_points: usize) -> f64 {
        self.point_cost / n_points as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalAssignment {
    /// Bijection from predictions to target slots.
    pub slot_of_pred: Vec<usize>,
    /// Positive matches, in slot order.
    pub matches: Vec<PositiveMatch>,
    /// For each prediction, its index in `matches` if it is positive.
    pub match_of_pred: Vec<Option<usize>>,
    n_points: usize,
}

impl HierarchicalAssignment {
    pub fn positive_count(&self) -> usize {
        self.matches.len()
    }

    /// Sum of instance-level costs over all slots (empty slots cost zero).
    pub fn total_cost(&self) -> f64 {
        self.matches.iter().map(|m| m.class_cost + m.position_cost(self.n_points)).sum()
    }

    pub fn match_for(&self, pred: usize) -> Option<&PositiveMatch> {
        self.match_of_pred[pred].map(|m| &self.matches[m])
    }
}

/// Instance-level Hungarian assignment followed by point-level permutation
/// selection for every positive pair.
///
/// Empty slots all cost zero, so only the positive columns need solving: the
/// rectangular problem (positives x predictions) has the same optimum as the
/// padded square one. Leftover predictions take the empty slots in order.
pub fn hierarchical_match(
    preds: &[Prediction],
    gts: &GtSet,
    slots: &[Slot],
    focal: &FocalParams,
) -> Result<HierarchicalAssignment> {
    check_shapes(preds, gts, slots)?;
    let n_points = gts.elements.first().map_or(0, MapElement::len);
    let mut used = vec![false; gts.len()];
    slots.iter().flatten().for_each(|&g| used[g] = true);
    let pm = point_matches(preds, gts, &used)?;

    let positives: Vec<(usize, usize)> = slots.iter().enumerate().filter_map(|(s, g)| g.map(|g| (s, g))).collect();
    let n = preds.len();
    let class_costs: Vec<Vec<f64>> = ElementClass::ALL
        .iter()
        .map(|&c| preds.iter().map(|p| focal_cost(&p.logits, Some(c), focal)).collect())
        .collect();

    let mut cost = Vec::with_capacity(positives.len() * n);
    for &(_, g) in &positives {
        let class = gts.elements[g].class.index();
        let len = gts.elements[g].len() as f64;
        for i in 0..n {
            cost.push(class_costs[class][i] + pm[g][i].cost / len);
        }
    }
    if let Some(pos) = cost.iter().position(|c| !c.is_finite()) {
        return Err(Error::InvalidCost { row: pos % n, col: positives[pos / n].0 });
    }
    let pred_of_positive = solve_lsap(&cost, positives.len(), n);

    let mut slot_of_pred = vec![usize::MAX; n];
    let mut match_of_pred = vec![None; n];
    let mut matches = Vec::with_capacity(positives.len());
    for (m, (&(slot, g), &pred)) in positives.iter().zip(&pred_of_positive).enumerate() {
        slot_of_pred[pred] = slot;
        match_of_pred[pred] = Some(m);
        let point = pm[g][pred];
        matches.push(PositiveMatch {
            slot,
            gt: g,
            pred,
            perm_index: point.perm_index,
            class_cost: class_costs[gts.elements[g].class.index()][pred],
            point_cost: point.cost,
        });
    }
    let mut empty = slots.iter().enumerate().filter(|(_, g)| g.is_none()).map(|(s, _)| s);
    for s in slot_of_pred.iter_mut().filter(|s| **s == usize::MAX) {
        *s = empty.next().expect("slot count equals prediction count");
    }
    Ok(HierarchicalAssignment { slot_of_pred, matches, match_of_pred, n_points })
}
