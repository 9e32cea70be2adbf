//! Training losses with closed-form gradients.
//!
//! All set losses are plain sums over points and instances, evaluated in
//! whatever coordinate frame the caller passes (normalized during fitting).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ElementClass, Point};
use crate::matching::{
    hierarchical_match, one_to_many_targets, sigmoid, GtSet, HierarchicalAssignment, Prediction, Slot,
};
use crate::raster::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams { alpha: 0.25, gamma: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub p2p: f64,
    pub dir: f64,
    pub one2one: f64,
    pub one2many: f64,
    pub dense: f64,
    pub bev_seg: f64,
    pub pv_seg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cls: 2.0,
            p2p: 5.0,
            dir: 0.005,
            one2one: 1.0,
            one2many: 1.0,
            dense: 1.0,
            bev_seg: 1.0,
            pv_seg: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.cls, self.p2p, self.dir, self.one2one, self.one2many, self.dense, self.bev_seg, self.pv_seg];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossConfig {
    pub weights: LossWeights,
    pub focal: FocalParams,
    /// Include the closing `last -> first` edge of open polylines in the
    /// direction loss.
    pub open_wrap_edge: bool,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `FL(p, 1) = -alpha (1-p)^gamma log p` and its derivative in the logit.
pub(crate) fn focal_pos(x: f64, f: &FocalParams) -> (f64, f64) {
    let p = sigmoid(x);
    let q = sigmoid(-x);
    let neg_log_p = softplus(-x);
    let w = q.powf(f.gamma);
    let value = f.alpha * w * neg_log_p;
    let grad = f.alpha * w * (-f.gamma * p * neg_log_p - q);
    (value, grad)
}

/// `FL(p, 0) = -(1-alpha) p^gamma log(1-p)` and its derivative in the logit.
pub(crate) fn focal_neg(x: f64, f: &FocalParams) -> (f64, f64) {
    let p = sigmoid(x);
    let q = sigmoid(-x);
    let neg_log_q = softplus(x);
    let w = p.powf(f.gamma);
    let value = (1.0 - f.alpha) * w * neg_log_q;
    let grad = (1.0 - f.alpha) * w * (p + f.gamma * q * neg_log_q);
    (value, grad)
}

/// Sigmoid focal loss summed over classes, one-vs-all with the target class
/// hot (`None` means every class is negative).
pub fn focal_loss(logits: &[f64], target: Option<ElementClass>, params: &FocalParams) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let grad = logits
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let (v, g) =
                if target.map(ElementClass::index) == Some(k) { focal_pos(x, params) } else { focal_neg(x, params) };
            value += v;
            g
        })
        .collect();
    (value, grad)
}

fn check_pair(pred: &[Point], gt: &[Point], perm: &[usize]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch { expected: gt.len(), got: pred.len() });
    }
    if perm.len() != gt.len() {
        return Err(Error::ShapeMismatch { expected: gt.len(), got: perm.len() });
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Summed Manhattan distance between `pred[j]` and `gt[perm[j]]`. The
/// subgradient is zero on an axis with an exact match.
pub fn p2p_loss(pred: &[Point], gt: &[Point], perm: &[usize]) -> Result<(f64, Vec<Point>)> {
    check_pair(pred, gt, perm)?;
    let mut value = 0.0;
    let grad = pred
        .iter()
        .zip(perm)
        .map(|(&p, &k)| {
            let d = p - gt[k];
            value += d.x.abs() + d.y.abs() + d.z.abs();
            Point::new3(sign(d.x), sign(d.y), sign(d.z))
        })
        .collect();
    Ok((value, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirLoss {
    pub value: f64,
    pub grad: Vec<Point>,
    /// Edges skipped because the ground-truth or predicted edge has zero length.
    pub skipped_edges: usize,
}

/// Negative summed cosine similarity between predicted edges
/// `pred[j] - pred[j+1]` and the matched ground-truth edges
/// `gt[perm[j]] - gt[perm[j+1]]`. Closed elements use all `n` edges; open
/// ones drop the wrap edge unless `wrap_open` is set.
pub fn dir_loss(pred: &[Point], gt: &[Point], perm: &[usize], closed: bool, wrap_open: bool) -> Result<DirLoss> {
    check_pair(pred, gt, perm)?;
    let n = pred.len();
    if n < 2 {
        return Err(Error::DegenerateGeometry("direction loss needs at least two points"));
    }
    let edges = if closed || wrap_open { n } else { n - 1 };
    let mut grad = vec![Point::ZERO; n];
    let mut value = 0.0;
    let mut skipped_edges = 0;
    for j in 0..edges {
        let next = (j + 1) % n;
        let a = pred[j] - pred[next];
        let b = gt[perm[j]] - gt[perm[next]];
        let (na, nb) = (a.norm(), b.norm());
        if nb == 0.0 || na == 0.0 {
            skipped_edges += 1;
            continue;
        }
        let cos = a.dot(b) / (na * nb);
        value -= cos;
        // d cos / d a = b / (|a||b|) - cos * a / |a|^2
        let d_cos = b * (1.0 / (na * nb)) - a * (cos / (na * na));
        grad[j] -= d_cos;
        grad[next] += d_cos;
    }
    Ok(DirLoss { value, grad, skipped_edges })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub name: String,
    pub value: f64,
    pub weight: f64,
}

/// Scalar loss terms plus gradients with respect to the predictions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossReport {
    /// `sum(weight * value)` over `terms`.
    pub total: f64,
    pub terms: Vec<LossTerm>,
    pub grad_points: Vec<Vec<Point>>,
    pub grad_logits: Vec<Vec<f64>>,
    pub skipped_edges: usize,
}

impl LossReport {
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }

    fn push_term(&mut self, name: &str, value: f64, weight: f64) {
        self.total += weight * value;
        self.terms.push(LossTerm { name: name.to_string(), value, weight });
    }
}

/// `cls * L_cls + p2p * L_p2p + dir * L_dir` under a given hierarchical
/// assignment. Classification runs over every slot; point and direction
/// terms over positive slots only.
pub fn one2one_loss(
    preds: &[Prediction],
    gts: &GtSet,
    slots: &[Slot],
    assignment: &HierarchicalAssignment,
    cfg: &LossConfig,
) -> Result<LossReport> {
    if assignment.slot_of_pred.len() != preds.len() || slots.len() != preds.len() {
        return Err(Error::ShapeMismatch { expected: preds.len(), got: assignment.slot_of_pred.len() });
    }
    let w = &cfg.weights;
    let mut report = LossReport {
        grad_points: preds.iter().map(|p| vec![Point::ZERO; p.points.len()]).collect(),
        grad_logits: preds.iter().map(|p| vec![0.0; p.logits.len()]).collect(),
        ..LossReport::default()
    };
    let (mut cls, mut p2p, mut dir) = (0.0, 0.0, 0.0);
    for (i, pred) in preds.iter().enumerate() {
        let target = slots[assignment.slot_of_pred[i]].map(|g| gts.elements[g].class);
        let (v, g) = focal_loss(&pred.logits, target, &cfg.focal);
        cls += v;
        for (acc, g) in report.grad_logits[i].iter_mut().zip(g) {
            *acc += w.cls * g;
        }
    }
    for m in &assignment.matches {
        let gt = &gts.elements[m.gt];
        let perm = gts.groups[m.gt].get(m.perm_index);
        let pred = &preds[m.pred].points;
        let (pv, pg) = p2p_loss(pred, &gt.points, perm)?;
        let d = dir_loss(pred, &gt.points, perm, gt.closed, cfg.open_wrap_edge)?;
        p2p += pv;
        dir += d.value;
        report.skipped_edges += d.skipped_edges;
        for ((acc, a), b) in report.grad_points[m.pred].iter_mut().zip(pg).zip(d.grad) {
            *acc += a * w.p2p + b * w.dir;
        }
    }
    report.push_term("cls", cls, w.cls);
    report.push_term("p2p", p2p, w.p2p);
    report.push_term("dir", dir, w.dir);
    Ok(report)
}

/// One-to-many branch: targets repeated `k` times and padded to the
/// auxiliary bank size, matched hierarchically, scored like `one2one_loss`.
pub fn one2many_loss(
    preds: &[Prediction],
    gts: &GtSet,
    k: usize,
    cfg: &LossConfig,
) -> Result<(LossReport, HierarchicalAssignment)> {
    let slots = one_to_many_targets(gts.len(), k, preds.len())?;
    let assignment = hierarchical_match(preds, gts, &slots, &cfg.focal)?;
    let report = one2one_loss(preds, gts, &slots, &assignment, cfg)?;
    Ok((report, assignment))
}

/// Mean binary cross-entropy between per-cell logits and a binary mask.
pub fn mask_ce_loss(logits: &[f64], mask: &Mask) -> Result<(f64, Vec<f64>)> {
    if logits.len() != mask.data.len() {
        return Err(Error::ShapeMismatch { expected: mask.data.len(), got: logits.len() });
    }
    if logits.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = logits.len() as f64;
    let mut value = 0.0;
    let grad = logits
        .iter()
        .zip(&mask.data)
        .map(|(&x, &m)| {
            let y = f64::from(m);
            value += softplus(x) - y * x;
            (sigmoid(x) - y) / n
        })
        .collect();
    Ok((value / n, grad))
}

/// A mask loss value with its gradient on the logits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskLoss {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl MaskLoss {
    pub fn compute(logits: &[f64], mask: &Mask) -> Result<Self> {
        let (value, grad) = mask_ce_loss(logits, mask)?;
        Ok(MaskLoss { value, grad })
    }
}

/// Inputs to the overall weighted loss. Missing components contribute zero.
#[derive(Debug, Clone, Default)]
pub struct LossComponents {
    pub one2one: Option<LossReport>,
    pub one2many: Option<LossReport>,
    pub bev_seg: Option<MaskLoss>,
    /// One entry per camera; summed.
    pub pv_seg: Vec<MaskLoss>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    /// Terms `one2one`, `one2many`, `bev_seg`, `pv_seg`. Gradients hold the
    /// one-to-one slots followed by the one-to-many slots, already scaled.
    pub report: LossReport,
    pub bev_grad: Vec<f64>,
    pub pv_grads: Vec<Vec<f64>>,
}

/// `one2one_w * L_one2one + one2many_w * L_one2many + dense_w * (bev_w * L_bev + pv_w * L_pv)`.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> TotalLoss {
    let mut report = LossReport::default();
    let add_branch = |r: Option<&LossReport>, name: &str, weight: f64, report: &mut LossReport| {
        let value = r.map_or(0.0, |r| r.total);
        report.push_term(name, value, weight);
        if let Some(r) = r {
            report.skipped_edges += r.skipped_edges;
            report.grad_points.extend(r.grad_points.iter().map(|g| g.iter().map(|&p| p * weight).collect()));
            report.grad_logits.extend(r.grad_logits.iter().map(|g| g.iter().map(|&x| x * weight).collect()));
        }
    };
    add_branch(c.one2one.as_ref(), "one2one", w.one2one, &mut report);
    add_branch(c.one2many.as_ref(), "one2many", w.one2many, &mut report);

    let bev_scale = w.dense * w.bev_seg;
    let pv_scale = w.dense * w.pv_seg;
    report.push_term("bev_seg", c.bev_seg.as_ref().map_or(0.0, |m| m.value), bev_scale);
    report.push_term("pv_seg", c.pv_seg.iter().map(|m| m.value).sum(), pv_scale);
    let bev_grad = c.bev_seg.as_ref().map_or_else(Vec::new, |m| m.grad.iter().map(|g| g * bev_scale).collect());
    let pv_grads = c.pv_seg.iter().map(|m| m.grad.iter().map(|g| g * pv_scale).collect()).collect();
    TotalLoss { report, bev_grad, pv_grads }
}
