//! Independent reference computations used by the test suites.
//!
//! Nothing here calls into the code paths it is used to check: permutation
//! groups come from graph-automorphism enumeration, focal terms are evaluated
//! in probability space, assignments by exhaustive search.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::Rng;

use crate::geometry::{ElementClass, MapElement, Point};
use crate::matching::{CostMatrix, Prediction, Slot};

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Index maps that send the chain (or ring) graph on `0..n` onto itself,
/// found by scanning every permutation. Directed chains must also keep the
/// edge orientation.
pub fn automorphisms(n: usize, closed: bool, directed: bool) -> Vec<Vec<usize>> {
    type Cache = HashMap<(usize, bool, bool), Vec<Vec<usize>>>;
    static CACHE: Mutex<Option<Cache>> = Mutex::new(None);
    let key = (n, closed, directed);
    if let Some(hit) = CACHE.lock().unwrap().as_ref().and_then(|c| c.get(&key).cloned()) {
        return hit;
    }
    let edges: Vec<(usize, usize)> = (0..if closed { n } else { n - 1 }).map(|j| (j, (j + 1) % n)).collect();
    let has_edge = |a: usize, b: usize| edges.iter().any(|&(x, y)| (x, y) == (a, b) || (!directed && (y, x) == (a, b)));
    let result: Vec<Vec<usize>> =
        permutations(n).into_iter().filter(|p| edges.iter().all(|&(a, b)| has_edge(p[a], p[b]))).collect();
    CACHE.lock().unwrap().get_or_insert_with(HashMap::new).insert(key, result.clone());
    result
}

pub fn brute_force_assignment(m: &CostMatrix) -> f64 {
    permutations(m.size())
        .iter()
        .map(|p| p.iter().enumerate().map(|(r, &c)| m.get(r, c)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

fn prob(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn fl_pos(p: f64) -> f64 {
    -0.25 * (1.0 - p).powi(2) * p.ln()
}

fn fl_neg(p: f64) -> f64 {
    -0.75 * p.powi(2) * (1.0 - p).ln()
}

/// Probability-space derivatives of the focal terms, chained through the sigmoid.
fn dfl_pos_dx(p: f64) -> f64 {
    let d = -0.25 * (-2.0 * (1.0 - p) * p.ln() + (1.0 - p).powi(2) / p);
    d * p * (1.0 - p)
}

fn dfl_neg_dx(p: f64) -> f64 {
    let d = -0.75 * (2.0 * p * (1.0 - p).ln() - p.powi(2) / (1.0 - p));
    d * p * (1.0 - p)
}

/// Class cost with `alpha = 0.25`, `gamma = 2`.
pub fn focal_cost(logits: &[f64], class: ElementClass) -> f64 {
    let p = prob(logits[class.index()]);
    fl_pos(p) - fl_neg(p)
}

pub fn focal_loss(logits: &[f64], target: Option<ElementClass>) -> f64 {
    logits
        .iter()
        .enumerate()
        .map(|(k, &x)| if target.map(|c| c.index()) == Some(k) { fl_pos(prob(x)) } else { fl_neg(prob(x)) })
        .sum()
}

fn manhattan(a: Point, b: Point) -> f64 {
    (a.x - b.x).abs() + (a.y - b.y).abs() + (a.z - b.z).abs()
}

fn best_perm(pred: &[Point], gt: &MapElement) -> (Vec<usize>, f64) {
    automorphisms(gt.len(), gt.closed, gt.directed)
        .into_iter()
        .map(|p| {
            let c: f64 = pred.iter().zip(&p).map(|(&a, &k)| manhattan(a, gt.points[k])).sum();
            (p, c)
        })
        .fold((Vec::new(), f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

pub fn position_cost(pred: &[Point], gt: &MapElement) -> f64 {
    best_perm(pred, gt).1 / gt.len() as f64
}

/// Minimum over every prediction-to-slot bijection and every point order of
/// the summed instance costs.
pub fn brute_force_hierarchical(preds: &[Prediction], gts: &[MapElement], slots: &[Slot]) -> f64 {
    let pair: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| {
            slots
                .iter()
                .map(|s| match s {
                    Some(g) => focal_cost(&p.logits, gts[*g].class) + position_cost(&p.points, &gts[*g]),
                    None => 0.0,
                })
                .collect()
        })
        .collect();
    permutations(preds.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &s)| pair[i][s]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Random ground truths (classes mixed) and predictions in the unit box.
pub fn random_problem<R: Rng>(
    rng: &mut R,
    n_preds: usize,
    n_gts: usize,
    n_points: usize,
) -> (Vec<MapElement>, Vec<Prediction>) {
    let gts = (0..n_gts)
        .map(|_| {
            let class = ElementClass::ALL[rng.random_range(0..4)];
            let points = (0..n_points).map(|_| Point::new(rng.random(), rng.random())).collect();
            MapElement::new(class, points).unwrap()
        })
        .collect();
    let preds = (0..n_preds)
        .map(|_| {
            let logits = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let points = (0..n_points).map(|_| Point::new(rng.random(), rng.random())).collect();
            Prediction::new(logits, points)
        })
        .collect();
    (gts, preds)
}

pub fn central_diff(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            buf[i] = x[i] + h;
            let up = f(&buf);
            buf[i] = x[i] - h;
            let down = f(&buf);
            buf[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Richardson combination `(4 C(h/2) - C(h)) / 3` of central differences,
/// fourth order in `h`. Lets `h` stay large enough that roundoff does not
/// swamp small derivatives of smooth functions.
pub fn richardson_diff(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let coarse = central_diff(x, h, &f);
    let fine = central_diff(x, h / 2.0, &f);
    fine.iter().zip(&coarse).map(|(a, b)| (4.0 * a - b) / 3.0).collect()
}

/// `|a - b| <= rel * max(|a|, |b|)`, or both below `abs_floor`.
pub fn rel_close(a: f64, b: f64, rel: f64, abs_floor: f64) -> bool {
    let diff = (a - b).abs();
    diff <= abs_floor || diff <= rel * a.abs().max(b.abs())
}

pub fn flatten(points: &[Point]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

pub fn unflatten(x: &[f64]) -> Vec<Point> {
    x.chunks(3).map(|c| Point::new3(c[0], c[1], c[2])).collect()
}

/// Term-by-term one-to-one loss under a given instance map, with default
/// weights `(2, 5, 0.005)`, wrap edge of open elements excluded. Returns
/// `(total, d/d points, d/d logits)`.
pub fn one2one_reference(
    preds: &[Prediction],
    gts: &[MapElement],
    slots: &[Slot],
    slot_of_pred: &[usize],
) -> (f64, Vec<Vec<Point>>, Vec<Vec<f64>>) {
    let (wc, wp, wd) = (2.0, 5.0, 0.005);
    let mut total = 0.0;
    let mut gp = vec![];
    let mut gl = vec![];
    for (i, pred) in preds.iter().enumerate() {
        let target = slots[slot_of_pred[i]];
        let class = target.map(|g| gts[g].class.index());
        let mut dl = vec![0.0; pred.logits.len()];
        for (k, &x) in pred.logits.iter().enumerate() {
            let p = prob(x);
            if class == Some(k) {
                total += wc * fl_pos(p);
                dl[k] = wc * dfl_pos_dx(p);
            } else {
                total += wc * fl_neg(p);
                dl[k] = wc * dfl_neg_dx(p);
            }
        }
        gl.push(dl);
        let mut dp = vec![Point::ZERO; pred.points.len()];
        if let Some(g) = target {
            let gt = &gts[g];
            let (perm, cost) = best_perm(&pred.points, gt);
            total += wp * cost;
            for (j, d) in dp.iter_mut().enumerate() {
                let diff = pred.points[j] - gt.points[perm[j]];
                let s = |v: f64| if v == 0.0 { 0.0 } else { v.signum() };
                *d += Point::new3(s(diff.x), s(diff.y), s(diff.z)) * wp;
            }
            let n = pred.points.len();
            let edges = if gt.closed { n } else { n - 1 };
            for j in 0..edges {
                let k = (j + 1) % n;
                let a = pred.points[j] - pred.points[k];
                let b = gt.points[perm[j]] - gt.points[perm[k]];
                let la = a.dot(a).sqrt();
                let lb = b.dot(b).sqrt();
                if la == 0.0 || lb == 0.0 {
                    continue;
                }
                total -= wd * a.dot(b) / (la * lb);
                // gradient of -a.b/(|a||b|) wrt a, componentwise
                let ab = a.dot(b);
                let ga = Point::new3(
                    -(b.x * la * la - ab * a.x) / (la.powi(3) * lb),
                    -(b.y * la * la - ab * a.y) / (la.powi(3) * lb),
                    -(b.z * la * la - ab * a.z) / (la.powi(3) * lb),
                );
                dp[j] += ga * wd;
                dp[k] -= ga * wd;
            }
        }
        gp.push(dp);
    }
    (total, gp, gl)
}

/// All-point interpolated average precision from a ranked list of
/// true/false-positive flags, by explicit enumeration of the PR curve.
pub fn average_precision(ranked_tp: &[bool], n_gt: usize) -> f64 {
    let mut curve = Vec::new();
    let mut tp = 0usize;
    for (i, &hit) in ranked_tp.iter().enumerate() {
        tp += hit as usize;
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
    }
    // Precision at recall r is the best precision at any recall >= r.
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, &(r, _)) in curve.iter().enumerate() {
        if r > prev_recall {
            let p = curve[i..].iter().map(|c| c.1).fold(0.0, f64::max);
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
    }
    ap
}

/// Chamfer distance by explicit nearest-neighbour scans.
pub fn chamfer(a: &[Point], b: &[Point]) -> f64 {
    let d = |p: &Point, q: &Point| ((p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2)).sqrt();
    let ab: f64 =
        a.iter().map(|p| b.iter().map(|q| d(p, q)).fold(f64::INFINITY, f64::min)).sum::<f64>() / a.len() as f64;
    let ba: f64 =
        b.iter().map(|q| a.iter().map(|p| d(p, q)).fold(f64::INFINITY, f64::min)).sum::<f64>() / b.len() as f64;
    (ab + ba) / 2.0
}
