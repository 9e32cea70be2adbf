//! Chamfer-thresholded average precision.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ElementClass, MapElement, Point, Scene};

/// Chamfer thresholds in meters.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.5, 1.0, 1.5];

/// A predicted element with its confidence, tagged with the scene it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredElement {
    pub element: MapElement,
    pub score: f64,
    pub scene_id: usize,
}

/// Symmetric Chamfer distance: the two directed mean nearest-neighbour
/// distances, averaged.
pub fn chamfer_distance(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyGeometry);
    }
    let directed = |from: &[Point], to: &[Point]| {
        from.iter().map(|&p| to.iter().map(|&q| (p - q).dot(p - q)).fold(f64::INFINITY, f64::min).sqrt()).sum::<f64>()
            / from.len() as f64
    };
    Ok(0.5 * (directed(a, b) + directed(b, a)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: ElementClass,
    pub num_gt: usize,
    /// AP at each threshold, aligned with `ApResult::thresholds`.
    pub ap_at: Vec<f64>,
    /// Mean over thresholds.
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub thresholds: Vec<f64>,
    /// Classes with at least one ground truth, in class order.
    pub classes: Vec<ClassAp>,
    pub map: f64,
}

impl ApResult {
    pub fn class(&self, class: ElementClass) -> Option<&ClassAp> {
        self.classes.iter().find(|c| c.class == class)
    }
}

/// Candidate matches of one class, ranked by descending score.
struct RankedClass {
    num_gt: usize,
    /// For each ranked prediction, `(gt id, distance)` sorted by distance,
    /// ties by gt id.
    candidates: Vec<Vec<(usize, f64)>>,
}

impl RankedClass {
    fn build(preds: &[ScoredElement], gts: &[Scene], class: ElementClass) -> Result<Self> {
        let mut gt_ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (s, scene) in gts.iter().enumerate() {
            for (e, el) in scene.elements.iter().enumerate() {
                if el.class == class {
                    let id = gt_ids.len();
                    gt_ids.insert((s, e), id);
                }
            }
        }
        let mut ranked: Vec<&ScoredElement> = preds.iter().filter(|p| p.element.class == class).collect();
        if let Some(bad) = ranked.iter().find(|p| p.scene_id >= gts.len()) {
            return Err(Error::InputMismatch(format!("prediction refers to unknown scene {}", bad.scene_id)));
        }
        if ranked.iter().any(|p| !p.score.is_finite()) {
            return Err(Error::InvalidArgument("non-finite prediction score".into()));
        }
        // Stable: equal scores keep input order.
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
        let candidates = ranked
            .par_iter()
            .map(|p| {
                let scene = &gts[p.scene_id];
                let mut c: Vec<(usize, f64)> = scene
                    .elements
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.class == class)
                    .map(|(e, el)| Ok((gt_ids[&(p.scene_id, e)], chamfer_distance(&p.element.points, &el.points)?)))
                    .collect::<Result<_>>()?;
                c.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                Ok(c)
            })
            .collect::<Result<_>>()?;
        Ok(RankedClass { num_gt: gt_ids.len(), candidates })
    }

    /// Greedy one-to-one matching in rank order: each prediction takes the
    /// closest still-unmatched ground truth within `tau`.
    fn true_positives(&self, tau: f64) -> Vec<bool> {
        let mut taken = vec![false; self.num_gt];
        self.candidates
            .iter()
            .map(|c| match c.iter().take_while(|(_, d)| *d <= tau).find(|(g, _)| !taken[*g]) {
                Some(&(g, _)) => {
                    taken[g] = true;
                    true
                }
                None => false,
            })
            .collect()
    }

    fn ap(&self, tau: f64) -> Option<f64> {
        (self.num_gt > 0).then(|| all_point_ap(&self.true_positives(tau), self.num_gt))
    }
}

/// Area under the precision-recall curve with precision replaced by its
/// running maximum from the right.
fn all_point_ap(tp: &[bool], num_gt: usize) -> f64 {
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += usize::from(t);
        recall.push(hits as f64 / num_gt as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (r, p) in recall.into_iter().zip(precision) {
        if r > prev {
            ap += (r - prev) * p;
            prev = r;
        }
    }
    ap
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("threshold must be positive, got {tau}")))
    }
}

/// AP of one class at one Chamfer threshold, or `None` when the class has no
/// ground truth.
pub fn ap_at_threshold(preds: &[ScoredElement], gts: &[Scene], class: ElementClass, tau: f64) -> Result<Option<f64>> {
    check_tau(tau)?;
    Ok(RankedClass::build(preds, gts, class)?.ap(tau))
}

/// Per-class AP at every threshold, their mean per class, and the mean over
/// classes that have ground truth.
pub fn evaluate(preds: &[ScoredElement], gts: &[Scene], thresholds: &[f64]) -> Result<ApResult> {
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("at least one threshold required".into()));
    }
    thresholds.iter().try_for_each(|&t| check_tau(t))?;
    let mut classes = Vec::new();
    for class in ElementClass::ALL {
        let ranked = RankedClass::build(preds, gts, class)?;
        if ranked.num_gt == 0 {
            continue;
        }
        let ap_at: Vec<f64> = thresholds.iter().map(|&t| ranked.ap(t).unwrap_or(0.0)).collect();
        let ap = ap_at.iter().sum::<f64>() / ap_at.len() as f64;
        classes.push(ClassAp { class, num_gt: ranked.num_gt, ap_at, ap });
    }
    let map = if classes.is_empty() { 0.0 } else { classes.iter().map(|c| c.ap).sum::<f64>() / classes.len() as f64 };
    Ok(ApResult { thresholds: thresholds.to_vec(), classes, map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::PerceptionRange;
    use crate::oracle;
    use proptest::prelude::*;

    fn seg(x0: f64, y0: f64, x1: f64, y1: f64, n: usize) -> Vec<Point> {
        (0..n).map(|i| Point::new(x0, y0).lerp(Point::new(x1, y1), i as f64 / (n - 1) as f64)).collect()
    }

    fn scene(elements: Vec<MapElement>) -> Scene {
        Scene::new(elements, PerceptionRange::default(), 2).unwrap()
    }

    fn divider(points: Vec<Point>) -> MapElement {
        MapElement::new(ElementClass::Divider, points).unwrap()
    }

    fn scored(element: MapElement, score: f64) -> ScoredElement {
        ScoredElement { element, score, scene_id: 0 }
    }

    #[test]
    fn chamfer_examples() {
        let a = seg(0.0, 0.0, 0.0, 10.0, 20);
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer_distance(&[Point::new(0.0, 0.0)], &[Point::new(3.0, 4.0)]).unwrap(), 5.0);
        let b = seg(1.0, 0.0, 1.0, 10.0, 20);
        let d = chamfer_distance(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        assert!((d - oracle::chamfer(&a, &b)).abs() < 1e-12);
        assert_eq!(chamfer_distance(&[], &a), Err(Error::EmptyGeometry));
    }

    #[test]
    fn perfect_and_hopeless_predictions() {
        let gts = vec![divider(seg(0.0, 0.0, 0.0, 10.0, 20)), divider(seg(5.0, 0.0, 5.0, 10.0, 20))];
        let s = [scene(gts.clone())];
        let perfect: Vec<ScoredElement> = gts.iter().map(|g| scored(g.clone(), 1.0)).collect();
        assert_eq!(ap_at_threshold(&perfect, &s, ElementClass::Divider, 0.5).unwrap(), Some(1.0));
        assert_eq!(evaluate(&perfect, &s, &DEFAULT_THRESHOLDS).unwrap().map, 1.0);
        let far: Vec<ScoredElement> = gts
            .iter()
            .map(|g| scored(divider(g.points.iter().map(|&p| p + Point::new(-10.0, 0.0)).collect()), 0.9))
            .collect();
        assert_eq!(ap_at_threshold(&far, &s, ElementClass::Divider, 1.5).unwrap(), Some(0.0));
        assert_eq!(ap_at_threshold(&far, &s, ElementClass::Boundary, 1.5).unwrap(), None);
        assert_eq!(evaluate(&[], &s, &DEFAULT_THRESHOLDS).unwrap().map, 0.0);
    }

    #[test]
    fn hand_pr_curve() {
        let gts: Vec<MapElement> =
            (0..3).map(|k| divider(seg(k as f64 * 5.0, 0.0, k as f64 * 5.0, 10.0, 10))).collect();
        let s = [scene(gts.clone())];
        let near = |g: &MapElement| divider(g.points.iter().map(|&p| p + Point::new(0.1, 0.0)).collect());
        let preds = vec![
            scored(near(&gts[0]), 0.9),
            scored(divider(seg(-12.0, 0.0, -12.0, 10.0, 10)), 0.8),
            scored(near(&gts[1]), 0.7),
            scored(near(&gts[2]), 0.6),
        ];
        let ap = ap_at_threshold(&preds, &s, ElementClass::Divider, 0.5).unwrap().unwrap();
        let expect = oracle::average_precision(&[true, false, true, true], 3);
        assert!((ap - expect).abs() < 1e-15);
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn duplicates_are_false_positives() {
        let g = divider(seg(0.0, 0.0, 0.0, 10.0, 10));
        let s = [scene(vec![g.clone()])];
        let preds = vec![scored(g.clone(), 0.9), scored(g, 0.8)];
        let ap = ap_at_threshold(&preds, &s, ElementClass::Divider, 0.5).unwrap().unwrap();
        assert_eq!(ap, 1.0);
        let tp = RankedClass::build(&preds, &s, ElementClass::Divider).unwrap().true_positives(0.5);
        assert_eq!(tp, vec![true, false]);
    }

    #[test]
    fn unknown_scene_is_an_error() {
        let g = divider(seg(0.0, 0.0, 0.0, 10.0, 10));
        let p = ScoredElement { element: g.clone(), score: 0.5, scene_id: 3 };
        assert!(matches!(evaluate(&[p], &[scene(vec![g])], &DEFAULT_THRESHOLDS), Err(Error::InputMismatch(_))));
        assert!(ap_at_threshold(&[], &[], ElementClass::Divider, 0.0).is_err());
    }

    fn random_case(seed: u64) -> (Vec<ScoredElement>, Vec<Scene>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut scenes = Vec::new();
        let mut preds = Vec::new();
        for s in 0..3 {
            let mut els = Vec::new();
            for _ in 0..rng.random_range(1..5) {
                let (x, y) = (rng.random_range(-10.0..10.0), rng.random_range(-20.0..20.0));
                let g = divider(seg(x, y, x + rng.random_range(-3.0..3.0), y + 5.0, 8));
                for _ in 0..rng.random_range(0..3) {
                    let off = Point::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
                    preds.push(ScoredElement {
                        element: divider(g.points.iter().map(|&p| p + off).collect()),
                        score: rng.random(),
                        scene_id: s,
                    });
                }
                els.push(g);
            }
            scenes.push(scene(els));
        }
        (preds, scenes)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn chamfer_symmetric(seed in 0u64..1000) {
            let (preds, scenes) = random_case(seed);
            if let (Some(p), Some(g)) = (preds.first(), scenes[0].elements.first()) {
                let ab = chamfer_distance(&p.element.points, &g.points).unwrap();
                let ba = chamfer_distance(&g.points, &p.element.points).unwrap();
                prop_assert_eq!(ab, ba);
            }
        }

        #[test]
        fn ap_monotone_in_threshold(seed in 0u64..1000) {
            let (preds, scenes) = random_case(seed);
            let r = evaluate(&preds, &scenes, &[0.25, 0.5, 1.0, 1.5, 3.0]).unwrap();
            for c in &r.classes {
                for w in c.ap_at.windows(2) {
                    prop_assert!(w[0] <= w[1] + 1e-15);
                }
            }
        }

        #[test]
        fn ap_invariant_under_score_transform(seed in 0u64..1000) {
            let (preds, scenes) = random_case(seed);
            let squashed: Vec<ScoredElement> = preds.iter().map(|p| ScoredElement { score: p.score.powi(3) * 0.5 + 0.1, ..p.clone() }).collect();
            let a = evaluate(&preds, &scenes, &DEFAULT_THRESHOLDS).unwrap();
            let b = evaluate(&squashed, &scenes, &DEFAULT_THRESHOLDS).unwrap();
            prop_assert_eq!(a.map, b.map);
        }

        #[test]
        fn ap_invariant_under_rescaling(seed in 0u64..1000) {
            let (preds, scenes) = random_case(seed);
            let scale = |e: &MapElement| divider(e.points.iter().map(|&p| p * 4.0).collect());
            let big_preds: Vec<ScoredElement> = preds.iter().map(|p| ScoredElement { element: scale(&p.element), ..p.clone() }).collect();
            let big_scenes: Vec<Scene> = scenes.iter().map(|s| Scene { elements: s.elements.iter().map(scale).collect(), ..s.clone() }).collect();
            let a = evaluate(&preds, &scenes, &DEFAULT_THRESHOLDS).unwrap();
            let b = evaluate(&big_preds, &big_scenes, &[2.0, 4.0, 6.0]).unwrap();
            prop_assert_eq!(a.map, b.map);
        }
    }
}
