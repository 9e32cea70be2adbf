//! Direct gradient fitting of free prediction slots to a ground-truth scene
//! through the matcher and loss stack.
//!
//! Each slot is a raw parameter set (class logits plus normalized points),
//! standing in for one decoder output. Matching is recomputed every
//! iteration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_permutation, ElementClass, MapElement, PermutationGroup, Point, Scene};
use crate::losses::{one2many_loss, one2one_loss, total_loss, LossComponents, LossConfig};
use crate::matching::{hierarchical_match, pad_targets, GtSet, Modeling, Prediction};
use crate::metric::{evaluate, ApResult, ScoredElement, DEFAULT_THRESHOLDS};
use crate::synthetic::{gen_scene, SceneRecipe};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from `lr` to 0 over the run.
    #[default]
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub modeling: Modeling,
    /// One-to-one prediction slots.
    pub n_queries: usize,
    /// Repeat count of the one-to-many branch; 0 disables it.
    pub one2many_k: usize,
    /// Auxiliary bank size.
    pub one2many_t: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub iterations: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// mAP is evaluated every this many iterations and after the last step.
    pub snapshot_every: usize,
    /// Redraw every ground-truth element's stored point order uniformly from
    /// its equivalence group at each iteration, as if the same geometry were
    /// annotated with an arbitrary start point and orientation each time it
    /// is seen.
    pub relabel_each_iteration: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            modeling: Modeling::PermutationEquivalent,
            n_queries: 50,
            one2many_k: 6,
            one2many_t: 300,
            lr: 0.01,
            schedule: LrSchedule::Cosine,
            iterations: 300,
            seed: 0,
            loss: LossConfig::default(),
            snapshot_every: 10,
            relabel_each_iteration: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be nonnegative, got {}", self.lr));
        }
        if self.n_queries == 0 || self.snapshot_every == 0 {
            return bad("n_queries and snapshot_every must be positive".into());
        }
        if self.one2many_k > 0 && self.one2many_t == 0 {
            return bad("one-to-many bank must be nonempty".into());
        }
        self.loss.weights.validate()
    }

    pub fn lr_at(&self, t: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine if self.iterations == 0 => self.lr,
            LrSchedule::Cosine => {
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * t as f64 / self.iterations as f64).cos())
            }
        }
    }
}

/// Free parameters: one-to-one slots and the auxiliary one-to-many bank,
/// both in normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FitParams {
    pub queries: Vec<Prediction>,
    pub aux: Vec<Prediction>,
}

fn random_slot<R: Rng>(rng: &mut R, n_points: usize, dim: u8) -> Prediction {
    let points = (0..n_points)
        .map(|_| {
            let (x, y) = (rng.random::<f64>(), rng.random::<f64>());
            Point::new3(x, y, if dim == 3 { rng.random() } else { 0.0 })
        })
        .collect();
    Prediction::new(vec![0.0; ElementClass::COUNT], points)
}

impl FitParams {
    /// Points uniform in the unit box, logits zero. The auxiliary bank is
    /// drawn from its own stream so the one-to-one slots do not depend on
    /// the bank size.
    pub fn init(config: &FitConfig, n_points: usize, dim: u8) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let queries = (0..config.n_queries).map(|_| random_slot(&mut rng, n_points, dim)).collect();
        let mut aux_rng = ChaCha8Rng::seed_from_u64(config.seed);
        aux_rng.set_stream(1);
        let n_aux = if config.one2many_k > 0 { config.one2many_t } else { 0 };
        let aux = (0..n_aux).map(|_| random_slot(&mut aux_rng, n_points, dim)).collect();
        FitParams { queries, aux }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub lr: f64,
    pub total: f64,
    pub one2one: f64,
    pub one2many: f64,
    pub cls: f64,
    pub p2p: f64,
    pub dir: f64,
    pub aux_positives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Number of parameter updates applied before evaluation.
    pub iteration: usize,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    pub records: Vec<IterRecord>,
    pub snapshots: Vec<Snapshot>,
    pub final_result: ApResult,
    pub predictions: Vec<ScoredElement>,
    pub params: FitParams,
}

impl FitTrace {
    pub fn final_map(&self) -> f64 {
        self.final_result.map
    }

    /// First snapshot iteration whose mAP reaches `target`.
    pub fn iterations_to(&self, target: f64) -> Option<usize> {
        self.snapshots.iter().find(|s| s.map >= target).map(|s| s.iteration)
    }

    /// Fraction of consecutive steps whose total loss did not increase.
    pub fn non_increasing_fraction(&self) -> f64 {
        let steps = self.records.len().saturating_sub(1);
        if steps == 0 {
            return 1.0;
        }
        let ok = self.records.windows(2).filter(|w| w[1].total <= w[0].total).count();
        ok as f64 / steps as f64
    }

    /// One row per iteration; `map` is filled on snapshot iterations.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,lr,total,one2one,one2many,cls,p2p,dir,aux_positives,map\n");
        let map_at = |i: usize| self.snapshots.iter().find(|s| s.iteration == i).map(|s| s.map);
        for r in &self.records {
            let map = map_at(r.iteration).map(|m| format!("{m:.9}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{:e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{}\n",
                r.iteration, r.lr, r.total, r.one2one, r.one2many, r.cls, r.p2p, r.dir, r.aux_positives, map
            ));
        }
        if let Some(s) = self.snapshots.last().filter(|s| s.iteration == self.records.len()) {
            out.push_str(&format!("{},,,,,,,,,{:.9}\n", s.iteration, s.map));
        }
        out
    }
}

/// Scores each slot by its highest class probability and maps its points
/// back to meters, clamped to the range.
pub fn export_predictions(queries: &[Prediction], scene: &Scene, scene_id: usize) -> Result<Vec<ScoredElement>> {
    queries
        .iter()
        .map(|q| {
            let (class, score) = q.top_class();
            let points: Vec<Point> = q
                .points
                .iter()
                .map(|p| {
                    scene.range.denormalize(Point::new3(p.x.clamp(0.0, 1.0), p.y.clamp(0.0, 1.0), p.z.clamp(0.0, 1.0)))
                })
                .collect();
            let element = MapElement::new(class, points)?;
            Ok(ScoredElement { element, score, scene_id })
        })
        .collect()
}

fn snapshot(queries: &[Prediction], scene: &Scene) -> Result<ApResult> {
    evaluate(&export_predictions(queries, scene, 0)?, std::slice::from_ref(scene), &DEFAULT_THRESHOLDS)
}

fn check_scene(scene: &Scene) -> Result<usize> {
    let n_points = scene.elements.first().ok_or_else(|| Error::InvalidArgument("scene has no elements".into()))?.len();
    if let Some(e) = scene.elements.iter().find(|e| e.len() != n_points) {
        return Err(Error::ShapeMismatch { expected: n_points, got: e.len() });
    }
    Ok(n_points)
}

pub fn fit_scene(scene: &Scene, config: &FitConfig) -> Result<FitTrace> {
    let n_points = check_scene(scene)?;
    fit_from(scene, config, FitParams::init(config, n_points, scene.dim))
}

/// Runs the fit from explicit starting parameters.
pub fn fit_from(scene: &Scene, config: &FitConfig, mut params: FitParams) -> Result<FitTrace> {
    config.validate()?;
    let n_points = check_scene(scene)?;
    if params.queries.len() != config.n_queries {
        return Err(Error::ShapeMismatch { expected: config.n_queries, got: params.queries.len() });
    }
    let want_aux = if config.one2many_k > 0 { config.one2many_t } else { 0 };
    if params.aux.len() != want_aux {
        return Err(Error::ShapeMismatch { expected: want_aux, got: params.aux.len() });
    }
    if let Some(q) = params.queries.iter().chain(&params.aux).find(|q| q.points.len() != n_points) {
        return Err(Error::ShapeMismatch { expected: n_points, got: q.points.len() });
    }
    let base = scene.normalized_elements();
    let full_groups: Vec<PermutationGroup> = base.iter().map(MapElement::permutation_group).collect();
    let mut relabel_rng = ChaCha8Rng::seed_from_u64(config.seed);
    relabel_rng.set_stream(2);
    let slots = pad_targets(base.len(), config.n_queries)?;
    let cfg = &config.loss;
    let mut gts = GtSet::new(base.clone(), config.modeling);

    let mut records = Vec::with_capacity(config.iterations);
    let mut snapshots = Vec::new();
    for t in 0..config.iterations {
        if config.relabel_each_iteration {
            let elements = base
                .iter()
                .zip(&full_groups)
                .map(|(e, g)| {
                    let perm = g.get(relabel_rng.random_range(0..g.len()));
                    Ok(MapElement { points: apply_permutation(&e.points, perm)?, ..e.clone() })
                })
                .collect::<Result<Vec<_>>>()?;
            gts = GtSet::new(elements, config.modeling);
        }
        if t % config.snapshot_every == 0 {
            snapshots.push(Snapshot { iteration: t, map: snapshot(&params.queries, scene)?.map });
        }
        let assignment = hierarchical_match(&params.queries, &gts, &slots, &cfg.focal)?;
        let o2o = one2one_loss(&params.queries, &gts, &slots, &assignment, cfg)?;
        let (o2m, aux_positives) = if params.aux.is_empty() {
            (None, 0)
        } else {
            let (r, a) = one2many_loss(&params.aux, &gts, config.one2many_k, cfg)?;
            (Some(r), a.positive_count())
        };
        let record_terms =
            (o2o.total, o2m.as_ref().map_or(0.0, |r| r.total), o2o.term("cls"), o2o.term("p2p"), o2o.term("dir"));
        let total = total_loss(
            &LossComponents { one2one: Some(o2o), one2many: o2m, ..LossComponents::default() },
            &cfg.weights,
        );
        let report = total.report;
        if !report.total.is_finite() {
            return Err(Error::DivergenceDetected { iteration: t });
        }
        let lr = config.lr_at(t);
        records.push(IterRecord {
            iteration: t,
            lr,
            total: report.total,
            one2one: record_terms.0,
            one2many: record_terms.1,
            cls: record_terms.2.unwrap_or(0.0),
            p2p: record_terms.3.unwrap_or(0.0),
            dir: record_terms.4.unwrap_or(0.0),
            aux_positives,
        });
        for (slot, (gp, gl)) in params
            .queries
            .iter_mut()
            .chain(params.aux.iter_mut())
            .zip(report.grad_points.iter().zip(&report.grad_logits))
        {
            for (p, g) in slot.points.iter_mut().zip(gp) {
                *p -= *g * lr;
            }
            for (x, g) in slot.logits.iter_mut().zip(gl) {
                *x -= lr * g;
            }
        }
        if slot_non_finite(&params) {
            return Err(Error::DivergenceDetected { iteration: t });
        }
    }
    let final_result = snapshot(&params.queries, scene)?;
    if snapshots.last().is_none_or(|s| s.iteration != config.iterations) {
        snapshots.push(Snapshot { iteration: config.iterations, map: final_result.map });
    }
    let predictions = export_predictions(&params.queries, scene, 0)?;
    Ok(FitTrace { records, snapshots, final_result, predictions, params })
}

fn slot_non_finite(params: &FitParams) -> bool {
    params
        .queries
        .iter()
        .chain(&params.aux)
        .any(|q| q.logits.iter().any(|x| !x.is_finite()) || q.points.iter().any(|p| !p.is_finite()))
}

/// Per-seed outcome of a paired run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRun {
    pub seed: u64,
    pub map: [f64; 2],
    /// Final AP per class for each arm; `None` when the scene lacks the class.
    pub class_ap: Vec<(ElementClass, [Option<f64>; 2])>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelingAblation {
    pub modes: [Modeling; 2],
    pub runs: Vec<PairedRun>,
    pub mean_map: [f64; 2],
    /// Mean AP per class over seeds where the class is present.
    pub class_mean_ap: Vec<(ElementClass, [f64; 2])>,
    /// Fraction of seeds where the first arm scores strictly higher.
    pub win_rate: f64,
}

impl ModelingAblation {
    pub fn mean_gap(&self) -> f64 {
        self.mean_map[0] - self.mean_map[1]
    }

    pub fn class_gap(&self, class: ElementClass) -> Option<f64> {
        self.class_mean_ap.iter().find(|(c, _)| *c == class).map(|(_, m)| m[0] - m[1])
    }
}

const MIN_ABLATION_SEEDS: usize = 20;

/// Paired runs of two configurations on the same scenes and initializations.
/// Each seed generates its own scene from `recipe` and seeds both fits.
pub fn ablate_modeling(recipe: &SceneRecipe, configs: [&FitConfig; 2], seeds: &[u64]) -> Result<ModelingAblation> {
    if seeds.len() < MIN_ABLATION_SEEDS {
        return Err(Error::InvalidArgument(format!(
            "at least {MIN_ABLATION_SEEDS} seeds required, got {}",
            seeds.len()
        )));
    }
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let scene = gen_scene(&SceneRecipe { seed, ..*recipe })?;
            let fit = |c: &FitConfig| fit_scene(&scene, &FitConfig { seed, ..*c });
            let (a, b) = (fit(configs[0])?, fit(configs[1])?);
            let ap = |r: &ApResult, class| r.class(class).map(|c| c.ap);
            let class_ap =
                ElementClass::ALL.iter().map(|&c| (c, [ap(&a.final_result, c), ap(&b.final_result, c)])).collect();
            Ok(PairedRun { seed, map: [a.final_map(), b.final_map()], class_ap })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = runs.len() as f64;
    let mean_map = [0, 1].map(|i| runs.iter().map(|r| r.map[i]).sum::<f64>() / n);
    let win_rate = runs.iter().filter(|r| r.map[0] > r.map[1]).count() as f64 / n;
    let class_mean_ap = ElementClass::ALL
        .iter()
        .filter_map(|&c| {
            let present: Vec<[f64; 2]> = runs
                .iter()
                .filter_map(|r| r.class_ap.iter().find(|(k, _)| *k == c).and_then(|(_, v)| Some([v[0]?, v[1]?])))
                .collect();
            (!present.is_empty()).then(|| {
                let m = present.len() as f64;
                (c, [0, 1].map(|i| present.iter().map(|v| v[i]).sum::<f64>() / m))
            })
        })
        .collect();
    Ok(ModelingAblation { modes: [configs[0].modeling, configs[1].modeling], runs, mean_map, class_mean_ap, win_rate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct One2ManySetting {
    pub k: usize,
    pub t: usize,
    /// Per seed: snapshot iteration first reaching the target, or `None`.
    pub iterations_to_target: Vec<Option<usize>>,
    /// Mean with unreached targets counted as `iterations + 1`.
    pub mean_iterations: f64,
    pub mean_final_map: f64,
    /// Whether every iteration of every run had exactly `k·|gts|`
    /// auxiliary positives.
    pub positives_exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct One2ManyAblation {
    pub seeds: Vec<u64>,
    /// Fraction of the `K = 0` final mAP used as the per-seed target.
    pub relative_target: f64,
    pub baseline_final_map: Vec<f64>,
    pub settings: Vec<One2ManySetting>,
}

/// Iterations needed to reach `relative_target` times the final mAP of the
/// `K = 0` run, per `(K, T)` setting. Only the one-to-one slots are scored.
pub fn ablate_one2many(
    recipe: &SceneRecipe,
    base: &FitConfig,
    settings: &[(usize, usize)],
    seeds: &[u64],
    relative_target: f64,
) -> Result<One2ManyAblation> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("no seeds".into()));
    }
    let per_seed = seeds
        .par_iter()
        .map(|&seed| {
            let scene = gen_scene(&SceneRecipe { seed, ..*recipe })?;
            let n_gts = scene.elements.len();
            let baseline = fit_scene(&scene, &FitConfig { seed, one2many_k: 0, ..*base })?;
            let target = relative_target * baseline.final_map();
            let runs = settings
                .iter()
                .map(|&(k, t)| {
                    let tr = if k == 0 && t == base.one2many_t {
                        baseline.clone()
                    } else {
                        fit_scene(&scene, &FitConfig { seed, one2many_k: k, one2many_t: t, ..*base })?
                    };
                    let exact = tr.records.iter().all(|r| r.aux_positives == k * n_gts);
                    Ok((tr.iterations_to(target), tr.final_map(), exact))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((baseline.final_map(), runs))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = seeds.len() as f64;
    let settings = settings
        .iter()
        .enumerate()
        .map(|(i, &(k, t))| {
            let iterations_to_target: Vec<Option<usize>> = per_seed.iter().map(|(_, r)| r[i].0).collect();
            let mean_iterations =
                iterations_to_target.iter().map(|v| v.unwrap_or(base.iterations + 1) as f64).sum::<f64>() / n;
            One2ManySetting {
                k,
                t,
                iterations_to_target,
                mean_iterations,
                mean_final_map: per_seed.iter().map(|(_, r)| r[i].1).sum::<f64>() / n,
                positives_exact: per_seed.iter().all(|(_, r)| r[i].2),
            }
        })
        .collect();
    Ok(One2ManyAblation {
        seeds: seeds.to_vec(),
        relative_target,
        baseline_final_map: per_seed.iter().map(|(b, _)| *b).collect(),
        settings,
    })
}
