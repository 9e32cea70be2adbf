//! Seeded synthetic ground truth and controlled perturbation into scored
//! predictions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{resample, ElementClass, MapElement, PerceptionRange, Point, Scene};
use crate::metric::{chamfer_distance, ScoredElement};

/// Number of elements requested per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub ped_crossing: usize,
    pub divider: usize,
    pub boundary: usize,
    pub centerline: usize,
}

impl ClassCounts {
    pub const ZERO: ClassCounts = ClassCounts { ped_crossing: 0, divider: 0, boundary: 0, centerline: 0 };

    pub fn get(&self, class: ElementClass) -> usize {
        match class {
            ElementClass::PedCrossing => self.ped_crossing,
            ElementClass::Divider => self.divider,
            ElementClass::Boundary => self.boundary,
            ElementClass::Centerline => self.centerline,
        }
    }

    pub fn total(&self) -> usize {
        self.ped_crossing + self.divider + self.boundary + self.centerline
    }
}

impl Default for ClassCounts {
    fn default() -> Self {
        ClassCounts { ped_crossing: 2, divider: 3, boundary: 2, centerline: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneRecipe {
    pub seed: u64,
    pub counts: ClassCounts,
    pub range: PerceptionRange,
    /// Points per element.
    pub n_points: usize,
    /// 2, or 3 for elements with height.
    pub dim: u8,
    pub max_elements: usize,
    /// Arc length bounds of open polylines, meters.
    pub polyline_length: (f64, f64),
    /// Side length bounds of crossings, meters.
    pub crossing_size: (f64, f64),
    /// Maximum heading change per meter of a random walk, radians.
    pub max_curvature: f64,
    /// Lateral offset of a centerline from its source divider, meters.
    pub centerline_offset: f64,
    pub max_attempts: usize,
}

impl Default for SceneRecipe {
    fn default() -> Self {
        SceneRecipe {
            seed: 0,
            counts: ClassCounts::default(),
            range: PerceptionRange::default(),
            n_points: 20,
            dim: 2,
            max_elements: 50,
            polyline_length: (8.0, 25.0),
            crossing_size: (3.0, 8.0),
            max_curvature: 0.08,
            centerline_offset: 1.75,
            max_attempts: 200,
        }
    }
}

impl SceneRecipe {
    pub fn validate(&self) -> Result<()> {
        self.range.validate()?;
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_points < 3 {
            return bad("n_points must be at least 3");
        }
        if self.dim != 2 && self.dim != 3 {
            return bad("dim must be 2 or 3");
        }
        if self.counts.total() > self.max_elements {
            return bad("more elements requested than max_elements");
        }
        let (lo, hi) = self.polyline_length;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("invalid polyline length bounds");
        }
        let (lo, hi) = self.crossing_size;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("invalid crossing size bounds");
        }
        if !(self.max_curvature >= 0.0 && self.max_curvature.is_finite() && self.centerline_offset.is_finite()) {
            return bad("invalid curvature or offset");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive");
        }
        Ok(())
    }

    /// Bounds on the arc length of a generated element: the polyline length
    /// bounds for open classes, the perimeter bounds for crossings.
    pub fn length_bounds(&self, class: ElementClass) -> (f64, f64) {
        if class.is_closed() {
            (3.0 * self.crossing_size.0, 4.0 * self.crossing_size.1)
        } else {
            self.polyline_length
        }
    }

    fn effective_range(&self) -> PerceptionRange {
        match (self.dim, self.range.z_min) {
            (3, None) => PerceptionRange { z_min: Some(-2.0), z_max: Some(2.0), ..self.range },
            _ => self.range,
        }
    }
}

const WALK_STEPS: usize = 48;

fn uniform_point<R: Rng>(rng: &mut R, r: &PerceptionRange) -> Point {
    Point::new(rng.random_range(r.x_min..=r.x_max), rng.random_range(r.y_min..=r.y_max))
}

/// Bounded-curvature random walk of the given length.
fn random_walk<R: Rng>(rng: &mut R, recipe: &SceneRecipe, length: f64) -> Vec<Point> {
    let range = &recipe.range;
    let mut p = uniform_point(rng, range);
    let mut heading = rng.random_range(0.0..std::f64::consts::TAU);
    let ds = length / WALK_STEPS as f64;
    let max_turn = recipe.max_curvature * ds;
    let mut turn_rate = 0.0;
    let mut out = Vec::with_capacity(WALK_STEPS + 1);
    out.push(p);
    for _ in 0..WALK_STEPS {
        // Smoothed: the turn rate itself drifts, clamped to the bound.
        turn_rate = (turn_rate + rng.random_range(-0.5..=0.5) * max_turn).clamp(-max_turn, max_turn);
        heading += turn_rate;
        p += Point::new(heading.cos(), heading.sin()) * ds;
        out.push(p);
    }
    out
}

/// Offsets an open chain laterally by `d` using per-vertex averaged normals.
fn offset_chain(points: &[Point], d: f64) -> Vec<Point> {
    let n = points.len();
    (0..n)
        .map(|i| {
            let a = points[i.saturating_sub(1)];
            let b = points[(i + 1).min(n - 1)];
            let t = b - a;
            let len = t.norm();
            if len == 0.0 {
                points[i]
            } else {
                points[i] + Point::new(-t.y, t.x) * (d / len)
            }
        })
        .collect()
}

fn is_convex(q: &[Point]) -> bool {
    let n = q.len();
    let signs: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b, c) = (q[i], q[(i + 1) % n], q[(i + 2) % n]);
            (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x)
        })
        .collect();
    signs.iter().all(|&s| s > 0.0) || signs.iter().all(|&s| s < 0.0)
}

fn random_quad<R: Rng>(rng: &mut R, recipe: &SceneRecipe) -> Vec<Point> {
    let (lo, hi) = recipe.crossing_size;
    let (w, l) = (rng.random_range(lo..=hi), rng.random_range(lo..=hi));
    let c = uniform_point(rng, &recipe.range);
    let th = rng.random_range(0.0..std::f64::consts::PI);
    let (u, v) = (Point::new(th.cos(), th.sin()), Point::new(-th.sin(), th.cos()));
    let jitter = 0.1 * lo;
    let mut quad: Vec<Point> = [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)]
        .iter()
        .map(|&(a, b)| {
            c + u * (a * w)
                + v * (b * l)
                + Point::new(rng.random_range(-jitter..=jitter), rng.random_range(-jitter..=jitter))
        })
        .collect();
    if rng.random_bool(0.5) {
        quad.reverse();
    }
    quad.rotate_left(rng.random_range(0..4));
    quad
}

fn lift<R: Rng>(rng: &mut R, points: Vec<Point>, dim: u8) -> Vec<Point> {
    if dim == 2 {
        return points;
    }
    let (z0, sx, sy) = (rng.random_range(-0.5..=0.5), rng.random_range(-0.02..=0.02), rng.random_range(-0.02..=0.02));
    points.into_iter().map(|p| Point::new3(p.x, p.y, z0 + sx * p.x + sy * p.y)).collect()
}

fn accept(el: &MapElement, recipe: &SceneRecipe, range: &PerceptionRange) -> bool {
    let (lo, hi) = recipe.length_bounds(el.class);
    let len = el.arc_length();
    el.points.iter().all(|&p| range.contains(p)) && len >= lo && len <= hi
}

fn try_element<R: Rng>(
    rng: &mut R,
    recipe: &SceneRecipe,
    class: ElementClass,
    dividers: &[MapElement],
    k: usize,
) -> Result<Option<MapElement>> {
    let raw = match class {
        ElementClass::PedCrossing => {
            let quad = random_quad(rng, recipe);
            if !is_convex(&quad) {
                return Ok(None);
            }
            quad
        }
        ElementClass::Divider | ElementClass::Boundary => {
            let (lo, hi) = recipe.polyline_length;
            {
                let length = rng.random_range(lo..=hi);
                random_walk(rng, recipe, length)
            }
        }
        ElementClass::Centerline => {
            let base = if dividers.is_empty() {
                let (lo, hi) = recipe.polyline_length;
                {
                    let length = rng.random_range(lo..=hi);
                    random_walk(rng, recipe, length)
                }
            } else {
                dividers[(k + rng.random_range(0..dividers.len())) % dividers.len()].points.clone()
            };
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let mut chain = offset_chain(&base, side * recipe.centerline_offset);
            if rng.random_bool(0.5) {
                chain.reverse();
            }
            chain
        }
    };
    let points = lift(rng, resample(&raw, class.is_closed(), recipe.n_points)?, recipe.dim);
    let el = MapElement::new(class, points)?;
    Ok(accept(&el, recipe, &recipe.effective_range()).then_some(el))
}

/// Generates a scene with exactly the requested element counts, each
/// element resampled to `n_points` and lying inside the range.
pub fn gen_scene(recipe: &SceneRecipe) -> Result<Scene> {
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let range = recipe.effective_range();
    let mut elements = Vec::with_capacity(recipe.counts.total());
    let mut dividers: Vec<MapElement> = Vec::new();
    // Dividers first so centerlines can follow them.
    let order = [ElementClass::Divider, ElementClass::Boundary, ElementClass::PedCrossing, ElementClass::Centerline];
    for class in order {
        for k in 0..recipe.counts.get(class) {
            let mut placed = None;
            for _ in 0..recipe.max_attempts {
                if let Some(el) = try_element(&mut rng, recipe, class, &dividers, k)? {
                    placed = Some(el);
                    break;
                }
            }
            let el = placed.ok_or_else(|| {
                Error::GenerationFailed(format!("could not place {class} #{k} after {} attempts", recipe.max_attempts))
            })?;
            if class == ElementClass::Divider {
                dividers.push(el.clone());
            }
            elements.push(el);
        }
    }
    elements.sort_by_key(|e| e.class.index());
    Scene::new(elements, range, recipe.dim)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbSpec {
    /// Per-coordinate Gaussian noise, meters.
    pub sigma: f64,
    pub drop_prob: f64,
    /// Probability, per ground-truth element, of injecting one spurious element.
    pub spurious_rate: f64,
    /// Chamfer distance at which a true element's base score reaches 0.
    pub tau_max: f64,
    /// Standard deviation of additive score noise.
    pub score_noise: f64,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        PerturbSpec { sigma: 0.3, drop_prob: 0.1, spurious_rate: 0.2, tau_max: 1.5, score_noise: 0.05 }
    }
}

impl PerturbSpec {
    pub fn exact() -> Self {
        PerturbSpec { sigma: 0.0, drop_prob: 0.0, spurious_rate: 0.0, ..PerturbSpec::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument("sigma must be nonnegative".into()));
        }
        if !(unit(self.drop_prob) && unit(self.spurious_rate)) {
            return Err(Error::InvalidArgument("probabilities must lie in [0, 1]".into()));
        }
        if !(self.tau_max > 0.0 && self.score_noise >= 0.0 && self.score_noise.is_finite()) {
            return Err(Error::InvalidArgument("invalid score model".into()));
        }
        Ok(())
    }
}

/// Turns ground truth into scored predictions tagged with `scene_id`: noisy
/// copies of surviving elements followed by spurious elements.
pub fn perturb(scene: &Scene, scene_id: usize, spec: &PerturbSpec, seed: u64) -> Result<Vec<ScoredElement>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let score_noise = Normal::new(0.0, spec.score_noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut out = Vec::new();
    for el in &scene.elements {
        // Draws happen unconditionally so the stream layout does not depend on
        // which elements survive.
        let dropped = rng.random::<f64>() < spec.drop_prob;
        let points: Vec<Point> = el
            .points
            .iter()
            .map(|p| {
                let dz = noise.sample(&mut rng);
                let (dx, dy) = (noise.sample(&mut rng), noise.sample(&mut rng));
                Point::new3(p.x + dx, p.y + dy, if scene.dim == 3 { p.z + dz } else { p.z })
            })
            .collect();
        let jitter = score_noise.sample(&mut rng);
        if dropped {
            continue;
        }
        let cd = chamfer_distance(&points, &el.points)?;
        let score = (1.0 - cd / spec.tau_max + jitter).clamp(0.0, 1.0);
        out.push(ScoredElement { element: MapElement { points, ..el.clone() }, score, scene_id });
    }
    let n_points = scene.elements.first().map_or(20, |e| e.len()).max(3);
    let recipe = SceneRecipe { range: scene.range, n_points, dim: scene.dim, ..SceneRecipe::default() };
    for _ in 0..scene.elements.len() {
        if rng.random::<f64>() >= spec.spurious_rate {
            continue;
        }
        let class = ElementClass::from_index(rng.random_range(0..ElementClass::COUNT)).expect("class index in range");
        let mut element = None;
        for _ in 0..recipe.max_attempts {
            if let Some(el) = try_element(&mut rng, &recipe, class, &[], 0)? {
                element = Some(el);
                break;
            }
        }
        if let Some(element) = element {
            out.push(ScoredElement { element, score: rng.random_range(0.0..=0.5), scene_id });
        }
    }
    Ok(out)
}
