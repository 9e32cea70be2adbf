//! Fixture builders shared by the benchmarks. Everything is seeded so runs
//! compare like with like.

use mapforge_core::matching::{pad_targets, CostMatrix, Slot};
use mapforge_core::metric::ScoredElement;
use mapforge_core::synthetic::{gen_scene, perturb, PerturbSpec, SceneRecipe};
use mapforge_core::{ElementClass, GtSet, Modeling, Point, Prediction, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn cost_matrix(n: usize, seed: u64) -> CostMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CostMatrix::new(n, (0..n * n).map(|_| rng.random_range(0.0..10.0)).collect()).expect("square")
}

pub fn scenes(count: usize, seed: u64) -> Vec<Scene> {
    (0..count as u64)
        .map(|i| {
            gen_scene(&SceneRecipe { seed: seed.wrapping_add(i), ..SceneRecipe::default() }).expect("default recipe")
        })
        .collect()
}

pub fn predictions(scenes: &[Scene], seed: u64) -> Vec<ScoredElement> {
    scenes
        .iter()
        .enumerate()
        .flat_map(|(i, s)| perturb(s, i, &PerturbSpec::default(), seed.wrapping_add(i as u64)).expect("default spec"))
        .collect()
}

/// A one-to-one matching problem on a normalized synthetic scene:
/// `n_queries` predictions with random logits, half of them near a ground
/// truth element in reversed order, the rest uniform in the unit box.
pub fn matching_problem(n_queries: usize, seed: u64) -> (Vec<Prediction>, GtSet, Vec<Slot>) {
    let scene = &scenes(1, seed)[0];
    let gts = scene.normalized_elements();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_v = gts[0].len();
    let preds = (0..n_queries)
        .map(|q| {
            let logits = (0..ElementClass::COUNT).map(|_| rng.random_range(-3.0..3.0)).collect();
            let points = if q % 2 == 0 {
                let g = &gts[q / 2 % gts.len()];
                g.points.iter().rev().map(|p| Point::new(p.x + rng.random_range(-0.02..0.02), p.y)).collect()
            } else {
                (0..n_v).map(|_| Point::new(rng.random(), rng.random())).collect()
            };
            Prediction::new(logits, points)
        })
        .collect();
    let slots = pad_targets(gts.len(), n_queries).expect("enough queries");
    (preds, GtSet::new(gts, Modeling::PermutationEquivalent), slots)
}
