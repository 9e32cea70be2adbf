//! Vanilla versus decoupled self-attention over an `N × N_v` query grid,
//! with exact score-entry, FLOP and score-memory accounting.
//!
//! FLOP convention: a `m×k · k×n` product costs `2mkn`; every score entry
//! costs [`FLOPS_PER_SCORE_ENTRY`] for scaling and a numerically stable
//! softmax (max, subtract, exp, accumulate, divide). Score memory counts the
//! score tensor of a whole pass, stored as `f64`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FLOPS_PER_SCORE_ENTRY: u64 = 6;
const SCORE_BYTES: u64 = std::mem::size_of::<f64>() as u64;

/// Query embeddings, row-major `[instance][point][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGrid {
    pub n: usize,
    pub n_v: usize,
    pub d: usize,
    pub values: Vec<f64>,
}

impl QueryGrid {
    pub fn new(n: usize, n_v: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || n_v == 0 || d == 0 {
            return Err(Error::InvalidArgument("grid dimensions must be positive".into()));
        }
        if values.len() != n * n_v * d {
            return Err(Error::ShapeMismatch { expected: n * n_v * d, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite query value".into()));
        }
        Ok(QueryGrid { n, n_v, d, values })
    }

    /// Entries drawn uniformly from `[-1, 1]`.
    pub fn random(n: usize, n_v: usize, d: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        QueryGrid::new(n, n_v, d, (0..n * n_v * d).map(|_| rng.random_range(-1.0..=1.0)).collect())
    }

    pub fn token(&self, i: usize, j: usize) -> &[f64] {
        let at = (i * self.n_v + j) * self.d;
        &self.values[at..at + self.d]
    }
}

/// Single-head projections, each `d × d` row-major, applied as `x · W`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnWeights {
    pub d: usize,
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
}

impl AttnWeights {
    /// Entries uniform in `±1/sqrt(d)`.
    pub fn random(d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (d as f64).sqrt();
        let mut m = || (0..d * d).map(|_| rng.random_range(-s..=s)).collect::<Vec<f64>>();
        AttnWeights { d, wq: m(), wk: m(), wv: m(), wo: m() }
    }

    pub fn identity(d: usize) -> Self {
        let eye: Vec<f64> = (0..d * d).map(|k| if k / d == k % d { 1.0 } else { 0.0 }).collect();
        AttnWeights { d, wq: eye.clone(), wk: eye.clone(), wv: eye.clone(), wo: eye }
    }

    fn check(&self, d: usize) -> Result<()> {
        if self.d != d || [&self.wq, &self.wk, &self.wv, &self.wo].iter().any(|w| w.len() != d * d) {
            return Err(Error::ShapeMismatch { expected: d, got: self.d });
        }
        Ok(())
    }
}

/// Weights of the two decoupled passes. Shared unless built with
/// [`DecoupledWeights::separate`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledWeights {
    pub inter: AttnWeights,
    pub intra: AttnWeights,
}

impl DecoupledWeights {
    pub fn shared(w: AttnWeights) -> Self {
        DecoupledWeights { inter: w.clone(), intra: w }
    }

    pub fn separate(inter: AttnWeights, intra: AttnWeights) -> Self {
        DecoupledWeights { inter, intra }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AttnCost {
    pub score_entries: u64,
    pub flops: u64,
    pub peak_score_bytes: u64,
    pub wall_time: f64,
}

/// `a (m×k) · b (k×n)` into `out (m×n)`.
fn matmul(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &x) in a[i * k..(i + 1) * k].iter().enumerate() {
            for (o, &y) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * y;
            }
        }
    }
}

/// In-place row softmax of an `l × l` block.
fn softmax_rows(s: &mut [f64], l: usize) {
    for row in s.chunks_mut(l) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

/// Attention over one sequence `x` (`l × d`); `scores` receives the `l × l`
/// probabilities. Returns the output sequence and the number of score
/// entries written.
fn attend(x: &[f64], l: usize, d: usize, w: &AttnWeights, scores: &mut [f64]) -> (Vec<f64>, u64) {
    let (mut q, mut k, mut v) = (vec![0.0; l * d], vec![0.0; l * d], vec![0.0; l * d]);
    matmul(x, &w.wq, &mut q, l, d, d);
    matmul(x, &w.wk, &mut k, l, d, d);
    matmul(x, &w.wv, &mut v, l, d, d);
    let scale = 1.0 / (d as f64).sqrt();
    let mut written = 0u64;
    for i in 0..l {
        for j in 0..l {
            let dot: f64 = q[i * d..(i + 1) * d].iter().zip(&k[j * d..(j + 1) * d]).map(|(a, b)| a * b).sum();
            scores[i * l + j] = dot * scale;
            written += 1;
        }
    }
    softmax_rows(scores, l);
    let mut o = vec![0.0; l * d];
    matmul(scores, &v, &mut o, l, l, d);
    let mut y = vec![0.0; l * d];
    matmul(&o, &w.wo, &mut y, l, d, d);
    (y, written)
}

/// Analytic FLOPs of `batches` independent attentions over length `l`.
fn attention_flops(batches: u64, l: u64, d: u64) -> u64 {
    batches * (4 * 2 * l * d * d + 2 * 2 * l * l * d + FLOPS_PER_SCORE_ENTRY * l * l)
}

pub fn vanilla_flops(n: usize, n_v: usize, d: usize) -> u64 {
    attention_flops(1, (n * n_v) as u64, d as u64)
}

pub fn decoupled_flops(n: usize, n_v: usize, d: usize) -> u64 {
    let (n, n_v, d) = (n as u64, n_v as u64, d as u64);
    attention_flops(n_v, n, d) + attention_flops(n, n_v, d)
}

/// Attention over the flattened sequence of all `N·N_v` queries.
pub fn vanilla_attention(grid: &QueryGrid, w: &AttnWeights) -> Result<(QueryGrid, AttnCost)> {
    w.check(grid.d)?;
    let start = Instant::now();
    let l = grid.n * grid.n_v;
    let mut scores = vec![0.0; l * l];
    let (values, written) = attend(&grid.values, l, grid.d, w, &mut scores);
    let cost = AttnCost {
        score_entries: written,
        flops: vanilla_flops(grid.n, grid.n_v, grid.d),
        peak_score_bytes: scores.len() as u64 * SCORE_BYTES,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((QueryGrid { values, ..*grid }, cost))
}

/// One batched pass: `batches` independent sequences of length `l`, where
/// `index(b, t)` is the grid index of token `t` of batch `b`.
fn batched_pass(
    values: &[f64],
    d: usize,
    batches: usize,
    l: usize,
    index: impl Fn(usize, usize) -> usize + Sync,
    w: &AttnWeights,
    parallel: bool,
) -> (Vec<f64>, u64, u64) {
    let mut scores = vec![0.0; batches * l * l];
    let run = |(b, block): (usize, &mut [f64])| {
        let x: Vec<f64> = (0..l).flat_map(|t| values[index(b, t) * d..(index(b, t) + 1) * d].iter().copied()).collect();
        attend(&x, l, d, w, block)
    };
    let results: Vec<(Vec<f64>, u64)> = if parallel {
        scores.par_chunks_mut(l * l).enumerate().map(run).collect()
    } else {
        scores.chunks_mut(l * l).enumerate().map(run).collect()
    };
    let mut out = vec![0.0; values.len()];
    let mut written = 0;
    for (b, (y, n)) in results.into_iter().enumerate() {
        written += n;
        for t in 0..l {
            let at = index(b, t) * d;
            out[at..at + d].copy_from_slice(&y[t * d..(t + 1) * d]);
        }
    }
    (out, written, scores.len() as u64 * SCORE_BYTES)
}

/// Inter-instance attention for every point slot, then intra-instance
/// attention for every instance.
pub fn decoupled_attention(grid: &QueryGrid, w: &DecoupledWeights) -> Result<(QueryGrid, AttnCost)> {
    decoupled_attention_with(grid, w, false)
}

/// As [`decoupled_attention`]; `parallel` spreads the independent batches
/// of each pass over threads without changing the output.
pub fn decoupled_attention_with(
    grid: &QueryGrid,
    w: &DecoupledWeights,
    parallel: bool,
) -> Result<(QueryGrid, AttnCost)> {
    w.inter.check(grid.d)?;
    w.intra.check(grid.d)?;
    let start = Instant::now();
    let (n, n_v, d) = (grid.n, grid.n_v, grid.d);
    let (mid, e1, b1) = batched_pass(&grid.values, d, n_v, n, |j, i| i * n_v + j, &w.inter, parallel);
    let (values, e2, b2) = batched_pass(&mid, d, n, n_v, |i, j| i * n_v + j, &w.intra, parallel);
    let cost = AttnCost {
        score_entries: e1 + e2,
        flops: decoupled_flops(n, n_v, d),
        peak_score_bytes: b1.max(b2),
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((QueryGrid { values, ..*grid }, cost))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Vanilla,
    Decoupled,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Decoupled => "decoupled",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub variant: Variant,
    pub n: usize,
    pub n_v: usize,
    pub d: usize,
    pub score_entries: u64,
    pub flops: u64,
    pub peak_score_bytes: u64,
    pub median_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub n_v: usize,
    pub d: usize,
    pub repetitions: usize,
    pub seed: u64,
    /// Run the decoupled batches on the thread pool.
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { n_v: 20, d: 32, repetitions: 3, seed: 0, parallel: false }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Both variants for every `N`, vanilla first.
pub fn bench(ns: &[usize], cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.repetitions < 3 {
        return Err(Error::InvalidArgument(format!("at least 3 repetitions required, got {}", cfg.repetitions)));
    }
    let weights = AttnWeights::random(cfg.d, cfg.seed);
    let decoupled = DecoupledWeights::shared(weights.clone());
    let mut rows = Vec::with_capacity(2 * ns.len());
    for &n in ns {
        let grid = QueryGrid::random(n, cfg.n_v, cfg.d, cfg.seed.wrapping_add(n as u64))?;
        for variant in [Variant::Vanilla, Variant::Decoupled] {
            let mut times = Vec::with_capacity(cfg.repetitions);
            let mut cost = AttnCost::default();
            for _ in 0..cfg.repetitions {
                cost = match variant {
                    Variant::Vanilla => vanilla_attention(&grid, &weights)?.1,
                    Variant::Decoupled => decoupled_attention_with(&grid, &decoupled, cfg.parallel)?.1,
                };
                times.push(cost.wall_time);
            }
            rows.push(BenchRow {
                variant,
                n,
                n_v: cfg.n_v,
                d: cfg.d,
                score_entries: cost.score_entries,
                flops: cost.flops,
                peak_score_bytes: cost.peak_score_bytes,
                median_seconds: median(times),
            });
        }
    }
    Ok(rows)
}

/// CSV with a header row. With `timing = false` the seconds column is left
/// empty so the output is reproducible.
pub fn to_csv(rows: &[BenchRow], timing: bool) -> String {
    let mut out = String::from("variant,N,N_v,d,score_entries,flops,peak_score_bytes,median_seconds\n");
    for r in rows {
        let secs = if timing { format!("{:.9}", r.median_seconds) } else { String::new() };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.variant.name(),
            r.n,
            r.n_v,
            r.d,
            r.score_entries,
            r.flops,
            r.peak_score_bytes,
            secs
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    /// `x · Wv · Wo` for every token.
    fn value_output(x: &[f64], d: usize, w: &AttnWeights) -> Vec<f64> {
        let l = x.len() / d;
        let mut v = vec![0.0; l * d];
        let mut y = vec![0.0; l * d];
        matmul(x, &w.wv, &mut v, l, d, d);
        matmul(&v, &w.wo, &mut y, l, d, d);
        y
    }

    #[test]
    fn single_token_is_value_projection() {
        let g = QueryGrid::random(1, 1, 6, 1).unwrap();
        let w = AttnWeights::random(6, 2);
        let (out, cost) = vanilla_attention(&g, &w).unwrap();
        assert!(close(&out.values, &value_output(&g.values, 6, &w), 1e-12));
        assert_eq!(cost.score_entries, 1);
    }

    #[test]
    fn reference_scale_entry_counts() {
        let g = QueryGrid::random(50, 20, 4, 3).unwrap();
        let w = AttnWeights::random(4, 4);
        assert_eq!(vanilla_attention(&g, &w).unwrap().1.score_entries, 1_000_000);
        assert_eq!(decoupled_attention(&g, &DecoupledWeights::shared(w)).unwrap().1.score_entries, 70_000);
    }

    #[test]
    fn identical_tokens_give_identical_rows() {
        let token = [0.3, -0.7, 0.2, 0.9];
        let g = QueryGrid::new(3, 4, 4, token.iter().copied().cycle().take(48).collect()).unwrap();
        let (out, _) = vanilla_attention(&g, &AttnWeights::random(4, 5)).unwrap();
        let first = out.token(0, 0).to_vec();
        for i in 0..3 {
            for j in 0..4 {
                assert!(close(out.token(i, j), &first, 1e-12));
            }
        }
    }

    #[test]
    fn single_instance_reduces_to_intra_pass() {
        let g = QueryGrid::random(1, 7, 5, 6).unwrap();
        let w = DecoupledWeights::separate(AttnWeights::random(5, 7), AttnWeights::random(5, 8));
        let (out, _) = decoupled_attention(&g, &w).unwrap();
        let mid = QueryGrid { values: value_output(&g.values, 5, &w.inter), ..g.clone() };
        let (intra, _) = vanilla_attention(&mid, &w.intra).unwrap();
        assert!(close(&out.values, &intra.values, 1e-12));
    }

    #[test]
    fn constant_instance_axis_keeps_inter_pass_trivial() {
        let (n, n_v, d) = (5, 3, 4);
        let base = QueryGrid::random(1, n_v, d, 9).unwrap();
        let values: Vec<f64> = (0..n).flat_map(|_| base.values.iter().copied()).collect();
        let g = QueryGrid::new(n, n_v, d, values).unwrap();
        let w = AttnWeights::random(d, 10);
        let (mid, _, _) = batched_pass(&g.values, d, n_v, n, |j, i| i * n_v + j, &w, false);
        assert!(close(&mid, &value_output(&g.values, d, &w), 1e-12));
    }

    #[test]
    fn parallel_mode_is_bit_identical() {
        let g = QueryGrid::random(9, 6, 4, 11).unwrap();
        let w = DecoupledWeights::shared(AttnWeights::random(4, 12));
        let (a, ca) = decoupled_attention_with(&g, &w, false).unwrap();
        let (b, cb) = decoupled_attention_with(&g, &w, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            (ca.score_entries, ca.flops, ca.peak_score_bytes),
            (cb.score_entries, cb.flops, cb.peak_score_bytes)
        );
    }

    #[test]
    fn vanilla_bytes_quadruple_when_n_doubles() {
        let rows = bench(&[10, 20], &BenchConfig { n_v: 5, d: 4, ..BenchConfig::default() }).unwrap();
        assert_eq!(rows[2].peak_score_bytes, 4 * rows[0].peak_score_bytes);
        assert!(bench(&[10], &BenchConfig { repetitions: 2, ..BenchConfig::default() }).is_err());
        let csv = to_csv(&rows, false);
        assert!(csv.starts_with("variant,N,N_v,d,score_entries,flops,peak_score_bytes,median_seconds\n"));
        assert!(csv.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn flop_counts_match_hand_totals() {
        // N=2, N_v=3, d=4: L=6.
        assert_eq!(vanilla_flops(2, 3, 4), 8 * 6 * 16 + 4 * 36 * 4 + 6 * 36);
        assert_eq!(
            decoupled_flops(2, 3, 4),
            3 * (8 * 2 * 16 + 4 * 4 * 4 + 6 * 4) + 2 * (8 * 3 * 16 + 4 * 9 * 4 + 6 * 9)
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn softmax_rows_sum_to_one(l in 1usize..12, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s: Vec<f64> = (0..l * l).map(|_| rng.random_range(-30.0..30.0)).collect();
            softmax_rows(&mut s, l);
            for row in s.chunks(l) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }

        #[test]
        fn decoupled_is_cheaper(n in 2usize..30, n_v in 2usize..12) {
            let g = QueryGrid::random(n, n_v, 2, 0).unwrap();
            let w = AttnWeights::random(2, 1);
            let (_, v) = vanilla_attention(&g, &w).unwrap();
            let (_, dc) = decoupled_attention(&g, &DecoupledWeights::shared(w)).unwrap();
            prop_assert_eq!(v.score_entries, ((n * n_v) * (n * n_v)) as u64);
            prop_assert_eq!(dc.score_entries, (n_v * n * n + n * n_v * n_v) as u64);
            prop_assert!(dc.score_entries < v.score_entries);
            prop_assert!(dc.peak_score_bytes < v.peak_score_bytes);
            prop_assert_eq!(v.flops, vanilla_flops(n, n_v, 2));
        }
    }
}
