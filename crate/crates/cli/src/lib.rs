//! Command-line front end: scene generation, evaluation, fitting,
//! rasterization, attention benchmarking and plotting.
//!
//! Exit codes: 0 success, 2 I/O, parse or argument error, 3 predictions that
//! do not match the ground truth, 4 divergence during fitting.

pub mod formats;
pub mod svg;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use mapforge_core::attnbench::{self, BenchConfig};
use mapforge_core::fit::{fit_scene, FitConfig, LrSchedule};
use mapforge_core::metric::{evaluate, ApResult};
use mapforge_core::raster::{project_to_pv, rasterize_bev_with};
use mapforge_core::synthetic::{gen_scene, perturb, ClassCounts, PerturbSpec, SceneRecipe};
use mapforge_core::{BevGridSpec, Camera, Modeling, Scene};

use formats::{expand_inputs, read_json, read_scene, to_pretty_json, PredictionFile, SceneFile};

pub const EXIT_IO: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "mapforge", version, about = "Vectorized HD-map modeling, matching and evaluation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate seeded synthetic ground-truth scenes.
    Gen(GenArgs),
    /// Turn ground-truth scenes into noisy scored predictions.
    Perturb(PerturbArgs),
    /// Chamfer-AP evaluation of predictions against ground truth.
    Eval(EvalArgs),
    /// Fit free prediction slots to one scene by gradient descent.
    Fit(FitArgs),
    /// Render a scene to a BEV or perspective-view PGM mask.
    Raster(RasterArgs),
    /// Vanilla versus decoupled self-attention cost table.
    BenchAttn(BenchArgs),
    /// SVG overlay of ground truth and predictions.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory; scenes are written as scene_NNNN.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub scenes: usize,
    #[arg(long, default_value_t = 3)]
    pub dividers: usize,
    #[arg(long, default_value_t = 2)]
    pub boundaries: usize,
    #[arg(long, default_value_t = 2)]
    pub crossings: usize,
    #[arg(long, default_value_t = 2)]
    pub centerlines: usize,
    /// Points per element.
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
    pub dim: u8,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    /// Scene files or directories; scene ids follow this order.
    #[arg(long, required = true, num_args = 1..)]
    pub gt: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub drop: f64,
    #[arg(long, default_value_t = 0.2)]
    pub spurious: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Scene files or directories; scene ids follow this order.
    #[arg(long, required = true, num_args = 1..)]
    pub gt: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1.0,1.5")]
    pub thresholds: Vec<f64>,
    /// Also write the result JSON here.
    #[arg(long)]
    pub json_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    #[value(name = "perm_equiv", alias = "permutation_equivalent")]
    PermEquiv,
    #[value(name = "fixed_order")]
    FixedOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Cosine,
    Constant,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::PermEquiv)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 300)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Cosine)]
    pub schedule: ScheduleArg,
    #[arg(long, default_value_t = 50)]
    pub queries: usize,
    /// 0 disables the one-to-many branch.
    #[arg(long = "one2many-k", default_value_t = 6)]
    pub one2many_k: usize,
    #[arg(long = "one2many-t", default_value_t = 300)]
    pub one2many_t: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub snapshot_every: usize,
    /// Redraw each element's stored point order every iteration.
    #[arg(long)]
    pub relabel: bool,
    #[arg(long)]
    pub trace_out: PathBuf,
    #[arg(long)]
    pub pred_out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("view").required(true).args(["bev", "pv"])))]
pub struct RasterArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub bev: bool,
    #[arg(long)]
    pub pv: bool,
    #[arg(long, default_value_t = 0.3)]
    pub cell_size: f64,
    /// BEV line width in meters; one cell when omitted.
    #[arg(long)]
    pub line_width: Option<f64>,
    /// Fill closed elements in BEV.
    #[arg(long)]
    pub fill: bool,
    #[arg(long, default_value_t = 400.0)]
    pub focal: f64,
    #[arg(long, default_value_t = 640)]
    pub width: usize,
    #[arg(long, default_value_t = 360)]
    pub height: usize,
    #[arg(long, default_value_t = 1.5)]
    pub cam_height: f64,
    #[arg(long, default_value_t = 2.0)]
    pub line_width_px: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "50,75,100,125,150")]
    pub ns: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub nv: usize,
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run decoupled batches on the thread pool.
    #[arg(long)]
    pub parallel: bool,
    /// Leave the timing column empty.
    #[arg(long)]
    pub no_timing: bool,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Which scene of the prediction file to overlay.
    #[arg(long, default_value_t = 0)]
    pub scene_id: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Maps an error chain to a process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<mapforge_core::Error>() {
            return match e {
                mapforge_core::Error::InputMismatch(_) => EXIT_MISMATCH,
                mapforge_core::Error::DivergenceDetected { .. } => EXIT_DIVERGENCE,
                _ => EXIT_IO,
            };
        }
    }
    EXIT_IO
}

/// Writes through a temporary file in the destination directory, then
/// renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Independent per-item seed derived from a base seed.
pub fn derive_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

fn read_scenes(inputs: &[PathBuf]) -> Result<Vec<Scene>> {
    let files = expand_inputs(inputs)?;
    files.par_iter().map(|f| read_scene(f)).collect()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Perturb(a) => cmd_perturb(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Raster(a) => cmd_raster(&a),
        Command::BenchAttn(a) => cmd_bench(&a),
        Command::Plot(a) => cmd_plot(&a),
    }
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let recipe = SceneRecipe {
        counts: ClassCounts {
            ped_crossing: a.crossings,
            divider: a.dividers,
            boundary: a.boundaries,
            centerline: a.centerlines,
        },
        n_points: a.points,
        dim: a.dim,
        ..SceneRecipe::default()
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    (0..a.scenes).into_par_iter().try_for_each(|i| {
        let scene = gen_scene(&SceneRecipe { seed: derive_seed(a.seed, i), ..recipe })?;
        write_atomic(
            &a.out.join(format!("scene_{i:04}.json")),
            to_pretty_json(&SceneFile::from_scene(&scene))?.as_bytes(),
        )
    })?;
    println!("wrote {} scene(s) to {}", a.scenes, a.out.display());
    Ok(())
}

fn cmd_perturb(a: &PerturbArgs) -> Result<()> {
    let scenes = read_scenes(&a.gt)?;
    let spec = PerturbSpec { sigma: a.sigma, drop_prob: a.drop, spurious_rate: a.spurious, ..PerturbSpec::default() };
    let preds: Vec<_> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| perturb(s, i, &spec, derive_seed(a.seed, i)))
        .collect::<mapforge_core::Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let dim = scenes.first().map_or(2, |s| s.dim);
    write_atomic(&a.out, to_pretty_json(&PredictionFile::from_scored(&preds, dim))?.as_bytes())?;
    println!("wrote {} prediction(s) for {} scene(s)", preds.len(), scenes.len());
    Ok(())
}

fn ap_table(r: &ApResult) -> String {
    let mut s = format!("{:<14}", "class");
    for t in &r.thresholds {
        s.push_str(&format!(" {:>8}", format!("AP@{t}")));
    }
    s.push_str(&format!(" {:>8}\n", "AP"));
    for c in &r.classes {
        s.push_str(&format!("{:<14}", c.class.name()));
        for v in &c.ap_at {
            s.push_str(&format!(" {v:>8.4}"));
        }
        s.push_str(&format!(" {:>8.4}\n", c.ap));
    }
    s.push_str(&format!("{:<14} {:>8.4}\n", "mAP", r.map));
    s
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let gts = read_scenes(&a.gt)?;
    let preds = read_json::<PredictionFile>(&a.pred)?.to_scored(&gts)?;
    let result = evaluate(&preds, &gts, &a.thresholds)?;
    let json = to_pretty_json(&result)?;
    print!("{}{}", ap_table(&result), json);
    if let Some(p) = &a.json_out {
        write_atomic(p, json.as_bytes())?;
    }
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let scene = read_scene(&a.gt)?;
    let config = FitConfig {
        modeling: match a.mode {
            ModeArg::PermEquiv => Modeling::PermutationEquivalent,
            ModeArg::FixedOrder => Modeling::FixedOrder,
        },
        n_queries: a.queries,
        one2many_k: a.one2many_k,
        one2many_t: a.one2many_t,
        lr: a.lr,
        schedule: match a.schedule {
            ScheduleArg::Cosine => LrSchedule::Cosine,
            ScheduleArg::Constant => LrSchedule::Constant,
        },
        iterations: a.iters,
        seed: a.seed,
        snapshot_every: a.snapshot_every,
        relabel_each_iteration: a.relabel,
        ..FitConfig::default()
    };
    let trace = fit_scene(&scene, &config)?;
    write_atomic(&a.trace_out, trace.to_csv().as_bytes())?;
    write_atomic(&a.pred_out, to_pretty_json(&PredictionFile::from_scored(&trace.predictions, scene.dim))?.as_bytes())?;
    println!("final mAP {:.4} after {} iterations", trace.final_map(), a.iters);
    Ok(())
}

fn cmd_raster(a: &RasterArgs) -> Result<()> {
    let scene = read_scene(&a.gt)?;
    let mask = if a.bev {
        let spec = BevGridSpec::new(scene.range, a.cell_size)?;
        rasterize_bev_with(&scene, &spec, a.line_width.unwrap_or(a.cell_size), a.fill)?
    } else {
        let camera = Camera::forward(a.focal, a.width, a.height, a.cam_height)?;
        project_to_pv(&scene, &camera, a.line_width_px)?
    };
    write_atomic(&a.out, &mask.to_pgm())?;
    println!("wrote {}x{} mask with {} on-cells", mask.width, mask.height, mask.count_ones());
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let cfg = BenchConfig { n_v: a.nv, d: a.d, repetitions: a.reps, seed: a.seed, parallel: a.parallel };
    let rows = attnbench::bench(&a.ns, &cfg)?;
    let csv = attnbench::to_csv(&rows, !a.no_timing);
    match &a.out {
        Some(p) => write_atomic(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_plot(a: &PlotArgs) -> Result<()> {
    let scene = read_scene(&a.gt)?;
    let preds = match &a.pred {
        Some(p) => {
            // Only the selected scene is overlaid; its id is remapped to the
            // single ground-truth scene given here.
            let mut file = read_json::<PredictionFile>(p)?;
            file.scenes.retain(|s| s.scene_id == a.scene_id);
            file.scenes.iter_mut().for_each(|s| s.scene_id = 0);
            file.to_scored(std::slice::from_ref(&scene))?
        }
        None => Vec::new(),
    };
    write_atomic(&a.out, svg::render(&scene.range, &scene.elements, &preds).as_bytes())?;
    Ok(())
}
