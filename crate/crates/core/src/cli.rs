//! Command-line entry point.
//!
//! Usage errors exit 2, runtime failures exit 1 after printing one line:
//! `error kind=<Kind> msg="<message>"`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    cross_view_overlap, five_point_grid, overlap_contrast, penalty_sensitivity, sparse_solution_oracle,
    OverlapConfig, SamplingMode, SparseInstance, DEFAULT_BUDGET, DEFAULT_PENALTY,
};
use crate::error::{Error, Result};
use crate::geometry::{make_plane_depths, Camera, PlaneSpacing};
use crate::renderer::{render_view_weighted, BlendMode};
use crate::scene::{gen_synthetic, load_scene, preset, write_depth_outputs, Image};
use crate::trainer::{
    evaluate, interpolate_inputs, load_checkpoint, steps_per_epoch, train_from, TrainConfig, TrainOutput,
    TrainState,
};

#[derive(Debug, Parser)]
#[command(name = "permpi", version, about = "Per-view MPI fields: synthesis, training, rendering and analysis")]
pub struct Cli {
    /// Worker threads for rendering and training [default: available parallelism]
    #[arg(long, global = true, env = "PERMPI_WORKERS")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic scene with exact ground-truth depth
    GenSynthetic(GenArgs),
    /// Train per-view MPIs on a scene directory
    Train(TrainArgs),
    /// Render a novel view from a checkpoint
    Render(RenderArgs),
    /// Score held-out views with PSNR and SSIM
    Eval(EvalArgs),
    /// Measure cross-view sample overlap for stratified and plane-constrained sampling
    AnalyzeOverlap(OverlapArgs),
    /// Exhaustively minimize the sparse per-ray objective on a grid
    SparseOracle(SparseArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Scene preset: one-plane, two-plane or three-view-arc
    #[arg(long, default_value = "two-plane")]
    pub preset: String,
    /// Output directory
    #[arg(long, env = "PERMPI_OUT")]
    pub out: PathBuf,
    /// Texture seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image width in pixels [default: 64]
    #[arg(long)]
    pub width: Option<usize>,
    /// Image height in pixels [default: 64]
    #[arg(long)]
    pub height: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scene directory holding manifest.json
    #[arg(long)]
    pub scene: PathBuf,
    /// Output directory for checkpoints, config and log
    #[arg(long, env = "PERMPI_OUT")]
    pub out: PathBuf,
    /// TOML file with training settings; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Resume from this checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Training epochs [default: 50]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Input rays per batch [default: 1024]
    #[arg(long)]
    pub batch: Option<usize>,
    /// Unseen-view rays per step [default: 1024]
    #[arg(long)]
    pub unseen_rays: Option<usize>,
    /// Planes per MPI [default: 80]
    #[arg(long)]
    pub planes: Option<usize>,
    /// Hidden layers per field [default: 4]
    #[arg(long)]
    pub layers: Option<usize>,
    /// Hidden width [default: 256]
    #[arg(long)]
    pub width: Option<usize>,
    /// Positional-encoding frequencies for the plane coordinate [default: 10]
    #[arg(long)]
    pub freqs: Option<usize>,
    /// Drop the view direction from the network input
    #[arg(long)]
    pub no_direction: bool,
    /// Appearance consistency weight [default: 1]
    #[arg(long)]
    pub lambda_ac: Option<f64>,
    /// Depth consistency weight on unseen views [default: 1]
    #[arg(long)]
    pub lambda_dc: Option<f64>,
    /// Depth consistency weight on input views [default: 1]
    #[arg(long)]
    pub lambda_dc_input: Option<f64>,
    /// Epoch at which the consistency losses switch on [default: 15]
    #[arg(long)]
    pub schedule_epoch: Option<usize>,
    /// Plane spacing: linear-depth or linear-disparity [default: linear-depth]
    #[arg(long)]
    pub spacing: Option<PlaneSpacing>,
    /// Seed for initialization and sampling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Numbered checkpoint every N epochs, 0 for final only [default: 5]
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Train a single MPI anchored at this input view
    #[arg(long)]
    pub single_mpi: Option<usize>,
    /// Rays rendered together while accumulating gradients [default: 128]
    #[arg(long)]
    pub chunk_rays: Option<usize>,
    /// Suppress per-epoch progress lines
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Checkpoint file or training output directory
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Pose between input views: `a:b:u`
    #[arg(long, default_value = "0:1:0.5")]
    pub pose_interp: String,
    /// Output PNG; depth artifacts are written next to it
    #[arg(long, env = "PERMPI_OUT")]
    pub out: PathBuf,
    /// Output width [default: input width]
    #[arg(long)]
    pub width: Option<usize>,
    /// Output height [default: input height]
    #[arg(long)]
    pub height: Option<usize>,
    /// MPI blend weights: as-printed or inverse-distance
    #[arg(long, default_value_t = BlendMode::AsPrinted)]
    pub blend: BlendMode,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scene directory holding manifest.json
    #[arg(long)]
    pub scene: PathBuf,
    /// Checkpoint file or training output directory
    #[arg(long)]
    pub ckpt: PathBuf,
    /// MPI blend weights: as-printed or inverse-distance
    #[arg(long, default_value_t = BlendMode::AsPrinted)]
    pub blend: BlendMode,
    /// Score the input views instead of the held-out ones
    #[arg(long)]
    pub inputs: bool,
    /// Also write the table to this file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OverlapArgs {
    /// Rig from a synthetic preset
    #[arg(long, default_value = "three-view-arc", conflicts_with = "scene")]
    pub preset: String,
    /// Rig from a scene directory instead
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Stratified samples per ray
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    /// Shared planes for plane-constrained sampling
    #[arg(long, default_value_t = 80)]
    pub planes: usize,
    /// Random rays per ordered view pair
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    /// Match distance [default: 1e-3 * (far - near)]
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Plane spacing: linear-depth or linear-disparity
    #[arg(long, default_value_t = PlaneSpacing::LinearDepth)]
    pub spacing: PlaneSpacing,
    /// Monte-Carlo seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for report.csv and histogram.csv
    #[arg(long, env = "PERMPI_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SparseArgs {
    /// Target color `r,g,b`
    #[arg(long, default_value = "0.5,0.5,0.5")]
    pub cgt: String,
    /// Samples per ray
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    /// Cost per nonzero entry
    #[arg(long, default_value_t = DEFAULT_PENALTY)]
    pub penalty: f64,
    /// Search-node budget
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    pub budget: u64,
    /// Extra penalty weights to report the minimizer for
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub sensitivity: Vec<f64>,
}

fn parse_rgb(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("--cgt `{s}`: {e}")))?;
    parts
        .try_into()
        .map_err(|_| Error::Config(format!("--cgt `{s}` needs three components")))
}

fn parse_interp(s: &str) -> Result<(usize, usize, f64)> {
    let bad = || Error::Config(format!("--pose-interp `{s}` must look like a:b:u"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let a = parts[0].parse().map_err(|_| bad())?;
    let b = parts[1].parse().map_err(|_| bad())?;
    let u = parts[2].parse().map_err(|_| bad())?;
    Ok((a, b, u))
}

/// Merges the optional config file with the flags; flags win.
/// Config file (or `base`, or the defaults) with command-line flags on top.
pub fn train_config(args: &TrainArgs, base: Option<&TrainConfig>) -> Result<TrainConfig> {
    let mut c = match (&args.config, base) {
        (Some(p), _) => TrainConfig::load(p)?,
        (None, Some(b)) => b.clone(),
        (None, None) => TrainConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag { c.$field = v; })*
        };
    }
    set!(epochs => epochs, batch => rays_per_batch, unseen_rays => unseen_rays, planes => planes,
         layers => hidden_layers, width => width, freqs => position_freqs, lambda_ac => lambda_ac,
         lambda_dc => lambda_dc, lambda_dc_input => lambda_dc_input, schedule_epoch => schedule_epoch,
         spacing => spacing, seed => seed, checkpoint_every => checkpoint_every, chunk_rays => chunk_rays);
    if args.single_mpi.is_some() {
        c.single_mpi = args.single_mpi;
    }
    if args.no_direction {
        c.use_direction = false;
    }
    c.validate()?;
    Ok(c)
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let mut spec = preset(&a.preset)?;
    if let Some(w) = a.width {
        spec.focal *= w as f64 / spec.width as f64;
        spec.width = w;
    }
    if let Some(h) = a.height {
        spec.height = h;
    }
    let s = gen_synthetic(&spec, a.seed, Some(&a.out))?;
    println!(
        "wrote {} ({} input, {} held-out views, {}x{})",
        a.out.display(),
        s.scene.inputs.len(),
        s.scene.heldout.len(),
        spec.width,
        spec.height
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let (cfg, state) = match &a.resume {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            let cfg = train_config(a, Some(&ckpt.config))?;
            let arch = |c: &TrainConfig| {
                (c.planes, c.hidden_layers, c.width, c.position_freqs, c.use_direction, c.spacing, c.single_mpi)
            };
            if arch(&cfg) != arch(&ckpt.config) {
                return Err(Error::Config(
                    "field architecture flags differ from the checkpoint being resumed".into(),
                ));
            }
            (cfg, ckpt.state)
        }
        None => {
            let cfg = train_config(a, None)?;
            let state = TrainState::new(&scene, &cfg)?;
            (cfg, state)
        }
    };
    let steps = steps_per_epoch(&scene, cfg.rays_per_batch) as u64;
    let quiet = a.quiet;
    let epochs = cfg.epochs;
    let mut progress = |r: &crate::trainer::StepRecord| {
        if !quiet && r.step % steps == 0 {
            eprintln!(
                "epoch {}/{} step {} mse={:.6e} ac={:.3e} dc={:.3e} total={:.6e} lr={:.3e}",
                r.epoch + 1,
                epochs,
                r.step,
                r.mse,
                r.ac,
                r.dc,
                r.total,
                r.lr
            );
        }
    };
    let out = TrainOutput {
        dir: Some(a.out.clone()),
    };
    let (state, _) = train_from(state, &scene, &cfg, &out, &mut progress)?;
    println!(
        "trained {} MPI(s) for {} epochs ({} steps); checkpoint in {}",
        state.mpis.len(),
        state.epoch,
        state.step,
        a.out.display()
    );
    Ok(())
}

fn cmd_render(a: &RenderArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let poses: Vec<_> = ckpt.input_cameras.iter().map(|c| c.pose).collect();
    let (i, j, u) = parse_interp(&a.pose_interp)?;
    let pose = interpolate_inputs(&poses, i, j, u)?;
    let k = ckpt.input_cameras[i].intrinsics;
    let (w, h) = (a.width.unwrap_or(k.width), a.height.unwrap_or(k.height));
    let view = render_view_weighted(&ckpt.state.mpis, &Camera::new(k, pose), w, h, a.blend)?;
    let img = Image::new(w, h, view.color);
    img.save_png(&a.out)?;
    let stem = a.out.with_extension("");
    let depth = write_depth_outputs(&stem, w, h, &view.depth)?;
    println!(
        "wrote {} and {}",
        a.out.display(),
        depth.visualization.display()
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let views = if a.inputs { &scene.inputs } else { &scene.heldout };
    if views.is_empty() {
        return Err(Error::Config("scene has no views in the requested split".into()));
    }
    let report = evaluate(&ckpt.state.mpis, views, a.blend)?;
    let table = report.csv();
    print!("{table}");
    if let Some(p) = &a.out {
        write_text(p, &table)?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn cmd_overlap(a: &OverlapArgs) -> Result<()> {
    let (cameras, near, far): (Vec<Camera>, f64, f64) = match &a.scene {
        Some(dir) => {
            let s = load_scene(dir)?;
            (s.inputs.iter().map(|v| v.camera).collect(), s.near, s.far)
        }
        None => {
            let spec = preset(&a.preset)?;
            let k = spec.intrinsics();
            (spec.inputs.iter().map(|p| Camera::new(k, *p)).collect(), spec.near, spec.far)
        }
    };
    let planes = make_plane_depths(near, far, a.planes, a.spacing)?;
    let epsilon = a.epsilon.unwrap_or(1e-3 * (far - near));
    let mut reports = Vec::new();
    for mode in [SamplingMode::Stratified, SamplingMode::PlaneConstrained] {
        let cfg = OverlapConfig {
            mode,
            planes: planes.clone(),
            samples: a.samples,
            epsilon,
            trials: a.trials,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let r = cross_view_overlap(&cameras, &cfg, &mut rng)?;
        print!("{}", r.table());
        println!();
        reports.push(r);
    }
    let contrast = overlap_contrast(&reports[0], &reports[1]);
    println!(
        "contrast on_plane(plane-constrained) / match(stratified) = {contrast:.3e} (stratified match {:.3e}, on-plane {:.6})",
        reports[0].match_fraction(),
        reports[1].on_plane_fraction()
    );
    if let Some(dir) = &a.out {
        let csv = format!("{}{}", reports[0].csv(), reports[1].csv().lines().skip(1).fold(String::new(), |s, l| s + l + "\n"));
        write_text(&dir.join("report.csv"), &csv)?;
        let hist = format!(
            "{}{}",
            reports[0].histogram_csv(),
            reports[1].histogram_csv().lines().skip(1).fold(String::new(), |s, l| s + l + "\n")
        );
        write_text(&dir.join("histogram.csv"), &hist)?;
    }
    Ok(())
}

fn fmt_rgb(c: &[f64; 3]) -> String {
    format!("({}, {}, {})", c[0], c[1], c[2])
}

fn cmd_sparse(a: &SparseArgs) -> Result<()> {
    let inst = SparseInstance {
        penalty: a.penalty,
        budget: a.budget,
        alpha_grid: five_point_grid(),
        color_grid: five_point_grid(),
        ..SparseInstance::new(parse_rgb(&a.cgt)?, a.m)
    };
    let sol = sparse_solution_oracle(&inst)?;
    println!("C_gt={} M={} penalty={} objective={:.6}", fmt_rgb(&inst.c_gt), inst.m, inst.penalty, sol.objective);
    println!("sample,alpha,c");
    for (i, (a, c)) in sol.alphas.iter().zip(&sol.colors).enumerate() {
        println!("{i},{a},{}", fmt_rgb(c));
    }
    let closed = crate::analysis::is_closed_form(&inst, &sol);
    println!("first-sample closed form: {}", if closed { "yes" } else { "no" });
    for s in penalty_sensitivity(&inst, &a.sensitivity)? {
        println!(
            "penalty={} objective={:.6} closed_form={} minimizer_changed={}",
            s.penalty, s.solution.objective, s.closed_form, s.changed
        );
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenSynthetic(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
        Command::AnalyzeOverlap(a) => cmd_overlap(a),
        Command::SparseOracle(a) => cmd_sparse(a),
    }
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error kind=Config msg=\"--workers must be at least 1\"");
            return 2;
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ").replace('"', "'");
            eprintln!("error kind={} msg=\"{msg}\"", e.kind());
            1
        }
    }
}
