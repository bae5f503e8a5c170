//! Ray batching, unseen-pose sampling and the epoch loop.
//!
//! Every MPI is supervised on every input view. Once `schedule_epoch` is
//! reached, each step also renders a batch of rays from an interpolated
//! unseen pose through all MPIs and penalizes their disagreement.

mod checkpoint;
mod config;
mod eval;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Rotation3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{adam_step, lr_schedule, AdamState, MlpParams};
use crate::geometry::{make_plane_depths, Camera, Pose};
use crate::losses::{loss_ac_grad, loss_dc_grad, loss_mse_grad};
use crate::renderer::{MpiField, RayQuery, RenderBatch};
use crate::scene::Scene;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use eval::{evaluate, EvalReport, EvalRow};

pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_HEADER: &str = "epoch,step,mse,ac,dc,total,lr,dc_input";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";

/// One supervised input ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySample {
    pub view: usize,
    pub pixel: [f64; 2],
    pub color: [f64; 3],
}

/// Shuffles every input pixel once and cuts the permutation into batches:
/// one epoch, `ceil(pixels / batch_size)` batches.
pub fn sample_input_rays(scene: &Scene, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<RaySample>> {
    assert!(batch_size >= 1);
    let (w, h) = (scene.width(), scene.height());
    let per_view = w * h;
    let mut order: Vec<usize> = (0..scene.inputs.len() * per_view).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&i| {
                    let (view, p) = (i / per_view, i % per_view);
                    let (x, y) = (p % w, p / w);
                    RaySample {
                        view,
                        pixel: [x as f64 + 0.5, y as f64 + 0.5],
                        color: scene.inputs[view].image.data[p],
                    }
                })
                .collect()
        })
        .collect()
}

pub fn steps_per_epoch(scene: &Scene, batch_size: usize) -> usize {
    (scene.inputs.len() * scene.width() * scene.height()).div_ceil(batch_size)
}

/// Geodesic interpolation: translation linearly, rotation along the
/// shortest arc from `a` to `b`.
pub fn interpolate_pose(a: &Pose, b: &Pose, u: f64) -> Pose {
    let delta = Rotation3::from_matrix_unchecked(a.rotation.transpose() * b.rotation);
    let step = Rotation3::new(delta.scaled_axis() * u);
    let rotation = a.rotation * step.matrix();
    Pose::new(rotation, a.translation.lerp(&b.translation, u))
}

/// Random ordered pair of distinct input poses, blended with
/// `u ~ U[0.1, 0.9]`.
pub fn sample_unseen_pose(poses: &[Pose], rng: &mut impl Rng) -> Pose {
    assert!(poses.len() >= 2, "unseen poses need two input poses");
    let i = rng.gen_range(0..poses.len());
    let mut j = rng.gen_range(0..poses.len() - 1);
    if j >= i {
        j += 1;
    }
    let u = rng.gen_range(0.1..0.9);
    interpolate_pose(&poses[i], &poses[j], u)
}

/// Mutable training state; everything needed to continue bit-for-bit.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub mpis: Vec<MpiField>,
    pub adam: Vec<AdamState>,
    /// Input view anchoring each MPI.
    pub references: Vec<usize>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps over the whole run.
    pub step: u64,
    pub rng: ChaCha8Rng,
}

fn field_seed(seed: u64, view: usize) -> u64 {
    seed ^ (view as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl TrainState {
    pub fn new(scene: &Scene, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        scene.validate()?;
        let planes = make_plane_depths(scene.near, scene.far, cfg.planes, cfg.spacing)?;
        let enc = cfg.encoding();
        let references: Vec<usize> = match cfg.single_mpi {
            Some(v) if v >= scene.inputs.len() => {
                return Err(Error::Config(format!(
                    "single_mpi view {v} out of range for {} inputs",
                    scene.inputs.len()
                )))
            }
            Some(v) => vec![v],
            None => (0..scene.inputs.len()).collect(),
        };
        let mpis: Vec<MpiField> = references
            .iter()
            .map(|&v| {
                let params = MlpParams::for_encoding(&enc, cfg.hidden_layers, cfg.width, field_seed(cfg.seed, v));
                MpiField::new(scene.inputs[v].camera, planes.clone(), params, enc)
            })
            .collect();
        let adam = mpis.iter().map(|m| AdamState::new(&m.params)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Self {
            mpis,
            adam,
            references,
            epoch: 0,
            step: 0,
            rng,
        })
    }
}

/// Loss components of one step, as logged.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    /// 1-based global step.
    pub step: u64,
    pub mse: f64,
    pub ac: f64,
    pub dc: f64,
    pub dc_input: f64,
    pub total: f64,
    pub lr: f64,
}

impl StepRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.epoch, self.step, self.mse, self.ac, self.dc, self.total, self.lr, self.dc_input
        )
    }
}

/// Which losses a pass evaluates.
struct PassSpec<'a> {
    gt: Option<&'a [[f64; 3]]>,
    appearance: f64,
    depth: f64,
    mask_threshold: f64,
    /// Depths enter the consistency loss multiplied by this.
    depth_scale: f64,
}

#[derive(Default)]
struct PassLoss {
    mse: f64,
    ac: f64,
    dc: f64,
}

/// Resolves each ray against every MPI, dropping rays that hit a degenerate
/// warp in any of them.
fn resolve_rays(mpis: &[MpiField], rays: &[(Camera, [f64; 2])]) -> Result<(Vec<Vec<RayQuery>>, Vec<usize>)> {
    let mut per_mpi: Vec<Vec<RayQuery>> = vec![Vec::with_capacity(rays.len()); mpis.len()];
    let mut kept = Vec::with_capacity(rays.len());
    'rays: for (r, (cam, px)) in rays.iter().enumerate() {
        let mut qs = Vec::with_capacity(mpis.len());
        for m in mpis {
            match m.query(cam, *px) {
                Ok(q) => qs.push(q),
                Err(Error::DegenerateWarp { .. }) => continue 'rays,
                Err(e) => return Err(e),
            }
        }
        for (dst, q) in per_mpi.iter_mut().zip(qs) {
            dst.push(q);
        }
        kept.push(r);
    }
    Ok((per_mpi, kept))
}

/// Renders `rays` through every MPI in chunks and accumulates the gradient
/// of the weighted losses into `grads`. Losses are normalized by the total
/// number of kept rays, so chunking does not change the objective.
fn run_pass(
    mpis: &[MpiField],
    rays: &[(Camera, [f64; 2])],
    spec: &PassSpec,
    chunk_rays: usize,
    grads: &mut [MlpParams],
) -> Result<PassLoss> {
    let (queries, kept) = resolve_rays(mpis, rays)?;
    let total = kept.len();
    let mut loss = PassLoss::default();
    if total == 0 {
        return Ok(loss);
    }
    let n = mpis.len();
    let gt: Option<Vec<[f64; 3]>> = spec.gt.map(|g| kept.iter().map(|&r| g[r]).collect());
    let mut start = 0;
    while start < total {
        let end = (start + chunk_rays).min(total);
        let frac = (end - start) as f64 / total as f64;
        let batches: Vec<RenderBatch> = mpis
            .par_iter()
            .zip(&queries)
            .map(|(m, q)| m.render_queries(&q[start..end]))
            .collect();
        let colors: Vec<Vec<[f64; 3]>> =
            batches.iter().map(|b| b.outputs.iter().map(|o| o.color).collect()).collect();
        let depths: Vec<Vec<f64>> = batches
            .iter()
            .map(|b| b.outputs.iter().map(|o| o.depth * spec.depth_scale).collect())
            .collect();
        let mut gc = vec![vec![[0.0; 3]; end - start]; n];
        let mut gd = vec![vec![0.0; end - start]; n];
        if let Some(gt) = &gt {
            let (l, g) = loss_mse_grad(&colors, &gt[start..end])?;
            loss.mse += l * frac;
            for (dst, src) in gc.iter_mut().zip(&g) {
                for (a, b) in dst.iter_mut().zip(src) {
                    for c in 0..3 {
                        a[c] += frac * b[c];
                    }
                }
            }
        }
        if n >= 2 && spec.appearance > 0.0 {
            let (l, g) = loss_ac_grad(&colors)?;
            loss.ac += l * frac;
            let s = spec.appearance * frac;
            for (dst, src) in gc.iter_mut().zip(&g) {
                for (a, b) in dst.iter_mut().zip(src) {
                    for c in 0..3 {
                        a[c] += s * b[c];
                    }
                }
            }
        }
        if n >= 2 && spec.depth > 0.0 {
            let mask: Vec<Vec<bool>> = batches
                .iter()
                .map(|b| b.outputs.iter().map(|o| o.transmittance <= spec.mask_threshold).collect())
                .collect();
            let (l, g) = loss_dc_grad(&depths, Some(&mask))?;
            loss.dc += l * frac;
            let s = spec.depth * frac * spec.depth_scale;
            for (dst, src) in gd.iter_mut().zip(&g) {
                for (a, b) in dst.iter_mut().zip(src) {
                    *a += s * b;
                }
            }
        }
        let chunk_grads: Vec<MlpParams> = mpis
            .par_iter()
            .zip(&batches)
            .zip(gc.par_iter().zip(&gd))
            .map(|((m, b), (c, d))| m.backward(b, c, d))
            .collect();
        for (acc, g) in grads.iter_mut().zip(&chunk_grads) {
            acc.add_assign(g);
        }
        start = end;
    }
    Ok(loss)
}

/// Loss and per-MPI parameter gradients for one step, without updating.
pub fn step_gradients(
    state: &mut TrainState,
    scene: &Scene,
    cfg: &TrainConfig,
    batch: &[RaySample],
) -> Result<(StepRecord, Vec<MlpParams>)> {
    let mut grads: Vec<MlpParams> = state.mpis.iter().map(|m| m.params.zeros_like()).collect();
    let consistency = state.epoch >= cfg.schedule_epoch && state.mpis.len() >= 2;
    let rays: Vec<(Camera, [f64; 2])> = batch.iter().map(|r| (scene.inputs[r.view].camera, r.pixel)).collect();
    let gt: Vec<[f64; 3]> = batch.iter().map(|r| r.color).collect();
    let input = run_pass(
        &state.mpis,
        &rays,
        &PassSpec {
            gt: Some(&gt),
            appearance: 0.0,
            depth: if consistency { cfg.lambda_dc_input } else { 0.0 },
            mask_threshold: cfg.transmittance_mask,
            depth_scale: 1.0 / (scene.far - scene.near),
        },
        cfg.chunk_rays,
        &mut grads,
    )?;
    let mut record = StepRecord {
        epoch: state.epoch,
        step: state.step + 1,
        mse: input.mse,
        dc_input: input.dc,
        ..StepRecord::default()
    };
    if consistency && (cfg.lambda_ac > 0.0 || cfg.lambda_dc > 0.0) {
        let pose = sample_unseen_pose(&scene.input_poses(), &mut state.rng);
        let cam = Camera::new(scene.inputs[0].camera.intrinsics, pose);
        let (w, h) = (scene.width(), scene.height());
        let unseen: Vec<(Camera, [f64; 2])> = (0..cfg.unseen_rays)
            .map(|_| {
                let x = state.rng.gen_range(0..w) as f64 + 0.5;
                let y = state.rng.gen_range(0..h) as f64 + 0.5;
                (cam, [x, y])
            })
            .collect();
        let novel = run_pass(
            &state.mpis,
            &unseen,
            &PassSpec {
                gt: None,
                appearance: cfg.lambda_ac,
                depth: cfg.lambda_dc,
                mask_threshold: cfg.transmittance_mask,
                depth_scale: 1.0 / (scene.far - scene.near),
            },
            cfg.chunk_rays,
            &mut grads,
        )?;
        record.ac = novel.ac;
        record.dc = novel.dc;
    }
    record.total = record.mse;
    if consistency {
        record.total += cfg.lambda_ac * record.ac + cfg.lambda_dc * record.dc + cfg.lambda_dc_input * record.dc_input;
    }
    if !record.total.is_finite() || !grads.iter().all(MlpParams::is_finite) {
        let sample: Vec<String> = batch
            .iter()
            .take(8)
            .map(|r| format!("v{}@({:.1},{:.1})", r.view, r.pixel[0], r.pixel[1]))
            .collect();
        return Err(Error::NonFiniteLoss {
            epoch: state.epoch,
            step: record.step,
            detail: format!(
                "mse={} ac={} dc={} dc_input={} batch={} rays [{}{}]",
                record.mse,
                record.ac,
                record.dc,
                record.dc_input,
                batch.len(),
                sample.join(" "),
                if batch.len() > 8 { " ..." } else { "" }
            ),
        });
    }
    Ok((record, grads))
}

/// One optimizer step: gradients of the scheduled loss, then one Adam update
/// per MPI at the learning rate of the fractional epoch.
pub fn train_step(
    state: &mut TrainState,
    scene: &Scene,
    cfg: &TrainConfig,
    batch: &[RaySample],
    step_in_epoch: usize,
    steps_in_epoch: usize,
) -> Result<StepRecord> {
    let (mut record, grads) = step_gradients(state, scene, cfg, batch)?;
    let progress = state.epoch as f64 + step_in_epoch as f64 / steps_in_epoch.max(1) as f64;
    record.lr = lr_schedule(progress, cfg.epochs as f64);
    for ((m, a), g) in state.mpis.iter_mut().zip(&mut state.adam).zip(&grads) {
        adam_step(&mut m.params, a, g, record.lr);
    }
    state.step += 1;
    Ok(record)
}

/// Where `train` writes checkpoints and the step log.
#[derive(Clone, Debug, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

/// Keeps the log records up to `step` from a previous run.
fn truncate_log(path: &Path, step: u64) -> Result<String> {
    let mut kept = String::from(LOG_HEADER);
    kept.push('\n');
    if let Ok(text) = fs::read_to_string(path) {
        for line in text.lines().skip(1) {
            let s: Option<u64> = line.split(',').nth(1).and_then(|v| v.parse().ok());
            if s.is_some_and(|s| s <= step) {
                kept.push_str(line);
                kept.push('\n');
            }
        }
    }
    Ok(kept)
}

/// Runs epochs until `cfg.epochs` are complete, starting from `state`.
/// `progress` sees every step record.
pub fn train_from(
    mut state: TrainState,
    scene: &Scene,
    cfg: &TrainConfig,
    out: &TrainOutput,
    progress: &mut dyn FnMut(&StepRecord),
) -> Result<(TrainState, Vec<StepRecord>)> {
    cfg.validate()?;
    let mut log = Vec::new();
    if let Some(dir) = &out.dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.toml"), cfg.to_toml())?;
        let text = truncate_log(&dir.join(LOG_FILE), state.step)?;
        fs::write(dir.join(LOG_FILE), text)?;
    }
    let steps = steps_per_epoch(scene, cfg.rays_per_batch);
    while state.epoch < cfg.epochs {
        let batches = sample_input_rays(scene, cfg.rays_per_batch, &mut state.rng);
        let mut lines = String::new();
        for (i, batch) in batches.iter().enumerate() {
            let rec = train_step(&mut state, scene, cfg, batch, i, steps)?;
            progress(&rec);
            lines.push_str(&rec.csv_line());
            lines.push('\n');
            log.push(rec);
        }
        state.epoch += 1;
        if let Some(dir) = &out.dir {
            let mut f = fs::OpenOptions::new().append(true).open(dir.join(LOG_FILE))?;
            f.write_all(lines.as_bytes())?;
            let cadence = cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0;
            if cadence {
                save_checkpoint(&dir.join(checkpoint_name(state.epoch)), &state, cfg, scene)?;
            }
        }
    }
    if let Some(dir) = &out.dir {
        save_checkpoint(&dir.join(LATEST_CHECKPOINT), &state, cfg, scene)?;
    }
    Ok((state, log))
}

/// Fresh run: initializes every field from the seed, then trains.
pub fn train(scene: &Scene, cfg: &TrainConfig, out: &TrainOutput) -> Result<(TrainState, Vec<StepRecord>)> {
    let state = TrainState::new(scene, cfg)?;
    train_from(state, scene, cfg, out, &mut |_| {})
}

/// Pose at `u` between input poses `a` and `b`.
pub fn interpolate_inputs(poses: &[Pose], a: usize, b: usize, u: f64) -> Result<Pose> {
    if a >= poses.len() || b >= poses.len() {
        return Err(Error::Config(format!(
            "pose index out of range: {a}, {b} with {} poses",
            poses.len()
        )));
    }
    Ok(interpolate_pose(&poses[a], &poses[b], u))
}
