//! Stratified ray sampling, the sparse-solution oracle that exposes the
//! overfitting minimizer of unconstrained per-ray sampling, and a Monte-Carlo
//! measurement of how often samples from different views coincide.

use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    closest_point_parameter, pixel_ray, ray_plane_intersections, Camera, PlaneStack, Ray,
};
use crate::renderer::compositing_weights;

/// One uniform draw inside each of `m` equal bins of `[t_near, t_far]`.
pub fn stratified_sample(t_near: f64, t_far: f64, m: usize, rng: &mut impl Rng) -> Vec<f64> {
    let u: Vec<f64> = (0..m).map(|_| rng.gen::<f64>()).collect();
    stratified_from_uniform(t_near, t_far, &u)
}

/// Same as [`stratified_sample`] with the per-bin uniforms supplied.
pub fn stratified_from_uniform(t_near: f64, t_far: f64, u: &[f64]) -> Vec<f64> {
    assert!(t_near < t_far && !u.is_empty());
    let m = u.len();
    let edge = |i: usize| {
        if i == m {
            t_far
        } else {
            t_near + (t_far - t_near) * i as f64 / m as f64
        }
    };
    (0..m)
        .map(|i| {
            let (lo, hi) = (edge(i), edge(i + 1));
            let t = lo + u[i] * (hi - lo);
            // Rounding may land on the upper edge; only the last bin is closed.
            if t >= hi && i + 1 < m {
                hi.next_down()
            } else {
                t.min(hi)
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseInstance {
    pub c_gt: [f64; 3],
    /// Samples per ray.
    pub m: usize,
    pub alpha_grid: Vec<f64>,
    pub color_grid: Vec<f64>,
    /// Cost per nonzero entry of `c` or `alpha`.
    pub penalty: f64,
    /// Maximum number of search nodes.
    pub budget: u64,
}

pub const DEFAULT_PENALTY: f64 = 0.01;
pub const DEFAULT_BUDGET: u64 = 100_000_000;

/// `{0, 0.25, 0.5, 0.75, 1}`.
pub fn five_point_grid() -> Vec<f64> {
    (0..5).map(|i| i as f64 * 0.25).collect()
}

impl SparseInstance {
    pub fn new(c_gt: [f64; 3], m: usize) -> Self {
        Self {
            c_gt,
            m,
            alpha_grid: five_point_grid(),
            color_grid: five_point_grid(),
            penalty: DEFAULT_PENALTY,
            budget: DEFAULT_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let grid_ok = |g: &[f64]| {
            !g.is_empty()
                && g.contains(&0.0)
                && g.contains(&1.0)
                && g.iter().all(|v| (0.0..=1.0).contains(v))
        };
        if self.m == 0 || !grid_ok(&self.alpha_grid) || !grid_ok(&self.color_grid) {
            return Err(Error::Config(
                "sparse instance needs m >= 1 and grids within [0, 1] containing 0 and 1".into(),
            ));
        }
        if !(self.penalty >= 0.0) {
            return Err(Error::Config("penalty must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseSolution {
    pub colors: Vec<[f64; 3]>,
    pub alphas: Vec<f64>,
    pub objective: f64,
    /// Search nodes visited.
    pub visited: u64,
}

fn nonzeros(c: &[f64; 3]) -> usize {
    c.iter().filter(|v| **v != 0.0).count()
}

/// `|Σ w_i c_i - C|² + penalty · (nonzero entries of c and alpha)`.
pub fn sparse_objective(inst: &SparseInstance, colors: &[[f64; 3]], alphas: &[f64]) -> f64 {
    let (w, _) = compositing_weights(alphas);
    let mut residual = 0.0;
    for ch in 0..3 {
        let s: f64 = w.iter().zip(colors).map(|(w, c)| w * c[ch]).sum();
        residual += (s - inst.c_gt[ch]).powi(2);
    }
    let count: usize = colors.iter().map(nonzeros).sum::<usize>()
        + alphas.iter().filter(|a| **a != 0.0).count();
    residual + inst.penalty * count as f64
}

/// All opacity on the first sample, which carries the target color.
pub fn closed_form(inst: &SparseInstance) -> (Vec<[f64; 3]>, Vec<f64>) {
    let mut colors = vec![[0.0; 3]; inst.m];
    let mut alphas = vec![0.0; inst.m];
    if inst.c_gt != [0.0; 3] {
        colors[0] = inst.c_gt;
        alphas[0] = 1.0;
    }
    (colors, alphas)
}

fn descending(grid: &[f64]) -> Vec<f64> {
    let mut g = grid.to_vec();
    g.sort_by(|a, b| b.total_cmp(a));
    g.dedup();
    g
}

fn color_candidates(grid: &[f64]) -> Vec<[f64; 3]> {
    let g = descending(grid);
    let mut out = Vec::with_capacity(g.len().pow(3));
    for &r in &g {
        for &gr in &g {
            for &b in &g {
                out.push([r, gr, b]);
            }
        }
    }
    out
}

/// Exhaustive search over every grid assignment. Solutions are enumerated
/// sample by sample with alpha then color channels in descending grid order;
/// the first minimizer in that order wins.
pub fn sparse_brute_force(inst: &SparseInstance) -> Result<SparseSolution> {
    inst.validate()?;
    let alphas = descending(&inst.alpha_grid);
    let colors = color_candidates(&inst.color_grid);
    let per_sample = (alphas.len() * colors.len()) as f64;
    let total = per_sample.powi(inst.m as i32);
    if total > inst.budget as f64 {
        return Err(Error::BudgetExceeded {
            visited: total.min(u64::MAX as f64) as u64,
            budget: inst.budget,
        });
    }
    let per = alphas.len() * colors.len();
    let mut best: Option<SparseSolution> = None;
    let mut idx = vec![0usize; inst.m];
    let mut visited = 0u64;
    loop {
        visited += 1;
        let a: Vec<f64> = idx.iter().map(|i| alphas[i / colors.len()]).collect();
        let c: Vec<[f64; 3]> = idx.iter().map(|i| colors[i % colors.len()]).collect();
        let cost = sparse_objective(inst, &c, &a);
        if best.as_ref().map_or(true, |b| cost < b.objective) {
            best = Some(SparseSolution {
                colors: c,
                alphas: a,
                objective: cost,
                visited: 0,
            });
        }
        // Odometer increment, last sample fastest.
        let mut k = inst.m;
        loop {
            if k == 0 {
                let mut sol = best.expect("at least one candidate");
                sol.visited = visited;
                return Ok(sol);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < per {
                break;
            }
            idx[k] = 0;
        }
    }
}

struct Search<'a> {
    inst: &'a SparseInstance,
    alphas: Vec<f64>,
    colors: Vec<[f64; 3]>,
    best_cost: f64,
    best: Option<(Vec<[f64; 3]>, Vec<f64>)>,
    visited: u64,
    cur_c: Vec<[f64; 3]>,
    cur_a: Vec<f64>,
}

impl Search<'_> {
    /// Lower bound: the penalty paid so far plus the squared distance from
    /// the remaining color deficit to what the leftover transmittance can add.
    fn bound(&self, sum: &[f64; 3], trans: f64, count: usize) -> f64 {
        let mut d = 0.0;
        for ch in 0..3 {
            let need = self.inst.c_gt[ch] - sum[ch];
            let gap = if need < 0.0 {
                -need
            } else if need > trans {
                need - trans
            } else {
                0.0
            };
            d += gap * gap;
        }
        self.inst.penalty * count as f64 + d
    }

    fn leaf(&mut self) {
        let cost = sparse_objective(self.inst, &self.cur_c, &self.cur_a);
        let better = match self.best {
            None => cost <= self.best_cost,
            Some(_) => cost < self.best_cost,
        };
        if better {
            self.best_cost = cost;
            self.best = Some((self.cur_c.clone(), self.cur_a.clone()));
        }
    }

    fn descend(&mut self, k: usize, sum: [f64; 3], trans: f64, count: usize) -> Result<()> {
        self.visited += 1;
        if self.visited > self.inst.budget {
            return Err(Error::BudgetExceeded {
                visited: self.visited,
                budget: self.inst.budget,
            });
        }
        if k == self.inst.m {
            self.leaf();
            return Ok(());
        }
        let sparse = self.inst.penalty > 0.0;
        if sparse && trans == 0.0 {
            // Nothing behind an opaque sample is visible; any nonzero entry
            // only adds penalty.
            self.cur_c[k..].fill([0.0; 3]);
            self.cur_a[k..].fill(0.0);
            self.visited += (self.inst.m - k - 1) as u64;
            self.leaf();
            return Ok(());
        }
        for ai in 0..self.alphas.len() {
            let a = self.alphas[ai];
            if sparse && a == 0.0 {
                // A color behind zero opacity is invisible and only costs.
                self.cur_a[k] = 0.0;
                self.cur_c[k] = [0.0; 3];
                if self.bound(&sum, trans, count) <= self.best_cost {
                    self.descend(k + 1, sum, trans, count)?;
                }
                continue;
            }
            let w = trans * a;
            let next_trans = trans * (1.0 - a);
            for ci in 0..self.colors.len() {
                let c = self.colors[ci];
                let next_sum = [sum[0] + w * c[0], sum[1] + w * c[1], sum[2] + w * c[2]];
                let next_count = count + usize::from(a != 0.0) + nonzeros(&c);
                if self.bound(&next_sum, next_trans, next_count) > self.best_cost {
                    continue;
                }
                self.cur_a[k] = a;
                self.cur_c[k] = c;
                self.descend(k + 1, next_sum, next_trans, next_count)?;
            }
        }
        Ok(())
    }
}

/// Exact minimizer over the grids by branch and bound. Returns the same
/// solution as [`sparse_brute_force`] (including its tie order) while
/// visiting a small fraction of the assignments.
pub fn sparse_solution_oracle(inst: &SparseInstance) -> Result<SparseSolution> {
    inst.validate()?;
    let (cc, ca) = closed_form(inst);
    let zero_cost = inst.c_gt.iter().map(|v| v * v).sum::<f64>();
    let mut search = Search {
        inst,
        alphas: descending(&inst.alpha_grid),
        colors: color_candidates(&inst.color_grid),
        best_cost: sparse_objective(inst, &cc, &ca).min(zero_cost),
        best: None,
        visited: 0,
        cur_c: vec![[0.0; 3]; inst.m],
        cur_a: vec![0.0; inst.m],
    };
    search.descend(0, [0.0; 3], 1.0, 0)?;
    let (colors, alphas) = search.best.expect("seeded incumbent is reachable");
    Ok(SparseSolution {
        colors,
        alphas,
        objective: search.best_cost,
        visited: search.visited,
    })
}

pub fn is_closed_form(inst: &SparseInstance, sol: &SparseSolution) -> bool {
    let (c, a) = closed_form(inst);
    sol.colors == c && sol.alphas == a
}

/// Minimizer at each penalty weight, flagged when it differs from the
/// minimizer at `inst.penalty`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PenaltySensitivity {
    pub penalty: f64,
    pub solution: SparseSolution,
    pub closed_form: bool,
    pub changed: bool,
}

pub fn penalty_sensitivity(inst: &SparseInstance, penalties: &[f64]) -> Result<Vec<PenaltySensitivity>> {
    let base = sparse_solution_oracle(inst)?;
    penalties
        .iter()
        .map(|&penalty| {
            let probe = SparseInstance {
                penalty,
                ..inst.clone()
            };
            let solution = sparse_solution_oracle(&probe)?;
            Ok(PenaltySensitivity {
                penalty,
                closed_form: is_closed_form(&probe, &solution),
                changed: solution.colors != base.colors || solution.alphas != base.alphas,
                solution,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    Stratified,
    PlaneConstrained,
}

impl std::str::FromStr for SamplingMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "stratified" => Ok(Self::Stratified),
            "plane-constrained" | "plane" => Ok(Self::PlaneConstrained),
            other => Err(format!("unknown sampling mode `{other}`")),
        }
    }
}

impl std::fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Stratified => "stratified",
            Self::PlaneConstrained => "plane-constrained",
        })
    }
}

#[derive(Clone, Debug)]
pub struct OverlapConfig {
    pub mode: SamplingMode,
    /// Shared planes in the first camera's frame, used in plane mode.
    pub planes: PlaneStack,
    /// Samples per ray in stratified mode.
    pub samples: usize,
    pub epsilon: f64,
    pub trials: usize,
}

/// Upper edges of the nearest-distance histogram: half-decades from 1e-6,
/// with a final overflow bin.
pub fn histogram_edges() -> Vec<f64> {
    (0..15).map(|i| 10f64.powf(-6.0 + 0.5 * i as f64)).collect()
}

fn bin_of(edges: &[f64], d: f64) -> usize {
    edges.iter().position(|&e| d < e).unwrap_or(edges.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairOverlap {
    pub from: usize,
    pub to: usize,
    /// Samples of view `from` tested against view `to`.
    pub tested: u64,
    pub matched: u64,
    pub fraction: f64,
    /// Samples whose reference-frame depth equals a shared plane depth.
    pub on_plane: u64,
    /// Mean distance from a sample to the closest point of the chosen ray in
    /// the other view, over `[near, far]`.
    pub mean_min_distance: f64,
    /// Counts per bin of [`histogram_edges`], plus overflow.
    pub histogram: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub mode: SamplingMode,
    pub epsilon: f64,
    pub samples_per_ray: usize,
    pub trials: usize,
    pub pairs: Vec<PairOverlap>,
}

impl OverlapReport {
    fn sum(&self, f: impl Fn(&PairOverlap) -> u64) -> u64 {
        self.pairs.iter().map(f).sum()
    }

    pub fn tested(&self) -> u64 {
        self.sum(|p| p.tested)
    }

    pub fn match_fraction(&self) -> f64 {
        self.sum(|p| p.matched) as f64 / self.tested().max(1) as f64
    }

    pub fn on_plane_fraction(&self) -> f64 {
        self.sum(|p| p.on_plane) as f64 / self.tested().max(1) as f64
    }

    pub fn mean_min_distance(&self) -> f64 {
        let w: f64 = self.pairs.iter().map(|p| p.mean_min_distance * p.tested as f64).sum();
        w / self.tested().max(1) as f64
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "mode={} epsilon={:.6e} samples_per_ray={} trials={}\n",
            self.mode, self.epsilon, self.samples_per_ray, self.trials
        );
        let _ = writeln!(
            s,
            "{:>4} {:>4} {:>10} {:>10} {:>12} {:>12} {:>14}",
            "from", "to", "tested", "matched", "fraction", "on_plane", "mean_min_dist"
        );
        for p in &self.pairs {
            let _ = writeln!(
                s,
                "{:>4} {:>4} {:>10} {:>10} {:>12.6e} {:>12.6} {:>14.6e}",
                p.from,
                p.to,
                p.tested,
                p.matched,
                p.fraction,
                p.on_plane as f64 / p.tested.max(1) as f64,
                p.mean_min_distance
            );
        }
        let _ = writeln!(
            s,
            "{:>9} {:>10} {:>10} {:>12.6e} {:>12.6} {:>14.6e}",
            "all",
            self.tested(),
            self.sum(|p| p.matched),
            self.match_fraction(),
            self.on_plane_fraction(),
            self.mean_min_distance()
        );
        s
    }

    /// `mode,from,to,tested,matched,fraction,on_plane,mean_min_distance`
    pub fn csv(&self) -> String {
        let mut s = String::from("mode,from,to,tested,matched,fraction,on_plane,mean_min_distance\n");
        for p in &self.pairs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:e},{},{:e}",
                self.mode, p.from, p.to, p.tested, p.matched, p.fraction, p.on_plane, p.mean_min_distance
            );
        }
        s
    }

    /// `mode,from,to,upper_edge,count`; the overflow bin has edge `inf`.
    pub fn histogram_csv(&self) -> String {
        let edges = histogram_edges();
        let mut s = String::from("mode,from,to,upper_edge,count\n");
        for p in &self.pairs {
            for (i, n) in p.histogram.iter().enumerate() {
                let edge = edges.get(i).copied().unwrap_or(f64::INFINITY);
                let _ = writeln!(s, "{},{},{},{:e},{}", self.mode, p.from, p.to, edge, n);
            }
        }
        s
    }
}

/// Ratio between the share of plane-constrained samples that land on shared
/// planes and the stratified cross-view match fraction.
pub fn overlap_contrast(stratified: &OverlapReport, plane: &OverlapReport) -> f64 {
    let m = stratified.match_fraction();
    if m == 0.0 {
        f64::INFINITY
    } else {
        plane.on_plane_fraction() / m
    }
}

/// A ray's samples, in a frame shared by every view of the rig.
fn ray_samples(
    mode: SamplingMode,
    cam: &Camera,
    reference: &Camera,
    pixel: [f64; 2],
    cfg: &OverlapConfig,
    jitter: &[f64],
) -> Result<(Ray, Vec<Vector3<f64>>, u64)> {
    let ray = pixel_ray(cam, pixel);
    match mode {
        SamplingMode::Stratified => {
            let ts = stratified_from_uniform(cfg.planes.near, cfg.planes.far, jitter);
            let pts = ts.iter().map(|&t| ray.at(t)).collect();
            Ok((ray, pts, 0))
        }
        SamplingMode::PlaneConstrained => {
            let hits = ray_plane_intersections(pixel, cam, reference, &cfg.planes)?;
            let on = hits
                .iter()
                .zip(&cfg.planes.depths)
                .filter(|(h, d)| h.point.z == **d)
                .count() as u64;
            // Back to world coordinates so both views share one frame.
            let pts = hits.iter().map(|h| reference.pose.transform_point(&h.point)).collect();
            Ok((ray, pts, on))
        }
    }
}

/// Measures how often a sample drawn for one view also appears among the
/// samples another view would draw for the ray that best sees that point.
///
/// For every ordered view pair and trial, a random pixel-center ray of the
/// first view is sampled. Each sample is projected into the second view; of
/// the pixel-center rays around the projection, the one passing closest to
/// the sample is sampled in turn (with the same stratification jitter), and
/// the sample counts as matched when one of those lies within `epsilon`.
pub fn cross_view_overlap(cameras: &[Camera], cfg: &OverlapConfig, rng: &mut impl Rng) -> Result<OverlapReport> {
    if cameras.len() < 2 {
        return Err(Error::TooFewViews(cameras.len()));
    }
    if cfg.trials == 0 || cfg.samples == 0 || cfg.planes.is_empty() {
        return Err(Error::Config("overlap needs trials, samples and planes >= 1".into()));
    }
    let reference = &cameras[0];
    let edges = histogram_edges();
    let per_ray = match cfg.mode {
        SamplingMode::Stratified => cfg.samples,
        SamplingMode::PlaneConstrained => cfg.planes.len(),
    };
    let bounds = (cfg.planes.near, cfg.planes.far);
    let mut pairs = Vec::new();
    for (a, cam_a) in cameras.iter().enumerate() {
        for (b, cam_b) in cameras.iter().enumerate() {
            if a == b {
                continue;
            }
            let mut pair = PairOverlap {
                from: a,
                to: b,
                tested: 0,
                matched: 0,
                fraction: 0.0,
                on_plane: 0,
                mean_min_distance: 0.0,
                histogram: vec![0; edges.len() + 1],
            };
            let (wa, ha) = (cam_a.intrinsics.width, cam_a.intrinsics.height);
            let (wb, hb) = (cam_b.intrinsics.width as i64, cam_b.intrinsics.height as i64);
            let world_to_b = cam_b.pose.inverse();
            let mut min_dist_sum = 0.0;
            for _ in 0..cfg.trials {
                let px = [rng.gen_range(0..wa) as f64 + 0.5, rng.gen_range(0..ha) as f64 + 0.5];
                let jitter: Vec<f64> = (0..cfg.samples).map(|_| rng.gen::<f64>()).collect();
                let (_, samples, on) = ray_samples(cfg.mode, cam_a, reference, px, cfg, &jitter)?;
                pair.on_plane += on;
                for x0 in &samples {
                    pair.tested += 1;
                    let local = world_to_b.transform_point(x0);
                    if local.z <= 0.0 {
                        pair.histogram[edges.len()] += 1;
                        continue;
                    }
                    let uv = cam_b.intrinsics.project(&local);
                    let (cu, cv) = (uv[0].floor() as i64, uv[1].floor() as i64);
                    let mut chosen: Option<([f64; 2], f64)> = None;
                    for dv in -1..=1 {
                        for du in -1..=1 {
                            let (x, y) = (cu + du, cv + dv);
                            if x < 0 || y < 0 || x >= wb || y >= hb {
                                continue;
                            }
                            let p = [x as f64 + 0.5, y as f64 + 0.5];
                            let ray = pixel_ray(cam_b, p);
                            let (_, d) = closest_point_parameter(x0, &ray.origin, &ray.direction, bounds);
                            if chosen.map_or(true, |(_, best)| d < best) {
                                chosen = Some((p, d));
                            }
                        }
                    }
                    let Some((pb, min_d)) = chosen else {
                        pair.histogram[edges.len()] += 1;
                        continue;
                    };
                    min_dist_sum += min_d;
                    let (_, other, _) = ray_samples(cfg.mode, cam_b, reference, pb, cfg, &jitter)?;
                    let nearest = other
                        .iter()
                        .map(|x| (x - x0).norm())
                        .fold(f64::INFINITY, f64::min);
                    if nearest < cfg.epsilon {
                        pair.matched += 1;
                    }
                    pair.histogram[bin_of(&edges, nearest)] += 1;
                }
            }
            pair.fraction = pair.matched as f64 / pair.tested.max(1) as f64;
            pair.mean_min_distance = min_dist_sum / pair.tested.max(1) as f64;
            pairs.push(pair);
        }
    }
    Ok(OverlapReport {
        mode: cfg.mode,
        epsilon: cfg.epsilon,
        samples_per_ray: per_ray,
        trials: cfg.trials,
        pairs,
    })
}
