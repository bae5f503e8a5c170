//! Front-to-back alpha compositing of MPI planes along target rays, plus
//! distance-weighted blending of several MPIs.

use nalgebra::Vector3;
use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{backward_batch, forward_batch, EncodingConfig, MlpParams, Tape, OUTPUTS};
use crate::geometry::{pixel_ray, ray_plane_intersections, Camera, PlaneHit, PlaneStack};

/// Which depth gets composited per plane.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DepthFrame {
    /// Distance along the target ray, comparable across MPIs.
    #[default]
    TargetRay,
    /// Plane depth in the MPI's own reference frame.
    Reference,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BlendMode {
    /// `w_i = μ_i / Σ μ_j` with `μ_i` the squared origin distance.
    #[default]
    AsPrinted,
    /// `w_i ∝ 1 / μ_i`.
    InverseDistance,
}

impl std::str::FromStr for BlendMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-printed" => Ok(Self::AsPrinted),
            "inverse-distance" => Ok(Self::InverseDistance),
            other => Err(Error::Config(format!("unknown blend mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for BlendMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::AsPrinted => "as-printed",
            Self::InverseDistance => "inverse-distance",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub color: [f64; 3],
    pub depth: f64,
    /// Per-plane compositing weights `α_k Π_{j<k}(1-α_j)`.
    pub weights: Vec<f64>,
    /// Residual transmittance `Π_j(1-α_j)`.
    pub transmittance: f64,
}

/// Compositing weights and residual transmittance for a front-to-back stack.
pub fn compositing_weights(alphas: &[f64]) -> (Vec<f64>, f64) {
    let mut trans = 1.0;
    let weights = alphas
        .iter()
        .map(|&a| {
            let w = a * trans;
            trans *= 1.0 - a;
            w
        })
        .collect();
    (weights, trans)
}

pub fn composite_color(colors: &[[f64; 3]], alphas: &[f64]) -> [f64; 3] {
    assert_eq!(colors.len(), alphas.len());
    let (weights, _) = compositing_weights(alphas);
    let mut out = [0.0; 3];
    for (c, w) in colors.iter().zip(&weights) {
        for j in 0..3 {
            out[j] += w * c[j];
        }
    }
    out
}

pub fn composite_depth(depths: &[f64], alphas: &[f64]) -> f64 {
    assert_eq!(depths.len(), alphas.len());
    let (weights, _) = compositing_weights(alphas);
    depths.iter().zip(&weights).map(|(z, w)| z * w).sum()
}

/// Cotangents of one stack's colors and alphas given cotangents of the
/// composited color and depth.
pub fn composite_backward(
    colors: &[[f64; 3]],
    alphas: &[f64],
    depths: &[f64],
    grad_color: [f64; 3],
    grad_depth: f64,
) -> (Vec<[f64; 3]>, Vec<f64>) {
    let d = alphas.len();
    let mut trans = Vec::with_capacity(d);
    let mut t = 1.0;
    for &a in alphas {
        trans.push(t);
        t *= 1.0 - a;
    }
    let mut grad_c = vec![[0.0; 3]; d];
    let mut grad_a = vec![0.0; d];
    // Composited color/depth of the planes behind k, as seen from just behind k.
    let mut behind_c = [0.0; 3];
    let mut behind_z = 0.0;
    for k in (0..d).rev() {
        let w = alphas[k] * trans[k];
        let mut g = grad_depth * (depths[k] - behind_z);
        for j in 0..3 {
            grad_c[k][j] = w * grad_color[j];
            g += grad_color[j] * (colors[k][j] - behind_c[j]);
        }
        grad_a[k] = trans[k] * g;
        let a = alphas[k];
        for j in 0..3 {
            behind_c[j] = a * colors[k][j] + (1.0 - a) * behind_c[j];
        }
        behind_z = a * depths[k] + (1.0 - a) * behind_z;
    }
    (grad_c, grad_a)
}

/// One MPI: a reference camera, its plane stack and the neural plane field.
#[derive(Clone, Debug, PartialEq)]
pub struct MpiField {
    pub camera: Camera,
    pub planes: PlaneStack,
    pub params: MlpParams,
    pub encoding: EncodingConfig,
    pub depth_frame: DepthFrame,
}

/// A target ray resolved against one MPI's planes.
#[derive(Clone, Debug)]
pub struct RayQuery {
    pub hits: Vec<PlaneHit>,
    /// Unit direction in the MPI's reference frame.
    pub direction: Vector3<f64>,
}

/// Batched render of many rays through one MPI, with what backward needs.
#[derive(Clone, Debug)]
pub struct RenderBatch {
    pub outputs: Vec<RenderOutput>,
    pub tape: Tape,
    /// Composited per-plane depths, `rays × planes`.
    pub sample_depths: Vec<f64>,
    pub planes: usize,
}

impl MpiField {
    pub fn new(camera: Camera, planes: PlaneStack, params: MlpParams, encoding: EncodingConfig) -> Self {
        assert_eq!(params.input_dim(), encoding.input_dim());
        Self {
            camera,
            planes,
            params,
            encoding,
            depth_frame: DepthFrame::TargetRay,
        }
    }

    /// Network coordinate of a plane hit: normalized image coordinates of
    /// the reference view and the plane position mapped to `[-1, 1]`.
    pub fn network_point(&self, hit: &PlaneHit) -> [f64; 3] {
        [
            hit.point.x / hit.depth,
            hit.point.y / hit.depth,
            self.planes.normalized_depth(hit.depth),
        ]
    }

    pub fn query(&self, target: &Camera, pixel: [f64; 2]) -> Result<RayQuery> {
        let hits = ray_plane_intersections(pixel, target, &self.camera, &self.planes)?;
        let world = pixel_ray(target, pixel).direction;
        Ok(RayQuery {
            hits,
            direction: self.camera.pose.rotation.transpose() * world,
        })
    }

    fn encode(&self, queries: &[RayQuery]) -> (Array2<f64>, Vec<f64>) {
        let d = self.planes.len();
        let mut inputs = Array2::zeros((queries.len() * d, self.encoding.input_dim()));
        let mut depths = Vec::with_capacity(queries.len() * d);
        let mut rows = inputs.rows_mut().into_iter();
        for q in queries {
            let dir = [q.direction.x, q.direction.y, q.direction.z];
            for hit in &q.hits {
                let mut row = rows.next().expect("row count");
                self.encoding
                    .encode_into(&self.network_point(hit), &dir, row.as_slice_mut().unwrap());
                depths.push(match self.depth_frame {
                    DepthFrame::TargetRay => hit.ray_depth,
                    DepthFrame::Reference => hit.depth,
                });
            }
        }
        (inputs, depths)
    }

    pub fn render_queries(&self, queries: &[RayQuery]) -> RenderBatch {
        let d = self.planes.len();
        let (inputs, sample_depths) = self.encode(queries);
        let tape = forward_batch(&self.params, inputs);
        let outputs = (0..queries.len())
            .map(|r| {
                let rows = r * d..(r + 1) * d;
                let colors: Vec<[f64; 3]> = rows
                    .clone()
                    .map(|i| {
                        let o = tape.outputs.row(i);
                        [o[0], o[1], o[2]]
                    })
                    .collect();
                let alphas: Vec<f64> = rows.clone().map(|i| tape.outputs[[i, 3]]).collect();
                let (weights, transmittance) = compositing_weights(&alphas);
                let mut color = [0.0; 3];
                let mut depth = 0.0;
                for (k, w) in weights.iter().enumerate() {
                    for j in 0..3 {
                        color[j] += w * colors[k][j];
                    }
                    depth += w * sample_depths[r * d + k];
                }
                RenderOutput {
                    color,
                    depth,
                    weights,
                    transmittance,
                }
            })
            .collect();
        RenderBatch {
            outputs,
            tape,
            sample_depths,
            planes: d,
        }
    }

    /// Parameter gradient given cotangents of every ray's color and depth.
    pub fn backward(&self, batch: &RenderBatch, grad_color: &[[f64; 3]], grad_depth: &[f64]) -> MlpParams {
        let d = batch.planes;
        let rays = batch.outputs.len();
        assert_eq!(grad_color.len(), rays);
        assert_eq!(grad_depth.len(), rays);
        let mut grad_out = Array2::zeros((rays * d, OUTPUTS));
        for r in 0..rays {
            let rows = r * d..(r + 1) * d;
            let colors: Vec<[f64; 3]> = rows
                .clone()
                .map(|i| {
                    let o = batch.tape.outputs.row(i);
                    [o[0], o[1], o[2]]
                })
                .collect();
            let alphas: Vec<f64> = rows.clone().map(|i| batch.tape.outputs[[i, 3]]).collect();
            let (gc, ga) = composite_backward(
                &colors,
                &alphas,
                &batch.sample_depths[rows.clone()],
                grad_color[r],
                grad_depth[r],
            );
            for k in 0..d {
                let mut row = grad_out.row_mut(r * d + k);
                row[0] = gc[k][0];
                row[1] = gc[k][1];
                row[2] = gc[k][2];
                row[3] = ga[k];
            }
        }
        backward_batch(&self.params, &batch.tape, grad_out.view())
    }

    /// Renders one target ray.
    pub fn render_ray(&self, target: &Camera, pixel: [f64; 2]) -> Result<(RenderOutput, RenderBatch)> {
        let q = self.query(target, pixel)?;
        let batch = self.render_queries(std::slice::from_ref(&q));
        Ok((batch.outputs[0].clone(), batch))
    }

    /// Full-frame render at `width × height`; the target intrinsics are
    /// rescaled to that raster. Row-major color and depth.
    pub fn render_view(&self, target: &Camera, width: usize, height: usize) -> Result<RenderedView> {
        render_rows(target, width, height, |cam, y| {
            let queries = (0..width)
                .map(|x| {
                    self.query(cam, [x as f64 + 0.5, y as f64 + 0.5]).map_err(|e| Error::AtPixel {
                        x,
                        y,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(self.render_queries(&queries).outputs)
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub transmittance: Vec<f64>,
}

fn render_rows<F>(target: &Camera, width: usize, height: usize, row: F) -> Result<RenderedView>
where
    F: Fn(&Camera, usize) -> Result<Vec<RenderOutput>> + Sync,
{
    if width == 0 || height == 0 {
        return Err(Error::Config("resolution must be at least 1×1".into()));
    }
    let cam = target.with_intrinsics(target.intrinsics.scaled_to(width, height));
    let rows = (0..height)
        .into_par_iter()
        .map(|y| row(&cam, y))
        .collect::<Result<Vec<_>>>()?;
    let mut view = RenderedView {
        width,
        height,
        color: Vec::with_capacity(width * height),
        depth: Vec::with_capacity(width * height),
        transmittance: Vec::with_capacity(width * height),
    };
    for out in rows.into_iter().flatten() {
        view.color.push(out.color);
        view.depth.push(out.depth);
        view.transmittance.push(out.transmittance);
    }
    Ok(view)
}

/// Per-MPI blend weights from camera-origin distances.
///
/// Returns `AllCoincident` when every squared distance is below `1e-15`;
/// callers fall back to uniform weights.
pub fn blend_weights(
    target_origin: &Vector3<f64>,
    origins: &[Vector3<f64>],
    mode: BlendMode,
) -> Result<Vec<f64>> {
    assert!(!origins.is_empty());
    let mu: Vec<f64> = origins.iter().map(|o| (target_origin - o).norm_squared()).collect();
    if mu.iter().all(|&m| m < 1e-15) {
        return Err(Error::AllCoincident);
    }
    let raw: Vec<f64> = match mode {
        BlendMode::AsPrinted => mu,
        BlendMode::InverseDistance => {
            if mu.iter().any(|&m| m < 1e-15) {
                mu.iter().map(|&m| if m < 1e-15 { 1.0 } else { 0.0 }).collect()
            } else {
                mu.iter().map(|m| 1.0 / m).collect()
            }
        }
    };
    let total: f64 = raw.iter().sum();
    Ok(raw.iter().map(|r| r / total).collect())
}

pub fn blend_weights_or_uniform(
    target_origin: &Vector3<f64>,
    origins: &[Vector3<f64>],
    mode: BlendMode,
) -> Vec<f64> {
    blend_weights(target_origin, origins, mode)
        .unwrap_or_else(|_| vec![1.0 / origins.len() as f64; origins.len()])
}

fn blend_outputs(outputs: &[RenderOutput], weights: &[f64]) -> RenderOutput {
    let mut out = RenderOutput {
        color: [0.0; 3],
        depth: 0.0,
        weights: Vec::new(),
        transmittance: 0.0,
    };
    for (o, w) in outputs.iter().zip(weights) {
        for j in 0..3 {
            out.color[j] += w * o.color[j];
        }
        out.depth += w * o.depth;
        out.transmittance += w * o.transmittance;
    }
    out
}

/// Inference-time blend of several MPIs' renders of one target ray.
pub fn weighted_render(
    mpis: &[MpiField],
    target: &Camera,
    pixel: [f64; 2],
    mode: BlendMode,
) -> Result<RenderOutput> {
    if mpis.len() == 1 {
        return Ok(mpis[0].render_ray(target, pixel)?.0);
    }
    let origins: Vec<_> = mpis.iter().map(|m| m.camera.pose.center()).collect();
    let weights = blend_weights_or_uniform(&target.pose.center(), &origins, mode);
    let outputs = mpis
        .iter()
        .map(|m| m.render_ray(target, pixel).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(blend_outputs(&outputs, &weights))
}

/// Full-frame weighted render over several MPIs.
pub fn render_view_weighted(
    mpis: &[MpiField],
    target: &Camera,
    width: usize,
    height: usize,
    mode: BlendMode,
) -> Result<RenderedView> {
    if mpis.len() == 1 {
        return mpis[0].render_view(target, width, height);
    }
    let origins: Vec<_> = mpis.iter().map(|m| m.camera.pose.center()).collect();
    let weights = blend_weights_or_uniform(&target.pose.center(), &origins, mode);
    render_rows(target, width, height, |cam, y| {
        let per_mpi = mpis
            .iter()
            .map(|m| {
                let queries = (0..width)
                    .map(|x| {
                        m.query(cam, [x as f64 + 0.5, y as f64 + 0.5]).map_err(|e| Error::AtPixel {
                            x,
                            y,
                            source: Box::new(e),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(m.render_queries(&queries).outputs)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((0..width)
            .map(|x| {
                let outs: Vec<RenderOutput> = per_mpi.iter().map(|o| o[x].clone()).collect();
                blend_outputs(&outs, &weights)
            })
            .collect())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{field_forward, Layer};
    use crate::geometry::{make_plane_depths, Intrinsics, PlaneSpacing, Pose};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_color(colors: &[[f64; 3]], alphas: &[f64]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for k in 0..alphas.len() {
            let mut t = 1.0;
            for j in 0..k {
                t *= 1.0 - alphas[j];
            }
            for c in 0..3 {
                out[c] += colors[k][c] * alphas[k] * t;
            }
        }
        out
    }

    #[test]
    fn compositing_examples() {
        assert_eq!(composite_color(&[[0.2, 0.4, 0.6]], &[1.0]), [0.2, 0.4, 0.6]);
        assert_eq!(
            composite_color(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], &[0.5, 1.0]),
            [0.5, 0.5, 0.0]
        );
        assert_eq!(composite_color(&[], &[]), [0.0; 3]);
        assert_eq!(composite_depth(&[3.5], &[1.0]), 3.5);
        assert_eq!(composite_depth(&[1.0, 2.0], &[0.5, 1.0]), 1.5);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let alphas: Vec<f64> = (0..80).map(|_| rng.gen::<f64>()).collect();
            let colors: Vec<[f64; 3]> = (0..80).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
            let a = composite_color(&colors, &alphas);
            let b = naive_color(&colors, &alphas);
            for j in 0..3 {
                assert!((a[j] - b[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn order_sensitivity_and_transparent_removal() {
        let colors = [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let fwd = composite_color(&colors, &[0.3, 0.8]);
        let rev = composite_color(&[colors[1], colors[0]], &[0.8, 0.3]);
        assert_ne!(fwd, rev);
        let with_empty = composite_color(&[colors[0], [0.7, 0.7, 0.7], colors[1]], &[0.3, 0.0, 0.8]);
        for j in 0..3 {
            assert!((with_empty[j] - fwd[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 6;
        let colors: Vec<[f64; 3]> = (0..d).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let mut alphas: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
        alphas[2] = 1.0;
        alphas[4] = 0.0;
        let depths: Vec<f64> = (0..d).map(|k| 1.0 + k as f64).collect();
        let gc = [0.3, -0.5, 0.9];
        let gz = 0.7;
        let f = |a: &[f64], c: &[[f64; 3]]| {
            let col = composite_color(c, a);
            gc[0] * col[0] + gc[1] * col[1] + gc[2] * col[2] + gz * composite_depth(&depths, a)
        };
        let (grad_c, grad_a) = composite_backward(&colors, &alphas, &depths, gc, gz);
        let h = 1e-6;
        for k in 0..d {
            let mut ap = alphas.clone();
            ap[k] += h;
            let mut am = alphas.clone();
            am[k] -= h;
            let fd = (f(&ap, &colors) - f(&am, &colors)) / (2.0 * h);
            assert!((fd - grad_a[k]).abs() < 1e-8, "alpha {k}: {fd} vs {}", grad_a[k]);
            for j in 0..3 {
                let mut cp = colors.clone();
                cp[k][j] += h;
                let mut cm = colors.clone();
                cm[k][j] -= h;
                let fd = (f(&alphas, &cp) - f(&alphas, &cm)) / (2.0 * h);
                assert!((fd - grad_c[k][j]).abs() < 1e-8);
            }
        }
    }

    fn test_mpi(hidden: usize, width: usize, planes: usize, seed: u64) -> MpiField {
        let enc = EncodingConfig {
            position_freqs: 2,
            ..Default::default()
        };
        let cam = Camera::new(Intrinsics::new(40.0, 40.0, 16.0, 16.0, 32, 32), Pose::identity());
        let stack = make_plane_depths(2.0, 6.0, planes, PlaneSpacing::LinearDepth).unwrap();
        MpiField::new(cam, stack, MlpParams::for_encoding(&enc, hidden, width, seed), enc)
    }

    /// Forces the head to emit fixed logits via the bias, zeroing its weights.
    fn constant_head(mpi: &mut MpiField, logits: [f64; 4]) {
        let head: &mut Layer = mpi.params.layers.last_mut().unwrap();
        head.weights.fill(0.0);
        for (b, l) in head.bias.iter_mut().zip(logits) {
            *b = l;
        }
    }

    #[test]
    fn empty_scene_renders_black() {
        let mut mpi = test_mpi(2, 8, 5, 0);
        constant_head(&mut mpi, [0.0, 0.0, 0.0, -800.0]);
        let (out, _) = mpi.render_ray(&mpi.camera.clone(), [10.5, 3.5]).unwrap();
        assert_eq!(out.color, [0.0; 3]);
        assert_eq!(out.depth, 0.0);
        assert_eq!(out.transmittance, 1.0);
    }

    #[test]
    fn delta_stack_picks_one_plane() {
        // Only plane k0 is opaque: emulate by rendering with a field whose
        // alpha logit depends on the plane coordinate is awkward, so check
        // the compositing route directly on queried values instead.
        let mpi = test_mpi(2, 8, 4, 3);
        let target = Camera::new(mpi.camera.intrinsics, Pose::from_translation(Vector3::new(0.2, 0.0, 0.0)));
        let q = mpi.query(&target, [12.5, 20.5]).unwrap();
        let k0 = 2;
        let mut alphas = vec![0.0; 4];
        alphas[k0] = 1.0;
        let colors: Vec<[f64; 3]> = (0..4).map(|k| [k as f64 / 4.0, 0.5, 0.1]).collect();
        let depths: Vec<f64> = q.hits.iter().map(|h| h.ray_depth).collect();
        assert_eq!(composite_color(&colors, &alphas), colors[k0]);
        assert_eq!(composite_depth(&depths, &alphas), depths[k0]);
    }

    #[test]
    fn render_ray_decomposes_into_queries() {
        let mpi = test_mpi(3, 16, 8, 5);
        let target = Camera::new(
            mpi.camera.intrinsics,
            Pose::look_at(Vector3::new(0.3, -0.1, 0.2), Vector3::new(0.0, 0.0, 4.0), Vector3::y()),
        );
        let px = [7.25, 19.5];
        let (out, _) = mpi.render_ray(&target, px).unwrap();
        let q = mpi.query(&target, px).unwrap();
        let dir = [q.direction.x, q.direction.y, q.direction.z];
        let mut colors = Vec::new();
        let mut alphas = Vec::new();
        for hit in &q.hits {
            let (c, a, _) = field_forward(&mpi.params, &mpi.network_point(hit), &dir, &mpi.encoding);
            colors.push(c);
            alphas.push(a);
        }
        let depths: Vec<f64> = q.hits.iter().map(|h| h.ray_depth).collect();
        let c = composite_color(&colors, &alphas);
        for j in 0..3 {
            assert!((c[j] - out.color[j]).abs() < 1e-12);
        }
        assert!((composite_depth(&depths, &alphas) - out.depth).abs() < 1e-12);
        let sum: f64 = out.weights.iter().sum::<f64>() + out.transmittance;
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn full_pipeline_gradient() {
        let mpi = test_mpi(2, 16, 4, 9);
        let target = Camera::new(mpi.camera.intrinsics, Pose::from_translation(Vector3::new(-0.15, 0.1, 0.0)));
        let pixels = [[3.5, 4.5], [20.5, 11.5], [16.0, 30.0]];
        let queries: Vec<RayQuery> = pixels.iter().map(|p| mpi.query(&target, *p).unwrap()).collect();
        let gc = [[0.2, -0.4, 1.0], [0.9, 0.1, -0.3], [-0.5, 0.5, 0.25]];
        let gz = [0.1, -0.2, 0.05];
        let objective = |m: &MpiField| {
            m.render_queries(&queries)
                .outputs
                .iter()
                .enumerate()
                .map(|(r, o)| (0..3).map(|j| gc[r][j] * o.color[j]).sum::<f64>() + gz[r] * o.depth)
                .sum::<f64>()
        };
        let batch = mpi.render_queries(&queries);
        let analytic = mpi.backward(&batch, &gc, &gz).to_flat();
        let base = mpi.params.to_flat();
        let mut probe = mpi.clone();
        let h = 1e-5;
        for i in 0..base.len() {
            let mut v = base.clone();
            v[i] += h;
            probe.params.set_flat(&v);
            let plus = objective(&probe);
            v[i] -= 2.0 * h;
            probe.params.set_flat(&v);
            let minus = objective(&probe);
            let fd = (plus - minus) / (2.0 * h);
            let scale = fd.abs().max(analytic[i].abs()).max(1e-7);
            assert!((fd - analytic[i]).abs() / scale < 1e-4, "param {i}: {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn render_view_shapes() {
        let mpi = test_mpi(1, 4, 3, 1);
        let one = mpi.render_view(&mpi.camera, 1, 1).unwrap();
        assert_eq!((one.color.len(), one.depth.len()), (1, 1));
        let (direct, _) = mpi
            .render_ray(&mpi.camera.with_intrinsics(mpi.camera.intrinsics.scaled_to(1, 1)), [0.5, 0.5])
            .unwrap();
        assert_eq!(one.color[0], direct.color);
        let a = mpi.render_view(&mpi.camera, 8, 6).unwrap();
        let b = mpi.render_view(&mpi.camera, 16, 12).unwrap();
        assert_eq!(a.color.len() * 4, b.color.len());
        assert_eq!(mpi.render_view(&mpi.camera, 8, 6).unwrap(), a);
        assert!(mpi.render_view(&mpi.camera, 0, 4).is_err());
    }

    #[test]
    fn blend_weight_examples() {
        let t = Vector3::zeros();
        let w = blend_weights(&t, &[Vector3::new(1.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0)], BlendMode::AsPrinted)
            .unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        let w = blend_weights(&t, &[Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 3f64.sqrt(), 0.0)], BlendMode::AsPrinted)
            .unwrap();
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.75).abs() < 1e-15);
        let w = blend_weights(&t, &[t, Vector3::new(0.0, 2.0, 0.0)], BlendMode::AsPrinted).unwrap();
        assert_eq!(w, vec![0.0, 1.0]);
        let w = blend_weights(&t, &[t, Vector3::new(0.0, 2.0, 0.0)], BlendMode::InverseDistance).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
        assert!(matches!(blend_weights(&t, &[t, t], BlendMode::AsPrinted), Err(Error::AllCoincident)));
        assert_eq!(blend_weights_or_uniform(&t, &[t, t, t, t], BlendMode::AsPrinted), vec![0.25; 4]);
    }

    #[test]
    fn weighted_render_single_and_identical() {
        let mpi = test_mpi(2, 8, 4, 2);
        let target = Camera::new(mpi.camera.intrinsics, Pose::from_translation(Vector3::new(0.1, 0.0, 0.0)));
        let single = weighted_render(std::slice::from_ref(&mpi), &target, [5.5, 6.5], BlendMode::AsPrinted).unwrap();
        assert_eq!(single, mpi.render_ray(&target, [5.5, 6.5]).unwrap().0);

        let mut far = mpi.clone();
        far.camera.pose.translation.x = 0.7;
        let mut flat = [mpi.clone(), far];
        for m in &mut flat {
            constant_head(m, [0.4, -0.3, 1.2, 50.0]);
        }
        let out = weighted_render(&flat, &target, [5.5, 6.5], BlendMode::AsPrinted).unwrap();
        let expect = 1.0 / (1.0 + (-0.4f64).exp());
        assert!((out.color[0] - expect).abs() < 1e-12);
    }
}
