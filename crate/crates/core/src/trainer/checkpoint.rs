//! Checkpoint container.
//!
//! ```text
//! magic "PERMPICK" | version u32 LE | header length u64 LE | JSON header
//! then per MPI, as f64 LE: parameters, Adam first moments, Adam second moments
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainState, LATEST_CHECKPOINT};
use crate::error::{Error, Result};
use crate::field::{AdamState, EncodingConfig, MlpParams};
use crate::geometry::{Camera, Intrinsics, PlaneSpacing, PlaneStack, Pose};
use crate::renderer::{DepthFrame, MpiField};
use crate::scene::Scene;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PERMPICK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CameraRecord {
    /// `[fx, fy, cx, cy]`.
    intrinsics: [f64; 4],
    width: usize,
    height: usize,
    /// Row-major camera-to-world `[R | t]`.
    pose: [[f64; 4]; 3],
}

impl From<&Camera> for CameraRecord {
    fn from(c: &Camera) -> Self {
        let k = &c.intrinsics;
        let mut pose = [[0.0; 4]; 3];
        for (r, row) in pose.iter_mut().enumerate() {
            for col in 0..3 {
                row[col] = c.pose.rotation[(r, col)];
            }
            row[3] = c.pose.translation[r];
        }
        Self {
            intrinsics: [k.fx, k.fy, k.cx, k.cy],
            width: k.width,
            height: k.height,
            pose,
        }
    }
}

impl CameraRecord {
    fn camera(&self) -> Camera {
        let [fx, fy, cx, cy] = self.intrinsics;
        let p = &self.pose;
        Camera::new(
            Intrinsics::new(fx, fy, cx, cy, self.width, self.height),
            Pose::new(
                Matrix3::from_fn(|r, c| p[r][c]),
                Vector3::new(p[0][3], p[1][3], p[2][3]),
            ),
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MpiRecord {
    reference: usize,
    camera: CameraRecord,
    plane_depths: Vec<f64>,
    near: f64,
    far: f64,
    spacing: String,
    position_freqs: usize,
    direction_freqs: usize,
    use_direction: bool,
    include_identity: bool,
    reference_depth: bool,
    layer_sizes: Vec<usize>,
    adam_step: u64,
    adam_betas: [f64; 2],
    adam_eps: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RngRecord {
    seed: [u8; 32],
    stream: u64,
    /// `u128` as decimal text.
    word_pos: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    step: u64,
    rng: RngRecord,
    near: f64,
    far: f64,
    input_cameras: Vec<CameraRecord>,
    mpis: Vec<MpiRecord>,
}

/// A loaded checkpoint: the state to resume plus what rendering needs.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub state: TrainState,
    pub config: TrainConfig,
    pub input_cameras: Vec<Camera>,
    pub near: f64,
    pub far: f64,
}

fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(path: &Path, state: &TrainState, cfg: &TrainConfig, scene: &Scene) -> Result<()> {
    let mpis = state
        .mpis
        .iter()
        .zip(&state.adam)
        .zip(&state.references)
        .map(|((m, a), &reference)| {
            let sizes = m.params.layers.iter().map(|l| l.weights.nrows()).chain(std::iter::once(4));
            MpiRecord {
                reference,
                camera: (&m.camera).into(),
                plane_depths: m.planes.depths.clone(),
                near: m.planes.near,
                far: m.planes.far,
                spacing: m.planes.spacing.to_string(),
                position_freqs: m.encoding.position_freqs,
                direction_freqs: m.encoding.direction_freqs,
                use_direction: m.encoding.use_direction,
                include_identity: m.encoding.include_identity,
                reference_depth: m.depth_frame == DepthFrame::Reference,
                layer_sizes: sizes.collect(),
                adam_step: a.step,
                adam_betas: [a.beta1, a.beta2],
                adam_eps: a.eps,
            }
        })
        .collect();
    let header = Header {
        config: cfg.clone(),
        epoch: state.epoch,
        step: state.step,
        rng: RngRecord {
            seed: state.rng.get_seed(),
            stream: state.rng.get_stream(),
            word_pos: state.rng.get_word_pos().to_string(),
        },
        near: scene.near,
        far: scene.far,
        input_cameras: scene.inputs.iter().map(|v| (&v.camera).into()).collect(),
        mpis,
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (m, a) in state.mpis.iter().zip(&state.adam) {
        push_f64s(&mut buf, &m.params.to_flat());
        push_f64s(&mut buf, &a.first.to_flat());
        push_f64s(&mut buf, &a.second.to_flat());
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                reason: "truncated checkpoint".into(),
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Loads a checkpoint file, or `latest.ckpt` when `path` is a directory.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let path = if path.is_dir() {
        path.join(LATEST_CHECKPOINT)
    } else {
        path.to_path_buf()
    };
    if !path.exists() {
        return Err(Error::MissingManifest(path));
    }
    let bytes = fs::read(&path)?;
    let bad = |reason: &str| Error::Format {
        path: path.clone(),
        reason: reason.into(),
    };
    let mut r = Reader {
        path: &path,
        bytes: &bytes,
        at: 0,
    };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)?;
    let mut mpis = Vec::new();
    let mut adam = Vec::new();
    let mut references = Vec::new();
    for rec in &header.mpis {
        let sizes = &rec.layer_sizes;
        if sizes.len() < 3 || *sizes.last().unwrap() != 4 {
            return Err(bad("layer sizes must end in the 4-wide output head"));
        }
        let mut params = MlpParams::zeros(sizes[0], sizes.len() - 2, sizes[1]);
        if params.layers.iter().map(|l| l.weights.nrows()).collect::<Vec<_>>() != sizes[..sizes.len() - 1] {
            return Err(bad("hidden layers must share one width"));
        }
        let count = params.param_count();
        params.set_flat(&r.f64s(count)?);
        let mut state = AdamState::new(&params);
        state.first.set_flat(&r.f64s(count)?);
        state.second.set_flat(&r.f64s(count)?);
        state.step = rec.adam_step;
        [state.beta1, state.beta2] = rec.adam_betas;
        state.eps = rec.adam_eps;
        let spacing: PlaneSpacing = rec.spacing.parse()?;
        let planes = PlaneStack {
            depths: rec.plane_depths.clone(),
            near: rec.near,
            far: rec.far,
            spacing,
        };
        let encoding = EncodingConfig {
            position_freqs: rec.position_freqs,
            direction_freqs: rec.direction_freqs,
            use_direction: rec.use_direction,
            include_identity: rec.include_identity,
        };
        if encoding.input_dim() != sizes[0] {
            return Err(bad("encoding does not match the first layer"));
        }
        let mut field = MpiField::new(rec.camera.camera(), planes, params, encoding);
        if rec.reference_depth {
            field.depth_frame = DepthFrame::Reference;
        }
        mpis.push(field);
        adam.push(state);
        references.push(rec.reference);
    }
    if r.at != bytes.len() {
        return Err(bad("trailing bytes after parameter data"));
    }
    let word_pos: u128 = header.rng.word_pos.parse().map_err(|_| bad("bad rng position"))?;
    let mut rng = ChaCha8Rng::from_seed(header.rng.seed);
    rng.set_stream(header.rng.stream);
    rng.set_word_pos(word_pos);
    Ok(Checkpoint {
        state: TrainState {
            mpis,
            adam,
            references,
            epoch: header.epoch,
            step: header.step,
            rng,
        },
        config: header.config,
        input_cameras: header.input_cameras.iter().map(CameraRecord::camera).collect(),
        near: header.near,
        far: header.far,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{gen_synthetic, preset};
    use crate::trainer::{train, TrainOutput};

    #[test]
    fn round_trip_is_exact() {
        let mut spec = preset("two-plane").unwrap();
        spec.width = 6;
        spec.height = 6;
        let scene = gen_synthetic(&spec, 0, None).unwrap().scene;
        let cfg = TrainConfig {
            epochs: 1,
            rays_per_batch: 20,
            unseen_rays: 4,
            planes: 3,
            hidden_layers: 1,
            width: 5,
            position_freqs: 1,
            schedule_epoch: 0,
            ..TrainConfig::default()
        };
        let (state, _) = train(&scene, &cfg, &TrainOutput::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        save_checkpoint(&path, &state, &cfg, &scene).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.state.mpis, state.mpis);
        assert_eq!(back.state.adam, state.adam);
        assert_eq!(back.state.rng, state.rng);
        assert_eq!((back.state.epoch, back.state.step), (state.epoch, state.step));
        assert_eq!(back.config, cfg);
        assert_eq!(back.input_cameras[2], scene.inputs[2].camera);

        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
        assert!(matches!(load_checkpoint(&dir.path().join("none")), Err(Error::MissingManifest(_))));
    }
}
