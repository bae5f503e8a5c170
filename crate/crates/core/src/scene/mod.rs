//! Scene directories: a JSON manifest, 8-bit PNG views and optional raw
//! `f32` ground-truth depth.
//!
//! ```text
//! scene/
//!   manifest.json
//!   images/view_000.png
//!   depth/view_000.f32     (synthetic scenes only)
//! ```

mod metrics;
mod synthetic;

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Intrinsics, Pose};

pub use metrics::{average_score, psnr, psnr_with_cap, ssim, PSNR_CAP};
pub use synthetic::{gen_synthetic, preset, Rectangle, SyntheticScene, SyntheticSpec, PRESETS};

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "permpi-scene";
pub const MANIFEST_VERSION: u32 = 1;
pub const POSE_CONVENTION: &str =
    "camera_to_world; pose rows are [R | t]; camera axes x right, y down, z forward";

/// RGB raster with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Self {
        assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    /// Rounds to 8 bits and back, matching what a PNG round trip yields.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|p| p.map(|v| quantize(v) as f64 / 255.0))
                .collect(),
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut raw = Vec::with_capacity(self.data.len() * 3);
        for p in &self.data {
            raw.extend(p.iter().map(|&v| quantize(v)));
        }
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size")
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let data = img
            .pixels()
            .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
            .collect();
        Self::new(img.width() as usize, img.height() as usize, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingManifest(path.to_path_buf()));
        }
        Ok(Self::from_rgb8(&image::open(path)?.to_rgb8()))
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_f32_map(path: &Path, values: &[f64]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let bytes: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f32_map(path: &Path, len: usize) -> Result<Vec<f32>> {
    if !path.exists() {
        return Err(Error::MissingManifest(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    if bytes.len() != len * 4 {
        return Err(Error::ShapeMismatch(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            len * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Input,
    Heldout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub name: String,
    pub camera: Camera,
    pub image: Image,
    /// Ground-truth camera-frame depth, as stored on disk.
    pub depth: Option<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub near: f64,
    pub far: f64,
    pub inputs: Vec<View>,
    pub heldout: Vec<View>,
}

impl Scene {
    pub fn width(&self) -> usize {
        self.inputs[0].image.width
    }

    pub fn height(&self) -> usize {
        self.inputs[0].image.height
    }

    pub fn input_poses(&self) -> Vec<Pose> {
        self.inputs.iter().map(|v| v.camera.pose).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::ShapeMismatch("scene has no input views".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidBounds {
                near: self.near,
                far: self.far,
            });
        }
        let (w, h) = (self.width(), self.height());
        for v in self.inputs.iter().chain(&self.heldout) {
            if v.image.width != w || v.image.height != h {
                return Err(Error::ShapeMismatch(format!(
                    "view `{}` is {}×{}, expected {w}×{h}",
                    v.name, v.image.width, v.image.height
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestView {
    name: String,
    split: Split,
    image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    depth: Option<String>,
    intrinsics: ManifestIntrinsics,
    /// Row-major 3×4 `[R | t]`.
    pose: [[f64; 4]; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    pose_convention: String,
    width: usize,
    height: usize,
    near: f64,
    far: f64,
    views: Vec<ManifestView>,
}

fn pose_rows(p: &Pose) -> [[f64; 4]; 3] {
    let mut rows = [[0.0; 4]; 3];
    for (r, row) in rows.iter_mut().enumerate() {
        for c in 0..3 {
            row[c] = p.rotation[(r, c)];
        }
        row[3] = p.translation[r];
    }
    rows
}

fn pose_from_rows(rows: &[[f64; 4]; 3]) -> Pose {
    let rotation = Matrix3::from_fn(|r, c| rows[r][c]);
    let translation = Vector3::new(rows[0][3], rows[1][3], rows[2][3]);
    Pose::new(rotation, translation)
}

/// Writes images, depth maps and the manifest for `scene` under `dir`.
pub fn write_scene(dir: &Path, scene: &Scene) -> Result<()> {
    scene.validate()?;
    fs::create_dir_all(dir.join("images"))?;
    let mut views = Vec::new();
    let tagged = scene
        .inputs
        .iter()
        .map(|v| (v, Split::Input))
        .chain(scene.heldout.iter().map(|v| (v, Split::Heldout)));
    for (view, split) in tagged {
        let image = format!("images/{}.png", view.name);
        view.image.save_png(&dir.join(&image))?;
        let depth = match &view.depth {
            Some(d) => {
                let rel = format!("depth/{}.f32", view.name);
                let as_f64: Vec<f64> = d.iter().map(|&v| v as f64).collect();
                write_f32_map(&dir.join(&rel), &as_f64)?;
                Some(rel)
            }
            None => None,
        };
        let k = &view.camera.intrinsics;
        views.push(ManifestView {
            name: view.name.clone(),
            split,
            image,
            depth,
            intrinsics: ManifestIntrinsics {
                fx: k.fx,
                fy: k.fy,
                cx: k.cx,
                cy: k.cy,
            },
            pose: pose_rows(&view.camera.pose),
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        pose_convention: POSE_CONVENTION.into(),
        width: scene.width(),
        height: scene.height(),
        near: scene.near,
        far: scene.far,
        views,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_scene(dir: &Path) -> Result<Scene> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Err(Error::MissingManifest(manifest_path));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    let format_err = |reason: String| Error::Format {
        path: manifest_path.clone(),
        reason,
    };
    if manifest.format != MANIFEST_FORMAT {
        return Err(format_err(format!("unexpected format tag `{}`", manifest.format)));
    }
    if manifest.version != MANIFEST_VERSION {
        return Err(format_err(format!("unsupported version {}", manifest.version)));
    }
    let mut scene = Scene {
        near: manifest.near,
        far: manifest.far,
        inputs: Vec::new(),
        heldout: Vec::new(),
    };
    for mv in &manifest.views {
        let pose = pose_from_rows(&mv.pose);
        pose.validate().map_err(|field| Error::BadPose {
            file: manifest_path.clone(),
            view: mv.name.clone(),
            field: format!("pose: {field}"),
        })?;
        let k = &mv.intrinsics;
        let intrinsics = Intrinsics::new(k.fx, k.fy, k.cx, k.cy, manifest.width, manifest.height);
        intrinsics.validate().map_err(|_| Error::BadPose {
            file: manifest_path.clone(),
            view: mv.name.clone(),
            field: "intrinsics".into(),
        })?;
        let image = Image::load_png(&dir.join(&mv.image))?;
        if image.width != manifest.width || image.height != manifest.height {
            return Err(Error::ShapeMismatch(format!(
                "{} is {}×{}, manifest says {}×{}",
                mv.image, image.width, image.height, manifest.width, manifest.height
            )));
        }
        let depth = match &mv.depth {
            Some(rel) => Some(read_f32_map(&dir.join(rel), manifest.width * manifest.height)?),
            None => None,
        };
        let view = View {
            name: mv.name.clone(),
            camera: Camera::new(intrinsics, pose),
            image,
            depth,
        };
        match mv.split {
            Split::Input => scene.inputs.push(view),
            Split::Heldout => scene.heldout.push(view),
        }
    }
    scene.validate()?;
    Ok(scene)
}

/// Paths of the artifacts written by [`write_depth_outputs`].
#[derive(Clone, Debug)]
pub struct DepthOutputs {
    pub raw: PathBuf,
    pub visualization: PathBuf,
    pub sidecar: PathBuf,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct DepthSidecar {
    pub width: usize,
    pub height: usize,
    pub min: f64,
    pub max: f64,
    pub encoding: String,
}

/// Writes a depth map as raw `f32`, an 8-bit min/max-scaled PNG and a JSON
/// sidecar recording the scale. `stem` is the path without extension.
pub fn write_depth_outputs(stem: &Path, width: usize, height: usize, depth: &[f64]) -> Result<DepthOutputs> {
    let with_suffix = |suffix: &str| {
        let mut s = stem.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    let raw = with_suffix("_depth.f32");
    let visualization = with_suffix("_depth.png");
    let sidecar = with_suffix("_depth.json");
    write_f32_map(&raw, depth)?;
    let min = depth.iter().copied().fold(f64::INFINITY, f64::min);
    let max = depth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if max > min { max - min } else { 1.0 };
    let gray: Vec<u8> = depth
        .iter()
        .map(|&d| (((d - min) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    image::GrayImage::from_raw(width as u32, height as u32, gray)
        .expect("buffer size")
        .save_with_format(&visualization, image::ImageFormat::Png)?;
    let meta = DepthSidecar {
        width,
        height,
        min,
        max,
        encoding: "f32 little-endian row-major; png = 255 * (d - min) / (max - min)".into(),
    };
    fs::write(&sidecar, serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(DepthOutputs {
        raw,
        visualization,
        sidecar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scene() -> Scene {
        let k = Intrinsics::new(10.0, 10.0, 2.0, 2.0, 4, 4);
        let img = Image::new(4, 4, (0..16).map(|i| [i as f64 / 15.0, 0.5, 1.0]).collect()).quantized();
        let view = |name: &str, x: f64| View {
            name: name.into(),
            camera: Camera::new(k, Pose::from_translation(Vector3::new(x, 0.1, -0.3))),
            image: img.clone(),
            depth: None,
        };
        Scene {
            near: 1.0,
            far: 3.0,
            inputs: vec![view("view_000", 0.0), view("view_001", 0.25)],
            heldout: vec![view("view_002", 0.125)],
        }
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let scene = tiny_scene();
        write_scene(dir.path(), &scene).unwrap();
        assert_eq!(load_scene(dir.path()).unwrap(), scene);
    }

    #[test]
    fn missing_manifest_and_image() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_scene(dir.path()), Err(Error::MissingManifest(_))));
        write_scene(dir.path(), &tiny_scene()).unwrap();
        let gone = dir.path().join("images/view_001.png");
        fs::remove_file(&gone).unwrap();
        match load_scene(dir.path()) {
            Err(Error::MissingManifest(p)) => assert_eq!(p, gone),
            other => panic!("expected missing image, got {other:?}"),
        }
    }

    #[test]
    fn bad_rotation_names_view() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(dir.path(), &tiny_scene()).unwrap();
        let path = dir.path().join(MANIFEST);
        let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        m["views"][1]["pose"][0][0] = serde_json::json!(1.5);
        fs::write(&path, m.to_string()).unwrap();
        match load_scene(dir.path()) {
            Err(Error::BadPose { view, .. }) => assert_eq!(view, "view_001"),
            other => panic!("expected BadPose, got {other:?}"),
        }
    }

    #[test]
    fn depth_outputs_record_range() {
        let dir = tempfile::tempdir().unwrap();
        let out = write_depth_outputs(&dir.path().join("frame"), 2, 2, &[1.0, 2.0, 3.0, 5.0]).unwrap();
        let meta: DepthSidecar = serde_json::from_str(&fs::read_to_string(out.sidecar).unwrap()).unwrap();
        assert_eq!((meta.min, meta.max), (1.0, 5.0));
        assert_eq!(read_f32_map(&out.raw, 4).unwrap(), vec![1.0, 2.0, 3.0, 5.0]);
        let png = image::open(out.visualization).unwrap().to_luma8();
        assert_eq!(png.as_raw(), &vec![0, 64, 128, 255]);
    }
}
