use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_scene, Image, Scene, View};
use crate::error::{Error, Result};
use crate::geometry::{Camera, Intrinsics, Pose, Ray};

pub const PRESETS: [&str; 3] = ["one-plane", "two-plane", "three-view-arc"];

/// Textured rectangle on the world plane `z = depth`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rectangle {
    pub depth: f64,
    pub x: [f64; 2],
    pub y: [f64; 2],
    /// Texture grid (columns, rows); each texel gets one flat color.
    pub texels: [usize; 2],
    pub texture_seed: u64,
}

impl Rectangle {
    fn contains(&self, p: &Vector3<f64>) -> bool {
        p.x >= self.x[0] && p.x <= self.x[1] && p.y >= self.y[0] && p.y <= self.y[1]
    }

    fn texel(&self, p: &Vector3<f64>) -> (usize, usize) {
        let cell = |v: f64, range: [f64; 2], n: usize| {
            let u = (v - range[0]) / (range[1] - range[0]);
            ((u * n as f64).floor() as usize).min(n - 1)
        };
        (cell(p.x, self.x, self.texels[0]), cell(p.y, self.y, self.texels[1]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels; the principal point sits at the image center.
    pub focal: f64,
    pub near: f64,
    pub far: f64,
    pub rectangles: Vec<Rectangle>,
    pub inputs: Vec<Pose>,
    pub heldout: Vec<Pose>,
}

/// Cameras on a horizontal arc of `radius` around `center`, all looking at it.
pub fn arc_rig(center: Vector3<f64>, radius: f64, degrees: &[f64]) -> Vec<Pose> {
    degrees
        .iter()
        .map(|d| {
            let th = d.to_radians();
            let eye = center + Vector3::new(radius * th.sin(), 0.0, -radius * th.cos());
            Pose::look_at(eye, center, Vector3::new(0.0, 1.0, 0.0))
        })
        .collect()
}

fn backdrop(depth: f64, seed: u64) -> Rectangle {
    Rectangle {
        depth,
        x: [-8.0, 8.0],
        y: [-8.0, 8.0],
        texels: [12, 12],
        texture_seed: seed,
    }
}

/// Named rigs used by the command line and the test suite.
pub fn preset(name: &str) -> Result<SyntheticSpec> {
    let center = Vector3::new(0.0, 0.0, 5.0);
    let base = SyntheticSpec {
        width: 64,
        height: 64,
        focal: 70.4,
        near: 2.0,
        far: 8.0,
        rectangles: Vec::new(),
        inputs: arc_rig(center, 5.0, &[-8.0, 0.0, 8.0]),
        heldout: arc_rig(center, 5.0, &[-4.0, 4.0]),
    };
    let front = Rectangle {
        depth: 3.5,
        x: [-1.0, 0.6],
        y: [-0.8, 0.7],
        texels: [4, 4],
        texture_seed: 1,
    };
    let spec = match name {
        "one-plane" => {
            let shift = |x: f64| Pose::from_translation(Vector3::new(x, 0.0, 0.0));
            SyntheticSpec {
                rectangles: vec![backdrop(5.0, 0)],
                inputs: [-0.3, 0.0, 0.3].map(shift).to_vec(),
                heldout: [-0.15, 0.15].map(shift).to_vec(),
                ..base
            }
        }
        "two-plane" => SyntheticSpec {
            rectangles: vec![backdrop(6.5, 0), front],
            ..base
        },
        "three-view-arc" => SyntheticSpec {
            rectangles: vec![
                backdrop(6.5, 0),
                Rectangle {
                    depth: 4.75,
                    x: [0.0, 1.6],
                    y: [-1.4, 0.2],
                    texels: [4, 4],
                    texture_seed: 2,
                },
                Rectangle {
                    depth: 3.0,
                    x: [-1.1, 0.1],
                    y: [-0.2, 0.9],
                    texels: [3, 3],
                    texture_seed: 3,
                },
            ],
            ..base
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(spec)
}

impl SyntheticSpec {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::new(
            self.focal,
            self.focal,
            self.width as f64 / 2.0,
            self.height as f64 / 2.0,
            self.width,
            self.height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidBounds {
                near: self.near,
                far: self.far,
            });
        }
        if self.inputs.len() < 2 {
            return Err(Error::TooFewViews(self.inputs.len()));
        }
        for r in &self.rectangles {
            if !(r.depth > self.near && r.depth < self.far) {
                return Err(Error::Config(format!(
                    "rectangle at depth {} lies outside ({}, {})",
                    r.depth, self.near, self.far
                )));
            }
            if r.texels[0] == 0 || r.texels[1] == 0 || r.x[0] >= r.x[1] || r.y[0] >= r.y[1] {
                return Err(Error::Config("rectangle needs a positive extent and texel grid".into()));
            }
        }
        self.intrinsics().validate()
    }
}

/// Generated scene plus ground truth kept at full precision.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub scene: Scene,
    /// Camera-frame depth per pixel, inputs first then held-out views.
    /// Pixels that see no rectangle hold `f64::INFINITY`.
    pub exact_depth: Vec<Vec<f64>>,
    /// Index of the visible rectangle per pixel, same view order.
    pub surface: Vec<Vec<Option<usize>>>,
}

impl SyntheticScene {
    /// Ground truth for input view `i`, or held-out view `i - inputs`.
    pub fn view_truth(&self, i: usize) -> (&[f64], &[Option<usize>]) {
        (&self.exact_depth[i], &self.surface[i])
    }

    pub fn heldout_truth(&self, i: usize) -> (&[f64], &[Option<usize>]) {
        self.view_truth(self.scene.inputs.len() + i)
    }
}

fn texture(rect: &Rectangle, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rect.texture_seed);
    (0..rect.texels[0] * rect.texels[1])
        .map(|_| [0; 3].map(|_| rng.gen_range(0.1..0.9)))
        .collect()
}

struct Raster {
    image: Image,
    depth: Vec<f64>,
    surface: Vec<Option<usize>>,
}

fn render_view(spec: &SyntheticSpec, textures: &[Vec<[f64; 3]>], cam: &Camera) -> Raster {
    let (w, h) = (spec.width, spec.height);
    let mut data = vec![[0.0; 3]; w * h];
    let mut depth = vec![f64::INFINITY; w * h];
    let mut surface = vec![None; w * h];
    for y in 0..h {
        for x in 0..w {
            // Unit camera-frame z, so the ray parameter is camera depth.
            let direction = cam.pose.rotation * cam.intrinsics.unproject(x as f64 + 0.5, y as f64 + 0.5);
            let ray = Ray {
                origin: cam.pose.translation,
                direction,
            };
            let mut best: Option<(f64, usize, Vector3<f64>)> = None;
            for (i, r) in spec.rectangles.iter().enumerate() {
                if ray.direction.z.abs() < 1e-15 {
                    continue;
                }
                let t = (r.depth - ray.origin.z) / ray.direction.z;
                if t <= 0.0 || best.is_some_and(|(bt, _, _)| bt <= t) {
                    continue;
                }
                let p = ray.at(t);
                if r.contains(&p) {
                    best = Some((t, i, p));
                }
            }
            if let Some((t, i, p)) = best {
                let r = &spec.rectangles[i];
                let (tx, ty) = r.texel(&p);
                let k = y * w + x;
                data[k] = textures[i][ty * r.texels[0] + tx];
                depth[k] = t;
                surface[k] = Some(i);
            }
        }
    }
    Raster {
        image: Image::new(w, h, data),
        depth,
        surface,
    }
}

/// Renders every view analytically and, when `out` is given, writes the
/// scene directory there.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64, out: Option<&Path>) -> Result<SyntheticScene> {
    spec.validate()?;
    let textures: Vec<_> = spec.rectangles.iter().map(|r| texture(r, seed)).collect();
    let k = spec.intrinsics();
    let mut exact_depth = Vec::new();
    let mut surface = Vec::new();
    let mut make = |prefix: usize, poses: &[Pose]| -> Vec<View> {
        poses
            .iter()
            .enumerate()
            .map(|(i, pose)| {
                let cam = Camera::new(k, *pose);
                let r = render_view(spec, &textures, &cam);
                let stored = r.depth.iter().map(|&d| d as f32).collect();
                exact_depth.push(r.depth);
                surface.push(r.surface);
                View {
                    name: format!("view_{:03}", prefix + i),
                    camera: cam,
                    image: r.image.quantized(),
                    depth: Some(stored),
                }
            })
            .collect()
    };
    let inputs = make(0, &spec.inputs);
    let heldout = make(spec.inputs.len(), &spec.heldout);
    let scene = Scene {
        near: spec.near,
        far: spec.far,
        inputs,
        heldout,
    };
    if let Some(dir) = out {
        write_scene(dir, &scene)?;
    }
    Ok(SyntheticScene {
        scene,
        exact_depth,
        surface,
    })
}
