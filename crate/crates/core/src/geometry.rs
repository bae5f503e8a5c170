//! Pinhole cameras, relative poses, plane-induced warps and ray–plane
//! intersections.
//!
//! Poses are camera-to-world. Camera frames follow the usual vision layout:
//! x right, y down, z forward. Pixel coordinates are continuous; the center
//! of pixel `(i, j)` is `(i + 0.5, j + 0.5)`.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

/// Homogeneous scales below this are treated as degenerate.
pub const DEGENERATE_SCALE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Camera-frame direction (z = 1) through a pixel coordinate.
    pub fn unproject(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Projects a camera-frame point. The caller guarantees `p.z != 0`.
    pub fn project(&self, p: &Vector3<f64>) -> [f64; 2] {
        [
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ]
    }

    /// Same camera at a different raster size.
    pub fn scaled_to(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }
}

/// Rigid transform. For camera poses this is camera-to-world.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Transform taking input-camera coordinates to target-camera coordinates.
pub type RelativePose = Pose;

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Camera at `eye` looking at `target`, with image-down roughly along `down`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, down: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let x = down.cross(&z).normalize();
        let y = z.cross(&x);
        Self::new(Matrix3::from_columns(&[x, y, z]), eye)
    }

    /// Checks orthonormality and unit determinant within `1e-9`.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let r = &self.rotation;
        if r.iter().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err("non-finite entry".into());
        }
        let ortho = (r * r.transpose() - Matrix3::identity()).abs().max();
        if ortho > 1e-9 {
            return Err(format!("rotation not orthonormal (max |RRᵀ - I| = {ortho:e})"));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(format!("rotation determinant {det} != 1"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.translation))
    }

    pub fn compose(&self, other: &Pose) -> Self {
        Self::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        Self { intrinsics, pose }
    }

    pub fn with_intrinsics(&self, intrinsics: Intrinsics) -> Self {
        Self {
            intrinsics,
            pose: self.pose,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PlaneSpacing {
    #[default]
    LinearDepth,
    LinearDisparity,
}

impl std::str::FromStr for PlaneSpacing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear-depth" | "depth" => Ok(Self::LinearDepth),
            "linear-disparity" | "disparity" => Ok(Self::LinearDisparity),
            other => Err(Error::Config(format!("unknown plane spacing `{other}`"))),
        }
    }
}

impl std::fmt::Display for PlaneSpacing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::LinearDepth => "linear-depth",
            Self::LinearDisparity => "linear-disparity",
        })
    }
}

/// Fronto-parallel plane depths in a reference camera frame, nearest first.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneStack {
    pub depths: Vec<f64>,
    pub near: f64,
    pub far: f64,
    pub spacing: PlaneSpacing,
}

impl PlaneStack {
    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    /// Maps a plane depth to `[-1, 1]`, uniform in the stack's spacing.
    pub fn normalized_depth(&self, z: f64) -> f64 {
        let s = match self.spacing {
            PlaneSpacing::LinearDepth => (z - self.near) / (self.far - self.near),
            PlaneSpacing::LinearDisparity => {
                (1.0 / z - 1.0 / self.near) / (1.0 / self.far - 1.0 / self.near)
            }
        };
        2.0 * s - 1.0
    }
}

/// Relative transform per `inverse(target) · input` on 4×4 matrices.
pub fn relative_extrinsics(target: &Pose, input: &Pose) -> RelativePose {
    target.inverse().compose(input)
}

/// Plane-induced homography mapping target pixels to reference (input) pixels
/// for the plane `z = depth` of the reference camera frame.
///
/// `rel` maps reference-camera coordinates to target-camera coordinates.
pub fn plane_homography(
    k_in: &Intrinsics,
    k_t: &Intrinsics,
    rel: &RelativePose,
    depth: f64,
) -> Result<Matrix3<f64>> {
    // Target→reference transform.
    let back = rel.inverse();
    let n_r = back.rotation.row(2).transpose();
    let denom = depth - back.translation.z;
    if denom.abs() < DEGENERATE_SCALE {
        return Err(Error::DegenerateWarp {
            plane: 0,
            scale: denom,
        });
    }
    let core = back.rotation + back.translation * n_r.transpose() / denom;
    Ok(k_in.matrix() * core * k_t.inverse_matrix())
}

pub fn apply_homography(h: &Matrix3<f64>, pixel: [f64; 2]) -> Result<[f64; 2]> {
    let p = h * Vector3::new(pixel[0], pixel[1], 1.0);
    if p.z.abs() < DEGENERATE_SCALE {
        return Err(Error::DegenerateWarp {
            plane: 0,
            scale: p.z,
        });
    }
    Ok([p.x / p.z, p.y / p.z])
}

/// Reference-view pixel hit by the target ray through `pixel` on the plane at `depth`.
pub fn homography_warp(
    pixel: [f64; 2],
    k_in: &Intrinsics,
    k_t: &Intrinsics,
    rel: &RelativePose,
    depth: f64,
) -> Result<[f64; 2]> {
    let h = plane_homography(k_in, k_t, rel, depth)?;
    apply_homography(&h, pixel)
}

/// World-space ray through a pixel coordinate, unit direction.
pub fn pixel_ray(cam: &Camera, pixel: [f64; 2]) -> Ray {
    let d = cam.intrinsics.unproject(pixel[0], pixel[1]);
    Ray {
        origin: cam.pose.center(),
        direction: (cam.pose.rotation * d).normalize(),
    }
}

pub fn make_plane_depths(
    near: f64,
    far: f64,
    count: usize,
    spacing: PlaneSpacing,
) -> Result<PlaneStack> {
    if !(near > 0.0 && near < far) || !far.is_finite() || count == 0 {
        return Err(Error::InvalidBounds { near, far });
    }
    let depths = if count == 1 {
        vec![0.5 * (near + far)]
    } else {
        let last = (count - 1) as f64;
        let mut d: Vec<f64> = (0..count)
            .map(|k| {
                let s = k as f64 / last;
                match spacing {
                    PlaneSpacing::LinearDepth => near + s * (far - near),
                    PlaneSpacing::LinearDisparity => {
                        1.0 / (1.0 / near + s * (1.0 / far - 1.0 / near))
                    }
                }
            })
            .collect();
        d[0] = near;
        d[count - 1] = far;
        d
    };
    Ok(PlaneStack {
        depths,
        near,
        far,
        spacing,
    })
}

/// One intersection of a target ray with a reference plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneHit {
    /// Reference-view pixel coordinate of the intersection.
    pub pixel: [f64; 2],
    /// Plane depth in the reference frame.
    pub depth: f64,
    /// Intersection point in the reference camera frame; `point.z == depth`.
    pub point: Vector3<f64>,
    /// Signed distance from the target origin along the unit target ray.
    pub ray_depth: f64,
}

/// Intersections of the target ray through `pixel` with every plane of an MPI.
pub fn ray_plane_intersections(
    pixel: [f64; 2],
    target: &Camera,
    reference: &Camera,
    planes: &PlaneStack,
) -> Result<Vec<PlaneHit>> {
    let rel = relative_extrinsics(&target.pose, &reference.pose);
    let k_ref = &reference.intrinsics;
    planes
        .depths
        .iter()
        .enumerate()
        .map(|(k, &z)| {
            let uv = homography_warp(pixel, k_ref, &target.intrinsics, &rel, z).map_err(|e| {
                match e {
                    Error::DegenerateWarp { scale, .. } => Error::DegenerateWarp { plane: k, scale },
                    other => other,
                }
            })?;
            let mut point = k_ref.unproject(uv[0], uv[1]) * z;
            point.z = z;
            let in_target = rel.transform_point(&point);
            let ray_depth = in_target.norm().copysign(in_target.z);
            Ok(PlaneHit {
                pixel: uv,
                depth: z,
                point,
                ray_depth,
            })
        })
        .collect()
}

/// Minimizer of `|o1 + t d1 - x0|²` over `t ∈ [t_near, t_far]` and the
/// resulting distance.
pub fn closest_point_parameter(
    x0: &Vector3<f64>,
    o1: &Vector3<f64>,
    d1: &Vector3<f64>,
    bounds: (f64, f64),
) -> (f64, f64) {
    let t = (x0 - o1).dot(d1).clamp(bounds.0, bounds.1);
    (t, (o1 + d1 * t - x0).norm())
}
