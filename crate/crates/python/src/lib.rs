//! Python bindings for `permpi`.

use std::path::PathBuf;

use nalgebra::{Matrix3, Vector3};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use permpi::analysis::{self, OverlapConfig, SamplingMode, SparseInstance};
use permpi::geometry::{self, PlaneSpacing};
use permpi::renderer::{self, render_view_weighted, BlendMode};
use permpi::scene::{self as pscene, gen_synthetic as gen, preset};
use permpi::trainer::{self, StepRecord, TrainOutput};

create_exception!(permpi_py, PermpiError, PyException);

fn err(e: permpi::Error) -> PyErr {
    PermpiError::new_err(format!("{}: {e}", e.kind()))
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for permpi::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

#[pyclass(module = "permpi_py", from_py_object)]
#[derive(Clone)]
struct Intrinsics(geometry::Intrinsics);

#[pymethods]
impl Intrinsics {
    #[new]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> PyResult<Self> {
        let k = geometry::Intrinsics::new(fx, fy, cx, cy, width, height);
        k.validate().py()?;
        Ok(Self(k))
    }

    #[getter]
    fn fx(&self) -> f64 {
        self.0.fx
    }

    #[getter]
    fn fy(&self) -> f64 {
        self.0.fy
    }

    #[getter]
    fn cx(&self) -> f64 {
        self.0.cx
    }

    #[getter]
    fn cy(&self) -> f64 {
        self.0.cy
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        rows3(&self.0.matrix())
    }

    fn __repr__(&self) -> String {
        let k = &self.0;
        format!(
            "Intrinsics(fx={}, fy={}, cx={}, cy={}, width={}, height={})",
            k.fx, k.fy, k.cx, k.cy, k.width, k.height
        )
    }
}

fn rows3(m: &Matrix3<f64>) -> Vec<Vec<f64>> {
    (0..3).map(|r| (0..3).map(|c| m[(r, c)]).collect()).collect()
}

/// Camera-to-world rigid transform.
#[pyclass(module = "permpi_py", from_py_object)]
#[derive(Clone)]
struct Pose(geometry::Pose);

#[pymethods]
impl Pose {
    #[new]
    fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> PyResult<Self> {
        let p = geometry::Pose::new(
            Matrix3::from_fn(|r, c| rotation[r][c]),
            Vector3::from(translation),
        );
        p.validate().map_err(PermpiError::new_err)?;
        Ok(Self(p))
    }

    #[staticmethod]
    fn identity() -> Self {
        Self(geometry::Pose::identity())
    }

    #[staticmethod]
    #[pyo3(signature = (eye, target, down = [0.0, 1.0, 0.0]))]
    fn look_at(eye: [f64; 3], target: [f64; 3], down: [f64; 3]) -> Self {
        Self(geometry::Pose::look_at(eye.into(), target.into(), down.into()))
    }

    #[getter]
    fn rotation(&self) -> Vec<Vec<f64>> {
        rows3(&self.0.rotation)
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        self.0.translation.into()
    }

    fn center(&self) -> [f64; 3] {
        self.0.center().into()
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        let m = self.0.matrix();
        (0..4).map(|r| (0..4).map(|c| m[(r, c)]).collect()).collect()
    }

    fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    fn compose(&self, other: &Pose) -> Self {
        Self(self.0.compose(&other.0))
    }

    fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        self.0.transform_point(&p.into()).into()
    }

    fn __repr__(&self) -> String {
        format!("Pose(rotation={:?}, translation={:?})", self.rotation(), self.translation())
    }
}

#[pyclass(module = "permpi_py", from_py_object)]
#[derive(Clone)]
struct Camera(geometry::Camera);

#[pymethods]
impl Camera {
    #[new]
    fn new(intrinsics: &Intrinsics, pose: &Pose) -> Self {
        Self(geometry::Camera::new(intrinsics.0, pose.0))
    }

    #[getter]
    fn intrinsics(&self) -> Intrinsics {
        Intrinsics(self.0.intrinsics)
    }

    #[getter]
    fn pose(&self) -> Pose {
        Pose(self.0.pose)
    }
}

/// RGB image with channels in `[0, 1]`, stored row-major.
#[pyclass(module = "permpi_py", from_py_object)]
#[derive(Clone)]
struct Image(pscene::Image);

#[pymethods]
impl Image {
    #[new]
    fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> PyResult<Self> {
        if data.len() != width * height {
            return Err(PermpiError::new_err(format!(
                "ShapeMismatch: {} pixels for a {width}×{height} image",
                data.len()
            )));
        }
        Ok(Self(pscene::Image::new(width, height, data)))
    }

    #[staticmethod]
    fn load_png(path: PathBuf) -> PyResult<Self> {
        Ok(Self(pscene::Image::load_png(&path).py()?))
    }

    fn save_png(&self, path: PathBuf) -> PyResult<()> {
        self.0.save_png(&path).py()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height
    }

    #[getter]
    fn data(&self) -> Vec<[f64; 3]> {
        self.0.data.clone()
    }

    fn pixel(&self, x: usize, y: usize) -> PyResult<[f64; 3]> {
        if x >= self.0.width || y >= self.0.height {
            return Err(PermpiError::new_err(format!("pixel ({x}, {y}) out of range")));
        }
        Ok(self.0.pixel(x, y))
    }

    /// Rounded to 8 bits per channel.
    fn quantized(&self) -> Self {
        Self(self.0.quantized())
    }
}

#[pyclass(module = "permpi_py", from_py_object)]
#[derive(Clone)]
struct Scene(pscene::Scene);

#[pymethods]
impl Scene {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self(pscene::load_scene(&dir).py()?))
    }

    fn write(&self, dir: PathBuf) -> PyResult<()> {
        pscene::write_scene(&dir, &self.0).py()
    }

    #[getter]
    fn near(&self) -> f64 {
        self.0.near
    }

    #[getter]
    fn far(&self) -> f64 {
        self.0.far
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn num_inputs(&self) -> usize {
        self.0.inputs.len()
    }

    #[getter]
    fn num_heldout(&self) -> usize {
        self.0.heldout.len()
    }

    /// `(name, camera, image)` of input view `i`.
    fn input_view(&self, i: usize) -> PyResult<(String, Camera, Image)> {
        view_tuple(&self.0.inputs, i)
    }

    fn heldout_view(&self, i: usize) -> PyResult<(String, Camera, Image)> {
        view_tuple(&self.0.heldout, i)
    }
}

fn view_tuple(views: &[pscene::View], i: usize) -> PyResult<(String, Camera, Image)> {
    let v = views
        .get(i)
        .ok_or_else(|| PermpiError::new_err(format!("view {i} out of range ({} views)", views.len())))?;
    Ok((v.name.clone(), Camera(v.camera), Image(v.image.clone())))
}

/// Generated scene plus its exact per-pixel depth and surface labels.
#[pyclass(module = "permpi_py")]
struct SyntheticScene(pscene::SyntheticScene);

#[pymethods]
impl SyntheticScene {
    #[getter]
    fn scene(&self) -> Scene {
        Scene(self.0.scene.clone())
    }

    /// Camera-frame depth of held-out view `i`, row-major.
    fn heldout_depth(&self, i: usize) -> PyResult<Vec<f64>> {
        self.check(i)?;
        Ok(self.0.heldout_truth(i).0.to_vec())
    }

    /// Index of the rectangle seen at each pixel of held-out view `i`.
    fn heldout_surface(&self, i: usize) -> PyResult<Vec<Option<usize>>> {
        self.check(i)?;
        Ok(self.0.heldout_truth(i).1.to_vec())
    }
}

impl SyntheticScene {
    fn check(&self, i: usize) -> PyResult<()> {
        if i >= self.0.scene.heldout.len() {
            return Err(PermpiError::new_err(format!("held-out view {i} out of range")));
        }
        Ok(())
    }
}

#[pyfunction]
#[pyo3(signature = (preset_name, seed = 0, out = None, width = None, height = None))]
fn gen_synthetic(
    preset_name: &str,
    seed: u64,
    out: Option<PathBuf>,
    width: Option<usize>,
    height: Option<usize>,
) -> PyResult<SyntheticScene> {
    let mut spec = preset(preset_name).py()?;
    if let Some(w) = width {
        spec.focal *= w as f64 / spec.width as f64;
        spec.width = w;
    }
    spec.height = height.unwrap_or(spec.height);
    Ok(SyntheticScene(gen(&spec, seed, out.as_deref()).py()?))
}

fn json_from_py(v: &Bound<'_, PyAny>) -> PyResult<serde_json::Value> {
    use serde_json::Value;
    if v.is_none() {
        return Ok(Value::Null);
    }
    if v.is_instance_of::<PyBool>() {
        return Ok(Value::Bool(v.extract()?));
    }
    if let Ok(i) = v.extract::<i64>() {
        return Ok(Value::from(i));
    }
    if let Ok(f) = v.extract::<f64>() {
        return Ok(Value::from(f));
    }
    Ok(Value::String(v.extract()?))
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| json_to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

/// Training configuration. Keyword arguments override the defaults.
#[pyclass(module = "permpi_py", from_py_object)]
#[derive(Clone)]
struct TrainConfig(trainer::TrainConfig);

#[pymethods]
impl TrainConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut value = serde_json::to_value(trainer::TrainConfig::default())
            .map_err(|e| PermpiError::new_err(e.to_string()))?;
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                value[k.extract::<String>()?] = json_from_py(&v)?;
            }
        }
        let cfg: trainer::TrainConfig =
            serde_json::from_value(value).map_err(|e| PermpiError::new_err(format!("Config: {e}")))?;
        cfg.validate().py()?;
        Ok(Self(cfg))
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self(trainer::TrainConfig::from_toml(text).py()?))
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let v = serde_json::to_value(&self.0).map_err(|e| PermpiError::new_err(e.to_string()))?;
        json_to_py(py, &v)
    }

    fn __repr__(&self) -> String {
        format!("TrainConfig({:?})", self.0)
    }
}

fn record_dict<'py>(py: Python<'py>, r: &StepRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("epoch", r.epoch)?;
    d.set_item("step", r.step)?;
    d.set_item("mse", r.mse)?;
    d.set_item("ac", r.ac)?;
    d.set_item("dc", r.dc)?;
    d.set_item("dc_input", r.dc_input)?;
    d.set_item("total", r.total)?;
    d.set_item("lr", r.lr)?;
    Ok(d)
}

fn blend(name: &str) -> PyResult<BlendMode> {
    name.parse().py()
}

/// Trained per-view MPIs with their optimizer state.
#[pyclass(module = "permpi_py")]
struct Model {
    state: trainer::TrainState,
    config: trainer::TrainConfig,
    log: Vec<StepRecord>,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = trainer::load_checkpoint(&path).py()?;
        Ok(Self {
            state: ck.state,
            config: ck.config,
            log: Vec::new(),
        })
    }

    fn save(&self, path: PathBuf, scene: &Scene) -> PyResult<()> {
        trainer::save_checkpoint(&path, &self.state, &self.config, &scene.0).py()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.state.epoch
    }

    #[getter]
    fn step(&self) -> u64 {
        self.state.step
    }

    #[getter]
    fn num_mpis(&self) -> usize {
        self.state.mpis.len()
    }

    #[getter]
    fn config(&self) -> TrainConfig {
        TrainConfig(self.config.clone())
    }

    /// Step records of the last `train` or `resume` call.
    #[getter]
    fn log<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.log.iter().map(|r| record_dict(py, r)).collect()
    }

    /// Trains until `config.epochs` (or `epochs`, when given) are complete.
    #[pyo3(signature = (scene, epochs = None, out = None))]
    fn resume(&mut self, py: Python<'_>, scene: &Scene, epochs: Option<usize>, out: Option<PathBuf>) -> PyResult<()> {
        if let Some(e) = epochs {
            self.config.epochs = e;
        }
        let state = self.state.clone();
        let (cfg, sc) = (&self.config, &scene.0);
        let (state, log) = py
            .detach(|| trainer::train_from(state, sc, cfg, &TrainOutput { dir: out }, &mut |_| {}))
            .py()?;
        self.state = state;
        self.log = log;
        Ok(())
    }

    /// Color image and ray depths for `camera`, blended over all MPIs.
    #[pyo3(signature = (camera, width = None, height = None, blend_mode = "as-printed"))]
    fn render(
        &self,
        py: Python<'_>,
        camera: &Camera,
        width: Option<usize>,
        height: Option<usize>,
        blend_mode: &str,
    ) -> PyResult<(Image, Vec<f64>)> {
        let k = camera.0.intrinsics;
        let (w, h) = (width.unwrap_or(k.width), height.unwrap_or(k.height));
        let mode = blend(blend_mode)?;
        let cam = camera.0;
        let view = py.detach(|| render_view_weighted(&self.state.mpis, &cam, w, h, mode)).py()?;
        Ok((Image(pscene::Image::new(w, h, view.color)), view.depth))
    }

    /// Scores the held-out views (or the inputs) of `scene`.
    #[pyo3(signature = (scene, blend_mode = "as-printed", inputs = false))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        scene: &Scene,
        blend_mode: &str,
        inputs: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let views = if inputs { &scene.0.inputs } else { &scene.0.heldout };
        let mode = blend(blend_mode)?;
        let report = py.detach(|| trainer::evaluate(&self.state.mpis, views, mode)).py()?;
        let d = PyDict::new(py);
        let rows = PyList::empty(py);
        for r in &report.rows {
            rows.append((r.view.clone(), r.psnr, r.ssim, r.average))?;
        }
        d.set_item("rows", rows)?;
        d.set_item("mean_psnr", report.mean_psnr())?;
        d.set_item("mean_ssim", report.mean_ssim())?;
        d.set_item("mean_average", report.mean_average())?;
        d.set_item("csv", report.csv())?;
        Ok(d)
    }
}

/// Fresh training run; writes checkpoints and the step log under `out`.
#[pyfunction]
#[pyo3(signature = (scene, config, out = None))]
fn train(py: Python<'_>, scene: &Scene, config: &TrainConfig, out: Option<PathBuf>) -> PyResult<Model> {
    let (sc, cfg) = (&scene.0, &config.0);
    let (state, log) = py.detach(|| trainer::train(sc, cfg, &TrainOutput { dir: out })).py()?;
    Ok(Model {
        state,
        config: config.0.clone(),
        log,
    })
}

#[pyfunction]
fn relative_extrinsics(target: &Pose, input: &Pose) -> Pose {
    Pose(geometry::relative_extrinsics(&target.0, &input.0))
}

#[pyfunction]
fn homography_warp(
    pixel: [f64; 2],
    k_in: &Intrinsics,
    k_t: &Intrinsics,
    rel: &Pose,
    depth: f64,
) -> PyResult<[f64; 2]> {
    geometry::homography_warp(pixel, &k_in.0, &k_t.0, &rel.0, depth).py()
}

#[pyfunction]
#[pyo3(signature = (near, far, count, spacing = "linear-depth"))]
fn make_plane_depths(near: f64, far: f64, count: usize, spacing: &str) -> PyResult<Vec<f64>> {
    let spacing: PlaneSpacing = spacing.parse().py()?;
    Ok(geometry::make_plane_depths(near, far, count, spacing).py()?.depths)
}

#[pyfunction]
fn interpolate_pose(a: &Pose, b: &Pose, u: f64) -> Pose {
    Pose(trainer::interpolate_pose(&a.0, &b.0, u))
}

/// Per-plane weights and residual transmittance.
#[pyfunction]
fn compositing_weights(alphas: Vec<f64>) -> (Vec<f64>, f64) {
    renderer::compositing_weights(&alphas)
}

fn same_len(a: usize, b: usize) -> PyResult<()> {
    if a != b {
        return Err(PermpiError::new_err(format!("ShapeMismatch: {a} values vs {b} alphas")));
    }
    Ok(())
}

#[pyfunction]
fn composite_color(colors: Vec<[f64; 3]>, alphas: Vec<f64>) -> PyResult<[f64; 3]> {
    same_len(colors.len(), alphas.len())?;
    Ok(renderer::composite_color(&colors, &alphas))
}

#[pyfunction]
fn composite_depth(depths: Vec<f64>, alphas: Vec<f64>) -> PyResult<f64> {
    same_len(depths.len(), alphas.len())?;
    Ok(renderer::composite_depth(&depths, &alphas))
}

#[pyfunction]
fn psnr(a: &Image, b: &Image) -> PyResult<f64> {
    pscene::psnr(&a.0, &b.0).py()
}

#[pyfunction]
fn ssim(a: &Image, b: &Image) -> PyResult<f64> {
    pscene::ssim(&a.0, &b.0).py()
}

/// Exact grid minimizer of the sparse per-ray objective.
#[pyfunction]
#[pyo3(signature = (c_gt, m = 4, penalty = None))]
fn sparse_solution_oracle<'py>(
    py: Python<'py>,
    c_gt: [f64; 3],
    m: usize,
    penalty: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut inst = SparseInstance::new(c_gt, m);
    inst.penalty = penalty.unwrap_or(inst.penalty);
    let sol = analysis::sparse_solution_oracle(&inst).py()?;
    let d = PyDict::new(py);
    d.set_item("colors", sol.colors.clone())?;
    d.set_item("alphas", sol.alphas.clone())?;
    d.set_item("objective", sol.objective)?;
    d.set_item("visited", sol.visited)?;
    d.set_item("closed_form", analysis::is_closed_form(&inst, &sol))?;
    Ok(d)
}

/// Cross-view overlap of stratified and plane-constrained sampling on the
/// input cameras of a preset rig.
#[pyfunction]
#[pyo3(signature = (preset_name = "three-view-arc", samples = 64, planes = 80, trials = 10000, epsilon = None, seed = 0))]
fn cross_view_overlap<'py>(
    py: Python<'py>,
    preset_name: &str,
    samples: usize,
    planes: usize,
    trials: usize,
    epsilon: Option<f64>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = preset(preset_name).py()?;
    let k = spec.intrinsics();
    let cameras: Vec<_> = spec.inputs.iter().map(|p| geometry::Camera::new(k, *p)).collect();
    let stack = geometry::make_plane_depths(spec.near, spec.far, planes, PlaneSpacing::LinearDepth).py()?;
    let eps = epsilon.unwrap_or(1e-3 * (spec.far - spec.near));
    let mut reports = Vec::new();
    for mode in [SamplingMode::Stratified, SamplingMode::PlaneConstrained] {
        let cfg = OverlapConfig {
            mode,
            planes: stack.clone(),
            samples,
            epsilon: eps,
            trials,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        reports.push(py.detach(|| analysis::cross_view_overlap(&cameras, &cfg, &mut rng)).py()?);
    }
    let d = PyDict::new(py);
    d.set_item("epsilon", eps)?;
    d.set_item("stratified_match_fraction", reports[0].match_fraction())?;
    d.set_item("plane_match_fraction", reports[1].match_fraction())?;
    d.set_item("plane_on_plane_fraction", reports[1].on_plane_fraction())?;
    d.set_item("contrast", analysis::overlap_contrast(&reports[0], &reports[1]))?;
    d.set_item("stratified_table", reports[0].table())?;
    d.set_item("plane_table", reports[1].table())?;
    Ok(d)
}

#[pymodule]
fn permpi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PermpiError", m.py().get_type::<PermpiError>())?;
    m.add("PRESETS", pscene::PRESETS.to_vec())?;
    m.add_class::<Intrinsics>()?;
    m.add_class::<Pose>()?;
    m.add_class::<Camera>()?;
    m.add_class::<Image>()?;
    m.add_class::<Scene>()?;
    m.add_class::<SyntheticScene>()?;
    m.add_class::<TrainConfig>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(relative_extrinsics, m)?)?;
    m.add_function(wrap_pyfunction!(homography_warp, m)?)?;
    m.add_function(wrap_pyfunction!(make_plane_depths, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate_pose, m)?)?;
    m.add_function(wrap_pyfunction!(compositing_weights, m)?)?;
    m.add_function(wrap_pyfunction!(composite_color, m)?)?;
    m.add_function(wrap_pyfunction!(composite_depth, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(sparse_solution_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(cross_view_overlap, m)?)?;
    Ok(())
}
