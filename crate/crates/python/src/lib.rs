//! Python bindings for `tricond`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use tricond::dataset::{self, BuildConfig, CaptionMode};
use tricond::geometry;
use tricond::rng::{derive_seed, stream};
use tricond::zeroconv::{self, verify, ControlNetBlock, Tensor, ToyTask, TrainConfig};
use tricond::{ApproxConfig, ApproxState, Point, Triangle};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

/// 8-bit RGB image.
#[pyclass(name = "Raster", module = "tricond_py")]
struct PyRaster(tricond::Raster);

#[pymethods]
impl PyRaster {
    /// From `width * height * 3` bytes, row-major RGB.
    #[new]
    fn new(width: u32, height: u32, data: Vec<u8>) -> PyResult<Self> {
        tricond::Raster::from_rgb(width, height, data).map(PyRaster).map_err(value_err)
    }

    #[staticmethod]
    fn filled(width: u32, height: u32, rgb: [u8; 3]) -> PyResult<Self> {
        tricond::Raster::filled(width, height, rgb).map(PyRaster).map_err(value_err)
    }

    /// Decode a PNG, JPEG or PPM file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        tricond::Raster::load(&path).map(PyRaster).map_err(io_err)
    }

    /// Encode by extension: `.ppm`/`.pnm` as binary PPM, anything else as PNG.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(io_err)
    }

    #[getter]
    fn width(&self) -> u32 {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> u32 {
        self.0.height()
    }

    fn pixel(&self, x: u32, y: u32) -> PyResult<(u8, u8, u8)> {
        if x >= self.0.width() || y >= self.0.height() {
            return Err(value_err(format!("pixel ({x}, {y}) outside the image")));
        }
        let [r, g, b] = self.0.pixel(x, y);
        Ok((r, g, b))
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.0.as_bytes())
    }

    /// Shorter edge to `edge`, bilinear, then center crop to a square.
    fn resize_square(&self, edge: u32) -> PyResult<Self> {
        self.0.resize_square(edge).map(PyRaster).map_err(value_err)
    }

    fn __eq__(&self, other: &PyRaster) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("Raster({}x{})", self.0.width(), self.0.height())
    }
}

/// Covered pixel runs `(y, x_start, x_end)` of a triangle, inclusive ends.
#[pyfunction]
fn rasterize_triangle(
    vertices: [(i32, i32); 3],
    width: u32,
    height: u32,
) -> Vec<(u32, u32, u32)> {
    let [a, b, c] = vertices.map(|(x, y)| Point::new(x, y));
    geometry::rasterize_triangle(&Triangle::new(a, b, c), width, height)
        .into_iter()
        .map(|l| (l.y, l.x_start, l.x_end))
        .collect()
}

/// Result of [`approximate`].
#[pyclass(name = "Approximation", module = "tricond_py", frozen)]
struct PyApproximation(ApproxState);

#[pymethods]
impl PyApproximation {
    #[getter]
    fn canvas(&self) -> PyRaster {
        PyRaster(self.0.canvas.clone())
    }

    /// Final RMSE against the target.
    #[getter]
    fn score(&self) -> f64 {
        self.0.score
    }

    #[getter]
    fn trace(&self) -> Vec<f64> {
        self.0.trace.clone()
    }

    /// `((x0, y0), (x1, y1), (x2, y2)), (r, g, b, a)` per triangle.
    #[getter]
    #[allow(clippy::type_complexity)]
    fn shapes(&self) -> Vec<([(i32, i32); 3], (u8, u8, u8, u8))> {
        self.0
            .shapes
            .iter()
            .map(|s| {
                let v = s.triangle.vertices().map(|p| (p.x, p.y));
                (v, (s.color.r, s.color.g, s.color.b, s.color.a))
            })
            .collect()
    }

    fn svg(&self) -> String {
        self.0.to_svg()
    }

    fn trace_csv(&self) -> String {
        self.0.trace_csv()
    }
}

/// Approximate `target` with alpha-blended triangles.
#[pyfunction]
#[pyo3(signature = (target, shapes=50, alpha=128, candidates=200, steps=100, seed=0))]
fn approximate(
    py: Python<'_>,
    target: &PyRaster,
    shapes: usize,
    alpha: u8,
    candidates: usize,
    steps: usize,
    seed: u64,
) -> PyResult<PyApproximation> {
    let config = ApproxConfig {
        shape_count: shapes,
        alpha,
        candidates,
        climb_steps: steps,
        seed,
        ..Default::default()
    };
    let target = target.0.clone();
    py.detach(|| tricond::approximate(&target, &config))
        .map(PyApproximation)
        .map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (input_dir, output_dir, resize=512, shapes=50, seed=0, captions="sidecar", jobs=1, traces=false))]
#[allow(clippy::too_many_arguments)]
fn build_dataset<'py>(
    py: Python<'py>,
    input_dir: PathBuf,
    output_dir: PathBuf,
    resize: u32,
    shapes: usize,
    seed: u64,
    captions: &str,
    jobs: usize,
    traces: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let mut config = BuildConfig::new(input_dir, output_dir);
    config.resize = resize;
    config.approx.shape_count = shapes;
    config.seed = seed;
    config.parallelism = jobs;
    config.emit_traces = traces;
    config.caption_mode = match captions {
        "sidecar" => CaptionMode::Sidecar,
        "stub" => CaptionMode::Stub,
        other => return Err(value_err(format!("captions must be 'sidecar' or 'stub', got {other:?}"))),
    };
    let report = py.detach(|| dataset::build(&config)).map_err(io_err)?;
    let out = PyDict::new(py);
    out.set_item("processed", report.processed)?;
    let skipped: Vec<(String, String)> = report
        .skipped
        .iter()
        .map(|s| (s.file.display().to_string(), s.reason.clone()))
        .collect();
    out.set_item("skipped", skipped)?;
    out.set_item("scores", report.per_image_scores)?;
    out.set_item("runtime", report.total_runtime)?;
    Ok(out)
}

#[pyfunction]
fn validate_dataset<'py>(py: Python<'py>, root: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let report = dataset::validate_manifest(&root).map_err(io_err)?;
    let out = PyDict::new(py);
    out.set_item("clean", report.is_clean())?;
    out.set_item("entries", report.entries.len())?;
    let failures: Vec<(usize, Vec<String>)> =
        report.failures().map(|f| (f.line, f.problems.clone())).collect();
    out.set_item("failures", failures)?;
    out.set_item("orphans", report.orphans)?;
    Ok(out)
}

#[pyfunction]
fn dataset_stats<'py>(py: Python<'py>, root: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let stats = dataset::dataset_stats(&root).map_err(io_err)?;
    let out = PyDict::new(py);
    out.set_item("count", stats.count)?;
    let dims: Vec<((u32, u32), usize)> = stats.dimensions.into_iter().collect();
    out.set_item("dimensions", dims)?;
    out.set_item("prompt_len_mean", stats.prompt_len_mean)?;
    out.set_item("prompt_len_min", stats.prompt_len_min)?;
    out.set_item("prompt_len_max", stats.prompt_len_max)?;
    Ok(out)
}

/// A fresh control block on the toy task for `seed`.
#[pyclass(name = "ToyControlNet", module = "tricond_py")]
struct PyToyControlNet {
    task: ToyTask,
    block: ControlNetBlock,
}

fn tensor(data: Vec<f64>, channels: usize) -> PyResult<Tensor> {
    let (h, w) = (zeroconv::TOY_SIZE, zeroconv::TOY_SIZE);
    Tensor::new(vec![channels, h, w], data).map_err(value_err)
}

#[pymethods]
impl PyToyControlNet {
    #[new]
    #[pyo3(signature = (seed=7))]
    fn new(seed: u64) -> Self {
        let task = zeroconv::make_toy_task(seed);
        let block = zeroconv::init_controlnet(task.locked.clone(), zeroconv::TOY_COND_CHANNELS);
        PyToyControlNet { task, block }
    }

    /// Loss of the locked block alone on the evaluation set.
    fn baseline_loss(&self) -> f64 {
        self.task.baseline_loss()
    }

    /// `(loss, condition_fidelity)` on the evaluation set.
    fn evaluate(&self) -> PyResult<(f64, f64)> {
        zeroconv::evaluate(&self.block, &self.task).map_err(value_err)
    }

    /// Output for flat `4*8*8` input `x` and `2*8*8` condition `c`.
    fn forward(&self, x: Vec<f64>, c: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = tensor(x, self.block.channels())?;
        let c = tensor(c, self.block.cond_channels())?;
        Ok(self.block.forward(&x, &c).map_err(value_err)?.into_data())
    }

    /// Output of the locked block alone.
    fn locked_forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = tensor(x, self.block.channels())?;
        Ok(self.block.locked.forward(&x).map_err(value_err)?.into_data())
    }

    /// Train in place; returns `(step, loss, condition_fidelity)` rows and
    /// the final `(loss, fidelity)`.
    #[pyo3(signature = (steps=500, lr=0.05, seed=7, batch_size=2, log_every=1))]
    #[allow(clippy::type_complexity)]
    fn train(
        &mut self,
        py: Python<'_>,
        steps: usize,
        lr: f64,
        seed: u64,
        batch_size: usize,
        log_every: usize,
    ) -> PyResult<(Vec<(usize, f64, f64)>, (f64, f64))> {
        let config = TrainConfig { steps, batch_size, learning_rate: lr, seed, log_every };
        let (task, block) = (&self.task, &mut self.block);
        let log = py.detach(|| zeroconv::train_toy(block, task, &config)).map_err(value_err)?;
        let rows = log.rows.iter().map(|r| (r.step, r.loss, r.condition_fidelity)).collect();
        Ok((rows, (log.final_loss, log.final_fidelity)))
    }

    /// Output for a random input (from `seed`) conditioned on a control image.
    #[pyo3(signature = (control, seed=0))]
    fn infer(&self, control: &PyRaster, seed: u64) -> PyResult<Vec<f64>> {
        let shape = [self.block.channels(), zeroconv::TOY_SIZE, zeroconv::TOY_SIZE];
        let x = Tensor::randn(&shape, 1.0, &mut stream(derive_seed(seed, 0)));
        Ok(zeroconv::infer(&self.block, &x, &control.0).map_err(value_err)?.into_data())
    }

    /// Hash of the locked parameter bits.
    fn locked_fingerprint(&self) -> u64 {
        self.block.locked_fingerprint()
    }

    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        zeroconv::save_checkpoint(&self.block, &path).map_err(io_err)
    }

    /// Replace the block with one read from `path`; the task is kept.
    fn load_checkpoint(&mut self, path: PathBuf) -> PyResult<()> {
        self.block = zeroconv::load_checkpoint(&path).map_err(io_err)?;
        Ok(())
    }
}

/// `(name, passed, detail)` for every self-check.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn verify_zeroconv(py: Python<'_>, seed: u64) -> PyResult<Vec<(String, bool, String)>> {
    let results = py.detach(|| verify::run_all(seed)).map_err(value_err)?;
    Ok(results.into_iter().map(|r| (r.name.to_string(), r.passed, r.detail)).collect())
}

#[pymodule]
fn tricond_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRaster>()?;
    m.add_class::<PyApproximation>()?;
    m.add_class::<PyToyControlNet>()?;
    m.add_function(wrap_pyfunction!(rasterize_triangle, m)?)?;
    m.add_function(wrap_pyfunction!(approximate, m)?)?;
    m.add_function(wrap_pyfunction!(build_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(validate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(dataset_stats, m)?)?;
    m.add_function(wrap_pyfunction!(verify_zeroconv, m)?)?;
    Ok(())
}
