//! Python bindings: architectures, cost ledgers, verification suites,
//! toy training and weight bundles.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use micronet::accounting::{check_budget, count_model};
use micronet::arch::{ArchSpec, Summary, Task, Variant, BUILTIN_NAMES};
use micronet::bundle::{load_network, save_network};
use micronet::data::synthetic_blobs;
use micronet::shiftmax::{shift_max_cost, ShiftMaxConfig};
use micronet::train::{train_toy, TrainConfig};
use micronet::verify::{self, Suite};
use micronet::{Shape, Tensor};

fn err(e: micronet::Error) -> PyErr {
    let msg = format!("[{}] {e}", e.kind());
    match e {
        micronet::Error::Io(_) => PyIOError::new_err(msg),
        micronet::Error::NonFinite { .. } | micronet::Error::Unsupported(_) => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

/// Serializable value to native Python objects via the `json` module.
fn to_py<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

fn parse_variant(v: &str) -> PyResult<Variant> {
    match v {
        "micro" => Ok(Variant::Micro),
        "full-rank" | "full_rank" => Ok(Variant::FullRank),
        other => Err(PyValueError::new_err(format!("unknown variant `{other}` (micro, full-rank)"))),
    }
}

fn resolve_spec(arch: &str, input: Option<(usize, usize)>) -> PyResult<ArchSpec> {
    let spec = if arch.trim_start().contains('[') { ArchSpec::from_toml(arch) } else { ArchSpec::builtin(arch) }.map_err(err)?;
    Ok(match input {
        Some((h, w)) => spec.with_input(h, w),
        None => spec,
    })
}

/// A MicroNet (Micro-Factorized or full-rank) with `f32` weights.
#[pyclass(name = "Network", module = "micronet")]
struct PyNetwork {
    inner: micronet::arch::Network<f32>,
}

#[pymethods]
impl PyNetwork {
    /// `arch` is a built-in name or a TOML architecture document.
    #[new]
    #[pyo3(signature = (arch, seed = 0, variant = "micro", input = None))]
    fn new(arch: &str, seed: u64, variant: &str, input: Option<(usize, usize)>) -> PyResult<Self> {
        let spec = resolve_spec(arch, input)?;
        let inner = micronet::arch::Network::new(&spec, parse_variant(variant)?, seed).map_err(err)?;
        Ok(PyNetwork { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyNetwork { inner: load_network(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_network(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.spec().name.clone()
    }

    #[getter]
    fn task(&self) -> &'static str {
        match self.inner.task() {
            Task::Classification => "classification",
            Task::Keypoints => "keypoints",
        }
    }

    /// `(C, H, W)` expected by `infer`.
    #[getter]
    fn input_shape(&self) -> (usize, usize, usize) {
        let s = self.inner.input_shape(1);
        (s.c, s.h, s.w)
    }

    #[getter]
    fn param_count(&self) -> u64 {
        self.inner.params().trainable_count()
    }

    /// Architecture document in TOML.
    fn config(&self) -> String {
        self.inner.spec().to_toml()
    }

    /// Inference on a flat `N·C·H·W` buffer; returns `(values, (N, C, H, W))`
    /// holding logits or heatmaps. `probabilities=True` applies softmax to
    /// classifier outputs.
    #[pyo3(signature = (data, shape, probabilities = false))]
    fn infer(
        &self,
        py: Python<'_>,
        data: Vec<f32>,
        shape: (usize, usize, usize, usize),
        probabilities: bool,
    ) -> PyResult<(Vec<f32>, (usize, usize, usize, usize))> {
        let x = Tensor::from_vec(Shape::new(shape.0, shape.1, shape.2, shape.3), data).map_err(err)?;
        let y = py
            .detach(|| if probabilities { self.inner.predict(&x) } else { self.inner.infer(&x) })
            .map_err(err)?;
        let s = y.shape();
        Ok((y.into_vec(), (s.n, s.c, s.h, s.w)))
    }

    /// Per-layer cost ledger as a dict (see `flops`).
    #[pyo3(signature = (input = None))]
    fn cost_report<'py>(&self, py: Python<'py>, input: Option<(usize, usize)>) -> PyResult<Bound<'py, PyAny>> {
        let r = count_model(&self.inner, input).map_err(err)?;
        to_py(py, &r.to_json())
    }

    fn __repr__(&self) -> String {
        format!("Network(name={:?}, variant={:?}, params={})", self.inner.spec().name, self.inner.variant(), self.param_count())
    }
}

/// Names of the shipped architecture configs.
#[pyfunction]
fn builtin_names() -> Vec<&'static str> {
    BUILTIN_NAMES.to_vec()
}

/// Per-stage table (`input, operator, k, c, c_r, groups, stride, output`).
#[pyfunction]
fn summary<'py>(py: Python<'py>, arch: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &Summary::new(&resolve_spec(arch, None)?).map_err(err)?)
}

/// Cost ledger: per-layer MAdds / elementwise / params plus totals. With
/// `check=True` adds the ±20% comparison against the published budget.
#[pyfunction]
#[pyo3(signature = (arch, input = None, check = false, variant = "micro"))]
fn flops<'py>(py: Python<'py>, arch: &str, input: Option<(usize, usize)>, check: bool, variant: &str) -> PyResult<Bound<'py, PyAny>> {
    let spec = resolve_spec(arch, input)?;
    let net = micronet::arch::Network::<f32>::new(&spec, parse_variant(variant)?, 0).map_err(err)?;
    let report = count_model(&net, None).map_err(err)?;
    let mut v = report.to_json();
    if check {
        let b = check_budget(&report).map_err(err)?;
        v["check"] = serde_json::json!({ "passed": b.passed(), "result": b });
    }
    to_py(py, &v)
}

/// Runs a property suite (`rank`, `oracle`, `grad`, `shiftmax`, `all`).
#[pyfunction]
#[pyo3(signature = (suite, seed = 0))]
fn verify_suite<'py>(py: Python<'py>, suite: &str, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let suite: Suite = suite.parse().map_err(err)?;
    let reports = py.detach(|| verify::run(suite, seed)).map_err(err)?;
    let passed = reports.iter().all(|r| r.passed());
    to_py(py, &serde_json::json!({ "passed": passed, "suites": reports }))
}

/// Shift-Max MAdds at `h×w`: `HWC + C²/r + C²JK/r + HWCJK`.
#[pyfunction]
#[pyo3(signature = (channels, groups, fusions, branches, reduction, h, w))]
fn shift_max_madds(channels: usize, groups: usize, fusions: usize, branches: usize, reduction: usize, h: usize, w: usize) -> PyResult<u64> {
    let cfg = ShiftMaxConfig::new(channels, groups, fusions, branches).map_err(err)?.with_reduction(reduction);
    Ok(shift_max_cost(&cfg, h, w))
}

/// Trains a classifier on the built-in synthetic blob set. Keyword
/// arguments override `TrainConfig` fields. Returns `(network, log)`.
#[pyfunction]
#[pyo3(signature = (arch = "M0-narrow", classes = 10, per_class = 40, seed = 0, **overrides))]
fn train_synthetic<'py>(
    py: Python<'py>,
    arch: &str,
    classes: usize,
    per_class: usize,
    seed: u64,
    overrides: Option<&Bound<'py, PyDict>>,
) -> PyResult<(PyNetwork, Bound<'py, PyAny>)> {
    let mut spec = resolve_spec(arch, None)?;
    let mut cfg = serde_json::to_value(TrainConfig { seed, ..TrainConfig::default() }).expect("config serializes");
    if let Some(o) = overrides {
        let s: String = py.import("json")?.call_method1("dumps", (o,))?.extract()?;
        let o: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&s).map_err(|e| PyValueError::new_err(e.to_string()))?;
        for (k, v) in o {
            cfg[k] = v;
        }
    }
    let cfg: TrainConfig = serde_json::from_value(cfg).map_err(|e| PyValueError::new_err(format!("training config: {e}")))?;
    let (h, w) = spec.validate().map_err(err)?.input;
    let data = synthetic_blobs(classes, per_class, h, w, seed).map_err(err)?;
    if let Some(c) = spec.classifier.as_mut() {
        c.classes = classes;
    }
    let out = py.detach(|| train_toy(&spec, &data, &cfg)).map_err(err)?;
    let log = to_py(py, &out.log)?;
    Ok((PyNetwork { inner: out.student }, log))
}

#[pymodule]
#[pyo3(name = "micronet")]
fn micronet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(builtin_names, m)?)?;
    m.add_function(wrap_pyfunction!(summary, m)?)?;
    m.add_function(wrap_pyfunction!(flops, m)?)?;
    m.add_function(wrap_pyfunction!(verify_suite, m)?)?;
    m.add_function(wrap_pyfunction!(shift_max_madds, m)?)?;
    m.add_function(wrap_pyfunction!(train_synthetic, m)?)?;
    Ok(())
}
