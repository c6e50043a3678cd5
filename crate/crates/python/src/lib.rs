//! Python bindings: datasets, forests, descriptors, assignment, evaluation and
//! the cross-validation protocols.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use naop_core::descriptors::{self, DescriptorVariant};
use naop_core::eval::{self, LabeledPrediction, Method};
use naop_core::forest::{self, TrainConfig};
use naop_core::geometry::{self, FrameSize, NormBox, PixelBox};
use naop_core::predictor::{self, Model, ScoredPrediction};
use naop_core::synthgen::{self, ScenarioConfig};
use naop_core::trackstore;
use naop_core::trajectories::Encoding;
use naop_core::{assignment, tracker, Error};

create_exception!(naop, ModelMismatchError, PyException);
create_exception!(naop, InsufficientDataError, PyException);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        Error::ModelMismatch(_) | Error::FormatVersion { .. } | Error::CorruptModel(_) => {
            ModelMismatchError::new_err(e.to_string())
        }
        Error::InsufficientData(_) => InsufficientDataError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Serializes through JSON into plain Python objects.
fn to_object<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn variant(name: &str) -> PyResult<DescriptorVariant> {
    name.parse().map_err(to_py)
}

fn encoding(h: usize, levels: Option<u32>) -> Encoding {
    match levels {
        Some(levels) => Encoding::Pyramid { levels },
        None => Encoding::Window { h },
    }
}

fn norm_boxes(boxes: Vec<(f64, f64, f64, f64)>) -> Vec<NormBox> {
    boxes.into_iter().map(|(x1, y1, x2, y2)| NormBox { x1, y1, x2, y2 }).collect()
}

type PredictionTuple = (String, u64, String, (f64, f64, f64, f64), f64, String);

fn prediction_tuples(preds: Vec<ScoredPrediction>) -> Vec<PredictionTuple> {
    preds
        .into_iter()
        .map(|p| {
            let b = p.bbox;
            (p.video_id, p.frame_index, p.object_class, (b.x1, b.y1, b.x2, b.y2), p.confidence, p.source_track_id)
        })
        .collect()
}

/// A collection of object tracks.
#[pyclass(module = "naop", frozen)]
struct Dataset {
    inner: trackstore::Dataset,
}

#[pymethods]
impl Dataset {
    /// Reads a JSON Lines track file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
        let inner = trackstore::parse_tracks(std::io::BufReader::new(file)).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Parses JSON Lines text.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self { inner: trackstore::parse_tracks(text.as_bytes()).map_err(to_py)? })
    }

    /// Generates a synthetic dataset. `scale_only` removes the drift toward
    /// the frame center from approaching objects.
    #[staticmethod]
    #[pyo3(signature = (seed=0, n_subjects=5, videos_per_subject=4, tracks_per_video=20, active_fraction=0.3, h_signal=30, scale_only=false))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        py: Python<'_>,
        seed: u64,
        n_subjects: usize,
        videos_per_subject: usize,
        tracks_per_video: usize,
        active_fraction: f64,
        h_signal: usize,
        scale_only: bool,
    ) -> PyResult<Self> {
        let base = if scale_only { ScenarioConfig::scale_only() } else { ScenarioConfig::default() };
        let cfg = ScenarioConfig {
            seed,
            n_subjects,
            videos_per_subject,
            tracks_per_video,
            active_fraction,
            h_signal,
            ..base
        };
        let inner = py.detach(|| synthgen::gen_dataset(&cfg)).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        std::fs::write(path, self.to_jsonl()?).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))
    }

    fn to_jsonl(&self) -> PyResult<String> {
        let mut out = Vec::new();
        trackstore::serialize_tracks(&self.inner, &mut out).map_err(to_py)?;
        Ok(String::from_utf8(out).expect("track files are UTF-8"))
    }

    fn subjects(&self) -> Vec<String> {
        self.inner.subjects()
    }

    fn classes(&self) -> Vec<String> {
        self.inner.classes()
    }

    fn track_ids(&self) -> Vec<String> {
        self.inner.tracks.iter().map(|t| t.track_id.clone()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.tracks.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset({} tracks, {} subjects)", self.inner.tracks.len(), self.inner.subjects().len())
    }
}

/// A trained random forest over trajectory descriptors.
#[pyclass(module = "naop", frozen)]
struct Forest {
    inner: forest::Forest,
}

#[pymethods]
impl Forest {
    /// Trains on every active trajectory and one sampled trajectory per
    /// passive track of `dataset`, after class balancing.
    #[staticmethod]
    #[pyo3(signature = (dataset, h=30, variant="full", levels=None, n_trees=25, seed=0))]
    fn train(
        py: Python<'_>,
        dataset: &Dataset,
        h: usize,
        variant: &str,
        levels: Option<u32>,
        n_trees: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let enc = encoding(h, levels);
        let method = Method::Forest {
            variant: self::variant(variant)?,
            encoding: enc,
            config: TrainConfig { n_trees, ..TrainConfig::default() },
        };
        let model = py.detach(|| eval::fit(&method, &dataset.inner, enc, seed)).map_err(to_py)?;
        match model {
            Model::Forest(inner) => Ok(Self { inner }),
            _ => unreachable!("forest method yields a forest"),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
        Ok(Self { inner: forest::load_model(std::io::BufReader::new(file)).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self { inner: forest::model_from_bytes(data).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        std::fs::write(path, forest::model_to_bytes(&self.inner))
            .map_err(|e| PyOSError::new_err(format!("{path}: {e}")))
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &forest::model_to_bytes(&self.inner))
    }

    #[getter]
    fn h(&self) -> usize {
        self.inner.h()
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant.to_string()
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.inner.trees.len()
    }

    /// Probability that a trajectory of normalized `(x1, y1, x2, y2)` boxes
    /// belongs to a next-active object.
    fn predict_proba(&self, boxes: Vec<(f64, f64, f64, f64)>) -> PyResult<f64> {
        let fv = descriptors::describe_boxes(&norm_boxes(boxes), self.inner.variant).map_err(to_py)?;
        forest::predict_proba(&self.inner, &fv).map_err(to_py)
    }

    /// Scores every frame of every track. Returns tuples
    /// `(video_id, frame, class, (x1, y1, x2, y2), confidence, track_id)`.
    fn predict(&self, py: Python<'_>, dataset: &Dataset) -> Vec<PredictionTuple> {
        let preds = py.detach(|| predictor::run_offline(&dataset.inner.densified(), &self.inner));
        prediction_tuples(preds)
    }

    /// Detection-level precision-recall report against the annotations of
    /// `dataset`.
    #[pyo3(signature = (dataset, iou_min=0.5))]
    fn evaluate(&self, py: Python<'_>, dataset: &Dataset, iou_min: f64) -> PyResult<Py<PyAny>> {
        let report = py.detach(|| eval::detection_report(&self.inner, &dataset.inner, iou_min)).map_err(to_py)?;
        to_object(py, &report)
    }

    fn __repr__(&self) -> String {
        format!("Forest({} trees, {}, {})", self.inner.trees.len(), self.inner.variant, self.inner.encoding)
    }
}

/// Descriptor of a trajectory of normalized `(x1, y1, x2, y2)` boxes.
#[pyfunction]
#[pyo3(signature = (boxes, variant="full"))]
fn describe(boxes: Vec<(f64, f64, f64, f64)>, variant: &str) -> PyResult<Vec<f64>> {
    Ok(descriptors::describe_boxes(&norm_boxes(boxes), self::variant(variant)?).map_err(to_py)?.values)
}

/// Length of the descriptor for `h` boxes.
#[pyfunction]
#[pyo3(signature = (h, variant="full"))]
fn descriptor_dimension(h: usize, variant: &str) -> PyResult<usize> {
    Ok(self::variant(variant)?.dimension(h))
}

/// Pixel box to normalized, centered coordinates.
#[pyfunction]
fn normalize_box(bbox: (f64, f64, f64, f64), width: f64, height: f64) -> PyResult<(f64, f64, f64, f64)> {
    let (x1, y1, x2, y2) = bbox;
    let frame = FrameSize::new(width, height).map_err(to_py)?;
    let b = geometry::normalize_box(&PixelBox::new(x1, y1, x2, y2).map_err(to_py)?, frame).map_err(to_py)?;
    Ok((b.x1, b.y1, b.x2, b.y2))
}

#[pyfunction]
fn iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> PyResult<f64> {
    let a = PixelBox::new(a.0, a.1, a.2, a.3).map_err(to_py)?;
    let b = PixelBox::new(b.0, b.1, b.2, b.3).map_err(to_py)?;
    Ok(geometry::iou(&a, &b))
}

/// Minimum-cost one-to-one assignment. Returns the column of each row (or
/// `None`) and the total cost.
#[pyfunction]
fn solve_assignment(cost: Vec<Vec<f64>>) -> PyResult<(Vec<Option<usize>>, f64)> {
    let a = assignment::solve_assignment(&cost).map_err(to_py)?;
    Ok((a.row_to_col, a.cost))
}

/// Precision-recall curve and all-points interpolated AP of scored
/// predictions labeled true or false positive.
#[pyfunction]
fn average_precision(
    py: Python<'_>,
    confidences: Vec<f64>,
    true_positive: Vec<bool>,
    n_valid: usize,
) -> PyResult<Py<PyAny>> {
    if confidences.len() != true_positive.len() {
        return Err(PyValueError::new_err("confidences and true_positive differ in length"));
    }
    let labeled: Vec<LabeledPrediction> = confidences
        .into_iter()
        .zip(true_positive)
        .map(|(confidence, tp)| LabeledPrediction { confidence, tp })
        .collect();
    to_object(py, &eval::pr_and_ap(&labeled, n_valid).map_err(to_py)?)
}

fn method(name: &str, h: usize, variant: &str, levels: Option<u32>, n_trees: usize) -> PyResult<Method> {
    Ok(match name {
        "forest" => Method::Forest {
            variant: self::variant(variant)?,
            encoding: encoding(h, levels),
            config: TrainConfig { n_trees, ..TrainConfig::default() },
        },
        "motion" => Method::Motion { h },
        "center-bias" => Method::CenterBias,
        "random" => Method::Random,
        other => return Err(PyValueError::new_err(format!("unknown method `{other}`"))),
    })
}

/// Leave-one-person-out cross-validation. `granularity` is `trajectory` or
/// `detection`.
#[pyfunction]
#[pyo3(signature = (dataset, method="forest", h=30, variant="full", levels=None, n_trees=25, granularity="trajectory", iou_min=0.5, seed=0))]
#[allow(clippy::too_many_arguments)]
fn lopo(
    py: Python<'_>,
    dataset: &Dataset,
    method: &str,
    h: usize,
    variant: &str,
    levels: Option<u32>,
    n_trees: usize,
    granularity: &str,
    iou_min: f64,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let m = self::method(method, h, variant, levels, n_trees)?;
    let enc = encoding(h, levels);
    let report = match granularity {
        "trajectory" => py.detach(|| eval::lopo_trajectory(&dataset.inner, &m, enc, seed)),
        "detection" => py.detach(|| eval::lopo_detection(&dataset.inner, &m, enc, iou_min, seed)),
        other => return Err(PyValueError::new_err(format!("unknown granularity `{other}`"))),
    }
    .map_err(to_py)?;
    to_object(py, &report)
}

/// Leave-one-object-out rows for one class, or for every class when
/// `object_class` is omitted.
#[pyfunction]
#[pyo3(signature = (dataset, object_class=None, h=30, variant="full", n_trees=25, seed=0))]
fn looo(
    py: Python<'_>,
    dataset: &Dataset,
    object_class: Option<&str>,
    h: usize,
    variant: &str,
    n_trees: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let m = self::method("forest", h, variant, None, n_trees)?;
    let enc = Encoding::Window { h };
    let rows = py
        .detach(|| match object_class {
            Some(c) => eval::looo(&dataset.inner, c, &m, enc, seed).map(|r| vec![r]),
            None => eval::looo_table(&dataset.inner, &m, enc, seed),
        })
        .map_err(to_py)?;
    to_object(py, &rows)
}

/// Cross-validated AP when positive trajectories end `offsets` frames before
/// activation.
#[pyfunction]
#[pyo3(signature = (dataset, offsets, h=30, variant="full", n_trees=25, seed=0))]
fn time_to_activation(
    py: Python<'_>,
    dataset: &Dataset,
    offsets: Vec<usize>,
    h: usize,
    variant: &str,
    n_trees: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let m = self::method("forest", h, variant, None, n_trees)?;
    let rows = py
        .detach(|| eval::time_to_activation(&dataset.inner, &m, Encoding::Window { h }, &offsets, seed))
        .map_err(to_py)?;
    to_object(py, &rows)
}

/// Associates detections read from a CSV file into tracks.
#[pyfunction]
#[pyo3(signature = (path, width=1280.0, height=720.0))]
fn track_file(py: Python<'_>, path: &str, width: f64, height: f64) -> PyResult<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| PyOSError::new_err(format!("{path}: {e}")))?;
    let dets = tracker::read_detections(file).map_err(to_py)?;
    let frame = FrameSize::new(width, height).map_err(to_py)?;
    let inner =
        py.detach(|| tracker::track_detections(&dets, &tracker::AssocConfig::default(), frame)).map_err(to_py)?;
    Ok(Dataset { inner })
}

#[pymodule]
fn naop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("ModelMismatchError", m.py().get_type::<ModelMismatchError>())?;
    m.add("InsufficientDataError", m.py().get_type::<InsufficientDataError>())?;
    m.add_class::<Dataset>()?;
    m.add_class::<Forest>()?;
    m.add_function(wrap_pyfunction!(describe, m)?)?;
    m.add_function(wrap_pyfunction!(descriptor_dimension, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_box, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(solve_assignment, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(lopo, m)?)?;
    m.add_function(wrap_pyfunction!(looo, m)?)?;
    m.add_function(wrap_pyfunction!(time_to_activation, m)?)?;
    m.add_function(wrap_pyfunction!(track_file, m)?)?;
    Ok(())
}
