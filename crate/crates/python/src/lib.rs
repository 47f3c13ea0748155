use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ucnet::channelrep::{channel_representation, split_rgb, ColorPlanes, Domain};
use ucnet::covers::{textured_cover, CoverStyle};
use ucnet::filterbank::{full_bank, PadMode, ResidualConfig};
use ucnet::model::{load_checkpoint, reps_to_tensor, save_checkpoint, Model, UcnetConfig};
use ucnet::stegosim::{self, EmbedSpec};
use ucnet::train::{self, read_manifest, TrainConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn domain(s: &str) -> PyResult<Domain> {
    s.parse().map_err(value_err)
}

fn pad_mode(s: &str) -> PyResult<PadMode> {
    match s {
        "zero" => Ok(PadMode::Zero),
        "reflect" => Ok(PadMode::Reflect),
        other => Err(PyValueError::new_err(format!("unknown pad mode {other:?}"))),
    }
}

/// Three float planes in RGB (spatial) or YCbCr (jpeg) order.
#[pyclass(name = "ColorImage", module = "pyucnet")]
#[derive(Clone)]
struct PyColorImage {
    inner: ColorPlanes,
}

#[pymethods]
impl PyColorImage {
    /// Reads a PPM (spatial) or baseline JPEG (jpeg) file.
    #[staticmethod]
    #[pyo3(signature = (path, domain="spatial"))]
    fn load(path: PathBuf, domain: &str) -> PyResult<Self> {
        let inner = train::load_image(&path, self::domain(domain)?).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Synthetic textured RGB cover.
    #[staticmethod]
    #[pyo3(signature = (width, height, seed=0))]
    fn textured(width: usize, height: usize, seed: u64) -> PyResult<Self> {
        let img = textured_cover(width, height, seed, &CoverStyle::default());
        Ok(Self {
            inner: split_rgb(&img).map_err(value_err)?,
        })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn domain(&self) -> &'static str {
        self.inner.domain().name()
    }

    /// Row-major samples of channel `c`.
    fn plane(&self, c: usize) -> PyResult<Vec<f64>> {
        if c >= 3 {
            return Err(PyValueError::new_err("channel index must be 0, 1 or 2"));
        }
        Ok(self.inner.plane(c).data().to_vec())
    }

    fn save_ppm(&self, path: PathBuf) -> PyResult<()> {
        ucnet::ppm::write_ppm(&self.inner.to_image8(), &path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// LSB matching at change rate `beta` (spatial images only).
    fn lsbm(&self, beta: f64, seed: u64) -> PyResult<Self> {
        let spec = EmbedSpec::from_beta(beta, seed).map_err(value_err)?;
        Ok(Self {
            inner: stegosim::lsbm_embed(&self.inner, &spec).map_err(value_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "ColorImage({}x{}, domain={})",
            self.width(),
            self.height(),
            self.domain()
        )
    }
}

/// Residual stack of an image: `(planes, height, width, values)` with
/// `values` laid out plane-major.
#[pyfunction]
#[pyo3(signature = (image, truncation=3.0, pad="zero"))]
fn residuals(
    image: &PyColorImage,
    truncation: f64,
    pad: &str,
) -> PyResult<(usize, usize, usize, Vec<f32>)> {
    let cfg = ResidualConfig::new(truncation, pad_mode(pad)?).map_err(value_err)?;
    let rep = channel_representation(&image.inner, &full_bank(), &cfg).map_err(value_err)?;
    Ok((rep.planes(), rep.height, rep.width, rep.maps))
}

/// The 62 normalized 5x5 kernels, SRM first.
#[pyfunction]
fn kernels() -> Vec<Vec<Vec<f64>>> {
    full_bank()
        .kernels()
        .iter()
        .map(|k| k.normalized().iter().map(|row| row.to_vec()).collect())
        .collect()
}

#[pyfunction]
fn ternary_entropy(beta: f64) -> f64 {
    stegosim::ternary_entropy(beta)
}

#[pyfunction]
fn inverse_ternary_entropy(alpha: f64) -> PyResult<f64> {
    stegosim::inverse_ternary_entropy(alpha).map_err(value_err)
}

/// Minimum over thresholds of the mean false-alarm and missed-detection
/// rates; `labels` are True for stego.
#[pyfunction]
fn p_e(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    train::p_e(&scores, &labels).map_err(value_err)
}

#[pyclass(name = "Model", module = "pyucnet")]
struct PyModel {
    inner: Model<f32>,
}

fn arch(name: &str, domain: Domain) -> PyResult<UcnetConfig> {
    match name {
        "desk" => Ok(UcnetConfig::desk(domain)),
        "tiny" => Ok(UcnetConfig::tiny(domain)),
        other => Err(PyValueError::new_err(format!("unknown architecture {other:?}"))),
    }
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (arch="desk", domain="spatial", seed=0))]
    fn new(arch: &str, domain: &str, seed: u64) -> PyResult<Self> {
        let cfg = self::arch(arch, self::domain(domain)?)?;
        Ok(Self {
            inner: Model::build(&cfg, seed).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_checkpoint(&path).map_err(value_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, &path).map_err(value_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (k, v) in self.inner.config().to_pairs() {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    /// Stego probability for each image.
    fn scores(&self, images: Vec<PyRef<'_, PyColorImage>>) -> PyResult<Vec<f64>> {
        let reps = images
            .iter()
            .map(|img| self.inner.preprocess(&img.inner))
            .collect::<Result<Vec<_>, _>>()
            .map_err(value_err)?;
        let refs: Vec<_> = reps.iter().collect();
        let x = reps_to_tensor::<f32>(&refs).map_err(value_err)?;
        let s = self.inner.stego_scores(&x).map_err(value_err)?;
        Ok(s.into_iter().map(f64::from).collect())
    }
}

/// Trains on a manifest, writes the selected checkpoint to `model_out` and
/// returns the per-epoch history as a list of dicts.
#[pyfunction]
#[pyo3(signature = (manifest, model_out, epochs=12, batch_pairs=8, lr=0.01, seed=0, arch="desk", workers=1))]
#[allow(clippy::too_many_arguments)]
fn train_manifest<'py>(
    py: Python<'py>,
    manifest: PathBuf,
    model_out: PathBuf,
    epochs: usize,
    batch_pairs: usize,
    lr: f64,
    seed: u64,
    arch: &str,
    workers: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let records = read_manifest(&manifest).map_err(value_err)?;
    let domain = records[0].domain;
    let model_cfg = self::arch(arch, domain)?;
    let cfg = TrainConfig {
        epochs,
        batch_pairs,
        lr,
        seed,
        workers,
        ..TrainConfig::default()
    };
    let outcome = py
        .allow_threads(|| train::train(&manifest, &cfg, &model_cfg, |_| {}))
        .map_err(value_err)?;
    save_checkpoint(&outcome.model, &model_out).map_err(value_err)?;
    outcome
        .history
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("lr", r.lr)?;
            d.set_item("train_loss", r.train_loss)?;
            d.set_item("val_accuracy", r.val_accuracy)?;
            d.set_item("val_p_e", r.val_p_e)?;
            d.set_item("best", r.epoch == outcome.best_epoch)?;
            Ok(d)
        })
        .collect()
}

/// Scores every pair in a manifest; returns accuracy, P_E and counts.
#[pyfunction]
#[pyo3(signature = (manifest, model, workers=1))]
fn evaluate<'py>(
    py: Python<'py>,
    manifest: PathBuf,
    model: &PyModel,
    workers: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let records = read_manifest(&manifest).map_err(value_err)?;
    let m = train::evaluate(&model.inner, &records, workers).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("accuracy", m.accuracy)?;
    d.set_item("p_e", m.p_e)?;
    d.set_item("tp", m.tp)?;
    d.set_item("fp", m.fp)?;
    d.set_item("tn", m.tn)?;
    d.set_item("fn", m.fn_)?;
    Ok(d)
}

#[pymodule]
fn pyucnet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyColorImage>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(residuals, m)?)?;
    m.add_function(wrap_pyfunction!(kernels, m)?)?;
    m.add_function(wrap_pyfunction!(ternary_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_ternary_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(p_e, m)?)?;
    m.add_function(wrap_pyfunction!(train_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
