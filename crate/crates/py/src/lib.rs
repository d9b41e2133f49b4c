//! Python bindings for the `flowconv` library.
//!
//! Tensors cross the boundary as flat lists of floats in the library's
//! row-major, channels-innermost layout; flow matrices as lists of
//! `(src, dst, weight)` triplets.

use std::path::PathBuf;

use flowconv::analysis::{self, Prepared, SplitConfig};
use flowconv::convops::{self, ConvFilter, DiffusionFilter, GraphSignal, GridTensor};
use flowconv::fcgru::{self, ModelParams, Variant};
use flowconv::flowgraph::SparseFlowMatrix;
use flowconv::ingest::{self, TripRecord, VolumeTensor};
use flowconv::train::{self, TrainConfig};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn err(e: flowconv::Error) -> PyErr {
    match e {
        flowconv::Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

type Triplet = (usize, usize, f64);

fn flow_matrix(n: usize, triplets: Vec<Triplet>) -> PyResult<SparseFlowMatrix> {
    SparseFlowMatrix::from_triplets(n, triplets).map_err(err)
}

fn triplets(f: &SparseFlowMatrix) -> Vec<Triplet> {
    f.entries().to_vec()
}

#[pyclass(name = "GridSpec", module = "flowconvgru", from_py_object)]
#[derive(Clone)]
struct PyGridSpec {
    inner: ingest::GridSpec,
}

#[pymethods]
impl PyGridSpec {
    #[new]
    #[pyo3(signature = (lat_min, lat_max, lon_min, lon_max, m, k, interval_seconds, t0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        lat_min: f64,
        lat_max: f64,
        lon_min: f64,
        lon_max: f64,
        m: usize,
        k: usize,
        interval_seconds: i64,
        t0: i64,
    ) -> PyResult<Self> {
        let inner = ingest::GridSpec {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
            m,
            k,
            interval_seconds,
            t0,
        };
        inner.validate().map_err(err)?;
        Ok(PyGridSpec { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: ingest::GridSpec = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(err)?;
        Ok(PyGridSpec { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("grid serializes")
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn regions(&self) -> usize {
        self.inner.regions()
    }

    fn assign_region(&self, lat: f64, lon: f64) -> Option<usize> {
        self.inner.assign_region(lat, lon)
    }

    fn interval_of(&self, ts: i64) -> Option<usize> {
        self.inner.interval_of(ts)
    }

    fn __repr__(&self) -> String {
        format!("GridSpec({})", self.to_json())
    }
}

/// Per-interval volume tensors and flow matrices.
#[pyclass(name = "Dataset", module = "flowconvgru", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: ingest::DatasetFile,
}

type TripTuple = (i64, i64, f64, f64, f64, f64);

#[pymethods]
impl PyDataset {
    /// Aggregates `(t_s, t_e, start_lat, start_lon, end_lat, end_lon)` tuples.
    #[staticmethod]
    fn from_trips(trips: Vec<TripTuple>, grid: &PyGridSpec) -> PyResult<Self> {
        let trips: Vec<TripRecord> = trips
            .into_iter()
            .map(|(t_s, t_e, start_lat, start_lon, end_lat, end_lon)| TripRecord {
                t_s,
                t_e,
                start_lat,
                start_lon,
                end_lat,
                end_lon,
            })
            .collect();
        let inner = ingest::ingest_trips(&trips, 0, &grid.inner).map_err(err)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn from_csv(path: PathBuf, grid: &PyGridSpec) -> PyResult<Self> {
        let f = std::fs::File::open(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let csv = ingest::read_trips_csv(std::io::BufReader::new(f)).map_err(err)?;
        let inner = ingest::ingest_trips(&csv.trips, csv.malformed, &grid.inner).map_err(err)?;
        Ok(PyDataset { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        let f = std::fs::File::open(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let inner = ingest::DatasetFile::read(std::io::BufReader::new(f)).map_err(err)?;
        Ok(PyDataset { inner })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        let f = std::fs::File::create(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        self.inner.write(std::io::BufWriter::new(f)).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, pyo3::types::PyBytes>> {
        let bytes = self.inner.to_bytes().map_err(err)?;
        Ok(pyo3::types::PyBytes::new(py, &bytes))
    }

    #[getter]
    fn grid(&self) -> PyGridSpec {
        PyGridSpec {
            inner: self.inner.grid().clone(),
        }
    }

    #[getter]
    fn intervals(&self) -> usize {
        self.inner.series.len()
    }

    #[getter]
    fn rejected(&self) -> usize {
        self.inner.meta.rejected.total()
    }

    fn __len__(&self) -> usize {
        self.inner.series.len()
    }

    /// Volume tensor of interval `t`, `m * k * 2` values (in, out).
    fn volume(&self, t: usize) -> PyResult<Vec<f64>> {
        self.check(t)?;
        Ok(self.inner.series.volumes[t].values.clone())
    }

    fn flows(&self, t: usize) -> PyResult<Vec<Triplet>> {
        self.check(t)?;
        Ok(triplets(&self.inner.series.flows[t]))
    }

    /// Per-interval `(t, hour, jaccard, emd)` between consecutive intervals.
    fn churn(&self) -> PyResult<Vec<(usize, usize, f64, Option<f64>)>> {
        let grid = self.inner.grid();
        let series = analysis::churn_series(&self.inner.series, grid).map_err(err)?;
        Ok(series
            .iter()
            .map(|c| (c.t, grid.hour_of(c.t), c.jaccard, (!c.emd_undefined).then_some(c.emd)))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(intervals={}, m={}, k={})",
            self.inner.series.len(),
            self.inner.meta.m,
            self.inner.meta.k
        )
    }
}

impl PyDataset {
    fn check(&self, t: usize) -> PyResult<()> {
        if t >= self.inner.series.len() {
            return Err(PyValueError::new_err(format!(
                "interval {t} out of range ({} intervals)",
                self.inner.series.len()
            )));
        }
        Ok(())
    }
}

/// Reference synthetic commute trips as tuples.
#[pyfunction]
#[pyo3(signature = (seed=7, days=None))]
fn synth_trips(seed: u64, days: Option<usize>) -> PyResult<(Vec<TripTuple>, PyGridSpec)> {
    let mut cfg = flowconv::synth::SynthConfig::reference(seed);
    if let Some(d) = days {
        cfg.days = d;
    }
    let out = flowconv::synth::generate(&cfg).map_err(err)?;
    let trips = out
        .trips
        .iter()
        .map(|t| (t.t_s, t.t_e, t.start_lat, t.start_lon, t.end_lat, t.end_lon))
        .collect();
    Ok((trips, PyGridSpec { inner: cfg.grid }))
}

#[pyclass(name = "ModelSpec", module = "flowconvgru", from_py_object)]
#[derive(Clone)]
struct PyModelSpec {
    inner: fcgru::ModelSpec,
}

#[pymethods]
impl PyModelSpec {
    #[new]
    #[pyo3(signature = (m, k, layers=3, hidden=64, diffusion_steps=2, history=6, kernel_size=3, variant="full"))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        m: usize,
        k: usize,
        layers: usize,
        hidden: usize,
        diffusion_steps: usize,
        history: usize,
        kernel_size: usize,
        variant: &str,
    ) -> PyResult<Self> {
        let variant: Variant = variant.parse().map_err(err)?;
        let inner = fcgru::ModelSpec {
            m,
            k,
            layers,
            hidden,
            diffusion_steps,
            history,
            kernel_size,
            variant,
        };
        inner.validate().map_err(err)?;
        Ok(PyModelSpec { inner })
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant.as_str()
    }

    #[getter]
    fn layers(&self) -> usize {
        self.inner.layers
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.inner.hidden
    }

    #[getter]
    fn history(&self) -> usize {
        self.inner.history
    }

    fn __repr__(&self) -> String {
        format!("ModelSpec({})", serde_json::to_string(&self.inner).expect("spec serializes"))
    }
}

/// A model specification with its parameters.
#[pyclass(name = "Model", module = "flowconvgru")]
struct PyModel {
    spec: fcgru::ModelSpec,
    params: ModelParams,
}

#[pymethods]
impl PyModel {
    /// Glorot-initialized parameters drawn from `seed`.
    #[new]
    #[pyo3(signature = (spec, seed=7))]
    fn new(spec: &PyModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PyModel {
            spec: spec.inner.clone(),
            params: ModelParams::init(&spec.inner, &mut rng),
        }
    }

    #[getter]
    fn spec(&self) -> PyModelSpec {
        PyModelSpec {
            inner: self.spec.clone(),
        }
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.params.count()
    }

    fn parameter_names(&self) -> Vec<String> {
        self.params.names()
    }

    /// Predicts the next volume tensor from `history` volumes and flow lists.
    fn forward(&self, volumes: Vec<Vec<f64>>, flows: Vec<Vec<Triplet>>) -> PyResult<Vec<f64>> {
        let (m, k) = (self.spec.m, self.spec.k);
        let volumes: Vec<VolumeTensor> = volumes
            .into_iter()
            .enumerate()
            .map(|(t, values)| VolumeTensor { m, k, t, values })
            .collect();
        let flows = flows
            .into_iter()
            .map(|f| flow_matrix(m * k, f))
            .collect::<PyResult<Vec<_>>>()?;
        fcgru::forward(&volumes, &flows, &self.spec, &self.params).map_err(err)
    }
}

#[pyclass(name = "Checkpoint", module = "flowconvgru")]
struct PyCheckpoint {
    inner: train::Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyCheckpoint {
            inner: train::Checkpoint::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, pyo3::types::PyBytes>> {
        let bytes = self.inner.to_bytes().map_err(err)?;
        Ok(pyo3::types::PyBytes::new(py, &bytes))
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn spec(&self) -> PyModelSpec {
        PyModelSpec {
            inner: self.inner.spec.clone(),
        }
    }

    fn model(&self) -> PyModel {
        PyModel {
            spec: self.inner.spec.clone(),
            params: self.inner.params.clone(),
        }
    }

    /// Test-split `(rmse, mae, instances)` on the original scale.
    #[pyo3(signature = (dataset, train_frac=0.7, val_frac=0.1))]
    fn evaluate(&self, py: Python<'_>, dataset: &PyDataset, train_frac: f64, val_frac: f64) -> PyResult<(f64, f64, usize)> {
        let split = SplitConfig {
            history: self.inner.spec.history,
            train_frac,
            val_frac,
        };
        let ckpt = &self.inner;
        let file = &dataset.inner;
        py.detach(|| {
            let prep = Prepared::with_scaler(file, &split, ckpt.scaler.clone())?;
            analysis::evaluate_model(&prep.test, &prep.raw, &prep.grid, &ckpt.spec, &ckpt.params, &prep.scaler)
        })
        .map(|r| (r.rmse, r.mae, r.instances))
        .map_err(err)
    }
}

/// Trains on the train split with validation-based selection. Returns the
/// checkpoint and the `(epoch, train_loss, val_loss)` log.
#[pyfunction]
#[pyo3(signature = (dataset, spec, epochs=100, batch_size=8, lr=2e-4, seed=7, train_frac=0.7, val_frac=0.1))]
#[allow(clippy::too_many_arguments)]
fn train_model(
    py: Python<'_>,
    dataset: &PyDataset,
    spec: &PyModelSpec,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
    train_frac: f64,
    val_frac: f64,
) -> PyResult<(PyCheckpoint, Vec<(usize, f64, Option<f64>)>)> {
    let split = SplitConfig {
        history: spec.inner.history,
        train_frac,
        val_frac,
    };
    let cfg = TrainConfig {
        epochs,
        batch_size,
        lr,
        seed,
        clip_norm: None,
    };
    let file = &dataset.inner;
    let spec = &spec.inner;
    let model = py
        .detach(|| {
            let prep = Prepared::new(file, &split)?;
            analysis::train_and_evaluate(&prep, spec, &cfg)
        })
        .map_err(err)?;
    let log = model.log.iter().map(|e| (e.epoch, e.train_loss, e.val_loss)).collect();
    Ok((PyCheckpoint { inner: model.checkpoint }, log))
}

/// Historical-average baseline on the test split: `(rmse, mae, instances)`.
#[pyfunction]
#[pyo3(signature = (dataset, history=6, train_frac=0.7, val_frac=0.1))]
fn evaluate_ha(dataset: &PyDataset, history: usize, train_frac: f64, val_frac: f64) -> PyResult<(f64, f64, usize)> {
    let split = SplitConfig {
        history,
        train_frac,
        val_frac,
    };
    let prep = Prepared::new(&dataset.inner, &split).map_err(err)?;
    let r = analysis::evaluate_ha(&prep.raw_view(&prep.test), &prep.grid).map_err(err)?;
    Ok((r.rmse, r.mae, r.instances))
}

/// `sum_k theta[k,0] Out^k s + theta[k,1] In^k s` for one signal column.
#[pyfunction]
fn diffusion_conv(signal: Vec<f64>, flows: Vec<Triplet>, theta: Vec<f64>) -> PyResult<Vec<f64>> {
    let f = flow_matrix(signal.len(), flows)?;
    convops::diffusion_conv(&signal, &flowconv::flowgraph::make_transitions(&f), &theta).map_err(err)
}

/// Multi-channel flow-aware graph convolution; `x` is `n * p` values.
#[pyfunction]
fn flow_aware_gconv(
    x: Vec<f64>,
    n: usize,
    flows: Vec<Triplet>,
    p: usize,
    q: usize,
    steps: usize,
    theta: Vec<f64>,
) -> PyResult<Vec<f64>> {
    let signal = GraphSignal::new(n, p, x).map_err(err)?;
    let filt = DiffusionFilter::new(p, q, steps, theta).map_err(err)?;
    let f = flow_matrix(n, flows)?;
    Ok(convops::flow_aware_gconv(&signal, &f, &filt).map_err(err)?.values)
}

/// Zero-padded same-size 2D convolution; `x` is `m * k * c_in` values and
/// `weights` is laid out `[kh][kw][c_in][c_out]`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn conv2d_same(
    x: Vec<f64>,
    m: usize,
    k: usize,
    c_in: usize,
    kernel: usize,
    c_out: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
) -> PyResult<Vec<f64>> {
    let grid = GridTensor::new(m, k, c_in, x).map_err(err)?;
    let filt = ConvFilter::new(kernel, kernel, c_in, c_out, weights, bias).map_err(err)?;
    Ok(convops::conv2d_same(&grid, &filt).map_err(err)?.values)
}

#[pyfunction]
fn jaccard_churn(n: usize, f_t: Vec<Triplet>, f_next: Vec<Triplet>) -> PyResult<f64> {
    analysis::jaccard_churn(&flow_matrix(n, f_t)?, &flow_matrix(n, f_next)?).map_err(err)
}

/// Mean in-flow EMD over regions; `None` when no region has mass at both times.
#[pyfunction]
fn emd_churn(grid: &PyGridSpec, f_t: Vec<Triplet>, f_next: Vec<Triplet>) -> PyResult<Option<f64>> {
    let n = grid.inner.regions();
    let (v, included) =
        analysis::emd_churn(&flow_matrix(n, f_t)?, &flow_matrix(n, f_next)?, &grid.inner).map_err(err)?;
    Ok((included > 0).then_some(v))
}

#[pymodule]
fn flowconvgru(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGridSpec>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(synth_trips, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_ha, m)?)?;
    m.add_function(wrap_pyfunction!(diffusion_conv, m)?)?;
    m.add_function(wrap_pyfunction!(flow_aware_gconv, m)?)?;
    m.add_function(wrap_pyfunction!(conv2d_same, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard_churn, m)?)?;
    m.add_function(wrap_pyfunction!(emd_churn, m)?)?;
    Ok(())
}
