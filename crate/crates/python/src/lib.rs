//! Python bindings: synthetic streams, training, retraining, scoring and
//! evaluation. Series are passed as lists of rows, one float per channel.

use pyo3::create_exception;
use pyo3::exceptions::PyRuntimeError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lara::dataio::{
    expand_window_scores, load_state, make_windows, save_state, synth_shift_stream, StateFile, StoredModel, ZScore,
};
use lara::detect::{kde_kl as core_kde_kl, transfer_distance as core_transfer_distance};
use lara::retrain::{score_windows, GdConfig};
use lara::vae::train_vae;
use lara::{
    fit_affine_closed_form, lara_retrain, EvalReport, LaraConfig, LaraState, Mat64, MxInput, PairSet, RetrainConfig,
    Rng, SeriesFrame, ShiftSpec, Solver, TrainConfig, VaeModel, WindowSpec,
};

create_exception!(pylara, LaraError, PyRuntimeError);

fn err(e: lara::Error) -> PyErr {
    LaraError::new_err(e.to_string())
}

fn frame_from_rows(rows: Vec<Vec<f64>>, labels: Option<Vec<u8>>) -> PyResult<SeriesFrame> {
    let values = Mat64::from_rows(&rows).map_err(err)?;
    let timestamps = (0..rows.len() as i64).collect();
    SeriesFrame::new(timestamps, values, labels).map_err(err)
}

fn frame_rows(frame: &SeriesFrame) -> Vec<Vec<f64>> {
    (0..frame.len()).map(|i| frame.values().row(i).to_vec()).collect()
}

/// Precision, recall, F1 and the threshold they were measured at.
#[pyclass(name = "EvalReport", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyEvalReport {
    inner: EvalReport,
}

#[pymethods]
impl PyEvalReport {
    #[getter]
    fn precision(&self) -> f64 {
        self.inner.precision
    }

    #[getter]
    fn recall(&self) -> f64 {
        self.inner.recall
    }

    #[getter]
    fn f1(&self) -> f64 {
        self.inner.f1
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.threshold
    }

    #[getter]
    fn point_adjust(&self) -> bool {
        self.inner.point_adjust
    }

    #[staticmethod]
    fn parse(line: &str) -> PyResult<Self> {
        Ok(Self {
            inner: line.parse().map_err(err)?,
        })
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("EvalReport({})", self.inner)
    }
}

/// A frozen VAE with its current adjusters and normalization statistics.
#[pyclass(name = "Model", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModel {
    state: LaraState,
    norm: Option<ZScore>,
}

impl PyModel {
    fn normalized(&self, rows: Vec<Vec<f64>>) -> PyResult<SeriesFrame> {
        let frame = frame_from_rows(rows, None)?;
        match &self.norm {
            Some(z) => z.apply(&frame).map_err(err),
            None => Ok(frame),
        }
    }
}

#[pymethods]
impl PyModel {
    /// Fits normalization and a VAE on `rows`.
    #[staticmethod]
    #[pyo3(signature = (rows, w=50, stride=1, epochs=30, latent=8, hidden=32, lr=1e-3, batch_size=100, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        rows: Vec<Vec<f64>>,
        w: usize,
        stride: usize,
        epochs: usize,
        latent: usize,
        hidden: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<(Self, Vec<f64>)> {
        let frame = frame_from_rows(rows, None)?;
        py.detach(|| {
            let cfg = TrainConfig {
                epochs,
                batch_size,
                lr,
                seed,
                hidden,
                latent,
                ..TrainConfig::default()
            };
            let norm = ZScore::fit(&frame)?;
            let windows = make_windows(&norm.apply(&frame)?, WindowSpec { w, stride })?.windows;
            let init = VaeModel::for_config(w, frame.channels(), &cfg)?;
            let (model, losses) = train_vae(&init, &windows, &cfg)?;
            Ok((
                Self {
                    state: LaraState::new(model, LaraConfig::default()),
                    norm: Some(norm),
                },
                losses,
            ))
        })
        .map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let file = load_state(path).map_err(err)?;
        let norm = file.norm.clone();
        Ok(Self {
            state: file.into_lara(LaraConfig::default()),
            norm,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_state(
            &StateFile {
                model: StoredModel::Lara(self.state.clone()),
                norm: self.norm.clone(),
            },
            path,
        )
        .map_err(err)
    }

    #[getter]
    fn generation(&self) -> u64 {
        self.state.generation()
    }

    #[getter]
    fn window(&self) -> usize {
        self.state.base().window()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.state.base().channels()
    }

    #[getter]
    fn latent(&self) -> usize {
        self.state.base().latent()
    }

    /// One retraining round on the windows of `rows`; returns the new model
    /// and a report dictionary.
    #[pyo3(signature = (rows, stride=1, solver="closed_form", mx_input=None, n=None, big_n=None, ridge=1e-6, max_iters=5000, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn retrain<'py>(
        &self,
        py: Python<'py>,
        rows: Vec<Vec<f64>>,
        stride: usize,
        solver: &str,
        mx_input: Option<&str>,
        n: Option<usize>,
        big_n: Option<usize>,
        ridge: f64,
        max_iters: usize,
        seed: u64,
    ) -> PyResult<(Self, Bound<'py, PyDict>)> {
        let frame = self.normalized(rows)?;
        let solver: Solver = solver.parse().map_err(err)?;
        let mut state = self.state.clone();
        let mut cfg = state.config().clone();
        if let Some(m) = mx_input {
            cfg.mx_input = m.parse::<MxInput>().map_err(err)?;
        }
        if let Some(n) = n {
            cfg.ruminate.n_restored = n;
        }
        if let Some(n) = big_n {
            cfg.ruminate.n_samples = n;
        }
        state.set_config(cfg);
        let rcfg = RetrainConfig {
            solver,
            ridge,
            gd: GdConfig {
                max_iters,
                ..GdConfig::default()
            },
        };
        let spec = WindowSpec {
            w: state.base().window(),
            stride,
        };
        let (next, report) = py
            .detach(|| {
                let windows = make_windows(&frame, spec)?.windows;
                lara_retrain(&state, &windows, &rcfg, &mut Rng::new(seed))
            })
            .map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("iterations", report.iterations)?;
        d.set_item("converged", report.converged)?;
        d.set_item("loss_z", report.loss_z)?;
        d.set_item("loss_x", report.loss_x)?;
        d.set_item("seconds", report.seconds)?;
        d.set_item("trajectory", report.trajectory)?;
        Ok((
            Self {
                state: next,
                norm: self.norm.clone(),
            },
            d,
        ))
    }

    /// Per-row anomaly scores; rows before the first full window get the
    /// first window's score.
    fn score(&self, py: Python<'_>, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let frame = self.normalized(rows)?;
        let spec = WindowSpec {
            w: self.state.base().window(),
            stride: 1,
        };
        py.detach(|| {
            let w = make_windows(&frame, spec)?;
            let scores = score_windows(&self.state, &w.windows)?;
            expand_window_scores(&scores, &w.ends, frame.len())
        })
        .map_err(err)
    }
}

/// Synthetic stream with one regime change; returns a dict with `values`
/// (list of rows) and `labels`.
#[pyfunction]
#[pyo3(signature = (seed=0, len=2000, channels=4, changepoint=1000, anomaly_rate=0.01, anomaly_magnitude=3.0))]
fn synth<'py>(
    py: Python<'py>,
    seed: u64,
    len: usize,
    channels: usize,
    changepoint: usize,
    anomaly_rate: f64,
    anomaly_magnitude: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = ShiftSpec {
        seed,
        len,
        channels,
        changepoint,
        anomaly_rate,
        anomaly_magnitude,
        ..ShiftSpec::default()
    };
    let frame = synth_shift_stream(&spec).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("values", frame_rows(&frame))?;
    d.set_item("labels", frame.labels().map(<[u8]>::to_vec))?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (scores, labels, point_adjust=true))]
fn best_f1(scores: Vec<f64>, labels: Vec<u8>, point_adjust: bool) -> PyResult<PyEvalReport> {
    Ok(PyEvalReport {
        inner: lara::best_f1(&scores, &labels, point_adjust).map_err(err)?,
    })
}

/// POT threshold `z_q` of `scores` at risk `q`.
#[pyfunction]
#[pyo3(signature = (scores, q=1e-3, init_quantile=0.98))]
fn pot_threshold(scores: Vec<f64>, q: f64, init_quantile: f64) -> PyResult<f64> {
    Ok(lara::pot_fit_threshold(&scores, q, init_quantile).map_err(err)?.z_q)
}

/// Ridge-regularized affine map `t ~ W u + b`; returns `(W, b)`.
#[pyfunction]
#[pyo3(signature = (inputs, targets, ridge=1e-6))]
fn fit_affine(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>, ridge: f64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let pairs = PairSet::new(inputs, targets).map_err(err)?;
    let a = fit_affine_closed_form(&pairs, ridge).map_err(err)?;
    let w = a.weight();
    Ok(((0..w.rows()).map(|i| w.row(i).to_vec()).collect(), a.bias().to_vec()))
}

#[pyfunction]
#[pyo3(signature = (a, b, bandwidth=None, n_mc=1000, seed=0))]
fn kde_kl(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, bandwidth: Option<f64>, n_mc: usize, seed: u64) -> PyResult<f64> {
    let a = frame_from_rows(a, None)?;
    let b = frame_from_rows(b, None)?;
    core_kde_kl(&a, &b, bandwidth, n_mc, &mut Rng::new(seed)).map_err(err)
}

#[pyfunction]
fn transfer_distance(f1_star: f64, f1: f64) -> PyResult<f64> {
    core_transfer_distance(f1_star, f1).map_err(err)
}

#[pymodule]
fn pylara(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LaraError", m.py().get_type::<LaraError>())?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyEvalReport>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(best_f1, m)?)?;
    m.add_function(wrap_pyfunction!(pot_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(fit_affine, m)?)?;
    m.add_function(wrap_pyfunction!(kde_kl, m)?)?;
    m.add_function(wrap_pyfunction!(transfer_distance, m)?)?;
    Ok(())
}
