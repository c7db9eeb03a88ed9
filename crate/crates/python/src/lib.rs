//! Python bindings: linear codec fitting, release, sensitivity and the
//! closed-form loss curves. Matrices cross the boundary as lists of rows.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use taskldp::codec_io::Codec;
use taskldp::linear_solver::{self, Approach};
use taskldp::mechanism;
use taskldp::whitening::{build_task, fit_whitening};
use taskldp::{DataMatrix, Error, Matrix};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        e if e.is_numerical() => PyArithmeticError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn data(rows: Vec<Vec<f64>>) -> PyResult<DataMatrix> {
    DataMatrix::from_rows(&rows).map_err(py_err)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(py_err)
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

/// Scale allocation for a sphere of radius `r`.
#[pyclass(frozen, get_all)]
struct Allocation {
    sigma2: Vec<f64>,
    effective_dim: usize,
    sigma_w2: f64,
    delta1: f64,
    loss: f64,
    tie: bool,
}

#[pyfunction]
#[pyo3(signature = (lambda_, r, epsilon, total_scale = 1.0))]
fn kkt_allocation(lambda_: Vec<f64>, r: f64, epsilon: f64, total_scale: f64) -> PyResult<Allocation> {
    let rep = linear_solver::kkt_sigmas(&lambda_, r, epsilon, total_scale).map_err(py_err)?;
    Ok(Allocation {
        sigma2: rep.sigma2,
        effective_dim: rep.effective_dim,
        sigma_w2: rep.sigma_w2,
        delta1: rep.delta1,
        loss: rep.predicted_loss,
        tie: rep.tie,
    })
}

/// Rows of `(epsilon, task_aware, task_agnostic, privacy_agnostic)`.
#[pyfunction]
#[pyo3(signature = (lambda_, r, epsilons, z_pa = 2))]
fn theory_curves(lambda_: Vec<f64>, r: f64, epsilons: Vec<f64>, z_pa: usize) -> PyResult<Vec<(f64, f64, f64, f64)>> {
    let rows = linear_solver::theory_curves(&lambda_, r, &epsilons, z_pa).map_err(py_err)?;
    Ok(rows.iter().map(|p| (p.epsilon, p.task_aware, p.task_agnostic, p.privacy_agnostic)).collect())
}

/// Exact ℓ1 sensitivity of a set of encoded points.
#[pyfunction]
fn sensitivity(points: Vec<Vec<f64>>) -> PyResult<f64> {
    let m = matrix(points)?;
    Ok(mechanism::sensitivity_exact(&m).map_err(py_err)?.delta1)
}

/// A fitted codec, linear or neural.
#[pyclass(name = "Codec")]
struct PyCodec {
    inner: Codec,
}

#[pymethods]
impl PyCodec {
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(PyCodec { inner: Codec::load(path).map_err(py_err)? })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(PyCodec { inner: Codec::from_text(text).map_err(py_err)? })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon()
    }

    #[getter]
    fn delta1(&self) -> f64 {
        self.inner.delta1()
    }

    #[getter]
    fn noise_scale(&self) -> f64 {
        self.inner.noise_scale()
    }

    /// Privatized reconstructions of `rows`, reproducible for a given seed.
    #[pyo3(signature = (rows, seed = 0))]
    fn anonymize(&self, rows: Vec<Vec<f64>>, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let out = self.inner.anonymize_data(&data(rows)?, seed).map_err(py_err)?;
        Ok(to_rows(out.matrix()))
    }

    /// Monte-Carlo task loss `(mean, std_error)` of a linear codec.
    #[pyo3(signature = (rows, task, draws = 100, seed = 0))]
    fn evaluate(&self, rows: Vec<Vec<f64>>, task: Vec<Vec<f64>>, draws: usize, seed: u64) -> PyResult<(f64, f64)> {
        let Codec::Linear(c) = &self.inner else {
            return Err(PyValueError::new_err("evaluate with a task matrix needs a linear codec"));
        };
        let mc = c.monte_carlo_loss(&matrix(task)?, &data(rows)?, draws, seed).map_err(py_err)?;
        Ok((mc.mean, mc.std_error))
    }

    fn __repr__(&self) -> String {
        format!(
            "Codec(input_dim={}, latent_dim={}, epsilon={}, delta1={})",
            self.inner.input_dim(),
            self.inner.latent_dim(),
            self.inner.epsilon(),
            self.inner.delta1()
        )
    }
}

/// Fits a linear codec for the task matrix `task` on `rows`.
///
/// Returns the codec and its predicted expected loss.
#[pyfunction]
#[pyo3(signature = (rows, task, epsilon, approach = "aware", z = None))]
fn fit_linear(
    rows: Vec<Vec<f64>>,
    task: Vec<Vec<f64>>,
    epsilon: f64,
    approach: &str,
    z: Option<usize>,
) -> PyResult<(PyCodec, f64)> {
    let approach: Approach = approach.parse().map_err(py_err)?;
    let data = data(rows)?;
    let k = matrix(task)?;
    let model = fit_whitening(&data).map_err(py_err)?;
    let task = build_task(&model, &k).map_err(py_err)?;
    let h = model.whiten_data(&data).map_err(py_err)?;
    let (codec, loss) = match approach {
        Approach::TaskAware => {
            let (codec, rep) = linear_solver::solve_task_aware(&model, &task, &h, epsilon).map_err(py_err)?;
            (codec, rep.predicted_loss)
        }
        Approach::TaskAgnostic => linear_solver::solve_task_agnostic(&model, &task, &h, epsilon).map_err(py_err)?,
        Approach::PrivacyAgnostic => {
            let z = z.ok_or_else(|| PyValueError::new_err("z is required for privacy-agnostic"))?;
            linear_solver::solve_privacy_agnostic(&model, &task, &h, epsilon, z).map_err(py_err)?
        }
    };
    Ok((PyCodec { inner: Codec::Linear(codec) }, loss))
}

#[pymodule]
fn taskldp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCodec>()?;
    m.add_class::<Allocation>()?;
    m.add_function(wrap_pyfunction!(fit_linear, m)?)?;
    m.add_function(wrap_pyfunction!(kkt_allocation, m)?)?;
    m.add_function(wrap_pyfunction!(theory_curves, m)?)?;
    m.add_function(wrap_pyfunction!(sensitivity, m)?)?;
    Ok(())
}
