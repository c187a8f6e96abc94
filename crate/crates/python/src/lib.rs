//! Python bindings: models, locFDR, calibration, decisions, EM fits and
//! simulation. Models, policies and experiment configs cross the boundary
//! as JSON in the same format the CLI reads.

use omt_core::estimate::{fit_mixture, EmConfig, FittedMixture};
use omt_core::locfdr::{locfdr_marginal, locfdr_with_limit, DEFAULT_MAX_BLOCK_SIZE};
use omt_core::policy::{self, CalibrationOptions};
use omt_core::{
    run_experiment, CalibratedPolicy, Criterion, ExperimentConfig, LocFdrVector, MarginalMixture, OmtError,
    StreamFactory, TwoGroupModel,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

pyo3::create_exception!(omt, CalibrationError, PyRuntimeError);

fn err(e: OmtError) -> PyErr {
    if e.is_calibration_failure() {
        CalibrationError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn criterion(name: &str) -> PyResult<Criterion> {
    name.parse().map_err(err)
}

/// A validated two-group model.
#[pyclass(name = "Model", module = "omt", frozen)]
struct PyModel(TwoGroupModel);

#[pymethods]
impl PyModel {
    /// `(1 - pi) N(0, 1) + pi N(theta, 1)` with independent coordinates.
    #[staticmethod]
    fn independent(k: usize, pi: f64, theta: f64) -> PyResult<Self> {
        let mixture = MarginalMixture::standard(pi, theta).map_err(err)?;
        Ok(Self(TwoGroupModel::independent(k, mixture).map_err(err)?))
    }

    /// Accepts a bare model or a config holding one under `"model"`.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(json_err)?;
        let value = match value.get("model") {
            Some(m) => m.clone(),
            None => value,
        };
        Ok(Self(serde_json::from_value(value).map_err(json_err)?))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(json_err)
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.k()
    }

    #[getter]
    fn pi(&self) -> f64 {
        self.0.mixture().pi
    }

    /// One draw; returns `(h, z)`.
    fn sample(&self, seed: u64) -> (Vec<bool>, Vec<f64>) {
        let s = self.0.sample(&mut StreamFactory::new(seed).stream(0));
        (s.h, s.z)
    }

    #[pyo3(signature = (z, max_block_size = DEFAULT_MAX_BLOCK_SIZE))]
    fn locfdr(&self, py: Python<'_>, z: Vec<f64>, max_block_size: usize) -> PyResult<Vec<f64>> {
        let t = py.detach(|| locfdr_with_limit(&self.0, &z, max_block_size)).map_err(err)?;
        Ok(t.into_vec())
    }

    fn __repr__(&self) -> String {
        format!("Model(k={}, pi={})", self.0.k(), self.0.mixture().pi)
    }
}

/// A calibrated decision policy.
#[pyclass(name = "Policy", module = "omt", frozen)]
struct PyPolicy(CalibratedPolicy);

#[pymethods]
impl PyPolicy {
    /// A policy with a given `mu` (FDR/pFDR) or locFDR cutoff (mFDR).
    #[new]
    fn new(criterion_name: &str, alpha: f64, scalar: f64) -> PyResult<Self> {
        Ok(Self(CalibratedPolicy::fixed(criterion(criterion_name)?, alpha, scalar).map_err(err)?))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self(serde_json::from_str(text).map_err(json_err)?))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(json_err)
    }

    #[getter]
    fn criterion(&self) -> String {
        self.0.criterion.to_string()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }

    #[getter]
    fn scalar(&self) -> f64 {
        self.0.scalar
    }

    /// Decisions for a locFDR vector, in input order.
    fn decide(&self, t: Vec<f64>) -> PyResult<Vec<bool>> {
        let t = LocFdrVector::new(t).map_err(err)?;
        Ok(policy::decide(&self.0, &t))
    }

    fn __repr__(&self) -> String {
        format!("Policy(criterion={}, alpha={}, scalar={})", self.0.criterion, self.0.alpha, self.0.scalar)
    }
}

/// Calibrates the optimal policy for `model` by Monte Carlo.
#[pyfunction]
#[pyo3(signature = (model, alpha = 0.05, criterion_name = "fdr", n_cal = 10_000, seed = 0, max_block_size = DEFAULT_MAX_BLOCK_SIZE))]
fn calibrate(
    py: Python<'_>,
    model: &PyModel,
    alpha: f64,
    criterion_name: &str,
    n_cal: usize,
    seed: u64,
    max_block_size: usize,
) -> PyResult<PyPolicy> {
    let c = criterion(criterion_name)?;
    let opts = CalibrationOptions {
        n_cal,
        seed,
        max_block_size,
        ..CalibrationOptions::default()
    };
    let p = py.detach(|| policy::calibrate(&model.0, alpha, c, &opts)).map_err(err)?;
    Ok(PyPolicy(p))
}

/// Benjamini-Hochberg; `pi0` gives the adaptive version.
#[pyfunction]
#[pyo3(signature = (pvalues, alpha = 0.05, pi0 = None))]
fn bh(pvalues: Vec<f64>, alpha: f64, pi0: Option<f64>) -> PyResult<Vec<bool>> {
    policy::bh(&pvalues, alpha, pi0).map_err(err)
}

/// A fitted normal mixture.
#[pyclass(name = "Fit", module = "omt", frozen)]
struct PyFit(FittedMixture);

#[pymethods]
impl PyFit {
    #[getter]
    fn pi_hat(&self) -> f64 {
        self.0.pi_hat
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.weights.clone()
    }

    #[getter]
    fn means(&self) -> Vec<f64> {
        self.0.means.clone()
    }

    #[getter]
    fn sds(&self) -> Vec<f64> {
        self.0.sds.clone()
    }

    #[getter]
    fn null_assignment(&self) -> Vec<bool> {
        self.0.null_assignment.clone()
    }

    #[getter]
    fn log_likelihood(&self) -> f64 {
        self.0.log_likelihood
    }

    /// The fitted i.i.d. model for `k` hypotheses.
    fn model(&self, k: usize) -> PyResult<PyModel> {
        let mixture = self.0.to_mixture().map_err(err)?;
        Ok(PyModel(TwoGroupModel::independent(k, mixture).map_err(err)?))
    }

    /// Marginal locFDR under the fit.
    fn locfdr(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        let mixture = self.0.to_mixture().map_err(err)?;
        Ok(locfdr_marginal(&mixture, &z).map_err(err)?.into_vec())
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(json_err)
    }
}

/// Penalized EM fit of a normal mixture to z-values.
#[pyfunction]
#[pyo3(signature = (z, components = 2, pin_null = true, seed = 0))]
fn fit(py: Python<'_>, z: Vec<f64>, components: usize, pin_null: bool, seed: u64) -> PyResult<PyFit> {
    let cfg = EmConfig {
        pin_null,
        seed,
        ..EmConfig::with_components(components)
    };
    Ok(PyFit(py.detach(|| fit_mixture(&z, &cfg)).map_err(err)?))
}

/// Runs an experiment config (JSON) and returns the report as JSON.
#[pyfunction]
fn simulate(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg: ExperimentConfig = serde_json::from_str(config_json).map_err(json_err)?;
    let report = py.detach(|| run_experiment(&cfg)).map_err(err)?;
    serde_json::to_string(&report).map_err(json_err)
}

#[pymodule]
fn omt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyPolicy>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(bh, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add("CalibrationError", m.py().get_type::<CalibrationError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
