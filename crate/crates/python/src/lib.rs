//! Python bindings: studies, trials, pruning and the rank-sum test.
use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyList, PyString};

use trialforge::bench::mann_whitney_u as u_test;
use trialforge::storage::open_storage;
use trialforge::{Atom, FrozenTrial, PrunerSpec, SamplerSpec, StudyDirection, StudyOptions, TrialApi, TrialState};

create_exception!(trialforge_py, TrialPruned, PyException, "Raise from an objective to prune the trial.");

fn err(e: trialforge::Error) -> PyErr {
    match e {
        trialforge::Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn atom_to_py<'py>(py: Python<'py>, atom: &Atom) -> PyResult<Bound<'py, PyAny>> {
    Ok(match atom {
        Atom::Bool(b) => PyBool::new(py, *b).to_owned().into_any(),
        Atom::Int(i) => i.into_pyobject(py)?.into_any(),
        Atom::Float(f) => PyFloat::new(py, *f).into_any(),
        Atom::Str(s) => PyString::new(py, s).into_any(),
    })
}

fn atom_from_py(value: &Bound<'_, PyAny>) -> PyResult<Atom> {
    if value.is_instance_of::<PyBool>() {
        Ok(Atom::Bool(value.extract()?))
    } else if value.is_instance_of::<PyInt>() {
        Ok(Atom::Int(value.extract()?))
    } else if value.is_instance_of::<PyFloat>() {
        Ok(Atom::Float(value.extract()?))
    } else if value.is_instance_of::<PyString>() {
        Ok(Atom::Str(value.extract()?))
    } else {
        Err(PyValueError::new_err("choices must be bool, int, float or str"))
    }
}

fn params_dict<'py>(py: Python<'py>, params: &BTreeMap<String, Atom>) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new(py);
    for (name, value) in params {
        dict.set_item(name, atom_to_py(py, value)?)?;
    }
    Ok(dict)
}

fn trial_dict<'py>(py: Python<'py>, t: &FrozenTrial) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("number", t.number)?;
    dict.set_item("state", t.state.as_str())?;
    dict.set_item("value", t.value)?;
    dict.set_item("params", params_dict(py, &t.param_values())?)?;
    dict.set_item("intermediate_values", t.intermediate_values.clone())?;
    Ok(dict)
}

/// A running trial handed to objectives.
#[pyclass(name = "Trial", module = "trialforge_py")]
pub struct PyTrial {
    inner: trialforge::Trial,
    number: u64,
}

#[pymethods]
impl PyTrial {
    #[getter]
    fn number(&self) -> u64 {
        self.number
    }

    #[getter]
    fn params<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        params_dict(py, &self.inner.params())
    }

    #[pyo3(signature = (name, low, high, log = false))]
    fn suggest_float(&mut self, name: &str, low: f64, high: f64, log: bool) -> PyResult<f64> {
        if log {
            self.inner.suggest_loguniform(name, low, high).map_err(err)
        } else {
            self.inner.suggest_uniform(name, low, high).map_err(err)
        }
    }

    #[pyo3(signature = (name, low, high, step = 1))]
    fn suggest_int(&mut self, name: &str, low: i64, high: i64, step: i64) -> PyResult<i64> {
        self.inner.suggest_int_step(name, low, high, step).map_err(err)
    }

    fn suggest_categorical<'py>(
        &mut self,
        py: Python<'py>,
        name: &str,
        choices: &Bound<'py, PyList>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let atoms = choices.iter().map(|c| atom_from_py(&c)).collect::<PyResult<Vec<_>>>()?;
        let value = self.inner.suggest_categorical(name, atoms).map_err(err)?;
        atom_to_py(py, &value)
    }

    fn report(&mut self, value: f64, step: u64) -> PyResult<()> {
        self.inner.report(value, step).map_err(err)
    }

    fn should_prune(&self, step: u64) -> PyResult<bool> {
        self.inner.should_prune(step).map_err(err)
    }
}

/// A named optimisation campaign.
#[pyclass(name = "Study", module = "trialforge_py")]
pub struct PyStudy {
    inner: trialforge::Study,
}

impl PyStudy {
    fn finish(&self, trial: &mut PyTrial, state: TrialState, value: Option<f64>) -> PyResult<()> {
        match (state, value) {
            (TrialState::Complete, Some(v)) => trial.inner.complete(v),
            (TrialState::Complete, None) => return Err(PyValueError::new_err("complete trials need a value")),
            (TrialState::Pruned, _) => trial.inner.prune(),
            (TrialState::Failed, _) => trial.inner.fail(),
            (TrialState::Running, _) => return Err(PyValueError::new_err("cannot tell a running state")),
        }
        .map_err(err)
    }
}

#[pymethods]
impl PyStudy {
    /// Creates a study, or joins an existing one when `load_if_exists` is set.
    #[staticmethod]
    #[pyo3(signature = (name = "study", storage = "memory://", direction = "minimize", sampler = "random",
                        pruner = "nop", seed = 0, load_if_exists = false))]
    fn create(
        name: &str,
        storage: &str,
        direction: &str,
        sampler: &str,
        pruner: &str,
        seed: u64,
        load_if_exists: bool,
    ) -> PyResult<Self> {
        let options = StudyOptions {
            direction: direction.parse::<StudyDirection>().map_err(err)?,
            sampler: sampler.parse::<SamplerSpec>().map_err(err)?,
            pruner: pruner.parse::<PrunerSpec>().map_err(err)?,
            seed,
        };
        let storage = open_storage(storage).map_err(err)?;
        let inner = trialforge::Study::create(storage, name, options, load_if_exists).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn direction(&self) -> &'static str {
        self.inner.direction().as_str()
    }

    fn ask(&self) -> PyResult<PyTrial> {
        let inner = self.inner.ask().map_err(err)?;
        let number = inner.number().expect("live trials are numbered");
        Ok(PyTrial { inner, number })
    }

    /// Finishes `trial` as complete with `value`, or with the named `state`.
    #[pyo3(signature = (trial, value = None, state = None))]
    fn tell(&self, trial: &mut PyTrial, value: Option<f64>, state: Option<&str>) -> PyResult<()> {
        let state = match state {
            Some(s) => s.parse::<TrialState>().map_err(err)?,
            None if value.is_some() => TrialState::Complete,
            None => TrialState::Failed,
        };
        self.finish(trial, state, value)
    }

    /// Calls `func(trial)` for `n_trials` trials. A returned number completes
    /// the trial, `TrialPruned` prunes it and any other exception fails it
    /// and propagates.
    #[pyo3(signature = (func, n_trials, timeout = None))]
    fn optimize(&self, py: Python<'_>, func: &Bound<'_, PyAny>, n_trials: usize, timeout: Option<f64>) -> PyResult<()> {
        let started = Instant::now();
        let limit = timeout.map(Duration::from_secs_f64);
        for _ in 0..n_trials {
            if limit.is_some_and(|t| started.elapsed() >= t) {
                break;
            }
            let trial = Bound::new(py, self.ask()?)?;
            let outcome = func.call1((trial.clone(),)).and_then(|v| v.extract::<f64>());
            let mut trial = trial.borrow_mut();
            match outcome {
                Ok(v) => self.finish(&mut trial, TrialState::Complete, Some(v))?,
                Err(e) if e.is_instance_of::<TrialPruned>(py) => self.finish(&mut trial, TrialState::Pruned, None)?,
                Err(e) => {
                    self.finish(&mut trial, TrialState::Failed, None)?;
                    return Err(e);
                }
            }
        }
        Ok(())
    }

    #[getter]
    fn best_value(&self) -> PyResult<f64> {
        self.inner.best_value().map_err(err)
    }

    #[getter]
    fn best_params<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        params_dict(py, &self.inner.best_trial().map_err(err)?.param_values())
    }

    /// Every trial as a dict of number, state, value, params and intermediate values.
    fn trials<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner.trials().map_err(err)?.iter().map(|t| trial_dict(py, t)).collect()
    }
}

/// One-sided rank-sum test that `a` tends to be smaller than `b`; returns `(u, p)`.
#[pyfunction]
fn mann_whitney_u(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(PyValueError::new_err("both samples must be non-empty"));
    }
    let t = u_test(&a, &b);
    Ok((t.u, t.p_one_sided))
}

#[pymodule]
fn trialforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStudy>()?;
    m.add_class::<PyTrial>()?;
    m.add_function(wrap_pyfunction!(mann_whitney_u, m)?)?;
    m.add("TrialPruned", m.py().get_type::<TrialPruned>())?;
    Ok(())
}
