//! Python bindings: the network type plus the compression, equivalence and
//! repair entry points, mirroring the CLI pipeline.

use ndarray::Array1;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nnequiv::compress::{self, QuantSpec};
use nnequiv::data::Dataset;
use nnequiv::merge;
use nnequiv::network::Network;
use nnequiv::reach::{
    merged_discrepancy, select_brightest_dims, star_from_linf_ball, DiscrepancyReport,
    ReachOptions,
};
use nnequiv::repair::{
    self, RepairConfig, RepairOutcome, RepairSetup, RepairTarget, RetrainStrategy,
};
use nnequiv::training::{self, LossKind, TrainConfig};
use nnequiv::Error;

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Lp(_) | Error::Training { .. } | Error::Internal(_) | Error::OverBudget { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn vec_to_array(x: Vec<f64>) -> Array1<f64> {
    Array1::from_vec(x)
}

/// A feedforward ReLU network.
#[pyclass(name = "Network", frozen)]
struct PyNetwork {
    inner: Network,
}

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: Network::load(path).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: Network::from_json(text).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .forward(&vec_to_array(x))
            .map_err(to_py_err)?
            .to_vec())
    }

    fn forward_all_layers(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        Ok(self
            .inner
            .forward_all_layers(&vec_to_array(x))
            .map_err(to_py_err)?
            .into_iter()
            .map(|v| v.to_vec())
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(input_dim={}, output_dim={}, depth={}, parameters={})",
            self.inner.input_dim(),
            self.inner.output_dim(),
            self.inner.depth(),
            self.inner.parameter_count()
        )
    }
}

/// Seeded MLP initialization: hidden layers get ReLU, the output stays linear.
#[pyfunction]
fn init_mlp(widths: Vec<usize>, seed: u64) -> PyResult<PyNetwork> {
    Ok(PyNetwork {
        inner: training::init_mlp(&widths, seed).map_err(to_py_err)?,
    })
}

/// Post-training uniform quantization of every fully connected tensor.
#[pyfunction]
#[pyo3(signature = (net, bits = 8))]
fn quantize(net: &PyNetwork, bits: u8) -> PyResult<PyNetwork> {
    let spec = QuantSpec::new(bits).map_err(to_py_err)?;
    Ok(PyNetwork {
        inner: compress::quantize(&net.inner, &spec),
    })
}

/// Raise ValueError naming the violated merge precondition, if any.
#[pyfunction]
fn check_compatible(n1: &PyNetwork, n2: &PyNetwork) -> PyResult<()> {
    merge::check_compatible(&n1.inner, &n2.inner).map_err(to_py_err)
}

/// Merged network computing `n1(x) - n2(x)` as a plain network.
#[pyfunction]
fn merge_networks(n1: &PyNetwork, n2: &PyNetwork) -> PyResult<PyNetwork> {
    Ok(PyNetwork {
        inner: merge::merge(&n1.inner, &n2.inner)
            .map_err(to_py_err)?
            .into_network(),
    })
}

/// Pad the shallower network with identity layers to match the deeper one.
#[pyfunction]
fn pad_pair(n1: &PyNetwork, n2: &PyNetwork) -> PyResult<(PyNetwork, PyNetwork)> {
    let (a, b) = compress::pad_pair(&n1.inner, &n2.inner).map_err(to_py_err)?;
    Ok((PyNetwork { inner: a }, PyNetwork { inner: b }))
}

/// Mean over the inputs of the max-coordinate output distance between the
/// two networks.
#[pyfunction]
fn mean_discrepancy(n1: &PyNetwork, n2: &PyNetwork, inputs: Vec<Vec<f64>>) -> PyResult<f64> {
    let inputs: Vec<Array1<f64>> = inputs.into_iter().map(vec_to_array).collect();
    repair::mean_discrepancy(&n1.inner, &n2.inner, &inputs).map_err(to_py_err)
}

fn report_to_dict<'py>(
    py: Python<'py>,
    report: &DiscrepancyReport,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("lower", report.lower.clone())?;
    d.set_item("upper", report.upper.clone())?;
    d.set_item("delta_max", report.delta_max)?;
    d.set_item("delta_tilde_max", report.delta_tilde_max.clone())?;
    d.set_item("delta_tilde_mag", report.delta_tilde_mag.clone())?;
    d.set_item("set_count", report.set_count)?;
    d.set_item("wall_time_s", report.wall_time_s)?;
    Ok(d)
}

/// Guaranteed discrepancy bounds of `n1(x) - n2(x)` over an l-inf ball around
/// `x0`. `perturb_dims` limits the ball to the k brightest coordinates.
#[pyfunction]
#[pyo3(signature = (n1, n2, x0, epsilon, perturb_dims = None, max_sets = 4096, box_fallback = true))]
#[allow(clippy::too_many_arguments)]
fn reach_discrepancy<'py>(
    py: Python<'py>,
    n1: &PyNetwork,
    n2: &PyNetwork,
    x0: Vec<f64>,
    epsilon: f64,
    perturb_dims: Option<usize>,
    max_sets: usize,
    box_fallback: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let x0 = vec_to_array(x0);
    let dims = perturb_dims.map(|k| select_brightest_dims(&x0, k));
    let star = star_from_linf_ball(&x0, epsilon, dims.as_deref()).map_err(to_py_err)?;
    let merged = merge::merge(&n1.inner, &n2.inner).map_err(to_py_err)?;
    let opts = ReachOptions {
        max_sets,
        box_fallback,
    };
    let (result, report) = merged_discrepancy(&merged, &star, &opts).map_err(to_py_err)?;
    let d = report_to_dict(py, &report)?;
    d.set_item("splits_performed", result.splits_performed)?;
    d.set_item("overapprox_used", result.overapprox_used)?;
    d.set_item("per_layer_set_counts", result.per_layer_set_counts)?;
    Ok(d)
}

/// Train a classifier with softmax cross-entropy.
#[pyfunction]
#[pyo3(signature = (net, inputs, labels, epochs = 5, batch_size = 64, learning_rate = 0.01, momentum = 0.9, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train_classifier(
    net: &PyNetwork,
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    momentum: f64,
    seed: u64,
) -> PyResult<PyNetwork> {
    let data = Dataset::with_labels(inputs.into_iter().map(vec_to_array).collect(), labels)
        .map_err(to_py_err)?;
    let cfg = TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        momentum,
        loss: LossKind::CrossEntropy,
        seed,
    };
    Ok(PyNetwork {
        inner: training::train(&net.inner, &data, &cfg).map_err(to_py_err)?,
    })
}

/// Classification accuracy with argmax ties broken toward the lowest index.
#[pyfunction]
fn evaluate_accuracy(
    net: &PyNetwork,
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
) -> PyResult<f64> {
    let data = Dataset::with_labels(inputs.into_iter().map(vec_to_array).collect(), labels)
        .map_err(to_py_err)?;
    training::evaluate_accuracy(&net.inner, &data).map_err(to_py_err)
}

/// Discrepancy-guided repair of `n2` against `n1` over the given evaluation
/// inputs. Returns the repaired network and a trace dict.
#[pyfunction]
#[pyo3(signature = (
    n1, n2, eval_inputs, alpha = 10.0, target_frac = 2.0 / 3.0, epsilon = 0.01,
    perturb_dims = None, max_iterations = 10, retrain_epochs = 3, n_samples = 500,
    seed = 0, learning_rate = 5e-4, batch_size = 64, momentum = 0.0,
    strategy = "signed_step"
))]
#[allow(clippy::too_many_arguments)]
fn repair_network<'py>(
    py: Python<'py>,
    n1: &PyNetwork,
    n2: &PyNetwork,
    eval_inputs: Vec<Vec<f64>>,
    alpha: f64,
    target_frac: f64,
    epsilon: f64,
    perturb_dims: Option<usize>,
    max_iterations: usize,
    retrain_epochs: usize,
    n_samples: usize,
    seed: u64,
    learning_rate: f64,
    batch_size: usize,
    momentum: f64,
    strategy: &str,
) -> PyResult<(PyNetwork, Bound<'py, PyDict>)> {
    let strategy = match strategy {
        "signed_step" => RetrainStrategy::SignedStep,
        "midpoint_step" => RetrainStrategy::MidpointStep,
        "full_replacement" => RetrainStrategy::FullReplacement,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown strategy {other:?}; expected signed_step, midpoint_step or full_replacement"
            )))
        }
    };
    let cfg = RepairConfig {
        alpha,
        retrain_epochs,
        max_iterations,
        n_samples,
        epsilon,
        perturb_dims,
        max_sets: 4096,
        seed,
        learning_rate,
        batch_size,
        momentum,
        strategy,
    };
    let setup = RepairSetup {
        eval_inputs: eval_inputs.into_iter().map(vec_to_array).collect(),
        accuracy_data: None,
    };
    let target = RepairTarget::FractionOfInitial(target_frac);
    let result = repair::repair(&n1.inner, &n2.inner, &target, &cfg, &setup).map_err(to_py_err)?;

    let trace = PyDict::new(py);
    trace.set_item(
        "outcome",
        match result.trace.outcome {
            RepairOutcome::Success => "success",
            RepairOutcome::Timeout => "timeout",
        },
    )?;
    let records: Vec<Bound<'py, PyDict>> = result
        .trace
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("iteration", r.iteration)?;
            d.set_item("mean_discrepancy", r.mean_discrepancy)?;
            d.set_item("max_abs_bound", r.max_abs_bound)?;
            d.set_item("delta_tilde_max", r.delta_tilde_max.clone())?;
            d.set_item("target_met", r.target_met)?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    trace.set_item("records", records)?;
    let reports: Vec<Bound<'py, PyDict>> = result
        .final_reports
        .iter()
        .map(|r| report_to_dict(py, r))
        .collect::<PyResult<_>>()?;
    trace.set_item("final_reports", reports)?;
    Ok((
        PyNetwork {
            inner: result.repaired,
        },
        trace,
    ))
}

#[pymodule]
fn _nnequiv(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(init_mlp, m)?)?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(check_compatible, m)?)?;
    m.add_function(wrap_pyfunction!(merge_networks, m)?)?;
    m.add_function(wrap_pyfunction!(pad_pair, m)?)?;
    m.add_function(wrap_pyfunction!(mean_discrepancy, m)?)?;
    m.add_function(wrap_pyfunction!(reach_discrepancy, m)?)?;
    m.add_function(wrap_pyfunction!(train_classifier, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(repair_network, m)?)?;
    Ok(())
}
