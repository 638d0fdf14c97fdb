//! Python bindings: targets, chain specs, training, sampling and the
//! evaluation and oracle helpers.

use ergodic::chain::{run_chain, ChainSpec, InitialDistParams, SampleBatch};
use ergodic::eval::{self, Bandwidth, MmdConfig};
use ergodic::hmc::{self, HmcStepParams, PhaseState};
use ergodic::kv::KvMap;
use ergodic::oracles::{self, AisConfig};
use ergodic::targets::{make_target_by_name, BenchmarkId, TargetDensity};
use ergodic::trainer::{self, AdamConfig, TrainConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: ergodic::Error) -> PyErr {
    match e {
        ergodic::Error::InvalidParameter(_)
        | ergodic::Error::UnknownTarget(_)
        | ergodic::Error::DimensionMismatch { .. }
        | ergodic::Error::EntropyConstraint { .. }
        | ergodic::Error::Parse(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows(batch: &SampleBatch) -> Vec<Vec<f64>> {
    batch.rows().map(<[f64]>::to_vec).collect()
}

fn to_batch(points: Vec<Vec<f64>>) -> PyResult<SampleBatch> {
    let dim = points.first().map_or(0, Vec::len);
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(PyValueError::new_err(
            "expected a non-empty list of equal-length points",
        ));
    }
    Ok(SampleBatch::new(
        points.into_iter().flatten().collect(),
        dim,
        0,
        0,
    ))
}

/// Registered unnormalized log-density.
#[pyclass(name = "Target", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTarget {
    inner: TargetDensity,
}

#[pymethods]
impl PyTarget {
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: make_target_by_name(name).map_err(err)?,
        })
    }

    #[staticmethod]
    fn names() -> Vec<&'static str> {
        BenchmarkId::ALL.iter().map(|b| b.as_str()).collect()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn entropy_reference(&self) -> Option<f64> {
        self.inner.entropy_reference()
    }

    fn log_density(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.try_log_density(&x).map_err(err)
    }

    fn grad_log_density(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.grad_log_density(&x).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Target('{}')", self.inner.name())
    }
}

/// Initial distribution plus one HMC kernel per transition.
#[pyclass(name = "Chain", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyChain {
    inner: ChainSpec,
}

#[pymethods]
impl PyChain {
    /// `p0_std=None` uses the target's default; `entropy_floor=None` disables
    /// the constraint.
    #[new]
    #[pyo3(signature = (target, chain_length, leapfrog_steps=5, p0_std=None, entropy_floor=None, step_range=(0.01, 0.025), seed=0))]
    fn new(
        target: &PyTarget,
        chain_length: usize,
        leapfrog_steps: usize,
        p0_std: Option<Vec<f64>>,
        entropy_floor: Option<f64>,
        step_range: (f64, f64),
        seed: u64,
    ) -> PyResult<Self> {
        let t = target.inner.clone();
        let std = p0_std.unwrap_or_else(|| t.default_init_std().to_vec());
        let p0 = InitialDistParams::from_std(vec![0.0; t.dim()], &std).map_err(err)?;
        let inner = ChainSpec::with_random_steps(
            t,
            p0,
            chain_length,
            leapfrog_steps,
            step_range,
            entropy_floor.unwrap_or(f64::NEG_INFINITY),
            seed,
        )
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        let m = KvMap::parse(text).map_err(err)?;
        Ok(Self {
            inner: ChainSpec::from_kv(&m).map_err(err)?,
        })
    }

    fn to_text(&self) -> String {
        self.inner.to_kv().render()
    }

    #[getter]
    fn chain_length(&self) -> usize {
        self.inner.chain_length()
    }

    #[getter]
    fn step_sizes(&self) -> Vec<f64> {
        self.inner.step_sizes()
    }

    #[getter]
    fn p0_entropy(&self) -> f64 {
        self.inner.p0.entropy()
    }

    #[getter]
    fn target(&self) -> PyTarget {
        PyTarget {
            inner: self.inner.target.clone(),
        }
    }

    /// Final states of `n` independent chains.
    #[pyo3(signature = (n, seed=0))]
    fn sample(&self, py: Python<'_>, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let run = py
            .detach(|| run_chain(&self.inner, n, seed, false))
            .map_err(err)?;
        Ok(rows(&run.final_batch))
    }

    /// `[(t, estimate, std_error)]` for `t = 0..T`.
    #[pyo3(signature = (n, seed=0))]
    fn convergence_curve(
        &self,
        py: Python<'_>,
        n: usize,
        seed: u64,
    ) -> PyResult<Vec<(usize, f64, f64)>> {
        let curve = py
            .detach(|| {
                let run = run_chain(&self.inner, n, seed, true)?;
                eval::convergence_curve(
                    run.intermediate.as_ref().expect("recorded"),
                    &self.inner.target,
                )
            })
            .map_err(err)?;
        Ok(curve
            .iter()
            .map(|p| (p.t, p.estimate, p.std_error))
            .collect())
    }

    /// Monte Carlo EMLBO estimate: `(total, E_pT[log pi*], ELBO(P0))`.
    #[pyo3(signature = (n, seed=0))]
    fn emlbo(&self, py: Python<'_>, n: usize, seed: u64) -> PyResult<(f64, f64, f64)> {
        let e = py
            .detach(|| trainer::emlbo_estimate(&self.inner, n, seed))
            .map_err(err)?;
        Ok((e.total, e.e_log_target_final, e.elbo_p0))
    }

    fn __repr__(&self) -> String {
        format!(
            "Chain(target='{}', T={})",
            self.inner.target.name(),
            self.inner.chain_length()
        )
    }
}

/// Trains `chain`; returns the trained chain and one dict per iteration.
#[pyfunction]
#[pyo3(signature = (chain, iterations=50, batch_size=128, learning_rate=0.01, entropy_floor=None, stop_gradient=false, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    chain: &PyChain,
    iterations: usize,
    batch_size: usize,
    learning_rate: f64,
    entropy_floor: Option<f64>,
    stop_gradient: bool,
    seed: u64,
) -> PyResult<(PyChain, Vec<Py<pyo3::types::PyDict>>)> {
    let config = TrainConfig {
        batch_size,
        iterations,
        adam: AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        },
        entropy_floor: entropy_floor.unwrap_or(f64::NEG_INFINITY),
        stop_gradient,
        seed,
        ..TrainConfig::default()
    };
    let (trained, report) = py
        .detach(|| trainer::train(&chain.inner, &config))
        .map_err(err)?;
    let mut records = Vec::with_capacity(report.records.len());
    for r in &report.records {
        let d = pyo3::types::PyDict::new(py);
        d.set_item("iteration", r.iteration)?;
        d.set_item("emlbo", r.emlbo)?;
        d.set_item("emlbo_stderr", r.emlbo_std_error)?;
        d.set_item("e_logpi_T", r.e_log_target_final)?;
        d.set_item("elbo_p0", r.elbo_p0)?;
        d.set_item("entropy_p0", r.entropy_p0)?;
        d.set_item("guard_triggered", r.guard_triggered)?;
        d.set_item("step_sizes", r.step_sizes.clone())?;
        records.push(d.unbind());
    }
    Ok((PyChain { inner: trained }, records))
}

/// One leapfrog trajectory: returns `(position, momentum)`.
#[pyfunction]
#[pyo3(signature = (target, position, momentum, step_size, leapfrog_steps, momentum_variance=None))]
fn leapfrog(
    target: &PyTarget,
    position: Vec<f64>,
    momentum: Vec<f64>,
    step_size: f64,
    leapfrog_steps: usize,
    momentum_variance: Option<Vec<f64>>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let mv = momentum_variance.unwrap_or_else(|| vec![1.0; position.len()]);
    let params = HmcStepParams::new(step_size, mv, leapfrog_steps).map_err(err)?;
    let out =
        hmc::leapfrog(&PhaseState { position, momentum }, &target.inner, &params).map_err(err)?;
    Ok((out.position, out.momentum))
}

/// Mean and standard error of `log pi*` over `points`.
#[pyfunction]
fn expected_log_target(target: &PyTarget, points: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    eval::expected_log_target(&to_batch(points)?, &target.inner).map_err(err)
}

/// Unbiased MMD² with a Gaussian kernel; median-heuristic bandwidth unless given.
#[pyfunction]
#[pyo3(signature = (a, b, bandwidth=None))]
fn mmd(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, bandwidth: Option<f64>) -> PyResult<f64> {
    let config = MmdConfig {
        bandwidth: bandwidth.map_or(Bandwidth::MedianHeuristic, Bandwidth::Fixed),
    };
    eval::mmd(&to_batch(a)?, &to_batch(b)?, &config).map_err(err)
}

/// Exact draws from the target by rejection inside its sampling box.
#[pyfunction]
#[pyo3(signature = (target, n, seed=0))]
fn rejection_sample(
    py: Python<'_>,
    target: &PyTarget,
    n: usize,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let run = py
        .detach(|| oracles::rejection_sample(&target.inner, n, seed))
        .map_err(err)?;
    Ok(rows(&run.batch))
}

/// AIS estimate of `log Z` from `N(0, p0_variance I)`; returns
/// `(log_z, points, log_weights)`.
#[pyfunction]
#[pyo3(signature = (target, n_chains=64, n_temps=1000, p0_variance=4.0, seed=0))]
fn ais(
    py: Python<'_>,
    target: &PyTarget,
    n_chains: usize,
    n_temps: usize,
    p0_variance: f64,
    seed: u64,
) -> PyResult<(f64, Vec<Vec<f64>>, Vec<f64>)> {
    let p0 = InitialDistParams::isotropic(target.inner.dim(), p0_variance);
    let config = AisConfig {
        n_chains,
        n_temps,
        ..AisConfig::default()
    };
    let (log_z, w) = py
        .detach(|| oracles::ais_estimate(&target.inner, &p0, &config, seed))
        .map_err(err)?;
    let points = (0..w.len()).map(|i| w.row(i).to_vec()).collect();
    Ok((log_z, points, w.log_weights))
}

#[pymodule]
pub fn pyergodic(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTarget>()?;
    m.add_class::<PyChain>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(leapfrog, m)?)?;
    m.add_function(wrap_pyfunction!(expected_log_target, m)?)?;
    m.add_function(wrap_pyfunction!(mmd, m)?)?;
    m.add_function(wrap_pyfunction!(rejection_sample, m)?)?;
    m.add_function(wrap_pyfunction!(ais, m)?)?;
    Ok(())
}
