//! Python module `ssvi`: kernels, likelihoods, approximate inference and
//! hyperparameter fitting for state-space Gaussian processes.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use ssvi_core::inference::{ConjugateSolver, SequentialSolver};
use ssvi_core::quadrature::gh_rule;
use ssvi_core::{
    AdamConfig, DenseGram, Engine, FitConfig, Init, InferenceConfig, InferenceOutcome, Mode, ObjectiveKind,
    RhoSchedule, SiteParams,
};

fn err(e: ssvi_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Kernel", module = "ssvi", frozen, eq, from_py_object)]
#[derive(Clone, PartialEq)]
pub struct Kernel {
    inner: ssvi_core::Kernel,
}

#[pymethods]
impl Kernel {
    /// Parses an expression such as `sum(matern52(var=1, len=10), cosine(var=1, freq=2))`.
    #[new]
    fn new(expr: &str) -> PyResult<Self> {
        ssvi_core::Kernel::parse(expr).map(|inner| Kernel { inner }).map_err(err)
    }

    #[staticmethod]
    fn sum(children: Vec<Kernel>) -> PyResult<Self> {
        let c = children.into_iter().map(|k| k.inner).collect();
        ssvi_core::Kernel::sum(c).map(|inner| Kernel { inner }).map_err(err)
    }

    #[staticmethod]
    fn product(children: Vec<Kernel>) -> PyResult<Self> {
        let c = children.into_iter().map(|k| k.inner).collect();
        ssvi_core::Kernel::product(c).map(|inner| Kernel { inner }).map_err(err)
    }

    /// k(τ) for each lag.
    fn eval(&self, tau: Vec<f64>) -> Vec<f64> {
        tau.iter().map(|&x| self.inner.eval(x)).collect()
    }

    #[getter]
    fn variance(&self) -> f64 {
        self.inner.variance()
    }

    #[getter]
    fn param_names(&self) -> Vec<String> {
        self.inner.param_names()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params()
    }

    #[getter]
    fn state_dim(&self) -> PyResult<usize> {
        Ok(ssvi_core::to_state_space(&self.inner).map_err(err)?.state_dim())
    }

    fn with_params(&self, values: Vec<f64>) -> PyResult<Self> {
        self.inner.with_params(&values).map(|inner| Kernel { inner }).map_err(err)
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Kernel({:?})", self.inner.to_string())
    }
}

#[pyclass(name = "Likelihood", module = "ssvi", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
pub struct Likelihood {
    inner: ssvi_core::Likelihood,
}

#[pymethods]
impl Likelihood {
    #[staticmethod]
    fn gaussian(noise_variance: f64) -> PyResult<Self> {
        ssvi_core::Likelihood::gaussian(noise_variance)
            .map(|inner| Likelihood { inner })
            .map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (binsize = 1.0))]
    fn poisson(binsize: f64) -> PyResult<Self> {
        ssvi_core::Likelihood::poisson(binsize)
            .map(|inner| Likelihood { inner })
            .map_err(err)
    }

    #[staticmethod]
    fn bernoulli() -> Self {
        Likelihood {
            inner: ssvi_core::Likelihood::Bernoulli,
        }
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params()
    }

    fn log_density(&self, y: f64, f: f64) -> PyResult<f64> {
        self.inner.log_density(y, f).map_err(err)
    }

    /// `(value, d/dm, d/dv)` of `E_{N(f|m,v)}[log p(y|f)]`.
    #[pyo3(signature = (y, m, v, order = 20))]
    fn variational_expectation(&self, y: f64, m: f64, v: f64, order: usize) -> PyResult<(f64, f64, f64)> {
        let rule = gh_rule(order).map_err(err)?;
        let r = self.inner.variational_expectation(y, m, v, &rule).map_err(err)?;
        Ok((r.value, r.d_m, r.d_v))
    }

    /// `(value, d/dm, d/dv)` of `log E_{N(f|m,v)}[p(y|f)]`.
    #[pyo3(signature = (y, m, v, order = 20))]
    fn log_partition(&self, y: f64, m: f64, v: f64, order: usize) -> PyResult<(f64, f64, f64)> {
        let rule = gh_rule(order).map_err(err)?;
        let r = self.inner.log_partition(y, m, v, &rule).map_err(err)?;
        Ok((r.value, r.d_m, r.d_v))
    }

    fn __repr__(&self) -> String {
        match self.inner {
            ssvi_core::Likelihood::Gaussian { noise_variance } => format!("Likelihood.gaussian({noise_variance:?})"),
            ssvi_core::Likelihood::Poisson { binsize } => format!("Likelihood.poisson({binsize:?})"),
            ssvi_core::Likelihood::Bernoulli => "Likelihood.bernoulli()".into(),
        }
    }
}

/// Posterior marginals and sites from an inference or fit run.
#[pyclass(name = "Result", module = "ssvi", frozen, get_all)]
pub struct RunResult {
    mean: Vec<f64>,
    var: Vec<f64>,
    lambda1: Vec<f64>,
    lambda2: Vec<f64>,
    /// Pseudo-data log marginal likelihood.
    log_z: f64,
    /// Per-iteration objective.
    trace: Vec<f64>,
    objective: f64,
    kernel: Kernel,
    likelihood: Likelihood,
    /// `(name, value)` pairs in constrained space.
    hyperparameters: Vec<(String, f64)>,
}

#[pymethods]
impl RunResult {
    fn __repr__(&self) -> String {
        format!(
            "Result(n={}, objective={}, kernel={})",
            self.mean.len(),
            self.objective,
            self.kernel.inner
        )
    }
}

fn run_result(
    outcome: InferenceOutcome,
    trace: Vec<f64>,
    objective: f64,
    kernel: ssvi_core::Kernel,
    lik: ssvi_core::Likelihood,
) -> RunResult {
    let hp = ssvi_core::HyperParams::from_model(&kernel, &lik);
    RunResult {
        mean: outcome.posterior.marginals.m,
        var: outcome.posterior.marginals.v,
        lambda1: outcome.sites.lambda1,
        lambda2: outcome.sites.lambda2,
        log_z: outcome.posterior.log_z,
        trace,
        objective,
        hyperparameters: hp.names().iter().cloned().zip(hp.constrained()).collect(),
        kernel: Kernel { inner: kernel },
        likelihood: Likelihood { inner: lik },
    }
}

fn engine(name: &str) -> PyResult<Engine> {
    match name {
        "sequential" => Ok(Engine::Sequential),
        "dense" => Ok(Engine::dense()),
        other => Err(PyValueError::new_err(format!("unknown engine {other:?}"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn inference_config(
    mode: &str,
    iters: usize,
    rho_first: f64,
    rho: f64,
    init: &str,
    quad_order: usize,
    engine_name: &str,
) -> PyResult<InferenceConfig> {
    Ok(InferenceConfig {
        mode: match mode {
            "cvi" => Mode::Cvi,
            "ep" => Mode::Ep,
            other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
        },
        rho: RhoSchedule { first: rho_first, rest: rho },
        iters,
        init: match init {
            "filter" => Init::Filter,
            "zero" => Init::Zero,
            other => return Err(PyValueError::new_err(format!("unknown init {other:?}"))),
        },
        quad_order,
        engine: engine(engine_name)?,
    })
}

/// Approximate posterior at fixed hyperparameters.
#[pyfunction]
#[pyo3(signature = (kernel, likelihood, t, y, *, mode = "cvi", iters = 20, rho_first = 1.0, rho = 0.5,
                    init = "filter", quad_order = 20, engine = "sequential"))]
#[allow(clippy::too_many_arguments)]
fn run_inference(
    py: Python<'_>,
    kernel: &Kernel,
    likelihood: &Likelihood,
    t: Vec<f64>,
    y: Vec<f64>,
    mode: &str,
    iters: usize,
    rho_first: f64,
    rho: f64,
    init: &str,
    quad_order: usize,
    engine: &str,
) -> PyResult<RunResult> {
    let config = inference_config(mode, iters, rho_first, rho, init, quad_order, engine)?;
    let (k, l) = (kernel.inner.clone(), likelihood.inner);
    let outcome = py
        .detach(|| ssvi_core::run_inference(&k, &l, &t, &y, &config))
        .map_err(err)?;
    let trace = outcome.trace.clone();
    let objective = trace.last().copied().unwrap_or(f64::NAN);
    Ok(run_result(outcome, trace, objective, k, l))
}

/// Alternates site updates with Adam steps on the log hyperparameters.
#[pyfunction]
#[pyo3(signature = (kernel, likelihood, t, y, *, outer_iters = 500, inner_iters = 1, objective = "elbo",
                    lr = 0.1, beta1 = 0.9, beta2 = 0.999, mode = "cvi", iters = 20, rho_first = 1.0,
                    rho = 0.5, init = "filter", quad_order = 20, engine = "sequential"))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    kernel: &Kernel,
    likelihood: &Likelihood,
    t: Vec<f64>,
    y: Vec<f64>,
    outer_iters: usize,
    inner_iters: usize,
    objective: &str,
    lr: f64,
    beta1: f64,
    beta2: f64,
    mode: &str,
    iters: usize,
    rho_first: f64,
    rho: f64,
    init: &str,
    quad_order: usize,
    engine: &str,
) -> PyResult<RunResult> {
    let config = FitConfig {
        objective: match objective {
            "elbo" => ObjectiveKind::Elbo,
            "direct_ml" => ObjectiveKind::DirectMl,
            other => return Err(PyValueError::new_err(format!("unknown objective {other:?}"))),
        },
        adam: AdamConfig {
            lr,
            beta1,
            beta2,
            ..Default::default()
        },
        outer_iters,
        inner_iters,
        inference: inference_config(mode, iters, rho_first, rho, init, quad_order, engine)?,
    };
    let (k, l) = (kernel.inner.clone(), likelihood.inner);
    let r = py
        .detach(|| ssvi_core::fit(&k, &l, &t, &y, &config))
        .map_err(err)?;
    let trace = if r.trace.is_empty() {
        r.outcome.trace.clone()
    } else {
        r.trace.iter().map(|row| row.objective).collect()
    };
    Ok(run_result(r.outcome, trace, r.final_objective, r.kernel, r.likelihood))
}

fn sites(lambda1: Vec<f64>, lambda2: Vec<f64>) -> PyResult<SiteParams> {
    SiteParams::new(lambda1, lambda2).map_err(err)
}

/// Exact GP regression on site pseudo-data with the dense Gram matrix.
/// Returns `(mean, var, log_z)`.
#[pyfunction]
fn dense_regression(
    kernel: &Kernel,
    t: Vec<f64>,
    lambda1: Vec<f64>,
    lambda2: Vec<f64>,
) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let gram = DenseGram::new(&kernel.inner, &t).map_err(err)?;
    let (m, log_z) = ssvi_core::dense_regression(&gram, &sites(lambda1, lambda2)?).map_err(err)?;
    Ok((m.m, m.v, log_z))
}

/// The same regression by Kalman filtering and RTS smoothing.
#[pyfunction]
fn kalman_regression(
    kernel: &Kernel,
    t: Vec<f64>,
    lambda1: Vec<f64>,
    lambda2: Vec<f64>,
) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let solver = SequentialSolver::new(&kernel.inner, &t).map_err(err)?;
    let post = solver.solve(&sites(lambda1, lambda2)?).map_err(err)?;
    Ok((post.marginals.m, post.marginals.v, post.log_z))
}

/// Posterior `(mean, var)` at `t_star` given sites at the training times.
#[pyfunction]
fn predict(
    kernel: &Kernel,
    t: Vec<f64>,
    lambda1: Vec<f64>,
    lambda2: Vec<f64>,
    t_star: Vec<f64>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let solver = SequentialSolver::new(&kernel.inner, &t).map_err(err)?;
    let post = solver.solve(&sites(lambda1, lambda2)?).map_err(err)?;
    let (f, s) = post
        .states
        .as_deref()
        .ok_or_else(|| PyValueError::new_err("no filter states"))?;
    let m = ssvi_core::predict_marginals(&solver.model, &t, f, s, &t_star).map_err(err)?;
    Ok((m.m, m.v))
}

/// Event times of the coal-mining disasters dataset.
#[pyfunction]
fn coal_events() -> Vec<f64> {
    ssvi_core::data::coal_events()
}

/// Coal events binned into 200 yearly-scale counts, as `(t, y)`.
#[pyfunction]
fn coal_binned() -> (Vec<f64>, Vec<f64>) {
    let d = ssvi_core::data::coal_binned();
    (d.t, d.y)
}

/// Counts of `events` in `bins` equal-width bins over `range`, as `(t, y)`.
#[pyfunction]
fn bin_events(events: Vec<f64>, range: (f64, f64), bins: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let d = ssvi_core::data::bin_events(&events, range, bins).map_err(err)?;
    Ok((d.t, d.y))
}

#[pymodule]
fn ssvi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Kernel>()?;
    m.add_class::<Likelihood>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(run_inference, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(dense_regression, m)?)?;
    m.add_function(wrap_pyfunction!(kalman_regression, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(coal_events, m)?)?;
    m.add_function(wrap_pyfunction!(coal_binned, m)?)?;
    m.add_function(wrap_pyfunction!(bin_events, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
