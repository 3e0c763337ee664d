//! Python bindings for netfn.

use std::collections::BTreeSet;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use netfn::estimate::{grid_search, unit_terms_from_graph, wls_solve, VarianceSpec};
use netfn::graph::{InfluenceMatrix, ValuedGraph};
use netfn::nf::{
    c_values, cnf_mu, contextual_features, default_lambda_grid, rnf_mu_exact, rnf_mu_tau, LinearC,
    Theta,
};
use netfn::sbs::{
    eligibility_flags, f_in_sample, inclusion_prob, joint_inclusion_prob, run_tsbs, sbs_weights,
    DesignKind, LearningTarget, SampleGraph, SbsDesign,
};
use netfn::synth::{fixture, gen_er_digraph, gen_outcomes, FixtureId, ModelSpec};
use netfn::trw::{replicate_estimate, run_trw, transition_probs, trw_weights, WalkConfig};
use netfn::WeightScheme;

fn err(e: netfn::NetfnError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_scheme(scheme: &str) -> PyResult<WeightScheme> {
    scheme.parse().map_err(err)
}

fn parse_target(target: &str, tau: Option<usize>) -> PyResult<LearningTarget> {
    match (target, tau) {
        ("cnf", None) => Ok(LearningTarget::Cnf),
        ("rnf", None) => Ok(LearningTarget::Rnf),
        ("qtau", Some(tau)) => Ok(LearningTarget::Qtau(tau)),
        _ => Err(PyValueError::new_err(
            "target must be 'cnf', 'rnf', or 'qtau' with tau=...",
        )),
    }
}

fn parse_design(kind: &str, size: f64, frame: usize) -> PyResult<SbsDesign> {
    let kind = match kind {
        "srswor" => DesignKind::Srswor { m: size as usize },
        "bernoulli" => DesignKind::Bernoulli { p: size },
        _ => {
            return Err(PyValueError::new_err(
                "design kind must be 'srswor' or 'bernoulli'",
            ))
        }
    };
    SbsDesign::new(kind, frame).map_err(err)
}

fn theta_to_dict<'py>(py: Python<'py>, theta: &Theta) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    match theta {
        Theta::Cnf { beta, gamma } => {
            d.set_item("mode", "cnf")?;
            d.set_item("beta", beta.clone())?;
            d.set_item("gamma", gamma.clone())?;
        }
        Theta::Rnf { beta, lambda } => {
            d.set_item("mode", "rnf")?;
            d.set_item("beta", beta.clone())?;
            d.set_item("lambda", *lambda)?;
        }
    }
    Ok(d)
}

/// A valued graph: directed loop-free edges with positive values, node
/// features, and optional outcomes.
#[pyclass(name = "Graph", skip_from_py_object)]
#[derive(Clone)]
struct PyGraph {
    inner: ValuedGraph,
}

#[pymethods]
impl PyGraph {
    /// Build a graph from an edge list `[(i, j, omega), ...]` and per-node
    /// feature vectors; outcomes are optional.
    #[new]
    #[pyo3(signature = (n, edges, x, y=None))]
    fn new(
        n: usize,
        edges: Vec<(usize, usize, f64)>,
        x: Vec<Vec<f64>>,
        y: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        Ok(Self {
            inner: ValuedGraph::new(n, &edges, x, y).map_err(err)?,
        })
    }

    /// The built-in fixtures: "fig1" (4 nodes) or "fig2" (5-node line).
    #[staticmethod]
    fn fixture(id: &str) -> PyResult<Self> {
        let id: FixtureId = id.parse().map_err(err)?;
        Ok(Self {
            inner: fixture(id).map_err(err)?,
        })
    }

    /// Erdos-Renyi digraph with random edge values and features.
    #[staticmethod]
    #[pyo3(signature = (n, edge_prob, feature_dim=2, seed=0))]
    fn erdos_renyi(n: usize, edge_prob: f64, feature_dim: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: gen_er_digraph(n, edge_prob, feature_dim, seed).map_err(err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    fn neighbors(&self, i: usize) -> PyResult<Vec<usize>> {
        self.inner.neighbors(i).map_err(err)
    }

    /// Degree triple `(d_i, d_out, d_in)`.
    fn degrees(&self, i: usize) -> PyResult<(usize, usize, usize)> {
        let d = self.inner.degrees(i).map_err(err)?;
        Ok((d.total, d.out_deg, d.in_deg))
    }

    /// Nodes with a directed path of length <= tau into `i`.
    fn tau_neighborhood(&self, i: usize, tau: usize) -> PyResult<Vec<usize>> {
        Ok(self
            .inner
            .tau_neighborhood(i, tau)
            .map_err(err)?
            .into_iter()
            .collect())
    }

    fn x(&self, i: usize) -> Vec<f64> {
        self.inner.x(i).to_vec()
    }

    fn y(&self, i: usize) -> Option<f64> {
        self.inner.y(i)
    }

    fn with_features(&self, x: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.with_features(x).map_err(err)?,
        })
    }

    fn with_outcomes(&self, y: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.with_outcomes(y).map_err(err)?,
        })
    }

    /// Attach synthetic outcomes from a generating model.
    #[pyo3(signature = (mode, beta, gamma=None, lambda_=None, noise_sd=0.0, scheme="in_normalized", seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn gen_outcomes(
        &self,
        mode: &str,
        beta: Vec<f64>,
        gamma: Option<Vec<f64>>,
        lambda_: Option<f64>,
        noise_sd: f64,
        scheme: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = match mode {
            "cnf" => ModelSpec::Cnf {
                beta,
                gamma: gamma.unwrap_or_default(),
                noise_sd,
            },
            "rnf" => ModelSpec::Rnf {
                beta,
                lambda: lambda_.ok_or_else(|| PyValueError::new_err("rnf mode needs lambda_"))?,
                noise_sd,
                scheme: parse_scheme(scheme)?,
            },
            _ => return Err(PyValueError::new_err("mode must be 'cnf' or 'rnf'")),
        };
        Ok(Self {
            inner: gen_outcomes(&self.inner, &spec, seed).map_err(err)?,
        })
    }

    /// Average in-neighbour feature vector of node `i`.
    fn contextual_features(&self, i: usize) -> PyResult<Vec<f64>> {
        contextual_features(&self.inner, i).map_err(err)
    }

    /// Base values `c_i = x_i . beta`.
    fn c_values(&self, beta: Vec<f64>) -> PyResult<Vec<f64>> {
        c_values(&self.inner, &beta, &LinearC).map_err(err)
    }

    /// Contextual mean field `mu_i = x_i' beta + z_i' gamma`.
    fn cnf_mu(&self, beta: Vec<f64>, gamma: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(cnf_mu(&self.inner, &Theta::Cnf { beta, gamma })
            .map_err(err)?
            .mu)
    }

    /// Influence matrix under a weighting scheme.
    #[pyo3(signature = (scheme="in_normalized"))]
    fn influence_matrix(&self, scheme: &str) -> PyResult<PyInfluence> {
        Ok(PyInfluence {
            inner: InfluenceMatrix::from_graph(&self.inner, parse_scheme(scheme)?),
        })
    }

    /// One row of the targeted-random-walk kernel.
    fn transition_probs(&self, i: usize, r: f64) -> PyResult<Vec<f64>> {
        transition_probs(&self.inner, i, r).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Graph(n={}, edges={}, feature_dim={})",
            self.inner.n(),
            self.inner.edge_count(),
            self.inner.feature_dim()
        )
    }
}

/// Sparse influence matrix with the nonzero pattern of the transposed
/// adjacency.
#[pyclass(name = "InfluenceMatrix", skip_from_py_object)]
#[derive(Clone)]
struct PyInfluence {
    inner: InfluenceMatrix,
}

#[pymethods]
impl PyInfluence {
    fn entry(&self, i: usize, j: usize) -> f64 {
        self.inner.entry(i, j)
    }

    fn row(&self, i: usize) -> Vec<(usize, f64)> {
        self.inner.row(i).to_vec()
    }

    #[getter]
    fn lambda_bound(&self) -> f64 {
        self.inner.lambda_bound()
    }

    #[getter]
    fn spectral_radius(&self) -> f64 {
        self.inner.spectral_radius()
    }

    /// Norm restriction check; returns `(ok, spectral_radius_estimate)`.
    fn norm_check(&self, lambda: f64) -> (bool, f64) {
        let chk = self.inner.norm_check(lambda);
        (chk.ok, chk.spectral_radius)
    }

    /// Solve `(I - lambda M) mu = c` by fixed-point iteration.
    fn rnf_mu_exact(&self, c: Vec<f64>, lambda: f64) -> PyResult<Vec<f64>> {
        Ok(rnf_mu_exact(&self.inner, &c, lambda).map_err(err)?.mu)
    }

    /// Tau-order truncation of the recursive mean field.
    fn rnf_mu_tau(&self, c: Vec<f64>, lambda: f64, tau: usize) -> PyResult<Vec<f64>> {
        Ok(rnf_mu_tau(&self.inner, &c, lambda, tau).map_err(err)?.mu)
    }

    /// Default profiling grid over the feasible interval.
    fn default_lambda_grid(&self) -> Vec<f64> {
        default_lambda_grid(&self.inner)
    }
}

/// One realized snowball sample.
#[pyclass(name = "SbsSample")]
struct PySample {
    inner: SampleGraph,
}

#[pymethods]
impl PySample {
    #[getter]
    fn s0(&self) -> Vec<usize> {
        self.inner.s0.iter().copied().collect()
    }

    #[getter]
    fn waves(&self) -> Vec<Vec<usize>> {
        self.inner
            .waves
            .iter()
            .map(|w| w.iter().copied().collect())
            .collect()
    }

    #[getter]
    fn seed_sample(&self) -> Vec<usize> {
        self.inner.seed_sample.iter().copied().collect()
    }

    #[getter]
    fn observed_nodes(&self) -> Vec<usize> {
        self.inner.observed_nodes.iter().copied().collect()
    }

    #[getter]
    fn observed_edges(&self) -> Vec<(usize, usize, f64)> {
        self.inner.observed_edges.clone()
    }

    /// Eligibility flags for a learning target.
    #[pyo3(signature = (target="cnf", tau=None))]
    fn eligibility(&self, target: &str, tau: Option<usize>) -> PyResult<Vec<bool>> {
        Ok(eligibility_flags(&self.inner, parse_target(target, tau)?))
    }

    /// Sample-dependent ancestry set of an eligible node.
    fn f_in_sample(&self, i: usize) -> PyResult<Vec<usize>> {
        Ok(f_in_sample(&self.inner, i)
            .map_err(err)?
            .into_iter()
            .collect())
    }

    /// Per-node weights under an initial-sample design; zero when not
    /// eligible.
    #[pyo3(signature = (kind, size, target="cnf", tau=None, scheme="in_normalized"))]
    fn weights(
        &self,
        kind: &str,
        size: f64,
        target: &str,
        tau: Option<usize>,
        scheme: &str,
    ) -> PyResult<Vec<f64>> {
        let design = parse_design(kind, size, self.inner.frame_size)?;
        let weighting = sbs_weights(
            &self.inner,
            &design,
            parse_target(target, tau)?,
            parse_scheme(scheme)?,
        )
        .map_err(err)?;
        Ok(weighting.weights)
    }

    fn __repr__(&self) -> String {
        format!(
            "SbsSample(s0={:?}, seed_sample={:?}, observed={})",
            self.inner.s0,
            self.inner.seed_sample,
            self.inner.observed_nodes.len()
        )
    }
}

/// Run T-wave snowball sampling from an initial node set.
#[pyfunction(name = "run_tsbs")]
fn py_run_tsbs(g: &PyGraph, s0: Vec<usize>, t_waves: usize) -> PyResult<PySample> {
    let s0: BTreeSet<usize> = s0.into_iter().collect();
    Ok(PySample {
        inner: run_tsbs(&g.inner, &s0, t_waves).map_err(err)?,
    })
}

/// Probability that the initial sample hits a fixed ancestry set.
#[pyfunction(name = "inclusion_prob")]
fn py_inclusion_prob(f: Vec<usize>, kind: &str, size: f64, frame: usize) -> PyResult<f64> {
    let design = parse_design(kind, size, frame)?;
    inclusion_prob(&f.into_iter().collect(), &design).map_err(err)
}

/// Joint probability that the initial sample hits both ancestry sets.
#[pyfunction(name = "joint_inclusion_prob")]
fn py_joint_inclusion_prob(
    f_i: Vec<usize>,
    f_j: Vec<usize>,
    kind: &str,
    size: f64,
    frame: usize,
) -> PyResult<f64> {
    let design = parse_design(kind, size, frame)?;
    joint_inclusion_prob(
        &f_i.into_iter().collect(),
        &f_j.into_iter().collect(),
        &design,
    )
    .map_err(err)
}

/// Full-graph weighted least squares for the contextual model.
#[pyfunction(name = "full_graph_wls")]
#[pyo3(signature = (g, with_context=true, scheme="in_normalized"))]
fn py_full_graph_wls<'py>(
    py: Python<'py>,
    g: &PyGraph,
    with_context: bool,
    scheme: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let m = InfluenceMatrix::from_graph(&g.inner, parse_scheme(scheme)?);
    let terms = unit_terms_from_graph(&g.inner, &m).map_err(err)?;
    let theta = wls_solve(&terms, &VarianceSpec::Unit, with_context).map_err(err)?;
    theta_to_dict(py, &theta)
}

/// Full-graph profiling grid search for the recursive model.
#[pyfunction(name = "full_graph_grid_search")]
#[pyo3(signature = (g, grid=None, scheme="in_normalized"))]
fn py_full_graph_grid_search<'py>(
    py: Python<'py>,
    g: &PyGraph,
    grid: Option<Vec<f64>>,
    scheme: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let m = InfluenceMatrix::from_graph(&g.inner, parse_scheme(scheme)?);
    let grid = grid.unwrap_or_else(|| default_lambda_grid(&m));
    let terms = unit_terms_from_graph(&g.inner, &m).map_err(err)?;
    let report = grid_search(&terms, &grid, &VarianceSpec::Unit, &LinearC).map_err(err)?;
    let d = theta_to_dict(py, &report.theta)?;
    d.set_item("objective", report.objective)?;
    d.set_item(
        "grid_trace",
        report
            .grid_trace
            .iter()
            .map(|pt| (pt.lambda, pt.objective))
            .collect::<Vec<_>>(),
    )?;
    Ok(d)
}

/// One targeted random walk; returns the extracted states and weights.
#[pyfunction(name = "run_trw")]
#[pyo3(signature = (g, r, n_extract, burn_in=None, thin=1, seed=0, start=0, scheme="in_normalized"))]
#[allow(clippy::too_many_arguments)]
fn py_run_trw<'py>(
    py: Python<'py>,
    g: &PyGraph,
    r: f64,
    n_extract: usize,
    burn_in: Option<usize>,
    thin: usize,
    seed: u64,
    start: usize,
    scheme: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let m = InfluenceMatrix::from_graph(&g.inner, parse_scheme(scheme)?);
    let cfg = WalkConfig {
        r,
        burn_in: burn_in.unwrap_or_else(|| WalkConfig::default_burn_in(g.inner.n())),
        n_extract,
        thin,
        seed,
        replicates: 2,
    };
    let trace = run_trw(&g.inner, &m, &cfg, start).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("states", trace.states.clone())?;
    d.set_item("degrees", trace.degrees.clone())?;
    d.set_item("weights", trw_weights(&trace, &cfg))?;
    Ok(d)
}

/// Replicate-walk estimate of the contextual model with the
/// between-replicate variance.
#[pyfunction(name = "trw_replicate_estimate")]
#[pyo3(signature = (g, r, n_extract, replicates, burn_in=None, thin=1, seed=0, with_context=true, scheme="in_normalized"))]
#[allow(clippy::too_many_arguments)]
fn py_trw_replicate_estimate<'py>(
    py: Python<'py>,
    g: &PyGraph,
    r: f64,
    n_extract: usize,
    replicates: usize,
    burn_in: Option<usize>,
    thin: usize,
    seed: u64,
    with_context: bool,
    scheme: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let m = InfluenceMatrix::from_graph(&g.inner, parse_scheme(scheme)?);
    let cfg = WalkConfig {
        r,
        burn_in: burn_in.unwrap_or_else(|| WalkConfig::default_burn_in(g.inner.n())),
        n_extract,
        thin,
        seed,
        replicates,
    };
    let report = replicate_estimate(&g.inner, &m, &cfg, |terms| {
        wls_solve(terms, &VarianceSpec::Unit, with_context)
    })
    .map_err(err)?;
    let d = theta_to_dict(py, &report.theta)?;
    match &report.variance {
        netfn::estimate::VarianceEstimate::PerComponent(v) => {
            d.set_item("variance", v.clone())?;
        }
        _ => d.set_item("variance", py.None())?,
    }
    d.set_item("replicates_used", report.diagnostics.replicates_used)?;
    Ok(d)
}

/// Weights of one walk trace without rebuilding it: `1 / (n (d_i + r))`.
#[pyfunction(name = "trw_weights_for")]
fn py_trw_weights(degrees: Vec<usize>, r: f64) -> Vec<f64> {
    let n = degrees.len() as f64;
    degrees
        .into_iter()
        .map(|d| 1.0 / (n * (d as f64 + r)))
        .collect()
}

/// Estimate from one realized snowball sample.
#[pyfunction(name = "sbs_estimate")]
#[pyo3(signature = (g, sample, kind, size, mode="cnf", with_context=true, grid=None, scheme="in_normalized"))]
#[allow(clippy::too_many_arguments)]
fn py_sbs_estimate<'py>(
    py: Python<'py>,
    g: &PyGraph,
    sample: &PySample,
    kind: &str,
    size: f64,
    mode: &str,
    with_context: bool,
    grid: Option<Vec<f64>>,
    scheme: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let design = parse_design(kind, size, sample.inner.frame_size)?;
    let target = match mode {
        "cnf" => LearningTarget::Cnf,
        "rnf" => LearningTarget::Rnf,
        _ => return Err(PyValueError::new_err("mode must be 'cnf' or 'rnf'")),
    };
    let weighting =
        sbs_weights(&sample.inner, &design, target, parse_scheme(scheme)?).map_err(err)?;
    match mode {
        "cnf" => {
            let theta =
                wls_solve(&weighting.terms, &VarianceSpec::Unit, with_context).map_err(err)?;
            theta_to_dict(py, &theta)
        }
        _ => {
            let m = InfluenceMatrix::from_graph(&g.inner, parse_scheme(scheme)?);
            let grid = grid.unwrap_or_else(|| default_lambda_grid(&m));
            let report =
                grid_search(&weighting.terms, &grid, &VarianceSpec::Unit, &LinearC).map_err(err)?;
            let d = theta_to_dict(py, &report.theta)?;
            d.set_item("objective", report.objective)?;
            Ok(d)
        }
    }
}

#[pymodule]
fn netfn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyInfluence>()?;
    m.add_class::<PySample>()?;
    m.add_function(wrap_pyfunction!(py_run_tsbs, m)?)?;
    m.add_function(wrap_pyfunction!(py_inclusion_prob, m)?)?;
    m.add_function(wrap_pyfunction!(py_joint_inclusion_prob, m)?)?;
    m.add_function(wrap_pyfunction!(py_full_graph_wls, m)?)?;
    m.add_function(wrap_pyfunction!(py_full_graph_grid_search, m)?)?;
    m.add_function(wrap_pyfunction!(py_run_trw, m)?)?;
    m.add_function(wrap_pyfunction!(py_trw_replicate_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(py_trw_weights, m)?)?;
    m.add_function(wrap_pyfunction!(py_sbs_estimate, m)?)?;
    Ok(())
}
