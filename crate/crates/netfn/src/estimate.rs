//! Estimating-equation scores, solvers, and variance estimators.
//!
//! Works on weighted per-node terms assembled either from the full graph
//! (weights one) or from a sample by the sampling modules. The contextual
//! model has a closed-form weighted least-squares solution; the recursive
//! model is solved by profiling: a closed-form slope for each grid value
//! of the recursion coefficient, keeping the pair that minimises the
//! estimated distance metric.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NetfnError, Result};
use crate::graph::{InfluenceMatrix, ValuedGraph};
use crate::nf::{CModel, Theta};

/// Chosen per-node variance constants `sigma_i^2`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceSpec {
    /// Homoskedastic default, all ones.
    #[default]
    Unit,
    /// Explicit per-node values, indexed by global node id.
    PerNode(Vec<f64>),
}

impl VarianceSpec {
    pub fn sigma2(&self, node: usize) -> f64 {
        match self {
            VarianceSpec::Unit => 1.0,
            VarianceSpec::PerNode(v) => v[node],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let VarianceSpec::PerNode(v) = self {
            for (node, &value) in v.iter().enumerate() {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(NetfnError::BadVariance { node, value });
                }
            }
        }
        Ok(())
    }
}

/// One neighbour of a bundled node, with everything its score term needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborData {
    pub node: usize,
    /// Influence coefficient `m_ij` (zero for pure out-neighbours).
    pub m: f64,
    pub x: Vec<f64>,
    pub y: f64,
    /// `omega_ji` when the edge j -> i exists.
    pub omega_in: Option<f64>,
    /// `omega_ij` when the edge i -> j exists.
    pub omega_out: Option<f64>,
}

/// All locally observed values required for one node's score term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeBundle {
    pub node: usize,
    pub x: Vec<f64>,
    pub y: f64,
    pub neighbors: Vec<NeighborData>,
}

impl NodeBundle {
    /// Contextual feature `z_i`: average of in-neighbour features, zero
    /// vector when there are none.
    pub fn contextual(&self) -> Vec<f64> {
        let p = self.x.len();
        let mut z = vec![0.0; p];
        let mut count = 0usize;
        for nb in &self.neighbors {
            if nb.omega_in.is_some() {
                for (zk, xk) in z.iter_mut().zip(&nb.x) {
                    *zk += xk;
                }
                count += 1;
            }
        }
        if count > 0 {
            let inv = 1.0 / count as f64;
            for zk in &mut z {
                *zk *= inv;
            }
        }
        z
    }

    /// Design row `u_i`: features alone, or features followed by the
    /// contextual part.
    pub fn design_row(&self, with_context: bool) -> Vec<f64> {
        if with_context {
            let mut u = self.x.clone();
            u.extend(self.contextual());
            u
        } else {
            self.x.clone()
        }
    }

    /// `dot-y_i = sum_j m_ij y_j`.
    pub fn y_dot(&self) -> f64 {
        self.neighbors.iter().map(|nb| nb.m * nb.y).sum()
    }

    /// `sum_j m_ij^2 sigma_j^2`, the neighbour part of `sigma_{i+}^2`.
    pub fn m2_sigma2(&self, sigma: &VarianceSpec) -> f64 {
        self.neighbors
            .iter()
            .map(|nb| nb.m * nb.m * sigma.sigma2(nb.node))
            .sum()
    }
}

/// One weighted sample term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedItem {
    pub weight: f64,
    pub bundle: NodeBundle,
}

/// The weighted node terms of a sample estimating equation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightedSampleTerms {
    pub items: Vec<WeightedItem>,
}

impl WeightedSampleTerms {
    pub fn new(items: Vec<WeightedItem>) -> Result<Self> {
        let terms = Self { items };
        terms.validate()?;
        Ok(terms)
    }

    pub fn validate(&self) -> Result<()> {
        for item in &self.items {
            if !(item.weight > 0.0 && item.weight.is_finite()) {
                return Err(NetfnError::BadWeight {
                    node: item.bundle.node,
                    weight: item.weight,
                });
            }
        }
        if let Some(first) = self.items.first() {
            let p = first.bundle.x.len();
            for item in &self.items {
                if item.bundle.x.len() != p {
                    return Err(NetfnError::FeatureDimMismatch {
                        node: item.bundle.node,
                        got: item.bundle.x.len(),
                        expected: p,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.items.first().map_or(0, |it| it.bundle.x.len())
    }

    /// Rescales every weight by `c > 0`; estimators are invariant to this.
    pub fn scale_weights(&self, c: f64) -> Self {
        Self {
            items: self
                .items
                .iter()
                .map(|it| WeightedItem {
                    weight: it.weight * c,
                    bundle: it.bundle.clone(),
                })
                .collect(),
        }
    }
}

/// Assembles one node's bundle from a fully observed graph.
pub fn bundle_from_graph(g: &ValuedGraph, m: &InfluenceMatrix, i: usize) -> Result<NodeBundle> {
    let y = g.outcomes().ok_or(NetfnError::MissingOutcomes)?;
    let neighbors = g
        .neighbors(i)?
        .into_iter()
        .map(|j| NeighborData {
            node: j,
            m: m.entry(i, j),
            x: g.x(j).to_vec(),
            y: y[j],
            omega_in: g.omega(j, i),
            omega_out: g.omega(i, j),
        })
        .collect();
    Ok(NodeBundle {
        node: i,
        x: g.x(i).to_vec(),
        y: y[i],
        neighbors,
    })
}

/// Census terms: every node of the graph with weight one.
pub fn unit_terms_from_graph(g: &ValuedGraph, m: &InfluenceMatrix) -> Result<WeightedSampleTerms> {
    let items = (0..g.n())
        .map(|i| {
            Ok(WeightedItem {
                weight: 1.0,
                bundle: bundle_from_graph(g, m, i)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    WeightedSampleTerms::new(items)
}

/// Residual transforms for the recursive model at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TildeQuantities {
    /// `dot-y_i = sum_j m_ij y_j`
    pub y_dot: f64,
    /// `tilde-y_i = y_i - lambda * dot-y_i`
    pub y_tilde: f64,
    /// `tilde-e_i = tilde-y_i - c(x_i; beta)`
    pub e_tilde: f64,
    /// `sigma_{i+}^2 = sigma_i^2 + lambda^2 sum_j m_ij^2 sigma_j^2`
    pub sigma_plus2: f64,
    /// `sum_j m_ij^2 sigma_j^2`
    pub m2_sigma2: f64,
}

/// Computes the tilde residual quantities for one node bundle.
pub fn tilde_quantities(
    bundle: &NodeBundle,
    lambda: f64,
    beta: &[f64],
    sigma: &VarianceSpec,
    c: &dyn CModel,
) -> TildeQuantities {
    let y_dot = bundle.y_dot();
    let y_tilde = bundle.y - lambda * y_dot;
    let e_tilde = y_tilde - c.value(&bundle.x, beta);
    let m2_sigma2 = bundle.m2_sigma2(sigma);
    let sigma_plus2 = sigma.sigma2(bundle.node) + lambda * lambda * m2_sigma2;
    TildeQuantities {
        y_dot,
        y_tilde,
        e_tilde,
        sigma_plus2,
        m2_sigma2,
    }
}

/// Per-node contextual score `H_i(theta) = u_i (u_i' theta - y_i) / sigma_i^2`.
pub fn node_score_cnf(
    bundle: &NodeBundle,
    theta: &Theta,
    sigma: &VarianceSpec,
) -> Result<DVector<f64>> {
    let Theta::Cnf { beta, gamma } = theta else {
        return Err(NetfnError::DimMismatch {
            context: "CNF score requires a CNF theta",
            got: 0,
            expected: 0,
        });
    };
    let with_context = !gamma.is_empty();
    let u = bundle.design_row(with_context);
    let dim = beta.len() + gamma.len();
    if u.len() != dim {
        return Err(NetfnError::DimMismatch {
            context: "design row vs theta",
            got: u.len(),
            expected: dim,
        });
    }
    let flat: Vec<f64> = beta.iter().chain(gamma).copied().collect();
    let resid: f64 = u.iter().zip(&flat).map(|(a, b)| a * b).sum::<f64>() - bundle.y;
    let s2 = sigma.sigma2(bundle.node);
    Ok(DVector::from_iterator(
        dim,
        u.iter().map(|&uk| uk * resid / s2),
    ))
}

/// Weighted contextual score `sum_i w_i H_i(theta)`.
pub fn score_cnf(
    terms: &WeightedSampleTerms,
    theta: &Theta,
    sigma: &VarianceSpec,
) -> Result<DVector<f64>> {
    let mut total = DVector::zeros(theta.dim());
    for item in &terms.items {
        total += item.weight * node_score_cnf(&item.bundle, theta, sigma)?;
    }
    Ok(total)
}

/// Per-node recursive score, stacked `(H_i(beta), H_i(lambda))`.
pub fn node_score_rnf(
    bundle: &NodeBundle,
    theta: &Theta,
    sigma: &VarianceSpec,
    c: &dyn CModel,
) -> Result<DVector<f64>> {
    let Theta::Rnf { beta, lambda } = theta else {
        return Err(NetfnError::DimMismatch {
            context: "RNF score requires an RNF theta",
            got: 0,
            expected: 0,
        });
    };
    let tq = tilde_quantities(bundle, *lambda, beta, sigma, c);
    let inv_s2 = 1.0 / tq.sigma_plus2;
    let grad_c = c.grad(&bundle.x, beta);
    let p = beta.len();
    let mut h = DVector::zeros(p + 1);
    for (k, gk) in grad_c.iter().enumerate() {
        h[k] = inv_s2 * gk * (-tq.e_tilde);
    }
    h[p] = -inv_s2 * tq.e_tilde * tq.y_dot
        - lambda * inv_s2 * inv_s2 * tq.e_tilde * tq.e_tilde * tq.m2_sigma2;
    Ok(h)
}

/// Weighted recursive score `sum_i w_i (H_i(beta), H_i(lambda))`.
pub fn score_rnf(
    terms: &WeightedSampleTerms,
    theta: &Theta,
    sigma: &VarianceSpec,
    c: &dyn CModel,
) -> Result<DVector<f64>> {
    let mut total = DVector::zeros(theta.dim());
    for item in &terms.items {
        total += item.weight * node_score_rnf(&item.bundle, theta, sigma, c)?;
    }
    Ok(total)
}

/// Generic weighted least squares on prepared rows.
fn solve_wls_rows(rows: &[(f64, Vec<f64>, f64)], dim: usize) -> Result<Vec<f64>> {
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for (w, u, y) in rows {
        for a in 0..dim {
            rhs[a] += w * u[a] * y;
            for b in 0..dim {
                gram[(a, b)] += w * u[a] * u[b];
            }
        }
    }
    match gram.clone().lu().solve(&rhs) {
        Some(sol) if sol.iter().all(|v| v.is_finite()) => Ok(sol.as_slice().to_vec()),
        _ => Err(NetfnError::SingularGram {
            rank: gram.rank(1e-12),
            dim,
        }),
    }
}

/// Closed-form weighted least squares for the contextual model.
///
/// With `with_context` the design row is `(x_i, z_i)`; without it the
/// contextual part is dropped and `gamma` comes back empty. Weights enter
/// as `w_i / sigma_i^2`; rescaling all `w_i` by a constant changes nothing.
pub fn wls_solve(
    terms: &WeightedSampleTerms,
    sigma: &VarianceSpec,
    with_context: bool,
) -> Result<Theta> {
    sigma.validate()?;
    terms.validate()?;
    let p = terms.feature_dim();
    let dim = if with_context { 2 * p } else { p };
    if dim == 0 || terms.is_empty() {
        return Err(NetfnError::SingularGram { rank: 0, dim });
    }
    let rows: Vec<(f64, Vec<f64>, f64)> = terms
        .items
        .iter()
        .map(|it| {
            (
                it.weight / sigma.sigma2(it.bundle.node),
                it.bundle.design_row(with_context),
                it.bundle.y,
            )
        })
        .collect();
    let sol = solve_wls_rows(&rows, dim)?;
    Ok(Theta::Cnf {
        beta: sol[..p].to_vec(),
        gamma: sol[p..].to_vec(),
    })
}

/// Profile slope for a fixed recursion coefficient: weighted least squares
/// of `tilde-y_i` on `x_i` with weights `w_i / sigma_{i+}^2`.
///
/// Requires a linear base function.
pub fn profile_beta(
    terms: &WeightedSampleTerms,
    lambda: f64,
    sigma: &VarianceSpec,
    c: &dyn CModel,
) -> Result<Vec<f64>> {
    if !c.is_linear() {
        return Err(NetfnError::BadConfig(
            "profiling requires a linear base function".into(),
        ));
    }
    sigma.validate()?;
    let p = terms.feature_dim();
    if p == 0 || terms.is_empty() {
        return Err(NetfnError::SingularGram { rank: 0, dim: p });
    }
    let rows: Vec<(f64, Vec<f64>, f64)> = terms
        .items
        .iter()
        .map(|it| {
            let tq = tilde_quantities(&it.bundle, lambda, &vec![0.0; p], sigma, c);
            (it.weight / tq.sigma_plus2, it.bundle.x.clone(), tq.y_tilde)
        })
        .collect();
    solve_wls_rows(&rows, p)
}

/// Estimated distance metric `D-hat = sum_i w_i tilde-e_i^2 / (2 sigma_{i+}^2)`.
pub fn objective_rnf(
    terms: &WeightedSampleTerms,
    lambda: f64,
    beta: &[f64],
    sigma: &VarianceSpec,
    c: &dyn CModel,
) -> f64 {
    terms
        .items
        .iter()
        .map(|it| {
            let tq = tilde_quantities(&it.bundle, lambda, beta, sigma, c);
            it.weight * tq.e_tilde * tq.e_tilde / (2.0 * tq.sigma_plus2)
        })
        .sum()
}

/// One evaluated grid point of the profiling search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub beta: Vec<f64>,
    pub objective: f64,
    pub feasible: bool,
}

/// Solver diagnostics carried on an estimate report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub grid_points_evaluated: usize,
    pub grid_points_infeasible: usize,
    pub replicates_used: usize,
    pub replicates_dropped: usize,
    pub dropped_pairs: usize,
    pub messages: Vec<String>,
}

/// Variance attached to an estimate: absent, componentwise, or a matrix.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceEstimate {
    #[default]
    None,
    PerComponent(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

/// A solved estimate with variance, objective, and trace diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub theta: Theta,
    pub variance: VarianceEstimate,
    /// Value of the estimated distance metric at the solution, when the
    /// solver minimises one.
    pub objective: Option<f64>,
    pub grid_trace: Vec<GridPoint>,
    pub diagnostics: Diagnostics,
    pub config_echo: serde_json::Value,
}

/// Profiling grid search for the recursive model.
///
/// Every grid value is profiled to its closed-form slope and scored by the
/// estimated metric; the minimising pair wins, exact ties going to the
/// smaller `|lambda|`. Grid points whose profile solve fails are recorded
/// as infeasible.
pub fn grid_search(
    terms: &WeightedSampleTerms,
    grid: &[f64],
    sigma: &VarianceSpec,
    c: &dyn CModel,
) -> Result<EstimateReport> {
    if grid.is_empty() {
        return Err(NetfnError::EmptyGrid);
    }
    terms.validate()?;
    let mut trace = Vec::with_capacity(grid.len());
    let mut best: Option<usize> = None;
    let mut infeasible = 0usize;
    for &lambda in grid {
        match profile_beta(terms, lambda, sigma, c) {
            Ok(beta) => {
                let objective = objective_rnf(terms, lambda, &beta, sigma, c);
                trace.push(GridPoint {
                    lambda,
                    beta,
                    objective,
                    feasible: true,
                });
                let idx = trace.len() - 1;
                best = Some(match best {
                    None => idx,
                    Some(b) => {
                        let cur = &trace[idx];
                        let old = &trace[b];
                        if cur.objective < old.objective
                            || (cur.objective == old.objective
                                && cur.lambda.abs() < old.lambda.abs())
                        {
                            idx
                        } else {
                            b
                        }
                    }
                });
            }
            Err(_) => {
                infeasible += 1;
                trace.push(GridPoint {
                    lambda,
                    beta: Vec::new(),
                    objective: f64::NAN,
                    feasible: false,
                });
            }
        }
    }
    let Some(best) = best else {
        return Err(NetfnError::AllGridInfeasible(grid.len()));
    };
    let winner = trace[best].clone();
    Ok(EstimateReport {
        theta: Theta::Rnf {
            beta: winner.beta,
            lambda: winner.lambda,
        },
        variance: VarianceEstimate::None,
        objective: Some(winner.objective),
        grid_trace: trace,
        diagnostics: Diagnostics {
            grid_points_evaluated: grid.len(),
            grid_points_infeasible: infeasible,
            ..Diagnostics::default()
        },
        config_echo: serde_json::json!({
            "solver": "grid_profile",
            "grid_len": grid.len(),
            "sigma": sigma,
        }),
    })
}

/// Derivative of the weighted score in `theta`.
///
/// Contextual: the exact `sum_i w_i u_i u_i' / sigma_i^2`. Recursive:
/// central finite differences of the score, with the step shrunk when a
/// feasibility bound on `lambda` is supplied and would be crossed.
pub fn score_derivative(
    terms: &WeightedSampleTerms,
    theta: &Theta,
    sigma: &VarianceSpec,
    c: &dyn CModel,
    lambda_bound: Option<f64>,
) -> Result<DMatrix<f64>> {
    match theta {
        Theta::Cnf { beta, gamma } => {
            let with_context = !gamma.is_empty();
            let dim = beta.len() + gamma.len();
            let mut j = DMatrix::zeros(dim, dim);
            for item in &terms.items {
                let u = item.bundle.design_row(with_context);
                if u.len() != dim {
                    return Err(NetfnError::DimMismatch {
                        context: "design row vs theta",
                        got: u.len(),
                        expected: dim,
                    });
                }
                let w = item.weight / sigma.sigma2(item.bundle.node);
                for a in 0..dim {
                    for b in 0..dim {
                        j[(a, b)] += w * u[a] * u[b];
                    }
                }
            }
            Ok(j)
        }
        Theta::Rnf { beta, lambda } => {
            let dim = beta.len() + 1;
            let flat = theta.as_flat();
            let mut j = DMatrix::zeros(dim, dim);
            for k in 0..dim {
                let mut h = f64::EPSILON.powf(1.0 / 3.0) * flat[k].abs().max(1.0);
                if k == dim - 1 {
                    if let Some(bound) = lambda_bound {
                        let room = bound - lambda.abs();
                        if room <= 0.0 {
                            return Err(NetfnError::NormRestriction {
                                rho: lambda.abs() / bound,
                            });
                        }
                        h = h.min(0.5 * room);
                    }
                }
                let mut plus = flat.clone();
                plus[k] += h;
                let mut minus = flat.clone();
                minus[k] -= h;
                let sp = score_rnf(terms, &theta.from_flat(&plus)?, sigma, c)?;
                let sm = score_rnf(terms, &theta.from_flat(&minus)?, sigma, c)?;
                let col = (sp - sm) / (2.0 * h);
                j.set_column(k, &col);
            }
            Ok(j)
        }
    }
}

/// Joint Newton root-finding on the stacked recursive score; the optional
/// cross-check to the profiling grid search. Starts from `init` (usually
/// the grid winner) and iterates `theta <- theta - J^{-1} H(theta)` with a
/// finite-difference Jacobian until the score max-norm drops below `tol`.
pub fn newton_solve_rnf(
    terms: &WeightedSampleTerms,
    init: &Theta,
    sigma: &VarianceSpec,
    c: &dyn CModel,
    lambda_bound: Option<f64>,
) -> Result<(Theta, usize)> {
    const MAX_ITER: usize = 50;
    const TOL: f64 = 1e-11;
    let Theta::Rnf { .. } = init else {
        return Err(NetfnError::DimMismatch {
            context: "newton solver requires an RNF theta",
            got: 0,
            expected: 0,
        });
    };
    let mut theta = init.clone();
    for iter in 0..MAX_ITER {
        let h = score_rnf(terms, &theta, sigma, c)?;
        if h.amax() < TOL {
            return Ok((theta, iter));
        }
        let jac = score_derivative(terms, &theta, sigma, c, lambda_bound)?;
        let step = jac.clone().lu().solve(&h).ok_or(NetfnError::SingularGram {
            rank: jac.rank(1e-12),
            dim: jac.nrows(),
        })?;
        let mut flat = theta.as_flat();
        for (fk, sk) in flat.iter_mut().zip(step.iter()) {
            *fk -= sk;
        }
        if let Some(bound) = lambda_bound {
            let last = flat.len() - 1;
            flat[last] = flat[last].clamp(-0.999 * bound, 0.999 * bound);
        }
        theta = theta.from_flat(&flat)?;
    }
    Err(NetfnError::IterationCap {
        cap: MAX_ITER,
        residual: score_rnf(terms, &theta, sigma, c)?.amax(),
    })
}

/// Per-item residuals at a solution: `(node, weight, residual)` rows with
/// the plain residual for the contextual model and the tilde residual for
/// the recursive one.
pub fn residuals(
    terms: &WeightedSampleTerms,
    theta: &Theta,
    sigma: &VarianceSpec,
    c: &dyn CModel,
) -> Result<Vec<(usize, f64, f64)>> {
    terms
        .items
        .iter()
        .map(|it| {
            let r = match theta {
                Theta::Cnf { beta, gamma } => {
                    let u = it.bundle.design_row(!gamma.is_empty());
                    let flat: Vec<f64> = beta.iter().chain(gamma).copied().collect();
                    if u.len() != flat.len() {
                        return Err(NetfnError::DimMismatch {
                            context: "design row vs theta",
                            got: u.len(),
                            expected: flat.len(),
                        });
                    }
                    it.bundle.y - u.iter().zip(&flat).map(|(a, b)| a * b).sum::<f64>()
                }
                Theta::Rnf { beta, lambda } => {
                    tilde_quantities(&it.bundle, *lambda, beta, sigma, c).e_tilde
                }
            };
            Ok((it.bundle.node, it.weight, r))
        })
        .collect()
}

/// Provider of first- and second-order eligibility probabilities.
pub trait PairInclusion {
    /// `Pr(delta_i = 1)`.
    fn first_order(&self, i: usize) -> f64;
    /// `Pr(delta_i delta_j = 1)`.
    fn joint(&self, i: usize, j: usize) -> f64;
}

/// A sandwich variance matrix with pair-drop diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichResult {
    pub matrix: DMatrix<f64>,
    pub dropped_pairs: usize,
}

fn invert_jacobian(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    j.clone().try_inverse().ok_or(NetfnError::SingularGram {
        rank: j.rank(1e-12),
        dim: j.nrows(),
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Population sandwich variance over all nodes of the graph.
///
/// `scores[i]` is `H_i(theta_0)` and `jacobian_sum` is `sum_i H_i'(theta_0)`,
/// both evaluated with unit weights on the full graph; the provider supplies
/// the design probabilities. `Delta_ij = w_i w_j Pr(delta_i delta_j = 1) - 1`
/// with `w_i = 1 / Pr(delta_i = 1)`.
pub fn sandwich_variance_population(
    scores: &[DVector<f64>],
    jacobian_sum: &DMatrix<f64>,
    incl: &dyn PairInclusion,
) -> Result<SandwichResult> {
    let dim = jacobian_sum.nrows();
    let n = scores.len();
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let pi = incl.first_order(i);
        if pi <= 0.0 || pi.is_nan() {
            return Err(NetfnError::ZeroInclusionProbability(i));
        }
        weights.push(1.0 / pi);
    }
    let mut middle = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            let delta = weights[i] * weights[j] * incl.joint(i, j) - 1.0;
            if delta != 0.0 {
                middle += delta * &scores[i] * scores[j].transpose();
            }
        }
    }
    let j_inv = invert_jacobian(jacobian_sum)?;
    let v = &j_inv * middle * j_inv.transpose();
    Ok(SandwichResult {
        matrix: symmetrize(v),
        dropped_pairs: 0,
    })
}

/// Plug-in sandwich estimator from one realized sample.
///
/// `scores[k]` is `H_i(theta-hat)` for the k-th weighted item and
/// `jacobian_hat = sum_k w_k H_k'(theta-hat)`. Every observed pair is
/// reweighted by `1 / Pr(delta_i delta_j = 1)`; a pair whose joint
/// probability is zero is dropped and counted.
pub fn sandwich_variance_plugin(
    terms: &WeightedSampleTerms,
    scores: &[DVector<f64>],
    jacobian_hat: &DMatrix<f64>,
    incl: &dyn PairInclusion,
) -> Result<SandwichResult> {
    let dim = jacobian_hat.nrows();
    if scores.len() != terms.len() {
        return Err(NetfnError::DimMismatch {
            context: "scores vs terms",
            got: scores.len(),
            expected: terms.len(),
        });
    }
    let mut middle = DMatrix::<f64>::zeros(dim, dim);
    let mut dropped = 0usize;
    for (a, ia) in terms.items.iter().enumerate() {
        for (b, ib) in terms.items.iter().enumerate() {
            let pij = incl.joint(ia.bundle.node, ib.bundle.node);
            if pij <= 0.0 || pij.is_nan() {
                dropped += 1;
                continue;
            }
            let delta = ia.weight * ib.weight * pij - 1.0;
            middle += (delta / pij) * &scores[a] * scores[b].transpose();
        }
    }
    let j_inv = invert_jacobian(jacobian_hat)?;
    let v = &j_inv * middle * j_inv.transpose();
    Ok(SandwichResult {
        matrix: symmetrize(v),
        dropped_pairs: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::WeightScheme;
    use crate::nf::LinearC;
    use crate::synth::{gen_er_digraph, gen_outcomes, ModelSpec};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn toy_terms(seed: u64, n: usize, p: usize) -> WeightedSampleTerms {
        let g = gen_er_digraph(n, 0.25, p, seed).unwrap();
        let g = gen_outcomes(
            &g,
            &ModelSpec::Rnf {
                beta: (0..p).map(|k| 0.5 + k as f64).collect(),
                lambda: 0.4,
                noise_sd: 0.7,
                scheme: WeightScheme::InNormalized,
            },
            seed ^ 0x9e37,
        )
        .unwrap();
        let m = InfluenceMatrix::from_graph(&g, WeightScheme::InNormalized);
        unit_terms_from_graph(&g, &m).unwrap()
    }

    #[test]
    fn tilde_quantities_examples() {
        // lambda = 0 reduces to the plain residual.
        let bundle = NodeBundle {
            node: 0,
            x: vec![1.0],
            y: 3.0,
            neighbors: vec![NeighborData {
                node: 1,
                m: 1.0,
                x: vec![0.0],
                y: 2.0,
                omega_in: Some(1.0),
                omega_out: Some(1.0),
            }],
        };
        let tq0 = tilde_quantities(&bundle, 0.0, &[1.0], &VarianceSpec::Unit, &LinearC);
        assert_abs_diff_eq!(tq0.e_tilde, 3.0 - 1.0);
        assert_abs_diff_eq!(tq0.sigma_plus2, 1.0);

        // Paired nodes with m = 1, unit variance, lambda = 1/2.
        let tq = tilde_quantities(&bundle, 0.5, &[1.0], &VarianceSpec::Unit, &LinearC);
        assert_abs_diff_eq!(tq.sigma_plus2, 1.25);
        assert_abs_diff_eq!(tq.y_dot, 2.0);
        assert_abs_diff_eq!(tq.y_tilde, 2.0);

        // An isolated node has empty sums for any lambda.
        let iso = NodeBundle {
            node: 0,
            x: vec![2.0],
            y: 5.0,
            neighbors: vec![],
        };
        let tqi = tilde_quantities(&iso, 0.9, &[1.0], &VarianceSpec::Unit, &LinearC);
        assert_abs_diff_eq!(tqi.y_dot, 0.0);
        assert_abs_diff_eq!(tqi.e_tilde, 3.0);
        assert_abs_diff_eq!(tqi.sigma_plus2, 1.0);
    }

    #[test]
    fn wls_recovers_noiseless_theta() {
        let g = gen_er_digraph(25, 0.2, 2, 11).unwrap();
        let spec = ModelSpec::Cnf {
            beta: vec![1.5, -0.5],
            gamma: vec![0.8, 0.2],
            noise_sd: 0.0,
        };
        let g = gen_outcomes(&g, &spec, 12).unwrap();
        let m = InfluenceMatrix::from_graph(&g, WeightScheme::InNormalized);
        let terms = unit_terms_from_graph(&g, &m).unwrap();
        let theta = wls_solve(&terms, &VarianceSpec::Unit, true).unwrap();
        let Theta::Cnf { beta, gamma } = theta else {
            panic!()
        };
        assert_abs_diff_eq!(beta[0], 1.5, epsilon = 1e-10);
        assert_abs_diff_eq!(beta[1], -0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(gamma[0], 0.8, epsilon = 1e-10);
        assert_abs_diff_eq!(gamma[1], 0.2, epsilon = 1e-10);
    }

    #[test]
    fn wls_weight_scale_invariance() {
        let terms = toy_terms(3, 20, 2);
        let a = wls_solve(&terms, &VarianceSpec::Unit, true).unwrap();
        let b = wls_solve(&terms.scale_weights(37.5), &VarianceSpec::Unit, true).unwrap();
        for (x, y) in a.as_flat().iter().zip(b.as_flat()) {
            assert_abs_diff_eq!(x, &y, epsilon = 1e-12);
        }
    }

    /// Plain Gauss-Jordan inversion, independent of the solver path.
    fn invert_gj(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        let mut aug: Vec<Vec<f64>> = a
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut r = row.clone();
                r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                r
            })
            .collect();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))
                .unwrap();
            aug.swap(col, pivot);
            let p = aug[col][col];
            for v in aug[col].iter_mut() {
                *v /= p;
            }
            for row in 0..n {
                if row != col {
                    let f = aug[row][col];
                    let pivot_row = aug[col].clone();
                    for (v, pv) in aug[row].iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        aug.into_iter().map(|r| r[n..].to_vec()).collect()
    }

    #[test]
    fn wls_matches_normal_equation_oracle() {
        for seed in [1u64, 2, 3, 4, 5] {
            let g = gen_er_digraph(30, 0.15, 2, seed).unwrap();
            let spec = ModelSpec::Cnf {
                beta: vec![1.0, 2.0],
                gamma: vec![-0.3, 0.7],
                noise_sd: 0.5,
            };
            let g = gen_outcomes(&g, &spec, seed + 100).unwrap();
            let m = InfluenceMatrix::from_graph(&g, WeightScheme::InNormalized);
            let terms = unit_terms_from_graph(&g, &m).unwrap();
            let theta = wls_solve(&terms, &VarianceSpec::Unit, true).unwrap();

            // Oracle: build the normal equations by hand and invert explicitly.
            let dim = 4;
            let mut gram = vec![vec![0.0; dim]; dim];
            let mut rhs = vec![0.0; dim];
            for it in &terms.items {
                let u = it.bundle.design_row(true);
                for a in 0..dim {
                    rhs[a] += u[a] * it.bundle.y;
                    for b in 0..dim {
                        gram[a][b] += u[a] * u[b];
                    }
                }
            }
            let inv = invert_gj(&gram);
            let expect: Vec<f64> = (0..dim)
                .map(|a| (0..dim).map(|b| inv[a][b] * rhs[b]).sum())
                .collect();
            for (got, want) in theta.as_flat().iter().zip(&expect) {
                assert_abs_diff_eq!(got, want, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn wls_singular_reports_rank() {
        // Two identical nodes cannot identify a two-dimensional theta.
        let bundle = NodeBundle {
            node: 0,
            x: vec![1.0, 1.0],
            y: 2.0,
            neighbors: vec![],
        };
        let terms = WeightedSampleTerms::new(vec![
            WeightedItem {
                weight: 1.0,
                bundle: bundle.clone(),
            },
            WeightedItem {
                weight: 2.0,
                bundle,
            },
        ])
        .unwrap();
        match wls_solve(&terms, &VarianceSpec::Unit, false) {
            Err(NetfnError::SingularGram { rank, dim }) => {
                assert_eq!(rank, 1);
                assert_eq!(dim, 2);
            }
            other => panic!("expected singular Gram, got {other:?}"),
        }
    }

    #[test]
    fn score_cnf_zero_at_wls_solution() {
        let terms = toy_terms(7, 25, 2);
        let theta = wls_solve(&terms, &VarianceSpec::Unit, true).unwrap();
        let score = score_cnf(&terms, &theta, &VarianceSpec::Unit).unwrap();
        assert!(score.amax() < 1e-10, "score at WLS solution: {score}");
    }

    #[test]
    fn score_cnf_single_node_direction() {
        let terms = toy_terms(9, 12, 1);
        let single = WeightedSampleTerms::new(vec![terms.items[3].clone()]).unwrap();
        let theta = Theta::Cnf {
            beta: vec![0.4],
            gamma: vec![-0.2],
        };
        let s = score_cnf(&single, &theta, &VarianceSpec::Unit).unwrap();
        let u = single.items[0].bundle.design_row(true);
        // Score is parallel to the single design row.
        let cross = s[0] * u[1] - s[1] * u[0];
        assert_abs_diff_eq!(cross, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn score_cnf_matches_finite_differences() {
        let terms = toy_terms(21, 18, 2);
        let theta = Theta::Cnf {
            beta: vec![0.3, -0.6],
            gamma: vec![0.1, 0.9],
        };
        let sigma = VarianceSpec::Unit;
        let analytic = score_cnf(&terms, &theta, &sigma).unwrap();
        let objective = |flat: &[f64]| -> f64 {
            let th = theta.from_flat(flat).unwrap();
            let Theta::Cnf { beta, gamma } = &th else {
                unreachable!()
            };
            terms
                .items
                .iter()
                .map(|it| {
                    let u = it.bundle.design_row(true);
                    let mu: f64 = u
                        .iter()
                        .zip(beta.iter().chain(gamma))
                        .map(|(a, b)| a * b)
                        .sum();
                    let e = it.bundle.y - mu;
                    it.weight * e * e / (2.0 * sigma.sigma2(it.bundle.node))
                })
                .sum()
        };
        let flat = theta.as_flat();
        for k in 0..flat.len() {
            let h = 1e-6;
            let mut plus = flat.clone();
            plus[k] += h;
            let mut minus = flat.clone();
            minus[k] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            assert_abs_diff_eq!(analytic[k], fd, epsilon = 1e-5);
        }
    }

    #[test]
    fn score_rnf_gradient_identity_random_bundles() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..100 {
            let p = 1 + (trial % 3);
            let deg = trial % 4;
            let x: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
            let neighbors: Vec<NeighborData> = (0..deg)
                .map(|k| NeighborData {
                    node: k + 1,
                    m: rng.random_range(0.0..1.0),
                    x: (0..p).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    y: rng.random_range(-3.0..3.0),
                    omega_in: Some(1.0),
                    omega_out: None,
                })
                .collect();
            let bundle = NodeBundle {
                node: 0,
                x,
                y: rng.random_range(-3.0..3.0),
                neighbors,
            };
            let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.5..1.5)).collect();
            let lambda: f64 = rng.random_range(-0.9..0.9);
            let sigma = VarianceSpec::Unit;
            let theta = Theta::Rnf {
                beta: beta.clone(),
                lambda,
            };
            let analytic = node_score_rnf(&bundle, &theta, &sigma, &LinearC).unwrap();

            let objective = |b: &[f64], l: f64| -> f64 {
                let tq = tilde_quantities(&bundle, l, b, &sigma, &LinearC);
                tq.e_tilde * tq.e_tilde / (2.0 * tq.sigma_plus2)
            };
            let denom = analytic.amax().max(1e-9);
            for k in 0..p {
                let h = 1e-6 * beta[k].abs().max(1.0);
                let mut bp = beta.clone();
                bp[k] += h;
                let mut bm = beta.clone();
                bm[k] -= h;
                let fd = (objective(&bp, lambda) - objective(&bm, lambda)) / (2.0 * h);
                assert!(
                    (analytic[k] - fd).abs() / denom < 1e-6,
                    "beta[{k}] trial {trial}: analytic {} vs fd {fd}",
                    analytic[k]
                );
            }
            let h = 1e-6 * lambda.abs().max(1.0);
            let fd = (objective(&beta, lambda + h) - objective(&beta, lambda - h)) / (2.0 * h);
            assert!(
                (analytic[p] - fd).abs() / denom < 1e-6,
                "lambda trial {trial}: analytic {} vs fd {fd}",
                analytic[p]
            );
        }
    }

    #[test]
    fn score_rnf_zero_at_truth_noiseless() {
        let g = gen_er_digraph(20, 0.2, 1, 5).unwrap();
        let spec = ModelSpec::Rnf {
            beta: vec![1.2],
            lambda: 0.5,
            noise_sd: 0.0,
            scheme: WeightScheme::InNormalized,
        };
        let g = gen_outcomes(&g, &spec, 6).unwrap();
        let m = InfluenceMatrix::from_graph(&g, WeightScheme::InNormalized);
        let terms = unit_terms_from_graph(&g, &m).unwrap();
        let theta = Theta::Rnf {
            beta: vec![1.2],
            lambda: 0.5,
        };
        let s = score_rnf(&terms, &theta, &VarianceSpec::Unit, &LinearC).unwrap();
        assert!(s.amax() < 1e-9, "score at truth: {s}");
    }

    #[test]
    fn score_rnf_lambda_zero_isolated_matches_cnf() {
        let g = ValuedGraph::new(3, &[], vec![vec![2.0], vec![-1.0], vec![0.5]], None)
            .unwrap()
            .with_outcomes(vec![1.0, 2.0, 3.0])
            .unwrap();
        let m = InfluenceMatrix::from_graph(&g, WeightScheme::InNormalized);
        let terms = unit_terms_from_graph(&g, &m).unwrap();
        let rnf = score_rnf(
            &terms,
            &Theta::Rnf {
                beta: vec![0.7],
                lambda: 0.0,
            },
            &VarianceSpec::Unit,
            &LinearC,
        )
        .unwrap();
        let cnf = score_cnf(
            &terms,
            &Theta::Cnf {
                beta: vec![0.7],
                gamma: vec![],
            },
            &VarianceSpec::Unit,
        )
        .unwrap();
        assert_abs_diff_eq!(rnf[0], cnf[0], epsilon = 1e-12);
    }

    #[test]
    fn profile_beta_first_order_condition() {
        let terms = toy_terms(13, 22, 2);
        let sigma = VarianceSpec::Unit;
        for lambda in [-0.4, 0.0, 0.6] {
            let beta = profile_beta(&terms, lambda, &sigma, &LinearC).unwrap();
            let theta = Theta::Rnf {
                beta: beta.clone(),
                lambda,
            };
            let s = score_rnf(&terms, &theta, &sigma, &LinearC).unwrap();
            // The beta block of the score vanishes at the profile solution.
            for k in 0..beta.len() {
                assert_abs_diff_eq!(s[k], 0.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn profile_beta_at_zero_is_plain_wls() {
        let terms = toy_terms(17, 20, 2);
        let beta = profile_beta(&terms, 0.0, &VarianceSpec::Unit, &LinearC).unwrap();
        let theta = wls_solve(&terms, &VarianceSpec::Unit, false).unwrap();
        let Theta::Cnf { beta: b, .. } = theta else {
            panic!()
        };
        for (a, c) in beta.iter().zip(&b) {
            assert_abs_diff_eq!(a, c, epsilon = 1e-12);
        }
    }

    #[test]
    fn grid_search_recovers_noiseless_truth() {
        let g = gen_er_digraph(24, 0.2, 1, 31).unwrap();
        let spec = ModelSpec::Rnf {
            beta: vec![0.9],
            lambda: 0.5,
            noise_sd: 0.0,
            scheme: WeightScheme::InNormalized,
        };
        let g = gen_outcomes(&g, &spec, 32).unwrap();
        let m = InfluenceMatrix::from_graph(&g, WeightScheme::InNormalized);
        let terms = unit_terms_from_graph(&g, &m).unwrap();
        let grid = vec![-0.5, -0.25, 0.0, 0.25, 0.5, 0.75];
        let report = grid_search(&terms, &grid, &VarianceSpec::Unit, &LinearC).unwrap();
        let Theta::Rnf { beta, lambda } = &report.theta else {
            panic!()
        };
        assert_abs_diff_eq!(*lambda, 0.5, epsilon = 0.0);
        assert_abs_diff_eq!(beta[0], 0.9, epsilon = 1e-8);
        assert!(report.objective.unwrap() <= 1e-16);
    }

    #[test]
    fn grid_search_singleton_zero_is_wls() {
        let terms = toy_terms(23, 18, 2);
        let report = grid_search(&terms, &[0.0], &VarianceSpec::Unit, &LinearC).unwrap();
        let Theta::Rnf { beta, lambda } = &report.theta else {
            panic!()
        };
        assert_eq!(*lambda, 0.0);
        let plain = profile_beta(&terms, 0.0, &VarianceSpec::Unit, &LinearC).unwrap();
        assert_eq!(beta, &plain);
    }

    #[test]
    fn grid_search_matches_direct_recomputation() {
        let terms = toy_terms(29, 26, 1);
        let grid: Vec<f64> = (0..21).map(|i| -0.8 + 0.08 * i as f64).collect();
        let report = grid_search(&terms, &grid, &VarianceSpec::Unit, &LinearC).unwrap();

        // Independent oracle: direct summation of the estimated metric for
        // each grid value using a hand-rolled profile solve.
        let mut best = (f64::INFINITY, f64::NAN);
        for &lambda in &grid {
            let mut sxx = 0.0;
            let mut sxy = 0.0;
            for it in &terms.items {
                let ydot: f64 = it.bundle.neighbors.iter().map(|nb| nb.m * nb.y).sum();
                let ytilde = it.bundle.y - lambda * ydot;
                let m2: f64 = it.bundle.neighbors.iter().map(|nb| nb.m * nb.m).sum();
                let s2 = 1.0 + lambda * lambda * m2;
                let x = it.bundle.x[0];
                sxx += it.weight / s2 * x * x;
                sxy += it.weight / s2 * x * ytilde;
            }
            let beta = sxy / sxx;
            let mut obj = 0.0;
            for it in &terms.items {
                let ydot: f64 = it.bundle.neighbors.iter().map(|nb| nb.m * nb.y).sum();
                let e = it.bundle.y - lambda * ydot - beta * it.bundle.x[0];
                let m2: f64 = it.bundle.neighbors.iter().map(|nb| nb.m * nb.m).sum();
                let s2 = 1.0 + lambda * lambda * m2;
                obj += it.weight * e * e / (2.0 * s2);
            }
            if obj < best.0 {
                best = (obj, lambda);
            }
        }
        let Theta::Rnf { lambda, .. } = &report.theta else {
            panic!()
        };
        assert_eq!(*lambda, best.1);
        assert_abs_diff_eq!(report.objective.unwrap(), best.0, epsilon = 1e-10);
    }

    #[test]
    fn newton_cross_checks_grid_search() {
        let g = gen_er_digraph(30, 0.15, 1, 61).unwrap();
        let g = gen_outcomes(
            &g,
            &ModelSpec::Rnf {
                beta: vec![1.1],
                lambda: 0.45,
                noise_sd: 0.4,
                scheme: WeightScheme::InNormalized,
            },
            62,
        )
        .unwrap();
        let m = InfluenceMatrix::from_graph(&g, WeightScheme::InNormalized);
        let terms = unit_terms_from_graph(&g, &m).unwrap();
        let grid: Vec<f64> = (0..41).map(|k| -0.98 + 0.049 * k as f64).collect();
        let spacing = grid[1] - grid[0];
        let report = grid_search(&terms, &grid, &VarianceSpec::Unit, &LinearC).unwrap();
        let (refined, iters) = newton_solve_rnf(
            &terms,
            &report.theta,
            &VarianceSpec::Unit,
            &LinearC,
            Some(1.0),
        )
        .unwrap();
        assert!(iters < 50);
        let s = score_rnf(&terms, &refined, &VarianceSpec::Unit, &LinearC).unwrap();
        assert!(s.amax() < 1e-10, "newton root has residual {}", s.amax());
        let (
            Theta::Rnf { lambda: lg, .. },
            Theta::Rnf {
                beta: bn,
                lambda: ln,
            },
        ) = (&report.theta, &refined)
        else {
            panic!()
        };
        assert!((lg - ln).abs() <= spacing, "grid {lg} vs newton {ln}");
        let refined_obj = objective_rnf(&terms, *ln, bn, &VarianceSpec::Unit, &LinearC);
        assert!(refined_obj <= report.objective.unwrap() + 1e-12);
    }

    #[test]
    fn grid_search_empty_grid_errors() {
        let terms = toy_terms(1, 10, 1);
        assert!(matches!(
            grid_search(&terms, &[], &VarianceSpec::Unit, &LinearC),
            Err(NetfnError::EmptyGrid)
        ));
    }

    #[test]
    fn grid_objective_nonnegative_and_scale_invariant() {
        let terms = toy_terms(37, 15, 1);
        let grid = vec![-0.6, -0.3, 0.0, 0.3, 0.6];
        let a = grid_search(&terms, &grid, &VarianceSpec::Unit, &LinearC).unwrap();
        assert!(a.grid_trace.iter().all(|pt| pt.objective >= 0.0));
        let b = grid_search(
            &terms.scale_weights(4.0),
            &grid,
            &VarianceSpec::Unit,
            &LinearC,
        )
        .unwrap();
        let (
            Theta::Rnf {
                beta: ba,
                lambda: la,
            },
            Theta::Rnf {
                beta: bb,
                lambda: lb,
            },
        ) = (&a.theta, &b.theta)
        else {
            panic!()
        };
        assert_eq!(la, lb);
        for (x, y) in ba.iter().zip(bb) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn score_derivative_cnf_exact_and_symmetric() {
        let terms = toy_terms(41, 16, 1);
        let theta = Theta::Cnf {
            beta: vec![0.2],
            gamma: vec![0.4],
        };
        let j = score_derivative(&terms, &theta, &VarianceSpec::Unit, &LinearC, None).unwrap();
        // Matches finite differences of the CNF score.
        let h = 1e-6;
        let flat = theta.as_flat();
        for k in 0..2 {
            let mut plus = flat.clone();
            plus[k] += h;
            let mut minus = flat.clone();
            minus[k] -= h;
            let sp = score_cnf(
                &terms,
                &theta.from_flat(&plus).unwrap(),
                &VarianceSpec::Unit,
            )
            .unwrap();
            let sm = score_cnf(
                &terms,
                &theta.from_flat(&minus).unwrap(),
                &VarianceSpec::Unit,
            )
            .unwrap();
            for a in 0..2 {
                let fd = (sp[a] - sm[a]) / (2.0 * h);
                assert_abs_diff_eq!(j[(a, k)], fd, epsilon = 1e-5);
            }
        }
        assert_abs_diff_eq!(j[(0, 1)], j[(1, 0)], epsilon = 1e-12);
    }

    #[test]
    fn score_derivative_cnf_one_node_unit() {
        let bundle = NodeBundle {
            node: 0,
            x: vec![1.0],
            y: 0.5,
            neighbors: vec![],
        };
        let terms = WeightedSampleTerms::new(vec![WeightedItem {
            weight: 1.0,
            bundle,
        }])
        .unwrap();
        let theta = Theta::Cnf {
            beta: vec![0.0],
            gamma: vec![],
        };
        let j = score_derivative(&terms, &theta, &VarianceSpec::Unit, &LinearC, None).unwrap();
        assert_eq!(j.nrows(), 1);
        assert_abs_diff_eq!(j[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn score_derivative_rnf_symmetric_within_fd_tolerance() {
        let terms = toy_terms(43, 20, 1);
        let theta = Theta::Rnf {
            beta: vec![0.8],
            lambda: 0.3,
        };
        let j = score_derivative(&terms, &theta, &VarianceSpec::Unit, &LinearC, Some(1.0)).unwrap();
        assert_abs_diff_eq!(j[(0, 1)], j[(1, 0)], epsilon = 1e-5);
    }

    struct CensusInclusion;
    impl PairInclusion for CensusInclusion {
        fn first_order(&self, _i: usize) -> f64 {
            1.0
        }
        fn joint(&self, _i: usize, _j: usize) -> f64 {
            1.0
        }
    }

    #[test]
    fn sandwich_census_is_zero() {
        let terms = toy_terms(47, 12, 1);
        let theta = wls_solve(&terms, &VarianceSpec::Unit, true).unwrap();
        let scores: Vec<DVector<f64>> = terms
            .items
            .iter()
            .map(|it| node_score_cnf(&it.bundle, &theta, &VarianceSpec::Unit).unwrap())
            .collect();
        let j = score_derivative(&terms, &theta, &VarianceSpec::Unit, &LinearC, None).unwrap();
        let v = sandwich_variance_population(&scores, &j, &CensusInclusion).unwrap();
        assert!(v.matrix.amax() < 1e-18);
    }

    #[test]
    fn sandwich_delta_diagonal_identity() {
        // Delta_ii = w_i - 1 because Pr(delta_i^2 = 1) = Pr(delta_i = 1).
        struct P;
        impl PairInclusion for P {
            fn first_order(&self, i: usize) -> f64 {
                [0.25, 0.5, 0.8][i]
            }
            fn joint(&self, i: usize, j: usize) -> f64 {
                if i == j {
                    self.first_order(i)
                } else {
                    self.first_order(i) * self.first_order(j)
                }
            }
        }
        let p = P;
        for i in 0..3 {
            let w = 1.0 / p.first_order(i);
            let delta_ii = w * w * p.joint(i, i) - 1.0;
            assert_abs_diff_eq!(delta_ii, w - 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn sandwich_psd_after_symmetrization() {
        let g = gen_er_digraph(8, 0.3, 1, 53).unwrap();
        let g = gen_outcomes(
            &g,
            &ModelSpec::Cnf {
                beta: vec![1.0],
                gamma: vec![],
                noise_sd: 0.8,
            },
            54,
        )
        .unwrap();
        let m = InfluenceMatrix::from_graph(&g, WeightScheme::InNormalized);
        let terms = unit_terms_from_graph(&g, &m).unwrap();
        let theta = wls_solve(&terms, &VarianceSpec::Unit, false).unwrap();
        let scores: Vec<DVector<f64>> = terms
            .items
            .iter()
            .map(|it| node_score_cnf(&it.bundle, &theta, &VarianceSpec::Unit).unwrap())
            .collect();
        let j = score_derivative(&terms, &theta, &VarianceSpec::Unit, &LinearC, None).unwrap();
        struct Indep;
        impl PairInclusion for Indep {
            fn first_order(&self, _i: usize) -> f64 {
                0.4
            }
            fn joint(&self, i: usize, j: usize) -> f64 {
                if i == j {
                    0.4
                } else {
                    0.16
                }
            }
        }
        let v = sandwich_variance_population(&scores, &j, &Indep).unwrap();
        let eig = v.matrix.clone().symmetric_eigen();
        let scale = v.matrix.amax().max(1e-30);
        assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-10 * scale));
    }
}
