//! Contextual and recursive network functions over a valued graph.
//!
//! The contextual form predicts each node from its own features plus a
//! permutation-invariant summary of its in-neighbours' features. The
//! recursive form couples node means through a linear neighbour function,
//! `mu = lambda * M * mu + c`, solved here by Neumann fixed-point
//! iteration with a dense direct solve retained as a small-N oracle.

use serde::{Deserialize, Serialize};

use crate::error::{NetfnError, Result};
use crate::graph::{InfluenceMatrix, ValuedGraph};

/// Parameter vector of a network function.
///
/// Exactly one of the two variants applies; the variant selects the model
/// family. `gamma` may be empty, which drops the contextual part and
/// leaves a plain regression on `x` (the single-parameter setting).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theta {
    Cnf { beta: Vec<f64>, gamma: Vec<f64> },
    Rnf { beta: Vec<f64>, lambda: f64 },
}

impl Theta {
    /// Flattens to `(beta..., gamma...)` or `(beta..., lambda)`.
    pub fn as_flat(&self) -> Vec<f64> {
        match self {
            Theta::Cnf { beta, gamma } => beta.iter().chain(gamma).copied().collect(),
            Theta::Rnf { beta, lambda } => beta
                .iter()
                .copied()
                .chain(std::iter::once(*lambda))
                .collect(),
        }
    }

    /// Rebuilds a value with the same shape as `self` from a flat vector.
    pub fn from_flat(&self, flat: &[f64]) -> Result<Theta> {
        let expected = self.as_flat().len();
        if flat.len() != expected {
            return Err(NetfnError::DimMismatch {
                context: "flat theta",
                got: flat.len(),
                expected,
            });
        }
        Ok(match self {
            Theta::Cnf { beta, .. } => Theta::Cnf {
                beta: flat[..beta.len()].to_vec(),
                gamma: flat[beta.len()..].to_vec(),
            },
            Theta::Rnf { beta, .. } => Theta::Rnf {
                beta: flat[..beta.len()].to_vec(),
                lambda: flat[beta.len()],
            },
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Theta::Cnf { beta, gamma } => beta.len() + gamma.len(),
            Theta::Rnf { beta, .. } => beta.len() + 1,
        }
    }
}

/// How a mean field was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuMode {
    Cnf,
    RnfExact,
    RnfTau(usize),
}

/// Per-node mean values `mu_U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuField {
    pub mu: Vec<f64>,
    pub mode: MuMode,
}

impl MuField {
    fn check_finite(self) -> Result<Self> {
        for (i, v) in self.mu.iter().enumerate() {
            if !v.is_finite() {
                return Err(NetfnError::MissingValue {
                    node: i,
                    what: "mu is not finite",
                });
            }
        }
        Ok(self)
    }
}

/// Pluggable base function `c(x; beta)` with its gradient in `beta`.
pub trait CModel: Sync {
    fn value(&self, x: &[f64], beta: &[f64]) -> f64;
    /// Gradient `dc/dbeta` at `(x, beta)`; length equals `beta.len()`.
    fn grad(&self, x: &[f64], beta: &[f64]) -> Vec<f64>;
    /// True when `value` is linear in `beta` with `grad` independent of it;
    /// profiling solvers require this.
    fn is_linear(&self) -> bool {
        false
    }
}

/// Default linear base function `c(x; beta) = x . beta`, gradient `x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearC;

impl CModel for LinearC {
    fn value(&self, x: &[f64], beta: &[f64]) -> f64 {
        x.iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    fn grad(&self, x: &[f64], _beta: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn is_linear(&self) -> bool {
        true
    }
}

/// Looks up a base-function implementation by id. Only `"linear"` ships.
pub fn c_model_by_id(id: &str) -> Result<Box<dyn CModel + Send>> {
    match id {
        "linear" => Ok(Box::new(LinearC)),
        other => Err(NetfnError::UnknownScheme(other.to_string())),
    }
}

/// Contextual features `z_i`: the average feature vector of in-neighbours.
///
/// Returns the zero vector when the node has no in-edges. Invariant under
/// any permutation of the neighbours.
pub fn contextual_features(g: &ValuedGraph, i: usize) -> Result<Vec<f64>> {
    if i >= g.n() {
        return Err(NetfnError::InvalidNode { node: i, n: g.n() });
    }
    let p = g.feature_dim();
    let mut z = vec![0.0; p];
    let in_list = g.in_edges(i);
    if in_list.is_empty() {
        return Ok(z);
    }
    for &(j, _) in in_list {
        for (zk, xk) in z.iter_mut().zip(g.x(j)) {
            *zk += xk;
        }
    }
    let inv = 1.0 / in_list.len() as f64;
    for zk in &mut z {
        *zk *= inv;
    }
    Ok(z)
}

/// Contextual features for every node.
pub fn contextual_features_all(g: &ValuedGraph) -> Vec<Vec<f64>> {
    (0..g.n())
        .map(|i| contextual_features(g, i).expect("index in range"))
        .collect()
}

/// Contextual mean field `mu_i = x_i' beta + z_i' gamma`.
///
/// `gamma` must either match the feature dimension or be empty (plain
/// regression without the contextual part).
pub fn cnf_mu(g: &ValuedGraph, theta: &Theta) -> Result<MuField> {
    let Theta::Cnf { beta, gamma } = theta else {
        return Err(NetfnError::DimMismatch {
            context: "cnf_mu requires a CNF theta",
            got: 0,
            expected: 0,
        });
    };
    let p = g.feature_dim();
    if beta.len() != p {
        return Err(NetfnError::DimMismatch {
            context: "beta",
            got: beta.len(),
            expected: p,
        });
    }
    if !gamma.is_empty() && gamma.len() != p {
        return Err(NetfnError::DimMismatch {
            context: "gamma",
            got: gamma.len(),
            expected: p,
        });
    }
    let mut mu = Vec::with_capacity(g.n());
    for i in 0..g.n() {
        let mut v: f64 = g.x(i).iter().zip(beta).map(|(a, b)| a * b).sum();
        if !gamma.is_empty() {
            let z = contextual_features(g, i)?;
            v += z.iter().zip(gamma).map(|(a, b)| a * b).sum::<f64>();
        }
        mu.push(v);
    }
    MuField {
        mu,
        mode: MuMode::Cnf,
    }
    .check_finite()
}

/// Base values `c_i = c(x_i; beta)` for every node.
pub fn c_values(g: &ValuedGraph, beta: &[f64], c: &dyn CModel) -> Result<Vec<f64>> {
    if beta.len() != g.feature_dim() {
        return Err(NetfnError::DimMismatch {
            context: "beta",
            got: beta.len(),
            expected: g.feature_dim(),
        });
    }
    Ok((0..g.n()).map(|i| c.value(g.x(i), beta)).collect())
}

const FIXED_POINT_TOL: f64 = 1e-10;
const FIXED_POINT_DEFAULT_CAP: usize = 10_000;

/// Number of fixed-point steps that brings the geometric tail below `tol`,
/// times a safety factor of ten. Falls back to a fixed cap when the
/// row-sum contraction bound is uninformative.
fn fixed_point_cap(rho_bound: f64) -> usize {
    if rho_bound > 0.0 && rho_bound < 1.0 {
        let steps = (FIXED_POINT_TOL.ln() / rho_bound.ln()).ceil() as usize;
        (10 * steps.max(1)).clamp(50, FIXED_POINT_DEFAULT_CAP)
    } else {
        FIXED_POINT_DEFAULT_CAP
    }
}

/// Solves `(I - lambda M) mu = c` by fixed-point iteration from `mu = c`.
///
/// Requires the norm restriction to hold for `lambda`. Stops when the
/// max-norm update falls below 1e-10; exceeding the step cap reports the
/// residual instead of returning a value.
pub fn rnf_mu_exact(m: &InfluenceMatrix, c: &[f64], lambda: f64) -> Result<MuField> {
    if c.len() != m.n() {
        return Err(NetfnError::DimMismatch {
            context: "c vector",
            got: c.len(),
            expected: m.n(),
        });
    }
    let check = m.norm_check(lambda);
    if !check.ok {
        return Err(NetfnError::NormRestriction {
            rho: check.spectral_radius,
        });
    }
    let cap = fixed_point_cap(check.row_sum_bound);
    let mut mu = c.to_vec();
    let mut next = vec![0.0; m.n()];
    for _ in 0..cap {
        m.matvec(&mu, &mut next);
        let mut delta: f64 = 0.0;
        for (k, nk) in next.iter_mut().enumerate() {
            *nk = lambda * *nk + c[k];
            delta = delta.max((*nk - mu[k]).abs());
        }
        std::mem::swap(&mut mu, &mut next);
        if delta < FIXED_POINT_TOL {
            return MuField {
                mu,
                mode: MuMode::RnfExact,
            }
            .check_finite();
        }
    }
    // Residual of the final iterate, for the error report.
    m.matvec(&mu, &mut next);
    let residual = mu
        .iter()
        .enumerate()
        .map(|(k, &v)| (v - lambda * next[k] - c[k]).abs())
        .fold(0.0, f64::max);
    Err(NetfnError::IterationCap { cap, residual })
}

/// Dense direct solve of `(I - lambda M) mu = c`; the small-N cross-check
/// oracle for [`rnf_mu_exact`]. Limited to N <= 500.
pub fn rnf_mu_dense(m: &InfluenceMatrix, c: &[f64], lambda: f64) -> Result<MuField> {
    const DENSE_LIMIT: usize = 500;
    if m.n() > DENSE_LIMIT {
        return Err(NetfnError::DimMismatch {
            context: "dense solve limited to N <= 500",
            got: m.n(),
            expected: DENSE_LIMIT,
        });
    }
    if c.len() != m.n() {
        return Err(NetfnError::DimMismatch {
            context: "c vector",
            got: c.len(),
            expected: m.n(),
        });
    }
    let n = m.n();
    let mut a = nalgebra::DMatrix::<f64>::identity(n, n);
    a -= lambda * m.to_dense();
    let rhs = nalgebra::DVector::from_column_slice(c);
    let solved = a
        .lu()
        .solve(&rhs)
        .ok_or(NetfnError::SingularGram { rank: 0, dim: n })?;
    MuField {
        mu: solved.as_slice().to_vec(),
        mode: MuMode::RnfExact,
    }
    .check_finite()
}

/// The tau-order approximation `mu = Q_tau c` via Horner accumulation:
/// tau sparse matrix-vector products, never materializing matrix powers.
pub fn rnf_mu_tau(m: &InfluenceMatrix, c: &[f64], lambda: f64, tau: usize) -> Result<MuField> {
    if tau == 0 {
        return Err(NetfnError::ZeroTau);
    }
    if c.len() != m.n() {
        return Err(NetfnError::DimMismatch {
            context: "c vector",
            got: c.len(),
            expected: m.n(),
        });
    }
    // Horner: mu <- c + lambda M mu, tau times, yields sum_{t<=tau} (lambda M)^t c.
    let mut mu = c.to_vec();
    let mut tmp = vec![0.0; m.n()];
    for _ in 0..tau {
        m.matvec(&mu, &mut tmp);
        for (k, v) in mu.iter_mut().enumerate() {
            *v = c[k] + lambda * tmp[k];
        }
    }
    MuField {
        mu,
        mode: MuMode::RnfTau(tau),
    }
    .check_finite()
}

/// Default grid for the recursion coefficient: 41 equispaced points over
/// the feasible interval from the row-sum bound, endpoints shrunk by 2%.
/// An all-zero `M` has no restriction; the unit interval is used then.
pub fn default_lambda_grid(m: &InfluenceMatrix) -> Vec<f64> {
    let bound = m.lambda_bound();
    let half = if bound.is_finite() {
        0.98 * bound
    } else {
        0.98
    };
    let k = 41;
    (0..k)
        .map(|i| -half + 2.0 * half * i as f64 / (k - 1) as f64)
        .collect()
}
