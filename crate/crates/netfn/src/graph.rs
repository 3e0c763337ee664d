//! Valued-graph storage and neighbourhood queries.
//!
//! A [`ValuedGraph`] is a simple directed graph without loops whose nodes
//! carry a feature vector `x_i` and optionally an outcome `y_i`, and whose
//! directed edges carry a positive value `omega_ij`. Adjacency is kept as
//! both forward and reverse edge lists so neighbourhood and ancestry
//! queries cost time linear in the local degree.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{NetfnError, Result};

/// Directed graph with node features, optional outcomes, and edge values.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValuedGraph {
    n: usize,
    feature_dim: usize,
    /// `out_edges[i]` holds `(j, omega_ij)` for every edge i -> j, sorted by j.
    out_edges: Vec<Vec<(usize, f64)>>,
    /// `in_edges[i]` holds `(j, omega_ji)` for every edge j -> i, sorted by j.
    in_edges: Vec<Vec<(usize, f64)>>,
    /// Flat row-major node features, `n * feature_dim` entries.
    x: Vec<f64>,
    y: Option<Vec<f64>>,
    /// External string labels when the graph was ingested from files.
    labels: Option<Vec<String>>,
}

/// Degree triple for one node: total, out- and in-degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degrees {
    /// `d_i = |nu_i|`, number of distinct neighbours in either direction.
    pub total: usize,
    /// `d_{i+}`, number of outgoing edges.
    pub out_deg: usize,
    /// `d_{+i}`, number of incoming edges.
    pub in_deg: usize,
}

impl ValuedGraph {
    /// Builds a graph from a directed edge list with values.
    ///
    /// `x` must hold one feature vector per node, all of equal length.
    /// Outcomes `y` are optional at this point and can be attached later
    /// with [`ValuedGraph::with_outcomes`].
    pub fn new(
        n: usize,
        edges: &[(usize, usize, f64)],
        x: Vec<Vec<f64>>,
        y: Option<Vec<f64>>,
    ) -> Result<Self> {
        if x.len() != n {
            return Err(NetfnError::DimMismatch {
                context: "feature rows",
                got: x.len(),
                expected: n,
            });
        }
        let feature_dim = x.first().map_or(0, Vec::len);
        for (i, xi) in x.iter().enumerate() {
            if xi.len() != feature_dim {
                return Err(NetfnError::FeatureDimMismatch {
                    node: i,
                    got: xi.len(),
                    expected: feature_dim,
                });
            }
        }
        if let Some(y) = &y {
            if y.len() != n {
                return Err(NetfnError::DimMismatch {
                    context: "outcome vector",
                    got: y.len(),
                    expected: n,
                });
            }
        }

        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for &(i, j, omega) in edges {
            if i >= n {
                return Err(NetfnError::InvalidNode { node: i, n });
            }
            if j >= n {
                return Err(NetfnError::InvalidNode { node: j, n });
            }
            if i == j {
                return Err(NetfnError::LoopEdge(i));
            }
            if !(omega > 0.0 && omega.is_finite()) {
                return Err(NetfnError::BadEdgeValue { i, j, omega });
            }
            if !seen.insert((i, j)) {
                return Err(NetfnError::DuplicateEdge(i, j));
            }
            out_edges[i].push((j, omega));
            in_edges[j].push((i, omega));
        }
        for list in out_edges.iter_mut().chain(in_edges.iter_mut()) {
            list.sort_unstable_by_key(|&(j, _)| j);
        }

        let x = x.into_iter().flatten().collect();
        Ok(Self {
            n,
            feature_dim,
            out_edges,
            in_edges,
            x,
            y,
            labels: None,
        })
    }

    /// Number of nodes `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Dimension `p` of the node feature vectors.
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Number of directed edges.
    pub fn edge_count(&self) -> usize {
        self.out_edges.iter().map(Vec::len).sum()
    }

    /// Iterates all directed edges as `(i, j, omega_ij)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.out_edges
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().map(move |&(j, w)| (i, j, w)))
    }

    /// Feature vector of node `i`.
    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// Outcome of node `i`, if outcomes are loaded.
    pub fn y(&self, i: usize) -> Option<f64> {
        self.y.as_ref().map(|y| y[i])
    }

    /// Full outcome vector, if loaded.
    pub fn outcomes(&self) -> Option<&[f64]> {
        self.y.as_deref()
    }

    /// External node labels, if the graph was ingested from files.
    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub(crate) fn set_labels(&mut self, labels: Vec<String>) {
        debug_assert_eq!(labels.len(), self.n);
        self.labels = Some(labels);
    }

    /// Returns a copy of the graph with outcomes attached.
    pub fn with_outcomes(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n {
            return Err(NetfnError::DimMismatch {
                context: "outcome vector",
                got: y.len(),
                expected: self.n,
            });
        }
        let mut g = self.clone();
        g.y = Some(y);
        Ok(g)
    }

    /// Returns a copy of the graph with the node features replaced.
    pub fn with_features(&self, x: Vec<Vec<f64>>) -> Result<Self> {
        if x.len() != self.n {
            return Err(NetfnError::DimMismatch {
                context: "feature rows",
                got: x.len(),
                expected: self.n,
            });
        }
        let feature_dim = x.first().map_or(0, Vec::len);
        for (i, xi) in x.iter().enumerate() {
            if xi.len() != feature_dim {
                return Err(NetfnError::FeatureDimMismatch {
                    node: i,
                    got: xi.len(),
                    expected: feature_dim,
                });
            }
        }
        let mut g = self.clone();
        g.feature_dim = feature_dim;
        g.x = x.into_iter().flatten().collect();
        Ok(g)
    }

    fn check_node(&self, i: usize) -> Result<()> {
        if i < self.n {
            Ok(())
        } else {
            Err(NetfnError::InvalidNode { node: i, n: self.n })
        }
    }

    /// Out-neighbour list of `i` as `(j, omega_ij)`, sorted by `j`.
    pub fn out_edges(&self, i: usize) -> &[(usize, f64)] {
        &self.out_edges[i]
    }

    /// In-neighbour list of `i` as `(j, omega_ji)`, sorted by `j`.
    pub fn in_edges(&self, i: usize) -> &[(usize, f64)] {
        &self.in_edges[i]
    }

    /// Whether the directed edge i -> j exists.
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n
            && self.out_edges[i]
                .binary_search_by_key(&j, |&(t, _)| t)
                .is_ok()
    }

    /// Value `omega_ij` of the directed edge i -> j, if present.
    pub fn omega(&self, i: usize, j: usize) -> Option<f64> {
        if i >= self.n {
            return None;
        }
        self.out_edges[i]
            .binary_search_by_key(&j, |&(t, _)| t)
            .ok()
            .map(|k| self.out_edges[i][k].1)
    }

    /// Undirected neighbourhood `nu_i`: nodes adjacent in either direction.
    ///
    /// Never contains `i` itself (the graph has no loops).
    pub fn neighbors(&self, i: usize) -> Result<Vec<usize>> {
        self.check_node(i)?;
        let mut out = Vec::with_capacity(self.out_edges[i].len() + self.in_edges[i].len());
        // Merge the two sorted lists, deduplicating reciprocal pairs.
        let (a, b) = (&self.out_edges[i], &self.in_edges[i]);
        let (mut ka, mut kb) = (0, 0);
        while ka < a.len() || kb < b.len() {
            match (a.get(ka), b.get(kb)) {
                (Some(&(ja, _)), Some(&(jb, _))) => {
                    if ja < jb {
                        out.push(ja);
                        ka += 1;
                    } else if jb < ja {
                        out.push(jb);
                        kb += 1;
                    } else {
                        out.push(ja);
                        ka += 1;
                        kb += 1;
                    }
                }
                (Some(&(ja, _)), None) => {
                    out.push(ja);
                    ka += 1;
                }
                (None, Some(&(jb, _))) => {
                    out.push(jb);
                    kb += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        Ok(out)
    }

    /// Degree triple `(d_i, d_{i+}, d_{+i})` of node `i`.
    pub fn degrees(&self, i: usize) -> Result<Degrees> {
        self.check_node(i)?;
        Ok(Degrees {
            total: self.neighbors(i)?.len(),
            out_deg: self.out_edges[i].len(),
            in_deg: self.in_edges[i].len(),
        })
    }

    /// The tau-order neighbourhood `nu_i^tau`: nodes with a directed path of
    /// length at most `tau` into `i`.
    ///
    /// Computed by stepwise reverse-edge frontier expansion; `i` itself is
    /// included only when it lies on a directed cycle of length <= tau.
    pub fn tau_neighborhood(&self, i: usize, tau: usize) -> Result<BTreeSet<usize>> {
        self.check_node(i)?;
        if tau == 0 {
            return Err(NetfnError::ZeroTau);
        }
        let mut result = BTreeSet::new();
        let mut frontier: BTreeSet<usize> = BTreeSet::from([i]);
        for _ in 0..tau {
            let mut next = BTreeSet::new();
            for &v in &frontier {
                for &(j, _) in &self.in_edges[v] {
                    next.insert(j);
                }
            }
            if next.is_empty() {
                break;
            }
            let grew = next.iter().any(|j| !result.contains(j));
            result.extend(next.iter().copied());
            if !grew {
                // Every future frontier stays inside the accumulated set.
                break;
            }
            frontier = next;
        }
        Ok(result)
    }

    /// Multi-source undirected BFS distances, `usize::MAX` for unreachable.
    pub fn undirected_distances(&self, sources: &BTreeSet<usize>) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n];
        let mut queue = std::collections::VecDeque::new();
        for &s in sources {
            if s < self.n && dist[s] == usize::MAX {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(v) = queue.pop_front() {
            let d = dist[v] + 1;
            for &(j, _) in self.out_edges[v].iter().chain(self.in_edges[v].iter()) {
                if dist[j] == usize::MAX {
                    dist[j] = d;
                    queue.push_back(j);
                }
            }
        }
        dist
    }
}

/// Weighting scheme for deriving the influence matrix from edge values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `m_ij = omega_ji / sum_k omega_ki` over in-neighbours; zero row when
    /// the node has no in-edges.
    #[default]
    InNormalized,
    /// `m_ij = omega_ji`, no normalization.
    Raw,
}

impl FromStr for WeightScheme {
    type Err = NetfnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in_normalized" | "in-normalized" => Ok(Self::InNormalized),
            "raw" => Ok(Self::Raw),
            other => Err(NetfnError::UnknownScheme(other.to_string())),
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InNormalized => write!(f, "in_normalized"),
            Self::Raw => write!(f, "raw"),
        }
    }
}

/// Sparse influence matrix `M` with the nonzero pattern of `A^T`.
///
/// Row `i` holds `m_ij` for the in-neighbours `j` of `i`. The spectral
/// radius of `M` is estimated once at construction so that feasibility
/// checks for `lambda` are cheap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceMatrix {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
    scheme: WeightScheme,
    max_row_sum: f64,
    rho: f64,
    rho_converged: bool,
}

/// Outcome of the norm restriction check for a given `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormCheck {
    /// True when the spectral radius estimate of `lambda * M` is below
    /// `1 - tol`.
    pub ok: bool,
    /// Estimated spectral radius of `lambda * M`.
    pub spectral_radius: f64,
    /// Conservative companion bound `|lambda| * max_row_sum(M)`.
    pub row_sum_bound: f64,
    /// Whether power iteration converged; when false the row-sum bound was
    /// used as the estimate.
    pub power_iteration_converged: bool,
}

const NORM_CHECK_TOL: f64 = 1e-9;

impl InfluenceMatrix {
    /// Derives the influence matrix of `g` under the given scheme.
    pub fn from_graph(g: &ValuedGraph, scheme: WeightScheme) -> Self {
        let n = g.n();
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let in_list = g.in_edges(i);
            let row: Vec<(usize, f64)> = match scheme {
                WeightScheme::Raw => in_list.to_vec(),
                WeightScheme::InNormalized => {
                    let total: f64 = in_list.iter().map(|&(_, w)| w).sum();
                    if total > 0.0 {
                        in_list.iter().map(|&(j, w)| (j, w / total)).collect()
                    } else {
                        Vec::new()
                    }
                }
            };
            rows.push(row);
        }
        Self::from_rows(rows, scheme)
    }

    fn from_rows(rows: Vec<Vec<(usize, f64)>>, scheme: WeightScheme) -> Self {
        let n = rows.len();
        let max_row_sum = rows
            .iter()
            .map(|r| r.iter().map(|&(_, m)| m.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let (rho, rho_converged) = estimate_spectral_radius(&rows, n);
        Self {
            n,
            rows,
            scheme,
            max_row_sum,
            rho,
            rho_converged,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn scheme(&self) -> WeightScheme {
        self.scheme
    }

    /// Row `i` as `(j, m_ij)` pairs sorted by `j`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// Entry `m_ij`, zero when `j` is not an in-neighbour of `i`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(t, _)| t)
            .ok()
            .map_or(0.0, |k| self.rows[i][k].1)
    }

    /// Induced max-row-sum norm of `M`.
    pub fn max_row_sum(&self) -> f64 {
        self.max_row_sum
    }

    /// Spectral radius estimate of `M` from power iteration.
    pub fn spectral_radius(&self) -> f64 {
        self.rho
    }

    /// Upper bound on `|lambda|` that guarantees Neumann-series convergence,
    /// from the max-row-sum norm. Infinite when `M` is all zero.
    pub fn lambda_bound(&self) -> f64 {
        if self.max_row_sum > 0.0 {
            1.0 / self.max_row_sum
        } else {
            f64::INFINITY
        }
    }

    /// Sparse matrix-vector product `out[i] = sum_j m_ij v[j]`.
    pub fn matvec(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        for (i, row) in self.rows.iter().enumerate() {
            out[i] = row.iter().map(|&(j, m)| m * v[j]).sum();
        }
    }

    /// Checks the norm restriction on `lambda * M`.
    ///
    /// Uses the power-iteration spectral radius estimate; falls back to the
    /// max-row-sum norm when power iteration did not converge. Failure to
    /// converge is reported as a flag, never an error.
    pub fn norm_check(&self, lambda: f64) -> NormCheck {
        let base = if self.rho_converged {
            self.rho
        } else {
            self.max_row_sum
        };
        let spectral_radius = lambda.abs() * base;
        NormCheck {
            ok: spectral_radius < 1.0 - NORM_CHECK_TOL,
            spectral_radius,
            row_sum_bound: lambda.abs() * self.max_row_sum,
            power_iteration_converged: self.rho_converged,
        }
    }

    /// Dense copy of `M`, for small-N oracles.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, m) in row {
                d[(i, j)] = m;
            }
        }
        d
    }
}

/// Power iteration with a geometric-mean window over the growth ratios,
/// which also handles periodic nonnegative matrices (eigenvalues on the
/// unit circle). A nilpotent matrix drives the iterate to exactly zero.
fn estimate_spectral_radius(rows: &[Vec<(usize, f64)>], n: usize) -> (f64, bool) {
    if n == 0 || rows.iter().all(Vec::is_empty) {
        return (0.0, true);
    }
    const MAX_ITER: usize = 1000;
    const WINDOW: usize = 20;
    let mut v = vec![1.0; n];
    let mut w = vec![0.0; n];
    let mut ratios: Vec<f64> = Vec::with_capacity(MAX_ITER);
    let mut prev_est = f64::NAN;
    let mut stable = 0usize;
    for _ in 0..MAX_ITER {
        for (i, row) in rows.iter().enumerate() {
            w[i] = row.iter().map(|&(j, m)| m.abs() * v[j]).sum();
        }
        let norm = w.iter().cloned().fold(0.0, f64::max);
        if norm == 0.0 {
            return (0.0, true);
        }
        ratios.push(norm);
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
        let k = ratios.len().min(WINDOW);
        let est = geometric_mean(&ratios[ratios.len() - k..]);
        if (est - prev_est).abs() <= 1e-13 * est.max(1.0) {
            stable += 1;
            if stable >= 5 && ratios.len() >= WINDOW {
                return (est, true);
            }
        } else {
            stable = 0;
        }
        prev_est = est;
    }
    let k = ratios.len().min(WINDOW);
    (geometric_mean(&ratios[ratios.len() - k..]), false)
}

fn geometric_mean(vals: &[f64]) -> f64 {
    let s: f64 = vals.iter().map(|v| v.ln()).sum();
    (s / vals.len() as f64).exp()
}
