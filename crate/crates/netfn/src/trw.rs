//! Targeted random walk sampling.
//!
//! From the current node the walker either moves across an incident edge
//! or jumps to a uniformly random node; the jump mass is tuned by `r`.
//! The stationary distribution is proportional to `d_i + r`, which gives
//! closed-form weights for the sample estimating equation. Replicate
//! walks with independent RNG streams provide the variance estimator.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NetfnError, Result};
use crate::estimate::{
    Diagnostics, EstimateReport, NodeBundle, VarianceEstimate, WeightedItem, WeightedSampleTerms,
};
use crate::graph::{InfluenceMatrix, ValuedGraph};
use crate::nf::Theta;

/// Configuration of a targeted random walk run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    /// Jump tuning constant, strictly positive.
    pub r: f64,
    /// Steps discarded before extraction starts.
    pub burn_in: usize,
    /// Number of states to extract.
    pub n_extract: usize,
    /// Extraction interval; 1 keeps every post-burn-in state.
    pub thin: usize,
    /// Master seed; replicate walks derive independent streams from it.
    pub seed: u64,
    /// Number of independent replicate walks, at least 2 for variance.
    pub replicates: usize,
}

impl WalkConfig {
    /// Default burn-in of 50 steps per node.
    pub fn default_burn_in(n_nodes: usize) -> usize {
        50 * n_nodes
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(NetfnError::BadWalkConfig(format!(
                "jump constant r must be positive, got {}",
                self.r
            )));
        }
        if self.n_extract == 0 {
            return Err(NetfnError::BadWalkConfig("n_extract must be >= 1".into()));
        }
        if self.thin == 0 {
            return Err(NetfnError::BadWalkConfig("thin must be >= 1".into()));
        }
        Ok(())
    }
}

/// Extracted states of one walk with their observed neighbourhood bundles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkTrace {
    /// Extracted node ids, in extraction order; repeats are kept.
    pub states: Vec<usize>,
    /// Total degree of each extracted state.
    pub degrees: Vec<usize>,
    /// Full neighbourhood bundle observed at each extracted state.
    pub bundles: Vec<NodeBundle>,
}

impl WalkTrace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// One full row of the walk kernel at node `i`: move mass spread over the
/// undirected neighbourhood plus uniform jump mass everywhere.
pub fn transition_probs(g: &ValuedGraph, i: usize, r: f64) -> Result<Vec<f64>> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(NetfnError::BadWalkConfig(format!(
            "jump constant r must be positive, got {r}"
        )));
    }
    let n = g.n();
    let neighbors = g.neighbors(i)?;
    let d = neighbors.len() as f64;
    let jump = r / (d + r) / n as f64;
    let mut probs = vec![jump; n];
    for j in neighbors {
        probs[j] = (1.0 + r / n as f64) / (d + r);
    }
    Ok(probs)
}

fn neighbor_lists(g: &ValuedGraph) -> Vec<Vec<usize>> {
    (0..g.n())
        .map(|i| g.neighbors(i).expect("index in range"))
        .collect()
}

fn step(nbrs: &[Vec<usize>], n: usize, cur: usize, r: f64, rng: &mut ChaCha8Rng) -> usize {
    let d = nbrs[cur].len();
    let move_prob = d as f64 / (d as f64 + r);
    if d > 0 && rng.random::<f64>() < move_prob {
        nbrs[cur][rng.random_range(0..d)]
    } else {
        rng.random_range(0..n)
    }
}

fn run_walk_with_rng(
    g: &ValuedGraph,
    m: &InfluenceMatrix,
    cfg: &WalkConfig,
    start: usize,
    rng: &mut ChaCha8Rng,
) -> Result<WalkTrace> {
    cfg.validate()?;
    if start >= g.n() {
        return Err(NetfnError::InvalidNode {
            node: start,
            n: g.n(),
        });
    }
    let nbrs = neighbor_lists(g);
    let mut cur = start;
    for _ in 0..cfg.burn_in {
        cur = step(&nbrs, g.n(), cur, cfg.r, rng);
    }
    let mut states = Vec::with_capacity(cfg.n_extract);
    let mut degrees = Vec::with_capacity(cfg.n_extract);
    let mut bundles = Vec::with_capacity(cfg.n_extract);
    // The state reached after burn-in is the first extraction; every
    // further extraction is `thin` steps later.
    loop {
        states.push(cur);
        degrees.push(nbrs[cur].len());
        bundles.push(crate::estimate::bundle_from_graph(g, m, cur)?);
        if states.len() == cfg.n_extract {
            break;
        }
        for _ in 0..cfg.thin {
            cur = step(&nbrs, g.n(), cur, cfg.r, rng);
        }
    }
    Ok(WalkTrace {
        states,
        degrees,
        bundles,
    })
}

/// Runs one targeted random walk from `start` using RNG stream 0 of the
/// configured seed. Fixed seed means an identical trace on every run.
pub fn run_trw(
    g: &ValuedGraph,
    m: &InfluenceMatrix,
    cfg: &WalkConfig,
    start: usize,
) -> Result<WalkTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    run_walk_with_rng(g, m, cfg, start, &mut rng)
}

/// Runs one walk on its own RNG stream with a random starting node; used
/// for replicate walks (streams are independent for distinct indices).
pub fn run_trw_stream(
    g: &ValuedGraph,
    m: &InfluenceMatrix,
    cfg: &WalkConfig,
    stream: u64,
) -> Result<WalkTrace> {
    if g.n() == 0 {
        return Err(NetfnError::BadWalkConfig("graph has no nodes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let start = rng.random_range(0..g.n());
    run_walk_with_rng(g, m, cfg, start, &mut rng)
}

/// Stationary-probability weights `w_i = 1 / (n (d_i + r))` for every
/// extracted state; repeated visits keep separate terms.
pub fn trw_weights(trace: &WalkTrace, cfg: &WalkConfig) -> Vec<f64> {
    let n = trace.len() as f64;
    trace
        .degrees
        .iter()
        .map(|&d| 1.0 / (n * (d as f64 + cfg.r)))
        .collect()
}

/// Converts a trace to weighted sample terms for the estimating equation.
pub fn trace_to_terms(trace: &WalkTrace, cfg: &WalkConfig) -> Result<WeightedSampleTerms> {
    let weights = trw_weights(trace, cfg);
    WeightedSampleTerms::new(
        trace
            .bundles
            .iter()
            .zip(weights)
            .map(|(bundle, weight)| WeightedItem {
                weight,
                bundle: bundle.clone(),
            })
            .collect(),
    )
}

/// Runs `L` independent replicate walks, solves the estimating equation
/// on each, and combines them into a mean estimate with the
/// between-replicate variance `V = sum (theta_l - mean)^2 / (L (L - 1))`.
///
/// A replicate whose solver fails is dropped with a warning in the
/// diagnostics; the variance uses the surviving count.
pub fn replicate_estimate<F>(
    g: &ValuedGraph,
    m: &InfluenceMatrix,
    cfg: &WalkConfig,
    estimator: F,
) -> Result<EstimateReport>
where
    F: Fn(&WeightedSampleTerms) -> Result<Theta> + Sync,
{
    cfg.validate()?;
    if cfg.replicates == 0 {
        return Err(NetfnError::BadWalkConfig("replicates must be >= 1".into()));
    }
    let results: Vec<Result<Theta>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|l| {
            let trace = run_trw_stream(g, m, cfg, 1 + l as u64)?;
            let terms = trace_to_terms(&trace, cfg)?;
            estimator(&terms)
        })
        .collect();

    let mut kept: Vec<Vec<f64>> = Vec::new();
    let mut template: Option<Theta> = None;
    let mut messages = Vec::new();
    for (l, res) in results.into_iter().enumerate() {
        match res {
            Ok(theta) => {
                if template.is_none() {
                    template = Some(theta.clone());
                }
                kept.push(theta.as_flat());
            }
            Err(e) => messages.push(format!("replicate {l} dropped: {e}")),
        }
    }
    let Some(template) = template else {
        return Err(NetfnError::AllReplicatesFailed(
            messages.last().cloned().unwrap_or_default(),
        ));
    };
    let l_eff = kept.len();
    let dim = kept[0].len();
    let mut mean = vec![0.0; dim];
    for theta in &kept {
        for (mk, tk) in mean.iter_mut().zip(theta) {
            *mk += tk;
        }
    }
    for mk in &mut mean {
        *mk /= l_eff as f64;
    }
    let variance = if l_eff >= 2 {
        let mut var = vec![0.0; dim];
        for theta in &kept {
            for ((vk, tk), mk) in var.iter_mut().zip(theta).zip(&mean) {
                *vk += (tk - mk) * (tk - mk);
            }
        }
        for vk in &mut var {
            *vk /= (l_eff * (l_eff - 1)) as f64;
        }
        VarianceEstimate::PerComponent(var)
    } else {
        messages.push("fewer than 2 replicates survived; no variance".into());
        VarianceEstimate::None
    };

    Ok(EstimateReport {
        theta: template.from_flat(&mean)?,
        variance,
        objective: None,
        grid_trace: Vec::new(),
        diagnostics: Diagnostics {
            replicates_used: l_eff,
            replicates_dropped: cfg.replicates - l_eff,
            messages,
            ..Diagnostics::default()
        },
        config_echo: serde_json::json!({
            "sampler": "trw_replicates",
            "r": cfg.r,
            "burn_in": cfg.burn_in,
            "n_extract": cfg.n_extract,
            "thin": cfg.thin,
            "replicates": cfg.replicates,
            "seed": cfg.seed,
        }),
    })
}

/// Stationary distribution of the walk kernel by direct linear solve of
/// the balance equations; the dense small-N oracle for tests.
pub fn stationary_distribution_dense(g: &ValuedGraph, r: f64) -> Result<Vec<f64>> {
    let n = g.n();
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let row = transition_probs(g, i, r)?;
        for j in 0..n {
            // (P^T - I) pi = 0
            a[(j, i)] = row[j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    // Replace the last balance equation with the normalization sum(pi) = 1.
    for i in 0..n {
        a[(n - 1, i)] = 1.0;
    }
    let mut rhs = nalgebra::DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&rhs)
        .ok_or(NetfnError::SingularGram { rank: 0, dim: n })?;
    Ok(pi.as_slice().to_vec())
}

/// The closed-form stationary law `(d_i + r) / sum_j (d_j + r)`.
pub fn stationary_closed_form(g: &ValuedGraph, r: f64) -> Vec<f64> {
    let masses: Vec<f64> = (0..g.n())
        .map(|i| g.neighbors(i).expect("index in range").len() as f64 + r)
        .collect();
    let total: f64 = masses.iter().sum();
    masses.into_iter().map(|m| m / total).collect()
}
