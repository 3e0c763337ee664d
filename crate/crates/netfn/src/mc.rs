//! Monte Carlo experiment driver and exact design enumeration.
//!
//! Experiments repeat draw-sample / weight / solve cycles with
//! per-replicate RNG streams, then aggregate bias against the full-graph
//! solution, empirical variance, and the mean weighted score at the
//! population parameter. The enumeration oracle iterates every possible
//! initial sample of a design and tabulates exact inclusion and joint
//! probabilities for the acceptance tests.

use std::collections::BTreeSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NetfnError, Result};
use crate::estimate::{
    grid_search, node_score_cnf, node_score_rnf, sandwich_variance_population, score_cnf,
    score_derivative, score_rnf, unit_terms_from_graph, wls_solve, VarianceSpec,
    WeightedSampleTerms,
};
use crate::graph::{InfluenceMatrix, ValuedGraph, WeightScheme};
use crate::nf::{default_lambda_grid, LinearC, Theta};
use crate::sbs::{
    eligibility_flags, f_full_graph, f_in_sample, inclusion_prob, run_tsbs, sbs_weights,
    DesignKind, LearningTarget, SbsDesign, SbsPairInclusion,
};
use crate::synth::{fixture, gen_er_digraph, gen_outcomes, FixtureId, ModelSpec};
use crate::trw::{replicate_estimate, run_trw_stream, trace_to_terms, WalkConfig};

/// Where the experiment graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSpec {
    Fixture(FixtureId),
    Er {
        n: usize,
        edge_prob: f64,
        #[serde(default = "default_feature_dim")]
        feature_dim: usize,
    },
    Files {
        nodes: String,
        edges: String,
    },
    Bundle(String),
}

fn default_feature_dim() -> usize {
    2
}

/// Random-walk design parameters for experiments; burn-in defaults to
/// 50 steps per node when omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrwSpec {
    pub r: f64,
    #[serde(default)]
    pub burn_in: Option<usize>,
    pub n_extract: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
}

fn default_thin() -> usize {
    1
}

fn default_replicates() -> usize {
    10
}

/// Sampling design of the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignSpec {
    Sbs { kind: DesignKind, t_waves: usize },
    Trw(TrwSpec),
}

/// A full experiment: graph, generating model, design, replication count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub graph: GraphSpec,
    pub model: ModelSpec,
    pub design: DesignSpec,
    /// Eligibility target override; defaults to the model's own target.
    #[serde(default)]
    pub target: Option<LearningTarget>,
    #[serde(default)]
    pub sigma: VarianceSpec,
    /// Influence-matrix scheme for estimation (generation uses the
    /// model's own scheme).
    #[serde(default)]
    pub scheme: WeightScheme,
    /// Grid override for the recursive solver.
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    pub replications: usize,
    pub seed: u64,
    /// Default output directory; the command-line flag wins over it.
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(NetfnError::BadConfig("replications must be >= 1".into()));
        }
        self.sigma.validate()?;
        Ok(())
    }

    /// Eligibility target implied by the generating model unless overridden.
    pub fn learning_target(&self) -> LearningTarget {
        self.target.unwrap_or(match &self.model {
            ModelSpec::Cnf { .. } => LearningTarget::Cnf,
            ModelSpec::Rnf { .. } => LearningTarget::Rnf,
        })
    }
}

/// Builds the experiment graph with outcomes attached.
pub fn realize_graph(cfg: &ExperimentConfig) -> Result<ValuedGraph> {
    let g = match &cfg.graph {
        GraphSpec::Fixture(id) => fixture(*id)?,
        GraphSpec::Er {
            n,
            edge_prob,
            feature_dim,
        } => gen_er_digraph(*n, *edge_prob, *feature_dim, cfg.seed ^ 0xa5a5_5a5a)?,
        GraphSpec::Files { nodes, edges } => crate::io::load_graph_csv(nodes, edges)?.0,
        GraphSpec::Bundle(path) => crate::io::load_graph_bundle(path)?.0,
    };
    if g.outcomes().is_some() {
        // Outcomes already present in the ingested data win over the model.
        return Ok(g);
    }
    gen_outcomes(&g, &cfg.model, cfg.seed ^ 0x5151_1515)
}

/// How one replicate is solved.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorSpec {
    CnfWls { with_context: bool },
    RnfGrid { grid: Vec<f64> },
}

impl EstimatorSpec {
    pub fn for_config(cfg: &ExperimentConfig, m: &InfluenceMatrix) -> Self {
        match &cfg.model {
            ModelSpec::Cnf { gamma, .. } => EstimatorSpec::CnfWls {
                with_context: !gamma.is_empty(),
            },
            ModelSpec::Rnf { .. } => EstimatorSpec::RnfGrid {
                grid: cfg.grid.clone().unwrap_or_else(|| default_lambda_grid(m)),
            },
        }
    }

    pub fn solve(
        &self,
        terms: &WeightedSampleTerms,
        sigma: &VarianceSpec,
    ) -> Result<(Theta, Option<f64>)> {
        match self {
            EstimatorSpec::CnfWls { with_context } => {
                Ok((wls_solve(terms, sigma, *with_context)?, None))
            }
            EstimatorSpec::RnfGrid { grid } => {
                let report = grid_search(terms, grid, sigma, &LinearC)?;
                Ok((report.theta, report.objective))
            }
        }
    }
}

/// Weighted score of the terms at a given parameter, matching its mode.
pub fn score_at(
    terms: &WeightedSampleTerms,
    theta: &Theta,
    sigma: &VarianceSpec,
) -> Result<Vec<f64>> {
    let s = match theta {
        Theta::Cnf { .. } => score_cnf(terms, theta, sigma)?,
        Theta::Rnf { .. } => score_rnf(terms, theta, sigma, &LinearC)?,
    };
    Ok(s.as_slice().to_vec())
}

/// One replicate's record in the output table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub theta: Vec<f64>,
    pub score_at_theta0: Vec<f64>,
    pub eligible: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
}

/// Aggregated experiment results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub theta0: Vec<f64>,
    pub replicates_requested: usize,
    pub replicates_used: usize,
    pub replicates_failed: usize,
    pub mean_theta: Vec<f64>,
    pub bias: Vec<f64>,
    pub empirical_variance: Vec<f64>,
    pub mean_score_theta0: Vec<f64>,
    /// Monte Carlo standard error of the mean score, componentwise.
    pub score_mc_se: Vec<f64>,
    /// Population sandwich variance diagonal (snowball designs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sandwich_variance_diag: Option<Vec<f64>>,
    /// Replicate-walk variance estimate (random-walk designs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trw_replicate_variance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McOutput {
    pub summary: McSummary,
    pub records: Vec<RepRecord>,
}

fn draw_initial_sample(kind: DesignKind, n: usize, rng: &mut ChaCha8Rng) -> BTreeSet<usize> {
    match kind {
        DesignKind::Srswor { m } => {
            // Partial Fisher-Yates over the index frame.
            let mut idx: Vec<usize> = (0..n).collect();
            for k in 0..m {
                let j = rng.random_range(k..n);
                idx.swap(k, j);
            }
            idx[..m].iter().copied().collect()
        }
        DesignKind::Bernoulli { p } => (0..n).filter(|_| rng.random::<f64>() < p).collect(),
    }
}

/// Runs the full Monte Carlo experiment.
///
/// The population parameter is always recomputed from the full graph with
/// unit weights by the same estimation path, never taken from the
/// generating model. Per-replicate failures are recorded and skipped.
pub fn run_mc(cfg: &ExperimentConfig) -> Result<McOutput> {
    cfg.validate()?;
    let g = realize_graph(cfg)?;
    if let DesignSpec::Sbs { kind, t_waves } = &cfg.design {
        SbsDesign::new(*kind, g.n())?;
        if *t_waves == 0 {
            return Err(NetfnError::BadDesign("wave count T must be >= 1".into()));
        }
    }
    let m = InfluenceMatrix::from_graph(&g, cfg.scheme);
    let estimator = EstimatorSpec::for_config(cfg, &m);
    let target = cfg.learning_target();
    if matches!(target, LearningTarget::Qtau(_)) {
        return Err(NetfnError::BadConfig(
            "Monte Carlo experiments support cnf and rnf targets".into(),
        ));
    }

    // Full-graph solution: the finite-population target of the SEE.
    let full_terms = unit_terms_from_graph(&g, &m)?;
    let (theta0, _) = estimator.solve(&full_terms, &cfg.sigma)?;
    let theta0_flat = theta0.as_flat();

    let records: Vec<RepRecord> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_one_replicate(cfg, &g, &m, &estimator, &theta0, rep))
        .collect();

    let used: Vec<&RepRecord> = records.iter().filter(|r| r.ok).collect();
    let r_used = used.len();
    if r_used == 0 {
        return Err(NetfnError::AllReplicatesFailed(
            records
                .first()
                .and_then(|r| r.message.clone())
                .unwrap_or_default(),
        ));
    }
    let dim = theta0_flat.len();
    // Score statistics cover every replicate with a defined score,
    // including empty Bernoulli draws (zero vectors); estimate statistics
    // cover solved replicates only.
    let scored: Vec<&RepRecord> = records
        .iter()
        .filter(|r| r.score_at_theta0.len() == dim)
        .collect();
    let r_scored = scored.len();
    let mut mean_theta = vec![0.0; dim];
    let mut mean_score = vec![0.0; dim];
    for r in &used {
        for (mk, tk) in mean_theta.iter_mut().zip(&r.theta) {
            *mk += tk;
        }
    }
    for r in &scored {
        for (mk, sk) in mean_score.iter_mut().zip(&r.score_at_theta0) {
            *mk += sk;
        }
    }
    for mk in &mut mean_theta {
        *mk /= r_used as f64;
    }
    for mk in &mut mean_score {
        *mk /= r_scored as f64;
    }
    let mut emp_var = vec![0.0; dim];
    let mut score_var = vec![0.0; dim];
    for r in &used {
        for ((vk, tk), mk) in emp_var.iter_mut().zip(&r.theta).zip(&mean_theta) {
            *vk += (tk - mk) * (tk - mk);
        }
    }
    for r in &scored {
        for ((vk, sk), mk) in score_var
            .iter_mut()
            .zip(&r.score_at_theta0)
            .zip(&mean_score)
        {
            *vk += (sk - mk) * (sk - mk);
        }
    }
    let score_mc_se: Vec<f64> = score_var
        .iter()
        .map(|v| (v / (r_scored.max(2) - 1) as f64 / r_scored as f64).sqrt())
        .collect();
    let denom = (r_used.max(2) - 1) as f64;
    for vk in &mut emp_var {
        *vk /= denom;
    }
    let bias: Vec<f64> = mean_theta
        .iter()
        .zip(&theta0_flat)
        .map(|(a, b)| a - b)
        .collect();

    // Design-specific variance estimators for comparison.
    let sandwich_variance_diag = match &cfg.design {
        DesignSpec::Sbs { kind, t_waves } => {
            population_sandwich_diag(&g, &m, &theta0, &cfg.sigma, *kind, *t_waves).ok()
        }
        DesignSpec::Trw(_) => None,
    };
    let trw_replicate_variance = match &cfg.design {
        DesignSpec::Trw(spec) => {
            let walk_cfg = walk_config(spec, &g, cfg.seed);
            let est = |terms: &WeightedSampleTerms| {
                estimator.solve(terms, &cfg.sigma).map(|(theta, _)| theta)
            };
            replicate_estimate(&g, &m, &walk_cfg, est)
                .ok()
                .and_then(|rep| match rep.variance {
                    crate::estimate::VarianceEstimate::PerComponent(v) => Some(v),
                    _ => None,
                })
        }
        DesignSpec::Sbs { .. } => None,
    };

    Ok(McOutput {
        summary: McSummary {
            theta0: theta0_flat,
            replicates_requested: cfg.replications,
            replicates_used: r_used,
            replicates_failed: cfg.replications - r_used,
            mean_theta,
            bias,
            empirical_variance: emp_var,
            mean_score_theta0: mean_score,
            score_mc_se,
            sandwich_variance_diag,
            trw_replicate_variance,
        },
        records,
    })
}

fn walk_config(spec: &TrwSpec, g: &ValuedGraph, seed: u64) -> WalkConfig {
    WalkConfig {
        r: spec.r,
        burn_in: spec
            .burn_in
            .unwrap_or_else(|| WalkConfig::default_burn_in(g.n())),
        n_extract: spec.n_extract,
        thin: spec.thin,
        seed,
        replicates: spec.replicates,
    }
}

fn run_one_replicate(
    cfg: &ExperimentConfig,
    g: &ValuedGraph,
    m: &InfluenceMatrix,
    estimator: &EstimatorSpec,
    theta0: &Theta,
    rep: usize,
) -> RepRecord {
    let fail = |msg: String| RepRecord {
        rep,
        ok: false,
        message: Some(msg),
        theta: Vec::new(),
        score_at_theta0: Vec::new(),
        eligible: 0,
        objective: None,
    };
    let terms = match &cfg.design {
        DesignSpec::Sbs { kind, t_waves } => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(1 + rep as u64);
            let s0 = draw_initial_sample(*kind, g.n(), &mut rng);
            if s0.is_empty() {
                // A Bernoulli draw that selects nobody observes nothing;
                // its true score contribution is the zero vector, so the
                // score is recorded even though no estimate exists.
                return RepRecord {
                    rep,
                    ok: false,
                    message: Some("empty initial sample".into()),
                    theta: Vec::new(),
                    score_at_theta0: vec![0.0; theta0.dim()],
                    eligible: 0,
                    objective: None,
                };
            }
            let design = SbsDesign {
                kind: *kind,
                frame_size: g.n(),
            };
            match run_tsbs(g, &s0, *t_waves)
                .and_then(|sample| sbs_weights(&sample, &design, cfg.learning_target(), cfg.scheme))
            {
                Ok(weighting) => weighting.terms,
                Err(e) => return fail(e.to_string()),
            }
        }
        DesignSpec::Trw(spec) => {
            let walk_cfg = walk_config(spec, g, cfg.seed);
            match run_trw_stream(g, m, &walk_cfg, 1 + rep as u64)
                .and_then(|trace| trace_to_terms(&trace, &walk_cfg))
            {
                Ok(terms) => terms,
                Err(e) => return fail(e.to_string()),
            }
        }
    };
    let eligible = terms.len();
    let score = match score_at(&terms, theta0, &cfg.sigma) {
        Ok(s) => s,
        Err(e) => return fail(e.to_string()),
    };
    match estimator.solve(&terms, &cfg.sigma) {
        Ok((theta, objective)) => RepRecord {
            rep,
            ok: true,
            message: None,
            theta: theta.as_flat(),
            score_at_theta0: score,
            eligible,
            objective,
        },
        Err(e) => fail(e.to_string()),
    }
}

/// Diagonal of the population sandwich variance for a snowball design,
/// with ancestry sets taken in the full graph.
pub fn population_sandwich_diag(
    g: &ValuedGraph,
    m: &InfluenceMatrix,
    theta0: &Theta,
    sigma: &VarianceSpec,
    kind: DesignKind,
    t_waves: usize,
) -> Result<Vec<f64>> {
    let design = SbsDesign::new(kind, g.n())?;
    let fsets: Vec<BTreeSet<usize>> = (0..g.n())
        .map(|i| f_full_graph(g, i, t_waves))
        .collect::<Result<Vec<_>>>()?;
    let terms = unit_terms_from_graph(g, m)?;
    let scores = terms
        .items
        .iter()
        .map(|it| match theta0 {
            Theta::Cnf { .. } => node_score_cnf(&it.bundle, theta0, sigma),
            Theta::Rnf { .. } => node_score_rnf(&it.bundle, theta0, sigma, &LinearC),
        })
        .collect::<Result<Vec<_>>>()?;
    let jac = score_derivative(&terms, theta0, sigma, &LinearC, None)?;
    let incl = SbsPairInclusion {
        fsets: &fsets,
        design: &design,
    };
    let sandwich = sandwich_variance_population(&scores, &jac, &incl)?;
    Ok((0..sandwich.matrix.nrows())
        .map(|k| sandwich.matrix[(k, k)])
        .collect())
}

/// Exact expectation tables from exhaustive enumeration of every initial
/// sample a design can produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignTables {
    pub frame_size: usize,
    pub samples_enumerated: usize,
    /// Exact `Pr(delta_i = 1)` under the sample-dependent strategy.
    pub prob_delta: Vec<f64>,
    /// Exact `E[delta_i w_i]`; equals one when ancestry sets are
    /// sample-invariant, and measures the unconditional bias otherwise.
    pub expected_weighted_delta: Vec<f64>,
    /// Exact `Pr(delta_i delta_j = 1)`.
    pub pair_prob: Vec<Vec<f64>>,
}

const ENUMERATION_CAP: u128 = 100_000;

fn binomial(n: usize, m: usize) -> u128 {
    if m > n {
        return 0;
    }
    let m = m.min(n - m);
    let mut num: u128 = 1;
    for k in 0..m {
        num = num * (n - k) as u128 / (k + 1) as u128;
    }
    num
}

fn for_each_combination(n: usize, m: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        f(&idx);
        // Advance to the next lexicographic m-combination of 0..n.
        let mut k = m;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            if idx[k] != k + n - m {
                break;
            }
            if k == 0 {
                return;
            }
        }
        idx[k] += 1;
        for j in k + 1..m {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Enumerates all initial samples of the design with their probabilities.
pub fn enumerate_initial_samples(
    kind: DesignKind,
    n: usize,
) -> Result<Vec<(BTreeSet<usize>, f64)>> {
    match kind {
        DesignKind::Srswor { m } => {
            let total = binomial(n, m);
            if total > ENUMERATION_CAP {
                return Err(NetfnError::EnumerationTooLarge(total, ENUMERATION_CAP));
            }
            let p = 1.0 / total as f64;
            let mut out = Vec::with_capacity(total as usize);
            for_each_combination(n, m, |idx| {
                out.push((idx.iter().copied().collect(), p));
            });
            Ok(out)
        }
        DesignKind::Bernoulli { p } => {
            let total: u128 = 1u128 << n;
            if total > ENUMERATION_CAP {
                return Err(NetfnError::EnumerationTooLarge(total, ENUMERATION_CAP));
            }
            let mut out = Vec::with_capacity(total as usize);
            for bits in 0..(1usize << n) {
                let s: BTreeSet<usize> = (0..n).filter(|k| bits >> k & 1 == 1).collect();
                let k = s.len() as i32;
                out.push((s, p.powi(k) * (1.0 - p).powi(n as i32 - k)));
            }
            Ok(out)
        }
    }
}

/// Runs the design deterministically for every possible initial sample
/// and tabulates exact inclusion probabilities, weighted expectations,
/// and pairwise probabilities.
pub fn enumerate_designs(
    g: &ValuedGraph,
    kind: DesignKind,
    t_waves: usize,
    target: LearningTarget,
) -> Result<DesignTables> {
    let n = g.n();
    let design = SbsDesign::new(kind, n)?;
    let samples = enumerate_initial_samples(kind, n)?;
    let mut prob_delta = vec![0.0; n];
    let mut expected_weighted = vec![0.0; n];
    let mut pair = vec![vec![0.0; n]; n];
    let mut count = 0usize;
    for (s0, p) in samples {
        count += 1;
        if s0.is_empty() {
            // A Bernoulli draw can select nobody; nothing is observed.
            continue;
        }
        let sample = run_tsbs(g, &s0, t_waves)?;
        let delta = eligibility_flags(&sample, target);
        let eligible: Vec<usize> = (0..n).filter(|&i| delta[i]).collect();
        for &i in &eligible {
            let f = f_in_sample(&sample, i)?;
            let w = 1.0 / inclusion_prob(&f, &design)?;
            prob_delta[i] += p;
            expected_weighted[i] += p * w;
            for &j in &eligible {
                pair[i][j] += p;
            }
        }
    }
    Ok(DesignTables {
        frame_size: n,
        samples_enumerated: count,
        prob_delta,
        expected_weighted_delta: expected_weighted,
        pair_prob: pair,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cnf_config(replications: usize, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            graph: GraphSpec::Er {
                n: 14,
                edge_prob: 0.2,
                feature_dim: 1,
            },
            model: ModelSpec::Cnf {
                beta: vec![1.0],
                gamma: vec![0.5],
                noise_sd: 0.5,
            },
            design: DesignSpec::Sbs {
                kind: DesignKind::Srswor { m: 4 },
                t_waves: 2,
            },
            target: None,
            sigma: VarianceSpec::Unit,
            scheme: WeightScheme::InNormalized,
            grid: None,
            replications,
            seed,
            out_dir: None,
        }
    }

    #[test]
    fn single_replicate_summary_equals_record() {
        let cfg = cnf_config(1, 5);
        let out = run_mc(&cfg).unwrap();
        assert_eq!(out.records.len(), 1);
        let rec = &out.records[0];
        assert!(rec.ok);
        assert_eq!(out.summary.mean_theta, rec.theta);
        assert_eq!(out.summary.replicates_used, 1);
    }

    #[test]
    fn census_design_zero_bias_zero_variance() {
        let mut cfg = cnf_config(5, 6);
        cfg.design = DesignSpec::Sbs {
            kind: DesignKind::Srswor { m: 14 },
            t_waves: 2,
        };
        let out = run_mc(&cfg).unwrap();
        for k in 0..out.summary.bias.len() {
            assert_abs_diff_eq!(out.summary.bias[k], 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(out.summary.empirical_variance[k], 0.0, epsilon = 1e-20);
            assert_abs_diff_eq!(out.summary.mean_score_theta0[k], 0.0, epsilon = 1e-9);
        }
        // Census sandwich is exactly zero.
        for v in out.summary.sandwich_variance_diag.unwrap() {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-18);
        }
    }

    #[test]
    fn theta0_invariant_to_design() {
        let a = run_mc(&cnf_config(2, 9)).unwrap();
        let mut cfg = cnf_config(2, 9);
        cfg.design = DesignSpec::Trw(TrwSpec {
            r: 1.0,
            burn_in: Some(100),
            n_extract: 30,
            thin: 1,
            replicates: 3,
        });
        let b = run_mc(&cfg).unwrap();
        assert_eq!(a.summary.theta0, b.summary.theta0);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = run_mc(&cnf_config(4, 11)).unwrap();
        let b = run_mc(&cnf_config(4, 11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bernoulli_empty_draws_enter_score_mean() {
        let mut cfg = cnf_config(3000, 77);
        cfg.graph = GraphSpec::Er {
            n: 8,
            edge_prob: 0.25,
            feature_dim: 1,
        };
        // p small enough that empty draws actually occur.
        cfg.design = DesignSpec::Sbs {
            kind: DesignKind::Bernoulli { p: 0.15 },
            t_waves: 2,
        };
        let out = run_mc(&cfg).unwrap();
        assert!(out.summary.replicates_failed > 0, "want some empty draws");
        // Empty draws carry a zero score vector in their record.
        let empty = out
            .records
            .iter()
            .find(|r| !r.ok && r.message.as_deref() == Some("empty initial sample"))
            .expect("an empty draw");
        assert!(empty.score_at_theta0.iter().all(|&v| v == 0.0));
        // With the zero contributions included, the weighted score is
        // unbiased: mean within 3 MC standard errors of zero.
        for (mean, se) in out
            .summary
            .mean_score_theta0
            .iter()
            .zip(&out.summary.score_mc_se)
        {
            assert!(mean.abs() <= 3.0 * se, "|{mean}| > 3 * {se}");
        }
    }

    #[test]
    fn oversized_design_rejected_up_front() {
        let mut cfg = cnf_config(3, 1);
        cfg.design = DesignSpec::Sbs {
            kind: DesignKind::Srswor { m: 100 },
            t_waves: 2,
        };
        assert!(matches!(run_mc(&cfg), Err(NetfnError::BadDesign(_))));
    }

    #[test]
    fn combination_iterator_counts() {
        let mut count = 0usize;
        for_each_combination(6, 3, |idx| {
            assert_eq!(idx.len(), 3);
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
            count += 1;
        });
        assert_eq!(count, 20);
        assert_eq!(binomial(6, 3), 20);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 5), 0);
    }

    #[test]
    fn enumerate_census_all_probabilities_one() {
        let g = fixture(FixtureId::Fig1).unwrap();
        let tables =
            enumerate_designs(&g, DesignKind::Srswor { m: 4 }, 2, LearningTarget::Cnf).unwrap();
        assert_eq!(tables.samples_enumerated, 1);
        for i in 0..4 {
            assert_abs_diff_eq!(tables.prob_delta[i], 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(tables.expected_weighted_delta[i], 1.0, epsilon = 1e-15);
            for j in 0..4 {
                assert_abs_diff_eq!(tables.pair_prob[i][j], 1.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn enumerate_fig2_singleton_design_table() {
        let g = fixture(FixtureId::Fig2).unwrap();
        let tables =
            enumerate_designs(&g, DesignKind::Srswor { m: 1 }, 3, LearningTarget::Cnf).unwrap();
        assert_eq!(tables.samples_enumerated, 5);
        // Seed-sample membership over the five singleton starts, by hand.
        let expect = [0.6, 0.8, 1.0, 0.8, 0.6];
        for (got, want) in tables.prob_delta.iter().zip(expect) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        // The center node's weighted expectation shows the sample-dependent
        // ancestry shrinking for the two endpoint starts: 2 * 5/4 + 3 * 1, over 5.
        assert_abs_diff_eq!(tables.expected_weighted_delta[2], 1.1, epsilon = 1e-12);
    }

    #[test]
    fn two_wave_ancestry_is_sample_invariant() {
        // With T = 2 the ancestry set of an eligible node equals its closed
        // neighbourhood in the full graph, so E[delta w] = 1 exactly.
        for seed in [3u64, 4, 5] {
            let g = gen_er_digraph(7, 0.3, 1, seed).unwrap();
            let tables =
                enumerate_designs(&g, DesignKind::Srswor { m: 2 }, 2, LearningTarget::Cnf).unwrap();
            for i in 0..7 {
                if tables.prob_delta[i] > 0.0 {
                    assert_abs_diff_eq!(tables.expected_weighted_delta[i], 1.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn pairwise_enumeration_matches_closed_form_for_fixed_sets() {
        // With T = 2 ancestry sets are sample-invariant, so enumeration must
        // reproduce the closed-form joint probabilities exactly.
        use crate::sbs::joint_inclusion_prob;
        for seed in [7u64, 8] {
            let g = gen_er_digraph(6, 0.35, 1, seed).unwrap();
            let kind = DesignKind::Srswor { m: 2 };
            let design = SbsDesign::new(kind, 6).unwrap();
            let tables = enumerate_designs(&g, kind, 2, LearningTarget::Cnf).unwrap();
            let fsets: Vec<BTreeSet<usize>> =
                (0..6).map(|i| f_full_graph(&g, i, 2).unwrap()).collect();
            for i in 0..6 {
                for j in 0..6 {
                    let closed = joint_inclusion_prob(&fsets[i], &fsets[j], &design).unwrap();
                    assert_abs_diff_eq!(tables.pair_prob[i][j], closed, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn enumeration_cap_enforced() {
        let g = gen_er_digraph(30, 0.1, 1, 1).unwrap();
        assert!(matches!(
            enumerate_designs(&g, DesignKind::Srswor { m: 15 }, 2, LearningTarget::Cnf),
            Err(NetfnError::EnumerationTooLarge(..))
        ));
    }

    #[test]
    fn bernoulli_enumeration_includes_empty_draw() {
        let g = fixture(FixtureId::Fig1).unwrap();
        let tables =
            enumerate_designs(&g, DesignKind::Bernoulli { p: 0.5 }, 2, LearningTarget::Cnf)
                .unwrap();
        assert_eq!(tables.samples_enumerated, 16);
        // Every node individually: Pr(in seed) < 1 because of the empty draw.
        for i in 0..4 {
            assert!(tables.prob_delta[i] < 1.0);
            assert!(tables.prob_delta[i] > 0.0);
        }
    }
}
