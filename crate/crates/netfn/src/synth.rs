//! Synthetic graphs and outcome generation for experiments and tests.

use std::str::FromStr;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{NetfnError, Result};
use crate::graph::{InfluenceMatrix, ValuedGraph, WeightScheme};
use crate::nf::{cnf_mu, rnf_mu_dense, rnf_mu_exact, LinearC, Theta};

/// The two small digraphs used as regression fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureId {
    /// Four nodes: 1 -> 2, 2 -> 3, 2 -> 4, 3 -> 4.
    Fig1,
    /// Five nodes in a line with two reciprocal pairs:
    /// 1 -> 2, 2 <-> 3, 3 -> 4, 4 <-> 5.
    Fig2,
}

impl FromStr for FixtureId {
    type Err = NetfnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig1" => Ok(Self::Fig1),
            "fig2" => Ok(Self::Fig2),
            other => Err(NetfnError::UnknownFixture(other.to_string())),
        }
    }
}

impl std::fmt::Display for FixtureId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Fig1 => write!(f, "fig1"),
            Self::Fig2 => write!(f, "fig2"),
        }
    }
}

/// Builds a fixture graph with unit edge values and constant scalar
/// features; tests substitute their own values where needed.
pub fn fixture(id: FixtureId) -> Result<ValuedGraph> {
    let (n, edges): (usize, &[(usize, usize)]) = match id {
        FixtureId::Fig1 => (4, &[(0, 1), (1, 2), (1, 3), (2, 3)]),
        FixtureId::Fig2 => (5, &[(0, 1), (1, 2), (2, 1), (2, 3), (3, 4), (4, 3)]),
    };
    let valued: Vec<(usize, usize, f64)> = edges.iter().map(|&(i, j)| (i, j, 1.0)).collect();
    ValuedGraph::new(n, &valued, vec![vec![1.0]; n], None)
}

/// Erdos-Renyi digraph: every ordered pair carries an edge independently
/// with probability `edge_prob`; `omega ~ U(0.5, 1.5)`, features standard
/// normal with `feature_dim` coordinates. Deterministic in `seed`.
pub fn gen_er_digraph(
    n: usize,
    edge_prob: f64,
    feature_dim: usize,
    seed: u64,
) -> Result<ValuedGraph> {
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(NetfnError::BadProbability(edge_prob));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega_dist = Uniform::new(0.5, 1.5).expect("valid range");
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < edge_prob {
                edges.push((i, j, omega_dist.sample(&mut rng)));
            }
        }
    }
    let normal = Normal::new(0.0, 1.0).expect("valid params");
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..feature_dim).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    ValuedGraph::new(n, &edges, x, None)
}

/// Data-generating model for synthetic outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Cnf {
        beta: Vec<f64>,
        gamma: Vec<f64>,
        noise_sd: f64,
    },
    Rnf {
        beta: Vec<f64>,
        lambda: f64,
        noise_sd: f64,
        scheme: WeightScheme,
    },
}

impl ModelSpec {
    /// The generating parameters as a [`Theta`] of the matching mode.
    pub fn theta(&self) -> Theta {
        match self {
            ModelSpec::Cnf { beta, gamma, .. } => Theta::Cnf {
                beta: beta.clone(),
                gamma: gamma.clone(),
            },
            ModelSpec::Rnf { beta, lambda, .. } => Theta::Rnf {
                beta: beta.clone(),
                lambda: *lambda,
            },
        }
    }

    pub fn noise_sd(&self) -> f64 {
        match self {
            ModelSpec::Cnf { noise_sd, .. } | ModelSpec::Rnf { noise_sd, .. } => *noise_sd,
        }
    }
}

/// Attaches synthetic outcomes `y = mu + e` to the graph, with `e` iid
/// normal with the configured standard deviation (zero allowed for
/// exact-recovery tests). The recursive mean solves through the influence
/// matrix; an infeasible `lambda` is an error.
pub fn gen_outcomes(g: &ValuedGraph, spec: &ModelSpec, seed: u64) -> Result<ValuedGraph> {
    let mu = match spec {
        ModelSpec::Cnf { .. } => cnf_mu(g, &spec.theta())?.mu,
        ModelSpec::Rnf {
            beta,
            lambda,
            scheme,
            ..
        } => {
            let m = InfluenceMatrix::from_graph(g, *scheme);
            let check = m.norm_check(*lambda);
            if !check.ok {
                return Err(NetfnError::NormRestriction {
                    rho: check.spectral_radius,
                });
            }
            let c = crate::nf::c_values(g, beta, &LinearC)?;
            if g.n() <= 500 {
                rnf_mu_dense(&m, &c, *lambda)?.mu
            } else {
                rnf_mu_exact(&m, &c, *lambda)?.mu
            }
        }
    };
    let sd = spec.noise_sd();
    let y = if sd == 0.0 {
        mu
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sd).map_err(|e| NetfnError::BadConfig(e.to_string()))?;
        mu.into_iter().map(|m| m + noise.sample(&mut rng)).collect()
    };
    g.with_outcomes(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{unit_terms_from_graph, wls_solve, VarianceSpec};
    use approx::assert_abs_diff_eq;

    #[test]
    fn fig1_adjacency_matches_reference_matrix() {
        let g = fixture(FixtureId::Fig1).unwrap();
        let expect = [[0, 1, 0, 0], [0, 0, 1, 1], [0, 0, 0, 1], [0, 0, 0, 0]];
        for (i, row) in expect.iter().enumerate() {
            for (j, &want) in row.iter().enumerate() {
                assert_eq!(g.has_edge(i, j), want == 1, "({i},{j})");
            }
        }
    }

    #[test]
    fn fig1_matrix_powers() {
        let g = fixture(FixtureId::Fig1).unwrap();
        let mut a = nalgebra::DMatrix::<f64>::zeros(4, 4);
        for (i, j, _) in g.edges() {
            a[(i, j)] = 1.0;
        }
        let a2 = &a * &a;
        let a3 = &a2 * &a;
        let a4 = &a3 * &a;
        let expect2 = nalgebra::DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 0.0, 1.0, 1.0, //
                0.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0,
            ],
        );
        let expect3 = nalgebra::DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0,
            ],
        );
        assert_eq!(a2, expect2);
        assert_eq!(a3, expect3);
        assert!(a4.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fig2_line_distances() {
        let g = fixture(FixtureId::Fig2).unwrap();
        let dist = g.undirected_distances(&std::collections::BTreeSet::from([0]));
        assert_eq!(dist, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn er_extremes() {
        let empty = gen_er_digraph(5, 0.0, 1, 1).unwrap();
        assert_eq!(empty.edge_count(), 0);
        let full = gen_er_digraph(3, 1.0, 1, 1).unwrap();
        assert_eq!(full.edge_count(), 6);
    }

    #[test]
    fn er_deterministic_in_seed() {
        let a = gen_er_digraph(12, 0.3, 2, 77).unwrap();
        let b = gen_er_digraph(12, 0.3, 2, 77).unwrap();
        assert_eq!(a, b);
        let c = gen_er_digraph(12, 0.3, 2, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn outcomes_deterministic_and_noiseless_recovery() {
        let g = gen_er_digraph(15, 0.25, 2, 3).unwrap();
        let spec = ModelSpec::Cnf {
            beta: vec![0.5, 1.0],
            gamma: vec![-0.25, 0.75],
            noise_sd: 0.0,
        };
        let ga = gen_outcomes(&g, &spec, 4).unwrap();
        let gb = gen_outcomes(&g, &spec, 4).unwrap();
        assert_eq!(ga.outcomes(), gb.outcomes());

        let m = InfluenceMatrix::from_graph(&ga, WeightScheme::InNormalized);
        let terms = unit_terms_from_graph(&ga, &m).unwrap();
        let theta = wls_solve(&terms, &VarianceSpec::Unit, true).unwrap();
        for (got, want) in theta.as_flat().iter().zip([0.5, 1.0, -0.25, 0.75]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn rnf_outcomes_reject_infeasible_lambda() {
        let g = ValuedGraph::new(2, &[(0, 1, 1.0), (1, 0, 1.0)], vec![vec![1.0]; 2], None).unwrap();
        let spec = ModelSpec::Rnf {
            beta: vec![1.0],
            lambda: 1.2,
            noise_sd: 0.0,
            scheme: WeightScheme::InNormalized,
        };
        assert!(matches!(
            gen_outcomes(&g, &spec, 0),
            Err(NetfnError::NormRestriction { .. })
        ));
    }
}
