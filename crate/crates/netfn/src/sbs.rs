//! T-wave snowball sampling under the reciprocal incident observation
//! procedure.
//!
//! Waves expand through the undirected view of the adjacency: applying
//! the observation procedure to a node reveals both directions of every
//! incident edge together with the neighbours' values. Weights come from
//! the sample-dependent strategy: for each eligible node the ancestry set
//! `F_{i,s}` is computed in the observed sample graph and the weight is
//! the reciprocal of the probability that the initial sample hits it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{NetfnError, Result};
use crate::estimate::{NeighborData, NodeBundle, PairInclusion, WeightedItem, WeightedSampleTerms};
use crate::graph::{ValuedGraph, WeightScheme};

/// Law of the initial sample `s_0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    /// Simple random sampling of `m` nodes without replacement.
    Srswor { m: usize },
    /// Independent inclusion of every node with probability `p`.
    Bernoulli { p: f64 },
}

/// Initial-sample design over a frame of `frame_size` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbsDesign {
    pub kind: DesignKind,
    pub frame_size: usize,
}

impl SbsDesign {
    pub fn new(kind: DesignKind, frame_size: usize) -> Result<Self> {
        let d = Self { kind, frame_size };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DesignKind::Srswor { m } => {
                if m == 0 || m > self.frame_size {
                    return Err(NetfnError::BadDesign(format!(
                        "SRSWOR size {m} outside 1..={}",
                        self.frame_size
                    )));
                }
            }
            DesignKind::Bernoulli { p } => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(NetfnError::BadDesign(format!(
                        "Bernoulli probability {p} outside (0, 1)"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `Pr(s_0 avoids a fixed set of the given size)`, in log space for
    /// the without-replacement case.
    pub fn avoidance(&self, f_size: usize) -> f64 {
        let n = self.frame_size;
        debug_assert!(f_size <= n);
        match self.kind {
            DesignKind::Srswor { m } => {
                if n - f_size < m {
                    // C(n - f, m) = 0 when the remainder is too small.
                    return 0.0;
                }
                if f_size == 0 {
                    return 1.0;
                }
                // C(n-f, m) / C(n, m) = prod_{k=0}^{m-1} (n-f-k) / (n-k)
                let log_ratio: f64 = (0..m)
                    .map(|k| ((n - f_size - k) as f64).ln() - ((n - k) as f64).ln())
                    .sum();
                log_ratio.exp()
            }
            DesignKind::Bernoulli { p } => (1.0 - p).powi(f_size as i32),
        }
    }
}

/// Inclusion probability `Pr(s_0 intersects F) = 1 - Pr(avoid F)` for a
/// fixed ancestry set `F`.
pub fn inclusion_prob(f: &BTreeSet<usize>, design: &SbsDesign) -> Result<f64> {
    design.validate()?;
    if f.len() > design.frame_size {
        return Err(NetfnError::AncestryExceedsFrame {
            f: f.len(),
            n: design.frame_size,
        });
    }
    if let Some(&max) = f.iter().next_back() {
        if max >= design.frame_size {
            return Err(NetfnError::InvalidNode {
                node: max,
                n: design.frame_size,
            });
        }
    }
    Ok(1.0 - design.avoidance(f.len()))
}

/// Joint eligibility probability by inclusion-exclusion over the two
/// ancestry sets and their union.
pub fn joint_inclusion_prob(
    f_i: &BTreeSet<usize>,
    f_j: &BTreeSet<usize>,
    design: &SbsDesign,
) -> Result<f64> {
    design.validate()?;
    let union_size = f_i.union(f_j).count();
    if union_size > design.frame_size {
        return Err(NetfnError::AncestryExceedsFrame {
            f: union_size,
            n: design.frame_size,
        });
    }
    Ok(
        1.0 - design.avoidance(f_i.len()) - design.avoidance(f_j.len())
            + design.avoidance(union_size),
    )
}

/// Which learning target the eligibility flags certify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningTarget {
    Cnf,
    Rnf,
    /// Learning the tau-order approximation; needs the full tau-order
    /// neighbourhood observed.
    Qtau(usize),
}

/// One realized T-wave snowball sample with everything it observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleGraph {
    pub frame_size: usize,
    pub t_waves: usize,
    pub s0: BTreeSet<usize>,
    /// Waves `s_1 ... s_T`; empty sets record early termination.
    pub waves: Vec<BTreeSet<usize>>,
    /// Seed sample `s = s_0 + s_1 + ... + s_{T-1}`.
    pub seed_sample: BTreeSet<usize>,
    /// All observed nodes `U_s`.
    pub observed_nodes: BTreeSet<usize>,
    /// Observed adjacency entries with their edge values, sorted.
    pub observed_edges: Vec<(usize, usize, f64)>,
    /// Observed node features.
    pub x: BTreeMap<usize, Vec<f64>>,
    /// Observed node outcomes, when the graph carries them.
    pub y: BTreeMap<usize, f64>,
}

impl SampleGraph {
    /// Undirected adjacency of the observed sample graph.
    pub fn undirected_adjacency(&self) -> BTreeMap<usize, BTreeSet<usize>> {
        let mut adj: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for &(i, j, _) in &self.observed_edges {
            adj.entry(i).or_default().insert(j);
            adj.entry(j).or_default().insert(i);
        }
        adj
    }

    /// BFS distances from `sources` in the observed sample graph.
    fn sample_distances(&self, sources: &BTreeSet<usize>) -> BTreeMap<usize, usize> {
        let adj = self.undirected_adjacency();
        let mut dist: BTreeMap<usize, usize> = BTreeMap::new();
        let mut queue = VecDeque::new();
        for &s in sources {
            dist.insert(s, 0);
            queue.push_back(s);
        }
        while let Some(v) = queue.pop_front() {
            let d = dist[&v] + 1;
            if let Some(nbrs) = adj.get(&v) {
                for &j in nbrs {
                    if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(j) {
                        e.insert(d);
                        queue.push_back(j);
                    }
                }
            }
        }
        dist
    }

    /// True when some wave up to `T` came out empty, meaning the whole
    /// component of `s_0` sits inside the seed sample and is fully
    /// observed.
    pub fn exhausted(&self) -> bool {
        self.waves.iter().any(BTreeSet::is_empty)
    }

    /// In-edges of a seed-sample node with their values, from `A_s`.
    fn observed_in_edges(&self, i: usize) -> Vec<(usize, f64)> {
        self.observed_edges
            .iter()
            .filter(|&&(_, t, _)| t == i)
            .map(|&(s, _, w)| (s, w))
            .collect()
    }

    /// Out-edges of a seed-sample node with their values, from `A_s`.
    fn observed_out_edges(&self, i: usize) -> Vec<(usize, f64)> {
        self.observed_edges
            .iter()
            .filter(|&&(s, _, _)| s == i)
            .map(|&(_, t, w)| (t, w))
            .collect()
    }
}

/// Runs T-wave snowball sampling from the initial node set `s0`.
///
/// Wave `t` collects the not-yet-sampled neighbours of wave `t-1`;
/// sampling stops early on an empty wave. Observed adjacency is
/// `s x U  union  U x s` for the seed sample `s`, together with all
/// values on observed nodes and edges.
pub fn run_tsbs(g: &ValuedGraph, s0: &BTreeSet<usize>, t_waves: usize) -> Result<SampleGraph> {
    if s0.is_empty() {
        return Err(NetfnError::EmptyInitialSample);
    }
    if t_waves == 0 {
        return Err(NetfnError::BadDesign("wave count T must be >= 1".into()));
    }
    for &i in s0 {
        if i >= g.n() {
            return Err(NetfnError::InvalidNode { node: i, n: g.n() });
        }
    }

    let mut sampled: BTreeSet<usize> = s0.clone();
    let mut waves: Vec<BTreeSet<usize>> = Vec::with_capacity(t_waves);
    let mut prev: BTreeSet<usize> = s0.clone();
    for _ in 0..t_waves {
        let mut wave = BTreeSet::new();
        if !prev.is_empty() {
            for &v in &prev {
                for j in g.neighbors(v)? {
                    if !sampled.contains(&j) {
                        wave.insert(j);
                    }
                }
            }
        }
        sampled.extend(wave.iter().copied());
        waves.push(wave.clone());
        prev = wave;
    }

    let mut seed_sample = s0.clone();
    for wave in waves.iter().take(t_waves - 1) {
        seed_sample.extend(wave.iter().copied());
    }

    let mut observed_edges = Vec::new();
    for (i, j, w) in g.edges() {
        if seed_sample.contains(&i) || seed_sample.contains(&j) {
            observed_edges.push((i, j, w));
        }
    }
    observed_edges.sort_unstable_by_key(|&(i, j, _)| (i, j));

    let mut observed_nodes = seed_sample.clone();
    for &(i, j, _) in &observed_edges {
        observed_nodes.insert(i);
        observed_nodes.insert(j);
    }

    let mut x = BTreeMap::new();
    let mut y = BTreeMap::new();
    for &i in &observed_nodes {
        x.insert(i, g.x(i).to_vec());
        if let Some(yi) = g.y(i) {
            y.insert(i, yi);
        }
    }

    Ok(SampleGraph {
        frame_size: g.n(),
        t_waves,
        s0: s0.clone(),
        waves,
        seed_sample,
        observed_nodes,
        observed_edges,
        x,
        y,
    })
}

/// Eligibility flags over the frame for a learning target.
///
/// Contextual and recursive targets need only the node's own observed
/// neighbourhood, so eligibility is membership in the seed sample. The
/// tau-order target is certified conservatively: a node qualifies when
/// its sample-graph distance from `s_0` is at most `T - tau`, which
/// places every node within `tau - 1` hops of it inside the seed sample;
/// when sampling exhausted the component before wave `T`, every seed
/// node qualifies regardless of `tau`.
pub fn eligibility_flags(sample: &SampleGraph, target: LearningTarget) -> Vec<bool> {
    let mut delta = vec![false; sample.frame_size];
    match target {
        LearningTarget::Cnf | LearningTarget::Rnf => {
            for &i in &sample.seed_sample {
                delta[i] = true;
            }
        }
        LearningTarget::Qtau(tau) => {
            let exhausted = sample.exhausted();
            if exhausted {
                for &i in &sample.seed_sample {
                    delta[i] = true;
                }
            }
            if sample.t_waves >= tau {
                let budget = sample.t_waves - tau;
                let dist = sample.sample_distances(&sample.s0);
                for &i in &sample.seed_sample {
                    if dist.get(&i).is_some_and(|&d| d <= budget) {
                        delta[i] = true;
                    }
                }
            }
        }
    }
    delta
}

/// Sample-dependent ancestry set `F_{i,s}`: the nodes (including `i`)
/// whose selection into `s_0` would bring `i` into the seed sample, found
/// by breadth-first search in the observed sample graph.
pub fn f_in_sample(sample: &SampleGraph, i: usize) -> Result<BTreeSet<usize>> {
    if !sample.seed_sample.contains(&i) {
        return Err(NetfnError::NotEligible(i));
    }
    let radius = sample.t_waves - 1;
    let dist = sample.sample_distances(&BTreeSet::from([i]));
    Ok(dist
        .into_iter()
        .filter(|&(_, d)| d <= radius)
        .map(|(j, _)| j)
        .collect())
}

/// Population ancestry set `F_i` computed in the full graph: all nodes
/// within undirected distance `T - 1` of `i`, including `i`.
pub fn f_full_graph(g: &ValuedGraph, i: usize, t_waves: usize) -> Result<BTreeSet<usize>> {
    if i >= g.n() {
        return Err(NetfnError::InvalidNode { node: i, n: g.n() });
    }
    if t_waves == 0 {
        return Err(NetfnError::BadDesign("wave count T must be >= 1".into()));
    }
    let dist = g.undirected_distances(&BTreeSet::from([i]));
    Ok((0..g.n()).filter(|&j| dist[j] < t_waves).collect())
}

/// Weighted terms plus the per-node tables of one weighted sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbsWeighting {
    pub terms: WeightedSampleTerms,
    /// Eligibility over the frame.
    pub delta: Vec<bool>,
    /// Weight per frame node; zero for observed-but-ineligible nodes.
    pub weights: Vec<f64>,
    /// Realized ancestry set per eligible node.
    pub fsets: Vec<Option<BTreeSet<usize>>>,
}

/// Builds the weighted sample terms for a realized snowball sample.
///
/// Every eligible node gets `w_i = 1 / Pr(s_0 hits F_{i,s})` and a local
/// data bundle assembled purely from observed values; ineligible observed
/// nodes keep weight zero.
pub fn sbs_weights(
    sample: &SampleGraph,
    design: &SbsDesign,
    target: LearningTarget,
    scheme: WeightScheme,
) -> Result<SbsWeighting> {
    design.validate()?;
    if design.frame_size != sample.frame_size {
        return Err(NetfnError::BadDesign(format!(
            "design frame {} does not match sample frame {}",
            design.frame_size, sample.frame_size
        )));
    }
    let delta = eligibility_flags(sample, target);
    let mut weights = vec![0.0; sample.frame_size];
    let mut fsets: Vec<Option<BTreeSet<usize>>> = vec![None; sample.frame_size];
    let mut items = Vec::new();
    for i in 0..sample.frame_size {
        if !delta[i] {
            continue;
        }
        let f = f_in_sample(sample, i)?;
        let prob = inclusion_prob(&f, design)?;
        if prob <= 0.0 || prob.is_nan() {
            return Err(NetfnError::ZeroInclusionProbability(i));
        }
        let weight = 1.0 / prob;
        weights[i] = weight;
        fsets[i] = Some(f);
        items.push(WeightedItem {
            weight,
            bundle: bundle_from_sample(sample, i, scheme)?,
        });
    }
    Ok(SbsWeighting {
        terms: WeightedSampleTerms::new(items)?,
        delta,
        weights,
        fsets,
    })
}

/// Assembles the local score bundle of a seed-sample node from observed
/// values only.
pub fn bundle_from_sample(
    sample: &SampleGraph,
    i: usize,
    scheme: WeightScheme,
) -> Result<NodeBundle> {
    if !sample.seed_sample.contains(&i) {
        return Err(NetfnError::NotEligible(i));
    }
    let in_edges = sample.observed_in_edges(i);
    let out_edges = sample.observed_out_edges(i);
    let in_total: f64 = in_edges.iter().map(|&(_, w)| w).sum();

    let mut neighbor_ids: BTreeSet<usize> = BTreeSet::new();
    neighbor_ids.extend(in_edges.iter().map(|&(j, _)| j));
    neighbor_ids.extend(out_edges.iter().map(|&(j, _)| j));

    let x_i = sample
        .x
        .get(&i)
        .ok_or(NetfnError::MissingValue { node: i, what: "x" })?
        .clone();
    let y_i = *sample
        .y
        .get(&i)
        .ok_or(NetfnError::MissingValue { node: i, what: "y" })?;

    let mut neighbors = Vec::with_capacity(neighbor_ids.len());
    for j in neighbor_ids {
        let omega_in = in_edges.iter().find(|&&(s, _)| s == j).map(|&(_, w)| w);
        let omega_out = out_edges.iter().find(|&&(t, _)| t == j).map(|&(_, w)| w);
        let m = match (scheme, omega_in) {
            (_, None) => 0.0,
            (WeightScheme::Raw, Some(w)) => w,
            (WeightScheme::InNormalized, Some(w)) => w / in_total,
        };
        neighbors.push(NeighborData {
            node: j,
            m,
            x: sample
                .x
                .get(&j)
                .ok_or(NetfnError::MissingValue { node: j, what: "x" })?
                .clone(),
            y: *sample
                .y
                .get(&j)
                .ok_or(NetfnError::MissingValue { node: j, what: "y" })?,
            omega_in,
            omega_out,
        });
    }
    Ok(NodeBundle {
        node: i,
        x: x_i,
        y: y_i,
        neighbors,
    })
}

/// Pairwise inclusion probabilities from fixed ancestry sets and a design.
///
/// Feeds the sandwich variance: population mode with full-graph ancestry
/// sets for every node, plug-in mode with the realized sets of one sample.
pub struct SbsPairInclusion<'a> {
    pub fsets: &'a [BTreeSet<usize>],
    pub design: &'a SbsDesign,
}

impl PairInclusion for SbsPairInclusion<'_> {
    fn first_order(&self, i: usize) -> f64 {
        1.0 - self.design.avoidance(self.fsets[i].len())
    }

    fn joint(&self, i: usize, j: usize) -> f64 {
        let union = self.fsets[i].union(&self.fsets[j]).count();
        1.0 - self.design.avoidance(self.fsets[i].len())
            - self.design.avoidance(self.fsets[j].len())
            + self.design.avoidance(union)
    }
}
