//! Error type shared across the crate.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum NetfnError {
    #[error("node index {node} out of range for graph with {n} nodes")]
    InvalidNode { node: usize, n: usize },

    #[error("loops are not allowed: edge ({0}, {0})")]
    LoopEdge(usize),

    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),

    #[error("edge value omega must be positive and finite, got {omega} on ({i}, {j})")]
    BadEdgeValue { i: usize, j: usize, omega: f64 },

    #[error("feature vector for node {node} has length {got}, expected {expected}")]
    FeatureDimMismatch {
        node: usize,
        got: usize,
        expected: usize,
    },

    #[error("dimension mismatch: {context} (got {got}, expected {expected})")]
    DimMismatch {
        context: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("graph has no outcome values loaded")]
    MissingOutcomes,

    #[error("value required for node {node} is not observed: {what}")]
    MissingValue { node: usize, what: &'static str },

    #[error("unknown scheme id {0:?} (expected \"in_normalized\" or \"raw\")")]
    UnknownScheme(String),

    #[error("unknown fixture id {0:?} (expected \"fig1\" or \"fig2\")")]
    UnknownFixture(String),

    #[error("tau must be >= 1")]
    ZeroTau,

    #[error("norm restriction violated: estimated spectral radius of lambda*M is {rho}")]
    NormRestriction { rho: f64 },

    #[error("fixed-point iteration hit the step cap {cap} with residual {residual}")]
    IterationCap { cap: usize, residual: f64 },

    #[error("weighted Gram matrix is singular (rank {rank} of {dim})")]
    SingularGram { rank: usize, dim: usize },

    #[error("weights must be strictly positive and finite, got {weight} for node {node}")]
    BadWeight { node: usize, weight: f64 },

    #[error("variance values must be strictly positive, got {value} for node {node}")]
    BadVariance { node: usize, value: f64 },

    #[error("empty grid")]
    EmptyGrid,

    #[error("no feasible grid point ({0} tried)")]
    AllGridInfeasible(usize),

    #[error("invalid walk config: {0}")]
    BadWalkConfig(String),

    #[error("invalid sampling design: {0}")]
    BadDesign(String),

    #[error("initial sample must be nonempty")]
    EmptyInitialSample,

    #[error("node {0} is not eligible in this sample")]
    NotEligible(usize),

    #[error("ancestry set of size {f} exceeds frame of size {n}")]
    AncestryExceedsFrame { f: usize, n: usize },

    #[error("eligible node {0} has zero inclusion probability")]
    ZeroInclusionProbability(usize),

    #[error("enumeration too large: {0} initial samples (cap {1})")]
    EnumerationTooLarge(u128, u128),

    #[error("all replicates failed: {0}")]
    AllReplicatesFailed(String),

    #[error("invalid experiment config: {0}")]
    BadConfig(String),

    #[error("probability out of range: {0}")]
    BadProbability(f64),

    #[error("csv parse error in {path}: {msg}")]
    CsvFormat { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NetfnError>;
