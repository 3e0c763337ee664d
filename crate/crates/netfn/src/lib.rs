//! Design-based learning of network functions from sampled graphs.
//!
//! A network function assigns each node a value defined through the node
//! and its neighbours in a valued graph: contextually, through engineered
//! neighbour features, or recursively, through a linear coupling of the
//! node means themselves. Applying such a definition to a subgraph gives
//! systematically different answers than applying it to the full graph,
//! so learning from partial observation needs design-based correction.
//!
//! This crate implements the whole pipeline:
//!
//! - [`graph`]: valued-graph storage, neighbourhood and degree queries,
//!   tau-order neighbourhoods, influence matrices, and the norm
//!   restriction check for the recursive coupling;
//! - [`nf`]: contextual features and mean fields, exact and truncated
//!   recursive solves;
//! - [`estimate`]: estimating-equation scores, weighted least squares,
//!   the profiling grid search, and sandwich / replicate variance
//!   estimators;
//! - [`trw`]: targeted random walk sampling with stationary-probability
//!   weights;
//! - [`sbs`]: T-wave snowball sampling with sample-dependent ancestry
//!   weights and exact inclusion probabilities;
//! - [`synth`], [`mc`]: synthetic graphs, built-in fixtures, Monte Carlo
//!   experiments, and exhaustive design enumeration;
//! - [`io`]: CSV/JSON ingestion and export formats.

pub mod error;
pub mod estimate;
pub mod graph;
pub mod io;
pub mod mc;
pub mod nf;
pub mod sbs;
pub mod synth;
pub mod trw;

pub use error::{NetfnError, Result};
pub use estimate::{
    EstimateReport, NodeBundle, VarianceEstimate, VarianceSpec, WeightedItem, WeightedSampleTerms,
};
pub use graph::{Degrees, InfluenceMatrix, NormCheck, ValuedGraph, WeightScheme};
pub use nf::{MuField, MuMode, Theta};
pub use sbs::{DesignKind, LearningTarget, SampleGraph, SbsDesign};
pub use synth::{FixtureId, ModelSpec};
pub use trw::{WalkConfig, WalkTrace};
