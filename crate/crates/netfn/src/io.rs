//! File formats: CSV node/edge ingestion with label mapping, the JSON
//! graph bundle, sample bundles, and CSV exports for inspection.
//!
//! Node CSV: header `node,x1,...,xp[,y]`. Edge CSV: header
//! `source,target,omega`. Labels are arbitrary strings mapped to dense
//! indices at ingestion, in first-appearance order of the node file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NetfnError, Result};
use crate::estimate::EstimateReport;
use crate::graph::ValuedGraph;
use crate::nf::MuField;
use crate::sbs::{SampleGraph, SbsDesign, SbsWeighting};
use crate::trw::{WalkConfig, WalkTrace};

/// Load echo: counts and content checksums of the ingested files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphLoadReport {
    pub nodes: usize,
    pub edges: usize,
    pub feature_dim: usize,
    pub has_outcomes: bool,
    pub checksums: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn csv_err(path: &Path, msg: impl Into<String>) -> NetfnError {
    NetfnError::CsvFormat {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

type NodeColumns = (Vec<String>, Vec<Vec<f64>>, Option<Vec<f64>>);

/// Reads the node file: labels, features, optional outcomes.
fn read_nodes_csv(path: &Path) -> Result<NodeColumns> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut x_cols = Vec::new();
    let mut y_col = None;
    let mut node_col = None;
    for (k, h) in headers.iter().enumerate() {
        match h.trim() {
            "node" => node_col = Some(k),
            "y" => y_col = Some(k),
            other if other.starts_with('x') => x_cols.push(k),
            other => {
                return Err(csv_err(path, format!("unexpected column {other:?}")));
            }
        }
    }
    let node_col = node_col.ok_or_else(|| csv_err(path, "missing `node` column"))?;

    let mut labels = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for record in reader.records() {
        let record = record?;
        labels.push(record[node_col].trim().to_string());
        let xi = x_cols
            .iter()
            .map(|&k| {
                record[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| csv_err(path, format!("bad feature value: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        x.push(xi);
        if let Some(k) = y_col {
            y.push(
                record[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| csv_err(path, format!("bad outcome value: {e}")))?,
            );
        }
    }
    Ok((labels, x, y_col.map(|_| y)))
}

/// Reads the edge file against a label index.
fn read_edges_csv(
    path: &Path,
    index: &BTreeMap<String, usize>,
) -> Result<Vec<(usize, usize, f64)>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| csv_err(path, format!("missing `{name}` column")))
    };
    let (sc, tc, wc) = (col("source")?, col("target")?, col("omega")?);
    let mut edges = Vec::new();
    for record in reader.records() {
        let record = record?;
        let lookup = |label: &str| -> Result<usize> {
            index
                .get(label.trim())
                .copied()
                .ok_or_else(|| csv_err(path, format!("edge references unknown node {label:?}")))
        };
        let omega = record[wc]
            .trim()
            .parse::<f64>()
            .map_err(|e| csv_err(path, format!("bad omega value: {e}")))?;
        edges.push((lookup(&record[sc])?, lookup(&record[tc])?, omega));
    }
    Ok(edges)
}

/// Loads a graph from a node CSV and an edge CSV, echoing counts and
/// SHA-256 checksums of both files.
pub fn load_graph_csv(
    nodes_path: impl AsRef<Path>,
    edges_path: impl AsRef<Path>,
) -> Result<(ValuedGraph, GraphLoadReport)> {
    let nodes_path = nodes_path.as_ref();
    let edges_path = edges_path.as_ref();
    let (labels, x, y) = read_nodes_csv(nodes_path)?;
    let mut index = BTreeMap::new();
    for (k, label) in labels.iter().enumerate() {
        if index.insert(label.clone(), k).is_some() {
            return Err(csv_err(
                nodes_path,
                format!("duplicate node label {label:?}"),
            ));
        }
    }
    let edges = read_edges_csv(edges_path, &index)?;
    let mut g = ValuedGraph::new(labels.len(), &edges, x, y)?;
    g.set_labels(labels);
    let mut checksums = BTreeMap::new();
    checksums.insert(
        nodes_path.display().to_string(),
        sha256_hex(&fs::read(nodes_path)?),
    );
    checksums.insert(
        edges_path.display().to_string(),
        sha256_hex(&fs::read(edges_path)?),
    );
    let report = GraphLoadReport {
        nodes: g.n(),
        edges: g.edge_count(),
        feature_dim: g.feature_dim(),
        has_outcomes: g.outcomes().is_some(),
        checksums,
    };
    Ok((g, report))
}

/// Writes the graph as the node/edge CSV pair.
pub fn save_graph_csv(
    g: &ValuedGraph,
    nodes_path: impl AsRef<Path>,
    edges_path: impl AsRef<Path>,
) -> Result<()> {
    let label = |i: usize| -> String {
        g.labels()
            .map(|l| l[i].clone())
            .unwrap_or_else(|| i.to_string())
    };
    let mut w = csv::Writer::from_path(nodes_path.as_ref())?;
    let mut header = vec!["node".to_string()];
    header.extend((1..=g.feature_dim()).map(|k| format!("x{k}")));
    if g.outcomes().is_some() {
        header.push("y".into());
    }
    w.write_record(&header)?;
    for i in 0..g.n() {
        let mut row = vec![label(i)];
        row.extend(g.x(i).iter().map(|v| format!("{v}")));
        if let Some(y) = g.y(i) {
            row.push(format!("{y}"));
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(edges_path.as_ref())?;
    w.write_record(["source", "target", "omega"])?;
    for (i, j, omega) in g.edges() {
        w.write_record([label(i), label(j), format!("{omega}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Self-describing JSON bundle holding nodes and edges together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphBundle {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node: String,
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub source: String,
    pub target: String,
    pub omega: f64,
}

impl GraphBundle {
    pub fn from_graph(g: &ValuedGraph) -> Self {
        let label = |i: usize| -> String {
            g.labels()
                .map(|l| l[i].clone())
                .unwrap_or_else(|| i.to_string())
        };
        GraphBundle {
            nodes: (0..g.n())
                .map(|i| NodeRecord {
                    node: label(i),
                    x: g.x(i).to_vec(),
                    y: g.y(i),
                })
                .collect(),
            edges: g
                .edges()
                .map(|(i, j, omega)| EdgeRecord {
                    source: label(i),
                    target: label(j),
                    omega,
                })
                .collect(),
        }
    }

    pub fn to_graph(&self) -> Result<ValuedGraph> {
        let mut index = BTreeMap::new();
        let mut labels = Vec::new();
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut any_y = false;
        for (k, node) in self.nodes.iter().enumerate() {
            if index.insert(node.node.clone(), k).is_some() {
                return Err(NetfnError::BadConfig(format!(
                    "duplicate node label {:?} in bundle",
                    node.node
                )));
            }
            labels.push(node.node.clone());
            x.push(node.x.clone());
            if node.y.is_some() {
                any_y = true;
            }
            y.push(node.y.unwrap_or(f64::NAN));
        }
        if any_y && y.iter().any(|v| v.is_nan()) {
            return Err(NetfnError::BadConfig(
                "bundle mixes nodes with and without outcomes".into(),
            ));
        }
        let edges = self
            .edges
            .iter()
            .map(|e| {
                let s = index.get(&e.source).copied().ok_or_else(|| {
                    NetfnError::BadConfig(format!("edge references unknown node {:?}", e.source))
                })?;
                let t = index.get(&e.target).copied().ok_or_else(|| {
                    NetfnError::BadConfig(format!("edge references unknown node {:?}", e.target))
                })?;
                Ok((s, t, e.omega))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut g = ValuedGraph::new(labels.len(), &edges, x, any_y.then_some(y))?;
        g.set_labels(labels);
        Ok(g)
    }
}

/// Loads a graph from a JSON bundle file, echoing counts and checksum.
pub fn load_graph_bundle(path: impl AsRef<Path>) -> Result<(ValuedGraph, GraphLoadReport)> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let bundle: GraphBundle = serde_json::from_slice(&bytes)?;
    let g = bundle.to_graph()?;
    let mut checksums = BTreeMap::new();
    checksums.insert(path.display().to_string(), sha256_hex(&bytes));
    let report = GraphLoadReport {
        nodes: g.n(),
        edges: g.edge_count(),
        feature_dim: g.feature_dim(),
        has_outcomes: g.outcomes().is_some(),
        checksums,
    };
    Ok((g, report))
}

pub fn save_graph_bundle(g: &ValuedGraph, path: impl AsRef<Path>) -> Result<()> {
    let bundle = GraphBundle::from_graph(g);
    fs::write(path, serde_json::to_vec_pretty(&bundle)?)?;
    Ok(())
}

/// One exported sample: either a snowball sample with its weighting or a
/// random-walk trace with its config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleBundle {
    Sbs {
        design: SbsDesign,
        sample: SampleGraph,
        weighting: SbsWeighting,
    },
    Trw {
        config: WalkConfig,
        trace: WalkTrace,
    },
}

pub fn save_sample_bundle(bundle: &SampleBundle, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(bundle)?)?;
    Ok(())
}

pub fn load_sample_bundle(path: impl AsRef<Path>) -> Result<SampleBundle> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Writes a mean field as `node,mu` rows.
pub fn save_mu_csv(mu: &MuField, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["node", "mu"])?;
    for (i, v) in mu.mu.iter().enumerate() {
        w.write_record([i.to_string(), format!("{v}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes per-node residuals as `node,weight,residual` rows.
pub fn save_residuals_csv(rows: &[(usize, f64, f64)], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["node", "weight", "residual"])?;
    for (node, weight, residual) in rows {
        w.write_record([node.to_string(), format!("{weight}"), format!("{residual}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a walk trace as `step,node,degree` rows.
pub fn save_trace_csv(trace: &WalkTrace, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["step", "node", "degree"])?;
    for (k, (&node, &degree)) in trace.states.iter().zip(&trace.degrees).enumerate() {
        w.write_record([k.to_string(), node.to_string(), degree.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_estimate_report(report: &EstimateReport, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(report)?)?;
    Ok(())
}

/// Writes the per-node probability table of a weighted snowball sample:
/// eligibility, ancestry size, inclusion probability, and weight.
pub fn save_weight_table_csv(weighting: &SbsWeighting, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["node", "delta", "ancestry_size", "inclusion_prob", "weight"])?;
    for node in 0..weighting.delta.len() {
        let fsize = weighting.fsets[node].as_ref().map_or(0, BTreeSet::len);
        let prob = if weighting.weights[node] > 0.0 {
            1.0 / weighting.weights[node]
        } else {
            0.0
        };
        w.write_record([
            node.to_string(),
            (weighting.delta[node] as u8).to_string(),
            fsize.to_string(),
            format!("{prob}"),
            format!("{}", weighting.weights[node]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes exact enumeration tables: first-order rows then the pairwise
/// probability matrix.
pub fn save_design_tables_csv(
    tables: &crate::mc::DesignTables,
    first_order_path: impl AsRef<Path>,
    pairwise_path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(first_order_path.as_ref())?;
    w.write_record(["node", "prob_delta", "expected_weighted_delta"])?;
    for i in 0..tables.frame_size {
        w.write_record([
            i.to_string(),
            format!("{}", tables.prob_delta[i]),
            format!("{}", tables.expected_weighted_delta[i]),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(pairwise_path.as_ref())?;
    let mut header = vec!["node".to_string()];
    header.extend((0..tables.frame_size).map(|j| j.to_string()));
    w.write_record(&header)?;
    for i in 0..tables.frame_size {
        let mut row = vec![i.to_string()];
        row.extend(tables.pair_prob[i].iter().map(|p| format!("{p}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
