//! Transform graph structure and its text-manifest serialization.
//!
//! A graph is a list of nodes in topological order: each node consumes
//! projection features or outputs of earlier nodes and defines one new
//! output id. The manifest format (one node per line) is what the master
//! hands to workers; the grammar is documented in `docs/transforms.md`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Operator, ScoreOp};
use crate::model::{FeatureId, FeatureKind};

/// One edge source in the graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GraphInput {
    /// A raw projected feature.
    Feature(FeatureId),
    /// The output of an earlier node.
    Node(u32),
}

impl fmt::Display for GraphInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphInput::Feature(id) => write!(f, "{id}"),
            GraphInput::Node(out) => write!(f, "n{out}"),
        }
    }
}

/// One operator application producing output feature `output`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformNode {
    pub output: u32,
    pub op: Operator,
    pub inputs: Vec<GraphInput>,
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("node {0} declared twice")]
    DuplicateOutput(u32),
    #[error("node {node} references node {referenced} before its definition")]
    ForwardReference { node: u32, referenced: u32 },
    #[error("{0} takes {1} inputs, got {2}")]
    BadArity(&'static str, usize, usize),
    #[error("{0} needs at least one input")]
    NoInputs(&'static str),
    #[error("bad {0} params: {1}")]
    BadParams(&'static str, String),
    #[error("manifest line {0}: {1}")]
    Parse(usize, String),
}

/// A validated DAG of transform nodes in topological (declaration) order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransformGraph {
    nodes: Vec<TransformNode>,
}

impl TransformGraph {
    pub fn new(nodes: Vec<TransformNode>) -> Result<Self, GraphError> {
        let mut defined = std::collections::HashSet::new();
        for node in &nodes {
            node.op.check_params()?;
            match node.op.arity() {
                Some(n) if node.inputs.len() != n => {
                    return Err(GraphError::BadArity(node.op.name(), n, node.inputs.len()));
                }
                None if node.inputs.is_empty() => {
                    return Err(GraphError::NoInputs(node.op.name()));
                }
                _ => {}
            }
            for input in &node.inputs {
                if let GraphInput::Node(out) = input {
                    if !defined.contains(out) {
                        return Err(GraphError::ForwardReference {
                            node: node.output,
                            referenced: *out,
                        });
                    }
                }
            }
            if !defined.insert(node.output) {
                return Err(GraphError::DuplicateOutput(node.output));
            }
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[TransformNode] {
        &self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Projection features consumed by at least one node.
    pub fn consumed_features(&self) -> std::collections::HashSet<FeatureId> {
        self.nodes
            .iter()
            .flat_map(|n| n.inputs.iter())
            .filter_map(|i| match i {
                GraphInput::Feature(id) => Some(*id),
                GraphInput::Node(_) => None,
            })
            .collect()
    }

    /// Node outputs consumed by at least one later node.
    pub fn consumed_outputs(&self) -> std::collections::HashSet<u32> {
        self.nodes
            .iter()
            .flat_map(|n| n.inputs.iter())
            .filter_map(|i| match i {
                GraphInput::Node(out) => Some(*out),
                GraphInput::Feature(_) => None,
            })
            .collect()
    }

    /// Renders the graph as its one-node-per-line manifest.
    pub fn manifest_text(&self) -> String {
        let mut out = String::new();
        for node in &self.nodes {
            out.push_str(&render_node(node));
            out.push('\n');
        }
        out
    }

    /// Parses a manifest produced by [`Self::manifest_text`] (or written by
    /// hand). Blank lines and `#` comments are ignored.
    pub fn parse_manifest(text: &str) -> Result<Self, GraphError> {
        let mut nodes = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            nodes.push(parse_node(line).map_err(|msg| GraphError::Parse(lineno + 1, msg))?);
        }
        Self::new(nodes)
    }
}

fn render_node(node: &TransformNode) -> String {
    let mut s = format!("{} {}", node.output, node.op.name());
    match &node.op {
        Operator::Bucketize { borders } => {
            s.push_str(&format!(" borders={}", join_f64(borders)));
        }
        Operator::SigridHash { max } => s.push_str(&format!(" max={max}")),
        Operator::FirstX { x } => s.push_str(&format!(" x={x}")),
        Operator::Logit { eps } => s.push_str(&format!(" eps={eps}")),
        Operator::BoxCox { lambda } => s.push_str(&format!(" lambda={lambda}")),
        Operator::Onehot { cardinality } => s.push_str(&format!(" cardinality={cardinality}")),
        Operator::Clamp { lo, hi } => s.push_str(&format!(" lo={lo} hi={hi}")),
        Operator::PositiveModulus { modulus } => s.push_str(&format!(" modulus={modulus}")),
        Operator::Enumerate | Operator::IdListIntersect | Operator::Cartesian => {}
        Operator::MapId { table, default } => {
            let pairs: Vec<String> = table.iter().map(|(k, v)| format!("{k}:{v}")).collect();
            s.push_str(&format!(" map={} default={default}", pairs.join(";")));
        }
        Operator::Ngram { n } => s.push_str(&format!(" n={n}")),
        Operator::ComputeScore { op } => match op {
            ScoreOp::Sum => s.push_str(" op=sum"),
            ScoreOp::Max => s.push_str(" op=max"),
            ScoreOp::Scale(c) => s.push_str(&format!(" op=scale c={c}")),
        },
        Operator::GetLocalHour { utc_offset } => s.push_str(&format!(" offset={utc_offset}")),
        Operator::Sampling { rate, seed } => s.push_str(&format!(" rate={rate} seed={seed}")),
    }
    if !node.inputs.is_empty() {
        let refs: Vec<String> = node.inputs.iter().map(|i| i.to_string()).collect();
        s.push_str(&format!(" inputs={}", refs.join(",")));
    }
    s
}

fn join_f64(vals: &[f64]) -> String {
    vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_node(line: &str) -> Result<TransformNode, String> {
    let mut tokens = line.split_whitespace();
    let output: u32 = tokens
        .next()
        .ok_or("missing output id")?
        .parse()
        .map_err(|_| "output id must be a u32".to_string())?;
    let op_name = tokens.next().ok_or("missing operator name")?;

    let mut params: BTreeMap<&str, &str> = BTreeMap::new();
    for token in tokens {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got {token}"))?;
        params.insert(key, value);
    }

    let inputs = match params.remove("inputs") {
        Some(refs) => refs
            .split(',')
            .map(parse_input)
            .collect::<Result<Vec<_>, _>>()?,
        None => Vec::new(),
    };

    let need = |key: &str| -> Result<&str, String> {
        params.get(key).copied().ok_or_else(|| format!("{op_name} requires {key}="))
    };
    let fparam = |key: &str| -> Result<f64, String> {
        need(key)?.parse::<f64>().map_err(|_| format!("{key} must be a float"))
    };

    let op = match op_name {
        "bucketize" => {
            let borders = need("borders")?
                .split(',')
                .map(|v| v.parse::<f64>().map_err(|_| "bad border".to_string()))
                .collect::<Result<Vec<_>, _>>()?;
            Operator::Bucketize { borders }
        }
        "sigridhash" => Operator::SigridHash {
            max: need("max")?.parse().map_err(|_| "max must be a u64".to_string())?,
        },
        "firstx" => Operator::FirstX {
            x: need("x")?.parse().map_err(|_| "x must be a u32".to_string())?,
        },
        "logit" => Operator::Logit { eps: fparam("eps")? },
        "boxcox" => Operator::BoxCox { lambda: fparam("lambda")? },
        "onehot" => Operator::Onehot {
            cardinality: need("cardinality")?
                .parse()
                .map_err(|_| "cardinality must be a u32".to_string())?,
        },
        "clamp" => Operator::Clamp { lo: fparam("lo")?, hi: fparam("hi")? },
        "posmod" => Operator::PositiveModulus {
            modulus: need("modulus")?.parse().map_err(|_| "modulus must be an i64".to_string())?,
        },
        "enumerate" => Operator::Enumerate,
        "idlistintersect" => Operator::IdListIntersect,
        "mapid" => {
            let mut table = BTreeMap::new();
            let spec = params.get("map").copied().unwrap_or("");
            if !spec.is_empty() {
                for pair in spec.split(';') {
                    let (k, v) = pair
                        .split_once(':')
                        .ok_or_else(|| format!("bad map entry {pair}"))?;
                    table.insert(
                        k.parse::<i64>().map_err(|_| "bad map key".to_string())?,
                        v.parse::<i64>().map_err(|_| "bad map value".to_string())?,
                    );
                }
            }
            Operator::MapId {
                table,
                default: need("default")?
                    .parse()
                    .map_err(|_| "default must be an i64".to_string())?,
            }
        }
        "ngram" => Operator::Ngram {
            n: need("n")?.parse().map_err(|_| "n must be a u32".to_string())?,
        },
        "cartesian" => Operator::Cartesian,
        "computescore" => {
            let op = match need("op")? {
                "sum" => ScoreOp::Sum,
                "max" => ScoreOp::Max,
                "scale" => ScoreOp::Scale(fparam("c")? as f32),
                other => return Err(format!("unknown score op {other}")),
            };
            Operator::ComputeScore { op }
        }
        "getlocalhour" => Operator::GetLocalHour {
            utc_offset: need("offset")?
                .parse()
                .map_err(|_| "offset must be an i64".to_string())?,
        },
        "sampling" => Operator::Sampling {
            rate: fparam("rate")?,
            seed: need("seed")?.parse().map_err(|_| "seed must be a u64".to_string())?,
        },
        other => return Err(format!("unknown operator {other}")),
    };

    Ok(TransformNode { output, op, inputs })
}

fn parse_input(token: &str) -> Result<GraphInput, String> {
    let (prefix, rest) = token.split_at(1);
    let id: u32 = rest.parse().map_err(|_| format!("bad input reference {token}"))?;
    match prefix {
        "d" => Ok(GraphInput::Feature(FeatureId { id, kind: FeatureKind::Dense })),
        "s" => Ok(GraphInput::Feature(FeatureId { id, kind: FeatureKind::Sparse })),
        "x" => Ok(GraphInput::Feature(FeatureId { id, kind: FeatureKind::ScoredSparse })),
        "n" => Ok(GraphInput::Node(id)),
        _ => Err(format!("bad input reference {token}")),
    }
}
