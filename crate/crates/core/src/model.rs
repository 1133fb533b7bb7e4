//! Domain types shared by every stage of the pipeline: samples, schemas,
//! projections, splits, batches, and worker statistics.
//!
//! Everything here is immutable after construction and safe to share across
//! threads.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transform::{GraphInput, TransformGraph};

/// What a feature's values look like.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    /// One float per covered row.
    Dense,
    /// A variable-length list of categorical ids per covered row.
    Sparse,
    /// A sparse list where each id carries a float weight.
    ScoredSparse,
}

impl FeatureKind {
    pub fn code(self) -> u8 {
        match self {
            FeatureKind::Dense => 0,
            FeatureKind::Sparse => 1,
            FeatureKind::ScoredSparse => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FeatureKind::Dense),
            1 => Some(FeatureKind::Sparse),
            2 => Some(FeatureKind::ScoredSparse),
            _ => None,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            FeatureKind::Dense => 'd',
            FeatureKind::Sparse => 's',
            FeatureKind::ScoredSparse => 'x',
        };
        write!(f, "{c}")
    }
}

/// Identifies one logical feature column. Ids are unique per kind within a
/// table, so the pair is the key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureId {
    pub id: u32,
    pub kind: FeatureKind,
}

impl FeatureId {
    pub fn dense(id: u32) -> Self {
        Self { id, kind: FeatureKind::Dense }
    }

    pub fn sparse(id: u32) -> Self {
        Self { id, kind: FeatureKind::Sparse }
    }

    pub fn scored(id: u32) -> Self {
        Self { id, kind: FeatureKind::ScoredSparse }
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind, self.id)
    }
}

/// One training row. A feature absent from every map means the row does not
/// cover it; a present sparse feature may still carry an empty list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sample {
    pub dense: BTreeMap<FeatureId, f64>,
    pub sparse: BTreeMap<FeatureId, Vec<i64>>,
    pub scored: BTreeMap<FeatureId, Vec<(i64, f32)>>,
    pub label: f32,
}

impl Sample {
    /// Checks that every present feature exists in `schema` with the right
    /// kind and that map keys carry the kind of the map they sit in.
    pub fn validate_against(&self, schema: &TableSchema) -> Result<(), ModelError> {
        for id in self.dense.keys() {
            if id.kind != FeatureKind::Dense {
                return Err(ModelError::KindMismatch(*id));
            }
            if !schema.contains(*id) {
                return Err(ModelError::UnknownFeature(*id));
            }
        }
        for id in self.sparse.keys() {
            if id.kind != FeatureKind::Sparse {
                return Err(ModelError::KindMismatch(*id));
            }
            if !schema.contains(*id) {
                return Err(ModelError::UnknownFeature(*id));
            }
        }
        for id in self.scored.keys() {
            if id.kind != FeatureKind::ScoredSparse {
                return Err(ModelError::KindMismatch(*id));
            }
            if !schema.contains(*id) {
                return Err(ModelError::UnknownFeature(*id));
            }
        }
        Ok(())
    }
}

/// Per-feature statistics recorded in the table schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub id: FeatureId,
    /// Fraction of rows covering this feature, in [0, 1].
    pub coverage: f64,
    /// Mean sparse list length; 0 for dense features.
    pub mean_sparse_len: f64,
}

/// Schema of one table partition: its name, partition key (`YYYY-MM-DD`),
/// and feature list sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub table: String,
    pub partition: String,
    features: Vec<FeatureSpec>,
}

impl TableSchema {
    pub fn new(
        table: impl Into<String>,
        partition: impl Into<String>,
        mut features: Vec<FeatureSpec>,
    ) -> Result<Self, ModelError> {
        features.sort_by_key(|f| f.id);
        for w in features.windows(2) {
            if w[0].id == w[1].id {
                return Err(ModelError::DuplicateFeature(w[0].id));
            }
        }
        for f in &features {
            if !(0.0..=1.0).contains(&f.coverage) {
                return Err(ModelError::BadCoverage(f.id, f.coverage));
            }
            if f.mean_sparse_len < 0.0
                || (f.id.kind == FeatureKind::Dense && f.mean_sparse_len != 0.0)
            {
                return Err(ModelError::BadSparseLen(f.id, f.mean_sparse_len));
            }
        }
        Ok(Self { table: table.into(), partition: partition.into(), features })
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn contains(&self, id: FeatureId) -> bool {
        self.features.binary_search_by_key(&id, |f| f.id).is_ok()
    }

    pub fn spec_of(&self, id: FeatureId) -> Option<&FeatureSpec> {
        self.features
            .binary_search_by_key(&id, |f| f.id)
            .ok()
            .map(|i| &self.features[i])
    }

    pub fn feature_ids(&self) -> impl Iterator<Item = FeatureId> + '_ {
        self.features.iter().map(|f| f.id)
    }
}

/// The column filter of a session: which features to read, in request order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureProjection {
    requested: Vec<FeatureId>,
}

impl FeatureProjection {
    pub fn new(requested: Vec<FeatureId>) -> Result<Self, ModelError> {
        if requested.is_empty() {
            return Err(ModelError::EmptyProjection);
        }
        let mut seen = std::collections::HashSet::new();
        for id in &requested {
            if !seen.insert(*id) {
                return Err(ModelError::DuplicateFeature(*id));
            }
        }
        Ok(Self { requested })
    }

    pub fn ids(&self) -> &[FeatureId] {
        &self.requested
    }

    pub fn contains(&self, id: FeatureId) -> bool {
        self.requested.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.requested.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requested.is_empty()
    }
}

/// Everything a training job asks of the pipeline: the table, a row filter
/// (partitions), a column filter (projection), the transform graph, and the
/// batching geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSpec {
    pub table: String,
    pub partitions: Vec<String>,
    pub projection: FeatureProjection,
    pub graph: TransformGraph,
    pub batch_size: u32,
    pub split_size: u64,
}

impl SessionSpec {
    /// Stable digest used to pair checkpoints with the session they belong to.
    pub fn digest(&self) -> u64 {
        let mut h = crate::hash::Fnv1a::new();
        h.update(self.table.as_bytes());
        for p in &self.partitions {
            h.update(p.as_bytes());
        }
        for id in self.projection.ids() {
            h.update(&id.id.to_le_bytes());
            h.update(&[id.kind.code()]);
        }
        h.update(self.graph.manifest_text().as_bytes());
        h.update(&self.batch_size.to_le_bytes());
        h.update(&self.split_size.to_le_bytes());
        h.finish()
    }
}

/// A self-contained unit of work: a contiguous row range within one file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub id: u64,
    pub file: String,
    /// Inclusive stripe range covering the rows.
    pub stripe_first: u32,
    pub stripe_last: u32,
    /// Table-global row range, half-open.
    pub row_first: u64,
    pub row_last: u64,
}

impl Split {
    pub fn rows(&self) -> u64 {
        self.row_last - self.row_first
    }
}

/// A densely packed mini-batch of transformed features.
///
/// Sparse outputs use CSR layout: `offsets` has `rows + 1` entries with
/// `offsets[0] == 0` and `offsets[rows] == values.len()`. Scored outputs
/// carry a score per value in `scores`. `row_ids` carries the table-global
/// id of each packed row, which is what delivery accounting audits.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorBatch {
    pub batch_id: u64,
    pub rows: u32,
    pub dense: BTreeMap<FeatureId, DenseBuffer>,
    pub sparse: BTreeMap<FeatureId, SparseBuffer>,
    pub labels: Vec<f32>,
    pub row_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseBuffer {
    /// Values per row; buffer length is `rows * width`.
    pub width: u32,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseBuffer {
    pub values: Vec<i64>,
    pub offsets: Vec<i32>,
    pub scores: Option<Vec<f32>>,
}

impl TensorBatch {
    /// Verifies the CSR and buffer-length contracts.
    pub fn check_shape(&self) -> Result<(), ModelError> {
        let rows = self.rows as usize;
        if self.labels.len() != rows || self.row_ids.len() != rows {
            return Err(ModelError::BadBatchShape("label/row-id length"));
        }
        for buf in self.dense.values() {
            if buf.data.len() != rows * buf.width as usize {
                return Err(ModelError::BadBatchShape("dense buffer length"));
            }
        }
        for buf in self.sparse.values() {
            if buf.offsets.len() != rows + 1 {
                return Err(ModelError::BadBatchShape("offsets length"));
            }
            if buf.offsets[0] != 0 || buf.offsets[rows] as usize != buf.values.len() {
                return Err(ModelError::BadBatchShape("offsets endpoints"));
            }
            if buf.offsets.windows(2).any(|w| w[1] < w[0]) {
                return Err(ModelError::BadBatchShape("offsets monotonicity"));
            }
            if let Some(scores) = &buf.scores {
                if scores.len() != buf.values.len() {
                    return Err(ModelError::BadBatchShape("scores length"));
                }
            }
        }
        Ok(())
    }
}

/// Utilization and buffering statistics a worker reports on each heartbeat.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerStats {
    pub cpu: f64,
    pub memory: f64,
    pub network: f64,
    pub buffered_batches: u32,
    pub splits_completed: u64,
}

impl WorkerStats {
    pub fn clamped(mut self) -> Self {
        self.cpu = self.cpu.clamp(0.0, 1.0);
        self.memory = self.memory.clamp(0.0, 1.0);
        self.network = self.network.clamp(0.0, 1.0);
        self
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("feature {0} not in table schema")]
    UnknownFeature(FeatureId),
    #[error("feature {0} keyed under the wrong kind map")]
    KindMismatch(FeatureId),
    #[error("duplicate feature {0}")]
    DuplicateFeature(FeatureId),
    #[error("feature {0} coverage {1} outside [0,1]")]
    BadCoverage(FeatureId, f64),
    #[error("feature {0} mean sparse length {1} invalid")]
    BadSparseLen(FeatureId, f64),
    #[error("projection must name at least one feature")]
    EmptyProjection,
    #[error("malformed tensor batch: {0}")]
    BadBatchShape(&'static str),
}

/// One problem found while validating a session against a schema.
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    /// Projection names a feature the schema does not define.
    UnknownProjectionFeature(FeatureId),
    /// A transform node consumes an input no projection feature or earlier
    /// node provides.
    DanglingTransformInput { output: u32, input: GraphInput },
    /// Two transform nodes declare the same output id.
    DuplicateTransformOutput(u32),
    /// No partitions selected.
    NoPartitions,
    /// Batch size must not exceed split size.
    BatchExceedsSplit { batch: u32, split: u64 },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::UnknownProjectionFeature(id) => {
                write!(f, "projection feature {id} not in schema")
            }
            ValidationIssue::DanglingTransformInput { output, input } => {
                write!(f, "node {output} consumes undefined input {input}")
            }
            ValidationIssue::DuplicateTransformOutput(id) => {
                write!(f, "duplicate transform output {id}")
            }
            ValidationIssue::NoPartitions => write!(f, "no partitions selected"),
            ValidationIssue::BatchExceedsSplit { batch, split } => {
                write!(f, "batch size {batch} exceeds split size {split}")
            }
        }
    }
}

/// Outcome of [`validate_session`]; empty means the spec is executable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks a session spec against a table schema: projection membership,
/// transform-graph input resolution, and structural limits.
pub fn validate_session(spec: &SessionSpec, schema: &TableSchema) -> ValidationReport {
    let mut issues = Vec::new();

    if spec.partitions.is_empty() {
        issues.push(ValidationIssue::NoPartitions);
    }
    if spec.batch_size as u64 > spec.split_size {
        issues.push(ValidationIssue::BatchExceedsSplit {
            batch: spec.batch_size,
            split: spec.split_size,
        });
    }
    for id in spec.projection.ids() {
        if !schema.contains(*id) {
            issues.push(ValidationIssue::UnknownProjectionFeature(*id));
        }
    }

    // Walk nodes in declaration order; an input must resolve to a projection
    // feature or to an output declared strictly earlier.
    let mut defined: std::collections::HashSet<u32> = std::collections::HashSet::new();
    for node in spec.graph.nodes() {
        for input in &node.inputs {
            let ok = match input {
                GraphInput::Feature(id) => spec.projection.contains(*id),
                GraphInput::Node(out) => defined.contains(out),
            };
            if !ok {
                issues.push(ValidationIssue::DanglingTransformInput {
                    output: node.output,
                    input: input.clone(),
                });
            }
        }
        if !defined.insert(node.output) {
            issues.push(ValidationIssue::DuplicateTransformOutput(node.output));
        }
    }

    ValidationReport { issues }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::{Operator, TransformNode};

    fn schema_with(ids: &[FeatureId]) -> TableSchema {
        let feats = ids
            .iter()
            .map(|&id| FeatureSpec {
                id,
                coverage: 1.0,
                mean_sparse_len: if id.kind == FeatureKind::Dense { 0.0 } else { 2.0 },
            })
            .collect();
        TableSchema::new("t", "2024-01-01", feats).unwrap()
    }

    fn spec_with(projection: Vec<FeatureId>, graph: TransformGraph) -> SessionSpec {
        SessionSpec {
            table: "t".into(),
            partitions: vec!["2024-01-01".into()],
            projection: FeatureProjection::new(projection).unwrap(),
            graph,
            batch_size: 4,
            split_size: 16,
        }
    }

    #[test]
    fn valid_session_yields_empty_report() {
        let a = FeatureId::dense(1);
        let schema = schema_with(&[a]);
        let spec = spec_with(vec![a], TransformGraph::default());
        assert!(validate_session(&spec, &schema).is_ok());
    }

    #[test]
    fn unknown_projection_feature_is_named() {
        let a = FeatureId::dense(1);
        let ghost = FeatureId::dense(999_999);
        let schema = schema_with(&[a]);
        let spec = spec_with(vec![a, ghost], TransformGraph::default());
        let report = validate_session(&spec, &schema);
        assert_eq!(report.issues, vec![ValidationIssue::UnknownProjectionFeature(ghost)]);
    }

    #[test]
    fn dangling_transform_input_is_named() {
        // A node consuming a feature no projection provides (and no node
        // produces) must surface as a dangling edge.
        let a = FeatureId::sparse(1);
        let unprojected = FeatureId::sparse(55);
        let schema = schema_with(&[a, unprojected]);
        let graph = TransformGraph::new(vec![TransformNode {
            output: 100,
            op: Operator::FirstX { x: 2 },
            inputs: vec![GraphInput::Feature(unprojected)],
        }])
        .unwrap();
        let spec = spec_with(vec![a], graph);
        let report = validate_session(&spec, &schema);
        assert_eq!(
            report.issues,
            vec![ValidationIssue::DanglingTransformInput {
                output: 100,
                input: GraphInput::Feature(unprojected),
            }]
        );
    }

    #[test]
    fn batch_larger_than_split_is_flagged() {
        let a = FeatureId::dense(1);
        let schema = schema_with(&[a]);
        let mut spec = spec_with(vec![a], TransformGraph::default());
        spec.batch_size = 32;
        spec.split_size = 4;
        let report = validate_session(&spec, &schema);
        assert!(report
            .issues
            .contains(&ValidationIssue::BatchExceedsSplit { batch: 32, split: 4 }));
    }

    #[test]
    fn feature_id_ordering_is_id_then_kind() {
        let mut v = vec![FeatureId::sparse(2), FeatureId::dense(2), FeatureId::dense(1)];
        v.sort();
        assert_eq!(v, vec![FeatureId::dense(1), FeatureId::dense(2), FeatureId::sparse(2)]);
    }

    #[test]
    fn batch_shape_check_catches_bad_offsets() {
        let mut batch = TensorBatch {
            batch_id: 0,
            rows: 2,
            labels: vec![0.0, 1.0],
            row_ids: vec![0, 1],
            ..Default::default()
        };
        batch.sparse.insert(
            FeatureId::sparse(1),
            SparseBuffer { values: vec![1, 2, 3], offsets: vec![0, 2, 3], scores: None },
        );
        assert!(batch.check_shape().is_ok());
        batch.sparse.get_mut(&FeatureId::sparse(1)).unwrap().offsets = vec![0, 3, 2];
        assert!(batch.check_shape().is_err());
    }
}
