//! Mini-batch execution of transform graphs over columnar row groups.
//!
//! Rows are processed in windows of `batch_size` input rows. Within a
//! window, nodes run in topological order; a row that hits an operator
//! domain error is dropped from the window (and counted) without aborting
//! anything else. No state survives from one window to the next.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::Instant;

use thiserror::Error;

use super::graph::{GraphInput, TransformGraph};
use super::{Operator, ScoreOp, ScoreResult};
use crate::flatmap::RowGroup;
use crate::model::{DenseBuffer, FeatureId, FeatureKind, Sample, SparseBuffer, TensorBatch};

/// Cost-accounting classes for operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpClass {
    DenseNorm = 0,
    SparseNorm = 1,
    FeatureGen = 2,
    Selection = 3,
}

impl OpClass {
    pub const ALL: [OpClass; 4] =
        [OpClass::DenseNorm, OpClass::SparseNorm, OpClass::FeatureGen, OpClass::Selection];

    pub fn label(self) -> &'static str {
        match self {
            OpClass::DenseNorm => "dense-normalization",
            OpClass::SparseNorm => "sparse-normalization",
            OpClass::FeatureGen => "feature-generation",
            OpClass::Selection => "selection",
        }
    }
}

/// Counters and per-class timing collected during execution.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExecStats {
    pub rows_in: u64,
    pub rows_emitted: u64,
    pub rows_rejected: u64,
    pub rows_sampled_out: u64,
    pub onehot_out_of_range: u64,
    pub class_nanos: [u64; 4],
    pub pack_nanos: u64,
}

impl ExecStats {
    pub fn merge(&mut self, other: &ExecStats) {
        self.rows_in += other.rows_in;
        self.rows_emitted += other.rows_emitted;
        self.rows_rejected += other.rows_rejected;
        self.rows_sampled_out += other.rows_sampled_out;
        self.onehot_out_of_range += other.onehot_out_of_range;
        for i in 0..4 {
            self.class_nanos[i] += other.class_nanos[i];
        }
        self.pack_nanos += other.pack_nanos;
    }

    /// Share of transform time spent in `class`, over the three
    /// normalization/generation classes.
    pub fn class_share(&self, class: OpClass) -> f64 {
        let total: u64 = self.class_nanos[OpClass::DenseNorm as usize]
            + self.class_nanos[OpClass::SparseNorm as usize]
            + self.class_nanos[OpClass::FeatureGen as usize];
        if total == 0 {
            return 0.0;
        }
        self.class_nanos[class as usize] as f64 / total as f64
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ExecError {
    #[error("node {node}: input {input} is not available")]
    UnknownInput { node: u32, input: String },
    #[error("node {node}: {op} cannot consume a {got} input")]
    TypeMismatch { node: u32, op: &'static str, got: &'static str },
    #[error("output feature {0} packed twice")]
    OutputCollision(FeatureId),
}

/// Value type produced by a node, resolved statically.
#[derive(Debug, Clone, Copy, PartialEq)]
enum ValueType {
    Dense,
    DenseVec(u32),
    Sparse,
    Scored,
}

impl ValueType {
    fn name(self) -> &'static str {
        match self {
            ValueType::Dense => "dense",
            ValueType::DenseVec(_) => "dense-vector",
            ValueType::Sparse => "sparse",
            ValueType::Scored => "scored",
        }
    }
}

/// Per-window storage for one node's outputs. Dead rows keep default
/// placeholders so row indexing stays aligned.
#[derive(Debug)]
enum NodeColumn {
    Dense(Vec<f64>),
    DenseVec { width: u32, data: Vec<f32> },
    Sparse { offsets: Vec<u32>, values: Vec<i64> },
    Scored { offsets: Vec<u32>, values: Vec<i64>, scores: Vec<f32> },
}

impl NodeColumn {
    fn new(ty: ValueType) -> Self {
        match ty {
            ValueType::Dense => NodeColumn::Dense(Vec::new()),
            ValueType::DenseVec(w) => NodeColumn::DenseVec { width: w, data: Vec::new() },
            ValueType::Sparse => NodeColumn::Sparse { offsets: vec![0], values: Vec::new() },
            ValueType::Scored => {
                NodeColumn::Scored { offsets: vec![0], values: Vec::new(), scores: Vec::new() }
            }
        }
    }
}

/// Borrowed view of one row's value for one input.
enum ValueRef<'a> {
    Dense(f64),
    Sparse(&'a [i64]),
    Scored(&'a [i64], &'a [f32]),
}

/// Id-list view of a value: sparse lists borrow, dense scalars inline.
enum IdView<'a> {
    Borrowed(&'a [i64]),
    Inline([i64; 1]),
}

impl<'a> IdView<'a> {
    fn as_slice(&self) -> &[i64] {
        match self {
            IdView::Borrowed(s) => s,
            IdView::Inline(a) => a,
        }
    }
}

fn id_view<'a>(v: &ValueRef<'a>) -> IdView<'a> {
    match v {
        ValueRef::Dense(x) => IdView::Inline([*x as i64]),
        ValueRef::Sparse(ids) => IdView::Borrowed(ids),
        ValueRef::Scored(ids, _) => IdView::Borrowed(ids),
    }
}

/// What one source (projection feature or node) yields, statically.
fn source_type(
    input: &GraphInput,
    node_types: &HashMap<u32, ValueType>,
) -> Option<ValueType> {
    match input {
        GraphInput::Feature(id) => Some(match id.kind {
            FeatureKind::Dense => ValueType::Dense,
            FeatureKind::Sparse => ValueType::Sparse,
            FeatureKind::ScoredSparse => ValueType::Scored,
        }),
        GraphInput::Node(out) => node_types.get(out).copied(),
    }
}

fn output_type(
    node_out: u32,
    op: &Operator,
    input_types: &[ValueType],
) -> Result<ValueType, ExecError> {
    let mismatch = |got: ValueType| ExecError::TypeMismatch {
        node: node_out,
        op: op.name(),
        got: got.name(),
    };
    let need_dense = |ty: ValueType| match ty {
        ValueType::Dense => Ok(()),
        other => Err(mismatch(other)),
    };
    let need_ids = |ty: ValueType| match ty {
        ValueType::Dense | ValueType::Sparse | ValueType::Scored => Ok(()),
        other => Err(mismatch(other)),
    };
    Ok(match op {
        Operator::Bucketize { .. }
        | Operator::Logit { .. }
        | Operator::BoxCox { .. }
        | Operator::Clamp { .. }
        | Operator::GetLocalHour { .. } => {
            need_dense(input_types[0])?;
            ValueType::Dense
        }
        Operator::Onehot { cardinality } => {
            need_dense(input_types[0])?;
            ValueType::DenseVec(*cardinality)
        }
        Operator::SigridHash { .. }
        | Operator::FirstX { .. }
        | Operator::PositiveModulus { .. }
        | Operator::MapId { .. }
        | Operator::Ngram { .. } => {
            for &ty in input_types {
                need_ids(ty)?;
            }
            ValueType::Sparse
        }
        Operator::Cartesian | Operator::IdListIntersect => {
            need_ids(input_types[0])?;
            need_ids(input_types[1])?;
            ValueType::Sparse
        }
        Operator::Enumerate => {
            need_ids(input_types[0])?;
            ValueType::Scored
        }
        Operator::ComputeScore { op: score_op } => {
            match input_types[0] {
                ValueType::Scored => {}
                other => return Err(mismatch(other)),
            }
            match score_op {
                ScoreOp::Scale(_) => ValueType::Scored,
                ScoreOp::Sum | ScoreOp::Max => ValueType::Dense,
            }
        }
        Operator::Sampling { .. } => ValueType::Dense,
    })
}

struct Plan<'g> {
    graph: &'g TransformGraph,
    node_types: HashMap<u32, ValueType>,
    /// Node outputs packed into batches (sinks, excluding sampling nodes).
    packed_nodes: Vec<(u32, FeatureId)>,
    /// Projection features passed through untouched.
    passthrough: Vec<FeatureId>,
}

fn plan_execution<'g>(
    graph: &'g TransformGraph,
    projection: &[FeatureId],
) -> Result<Plan<'g>, ExecError> {
    let mut node_types: HashMap<u32, ValueType> = HashMap::new();
    for node in graph.nodes() {
        let mut input_types = Vec::with_capacity(node.inputs.len());
        for input in &node.inputs {
            let ty = source_type(input, &node_types).ok_or_else(|| ExecError::UnknownInput {
                node: node.output,
                input: input.to_string(),
            })?;
            if let GraphInput::Feature(id) = input {
                if !projection.contains(id) {
                    return Err(ExecError::UnknownInput {
                        node: node.output,
                        input: input.to_string(),
                    });
                }
            }
            input_types.push(ty);
        }
        let ty = output_type(node.output, &node.op, &input_types)?;
        node_types.insert(node.output, ty);
    }

    let consumed_outputs = graph.consumed_outputs();
    let consumed_features = graph.consumed_features();

    let mut packed_nodes = Vec::new();
    for node in graph.nodes() {
        if matches!(node.op, Operator::Sampling { .. }) || consumed_outputs.contains(&node.output)
        {
            continue;
        }
        let kind = match node_types[&node.output] {
            ValueType::Dense | ValueType::DenseVec(_) => FeatureKind::Dense,
            ValueType::Sparse => FeatureKind::Sparse,
            ValueType::Scored => FeatureKind::ScoredSparse,
        };
        packed_nodes.push((node.output, FeatureId { id: node.output, kind }));
    }

    let passthrough: Vec<FeatureId> = projection
        .iter()
        .filter(|id| !consumed_features.contains(id))
        .copied()
        .collect();

    let mut seen = HashSet::new();
    for (_, id) in &packed_nodes {
        if !seen.insert(*id) {
            return Err(ExecError::OutputCollision(*id));
        }
    }
    for id in &passthrough {
        if !seen.insert(*id) {
            return Err(ExecError::OutputCollision(*id));
        }
    }

    Ok(Plan { graph, node_types, packed_nodes, passthrough })
}

/// Executes `graph` over a columnar row group, emitting one batch per window
/// of `batch_size` input rows. Batch ids count up from `first_batch_id`.
pub fn execute_rowgroup(
    graph: &TransformGraph,
    group: &RowGroup,
    projection: &[FeatureId],
    batch_size: u32,
    first_batch_id: u64,
) -> Result<(Vec<TensorBatch>, ExecStats), ExecError> {
    let plan = plan_execution(graph, projection)?;
    let mut stats = ExecStats::default();
    let mut batches = Vec::new();
    let mut next_id = first_batch_id;

    let window = batch_size as usize;
    let mut start = 0;
    while start < group.rows {
        let end = (start + window).min(group.rows);
        if let Some(batch) = run_window(&plan, group, start, end, next_id, &mut stats)? {
            batches.push(batch);
            next_id += 1;
        }
        start = end;
    }
    Ok((batches, stats))
}

/// Row-major convenience entry: converts samples to a row group first.
/// `first_row_id` numbers rows consecutively for delivery accounting.
pub fn execute_graph(
    graph: &TransformGraph,
    rows: &[Sample],
    projection: &[FeatureId],
    batch_size: u32,
    first_row_id: u64,
) -> Result<(Vec<TensorBatch>, ExecStats), ExecError> {
    let group = RowGroup::from_samples(rows, projection, first_row_id);
    execute_rowgroup(graph, &group, projection, batch_size, 0)
}

fn run_window(
    plan: &Plan<'_>,
    group: &RowGroup,
    start: usize,
    end: usize,
    batch_id: u64,
    stats: &mut ExecStats,
) -> Result<Option<TensorBatch>, ExecError> {
    let rows = end - start;
    stats.rows_in += rows as u64;
    let mut alive = vec![true; rows];
    let mut columns: HashMap<u32, NodeColumn> = HashMap::new();

    for node in plan.graph.nodes() {
        let t0 = Instant::now();
        let ty = plan.node_types[&node.output];
        let mut out = NodeColumn::new(ty);
        for r in 0..rows {
            if alive[r] {
                let row = start + r;
                match eval_row(node, row, r, group, &columns, stats) {
                    Ok(value) => push_value(&mut out, value),
                    Err(RowFate::Rejected) => {
                        alive[r] = false;
                        stats.rows_rejected += 1;
                        push_default(&mut out);
                    }
                    Err(RowFate::SampledOut) => {
                        alive[r] = false;
                        stats.rows_sampled_out += 1;
                        push_default(&mut out);
                    }
                }
            } else {
                push_default(&mut out);
            }
        }
        stats.class_nanos[node.op.class() as usize] += t0.elapsed().as_nanos() as u64;
        columns.insert(node.output, out);
    }

    let survivors: Vec<usize> = (0..rows).filter(|&r| alive[r]).collect();
    if survivors.is_empty() {
        return Ok(None);
    }
    let t0 = Instant::now();
    let batch = pack_batch(plan, group, start, &survivors, &columns, batch_id)?;
    stats.pack_nanos += t0.elapsed().as_nanos() as u64;
    stats.rows_emitted += survivors.len() as u64;
    Ok(Some(batch))
}

enum RowFate {
    Rejected,
    SampledOut,
}

/// Owned result of one operator application on one row.
enum OwnedValue {
    Dense(f64),
    DenseVec(Vec<f32>),
    Sparse(Vec<i64>),
    Scored(Vec<i64>, Vec<f32>),
}

fn fetch<'a>(
    input: &GraphInput,
    row: usize,
    window_row: usize,
    group: &'a RowGroup,
    columns: &'a HashMap<u32, NodeColumn>,
) -> ValueRef<'a> {
    match input {
        GraphInput::Feature(id) => match id.kind {
            FeatureKind::Dense => {
                let col = &group.dense[id];
                ValueRef::Dense(col.values[row])
            }
            FeatureKind::Sparse => {
                let col = &group.sparse[id];
                ValueRef::Sparse(col.row(row))
            }
            FeatureKind::ScoredSparse => {
                let col = &group.sparse[id];
                ValueRef::Scored(col.row(row), col.row_scores(row))
            }
        },
        GraphInput::Node(out) => match &columns[out] {
            NodeColumn::Dense(v) => ValueRef::Dense(v[window_row]),
            NodeColumn::DenseVec { .. } => {
                unreachable!("dense-vector outputs are terminal by type checking")
            }
            NodeColumn::Sparse { offsets, values } => {
                let lo = offsets[window_row] as usize;
                let hi = offsets[window_row + 1] as usize;
                ValueRef::Sparse(&values[lo..hi])
            }
            NodeColumn::Scored { offsets, values, scores } => {
                let lo = offsets[window_row] as usize;
                let hi = offsets[window_row + 1] as usize;
                ValueRef::Scored(&values[lo..hi], &scores[lo..hi])
            }
        },
    }
}

fn eval_row(
    node: &super::graph::TransformNode,
    row: usize,
    window_row: usize,
    group: &RowGroup,
    columns: &HashMap<u32, NodeColumn>,
    stats: &mut ExecStats,
) -> Result<OwnedValue, RowFate> {
    let arg = |i: usize| fetch(&node.inputs[i], row, window_row, group, columns);
    Ok(match &node.op {
        Operator::Bucketize { borders } => {
            let x = dense_of(&arg(0));
            OwnedValue::Dense(super::bucketize(x, borders) as f64)
        }
        Operator::SigridHash { max } => {
            let v = arg(0);
            OwnedValue::Sparse(super::sigrid_hash(id_view(&v).as_slice(), *max))
        }
        Operator::FirstX { x } => {
            let v = arg(0);
            OwnedValue::Sparse(super::first_x(id_view(&v).as_slice(), *x))
        }
        Operator::Logit { eps } => OwnedValue::Dense(super::logit(dense_of(&arg(0)), *eps)),
        Operator::BoxCox { lambda } => match super::box_cox(dense_of(&arg(0)), *lambda) {
            Ok(v) => OwnedValue::Dense(v),
            Err(_) => return Err(RowFate::Rejected),
        },
        Operator::Onehot { cardinality } => {
            let idx = dense_of(&arg(0));
            let idx = if idx < 0.0 { u32::MAX } else { idx as u32 };
            if idx >= *cardinality {
                stats.onehot_out_of_range += 1;
            }
            OwnedValue::DenseVec(super::onehot(idx, *cardinality))
        }
        Operator::Clamp { lo, hi } => OwnedValue::Dense(super::clamp(dense_of(&arg(0)), *lo, *hi)),
        Operator::PositiveModulus { modulus } => {
            let v = arg(0);
            OwnedValue::Sparse(
                id_view(&v)
                    .as_slice()
                    .iter()
                    .map(|&x| super::positive_modulus(x, *modulus))
                    .collect(),
            )
        }
        Operator::Enumerate => {
            let v = arg(0);
            let pairs = super::enumerate_ids(id_view(&v).as_slice());
            let mut ids = Vec::with_capacity(pairs.len());
            let mut scores = Vec::with_capacity(pairs.len());
            for (i, id) in pairs {
                ids.push(id);
                scores.push(i as f32);
            }
            OwnedValue::Scored(ids, scores)
        }
        Operator::IdListIntersect => {
            let a = arg(0);
            let b = arg(1);
            OwnedValue::Sparse(super::id_list_intersect(
                id_view(&a).as_slice(),
                id_view(&b).as_slice(),
            ))
        }
        Operator::MapId { table, default } => {
            let v = arg(0);
            OwnedValue::Sparse(
                id_view(&v)
                    .as_slice()
                    .iter()
                    .map(|&x| super::map_id(x, table, *default))
                    .collect(),
            )
        }
        Operator::Ngram { n } => {
            let mut ids = Vec::new();
            for i in 0..node.inputs.len() {
                let v = arg(i);
                ids.extend_from_slice(id_view(&v).as_slice());
            }
            OwnedValue::Sparse(super::ngram(&ids, *n))
        }
        Operator::Cartesian => {
            let a = arg(0);
            let b = arg(1);
            OwnedValue::Sparse(super::cartesian(id_view(&a).as_slice(), id_view(&b).as_slice()))
        }
        Operator::ComputeScore { op } => {
            let v = arg(0);
            let (ids, scores) = match &v {
                ValueRef::Scored(ids, scores) => (*ids, *scores),
                _ => unreachable!("type checking requires a scored input"),
            };
            let pairs: Vec<(i64, f32)> =
                ids.iter().zip(scores).map(|(&i, &s)| (i, s)).collect();
            match super::compute_score(&pairs, *op) {
                ScoreResult::Scalar(s) => OwnedValue::Dense(s as f64),
                ScoreResult::List(list) => {
                    let mut ids = Vec::with_capacity(list.len());
                    let mut scores = Vec::with_capacity(list.len());
                    for (i, s) in list {
                        ids.push(i);
                        scores.push(s);
                    }
                    OwnedValue::Scored(ids, scores)
                }
            }
        }
        Operator::GetLocalHour { utc_offset } => {
            let ts = dense_of(&arg(0)) as i64;
            OwnedValue::Dense(super::get_local_hour(ts, *utc_offset) as f64)
        }
        Operator::Sampling { rate, seed } => {
            if super::sampling_keep(*seed, group.row_ids[row], *rate) {
                OwnedValue::Dense(1.0)
            } else {
                return Err(RowFate::SampledOut);
            }
        }
    })
}

fn dense_of(v: &ValueRef<'_>) -> f64 {
    match v {
        ValueRef::Dense(x) => *x,
        _ => unreachable!("type checking requires a dense input"),
    }
}

fn push_value(col: &mut NodeColumn, value: OwnedValue) {
    match (col, value) {
        (NodeColumn::Dense(v), OwnedValue::Dense(x)) => v.push(x),
        (NodeColumn::DenseVec { width, data }, OwnedValue::DenseVec(x)) => {
            debug_assert_eq!(x.len(), *width as usize);
            data.extend_from_slice(&x);
        }
        (NodeColumn::Sparse { offsets, values }, OwnedValue::Sparse(ids)) => {
            values.extend_from_slice(&ids);
            offsets.push(values.len() as u32);
        }
        (NodeColumn::Scored { offsets, values, scores }, OwnedValue::Scored(ids, sc)) => {
            values.extend_from_slice(&ids);
            scores.extend_from_slice(&sc);
            offsets.push(values.len() as u32);
        }
        _ => unreachable!("node column type fixed by planning"),
    }
}

fn push_default(col: &mut NodeColumn) {
    match col {
        NodeColumn::Dense(v) => v.push(0.0),
        NodeColumn::DenseVec { width, data } => data.extend(std::iter::repeat_n(0.0, *width as usize)),
        NodeColumn::Sparse { offsets, values } => offsets.push(values.len() as u32),
        NodeColumn::Scored { offsets, values, .. } => offsets.push(values.len() as u32),
    }
}

fn pack_batch(
    plan: &Plan<'_>,
    group: &RowGroup,
    start: usize,
    survivors: &[usize],
    columns: &HashMap<u32, NodeColumn>,
    batch_id: u64,
) -> Result<TensorBatch, ExecError> {
    let rows = survivors.len();
    let mut batch = TensorBatch {
        batch_id,
        rows: rows as u32,
        dense: BTreeMap::new(),
        sparse: BTreeMap::new(),
        labels: Vec::with_capacity(rows),
        row_ids: Vec::with_capacity(rows),
    };
    for &r in survivors {
        batch.labels.push(group.labels[start + r]);
        batch.row_ids.push(group.row_ids[start + r]);
    }

    for (out, id) in &plan.packed_nodes {
        match &columns[out] {
            NodeColumn::Dense(v) => {
                let data = survivors.iter().map(|&r| v[r] as f32).collect();
                batch.dense.insert(*id, DenseBuffer { width: 1, data });
            }
            NodeColumn::DenseVec { width, data } => {
                let w = *width as usize;
                let mut packed = Vec::with_capacity(rows * w);
                for &r in survivors {
                    packed.extend_from_slice(&data[r * w..(r + 1) * w]);
                }
                batch.dense.insert(*id, DenseBuffer { width: *width, data: packed });
            }
            NodeColumn::Sparse { offsets, values } => {
                let buf = pack_csr(survivors, offsets, values, None);
                batch.sparse.insert(*id, buf);
            }
            NodeColumn::Scored { offsets, values, scores } => {
                let buf = pack_csr(survivors, offsets, values, Some(scores));
                batch.sparse.insert(*id, buf);
            }
        }
    }

    for id in &plan.passthrough {
        match id.kind {
            FeatureKind::Dense => {
                let col = &group.dense[id];
                let data = survivors.iter().map(|&r| col.values[start + r] as f32).collect();
                batch.dense.insert(*id, DenseBuffer { width: 1, data });
            }
            FeatureKind::Sparse | FeatureKind::ScoredSparse => {
                let col = &group.sparse[id];
                let mut buf = SparseBuffer {
                    values: Vec::new(),
                    offsets: Vec::with_capacity(rows + 1),
                    scores: col.scores.as_ref().map(|_| Vec::new()),
                };
                buf.offsets.push(0);
                for &r in survivors {
                    buf.values.extend_from_slice(col.row(start + r));
                    if let Some(dst) = buf.scores.as_mut() {
                        dst.extend_from_slice(col.row_scores(start + r));
                    }
                    buf.offsets.push(buf.values.len() as i32);
                }
                batch.sparse.insert(*id, buf);
            }
        }
    }

    debug_assert!(batch.check_shape().is_ok());
    Ok(batch)
}

fn pack_csr(
    survivors: &[usize],
    offsets: &[u32],
    values: &[i64],
    scores: Option<&Vec<f32>>,
) -> SparseBuffer {
    let mut buf = SparseBuffer {
        values: Vec::new(),
        offsets: Vec::with_capacity(survivors.len() + 1),
        scores: scores.map(|_| Vec::new()),
    };
    buf.offsets.push(0);
    for &r in survivors {
        let lo = offsets[r] as usize;
        let hi = offsets[r + 1] as usize;
        buf.values.extend_from_slice(&values[lo..hi]);
        if let (Some(dst), Some(src)) = (buf.scores.as_mut(), scores) {
            dst.extend_from_slice(&src[lo..hi]);
        }
        buf.offsets.push(buf.values.len() as i32);
    }
    buf
}
