//! Python bindings: dataset generation, columnar reads, read planning with
//! the analytic storage model, and the transform-operator catalog.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use dsi_core::harness::{gen_dataset, sample_projections, GenConfig};
use dsi_core::model::{FeatureId, FeatureProjection};
use dsi_core::plan::{
    plan_coalesced, plan_per_stream, plan_stripe_scan, simulate_throughput, ReadPlan,
    StorageModel,
};
use dsi_core::store::{ColumnarReader, FeatureOrderPolicy};
use dsi_core::table::{DatasetManifest, DatasetProfile};
use dsi_core::transform::{execute_rowgroup, TransformGraph};

fn io_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn val_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_feature(token: &str) -> PyResult<FeatureId> {
    if token.len() < 2 {
        return Err(val_err(format!("bad feature reference {token}")));
    }
    let (prefix, id) = token.split_at(1);
    let id: u32 = id.parse().map_err(|_| val_err(format!("bad feature reference {token}")))?;
    match prefix {
        "d" => Ok(FeatureId::dense(id)),
        "s" => Ok(FeatureId::sparse(id)),
        "x" => Ok(FeatureId::scored(id)),
        _ => Err(val_err(format!("bad feature reference {token}"))),
    }
}

fn feature_token(id: FeatureId) -> String {
    format!("{id}")
}

/// Generates a synthetic dataset; returns the total row count.
#[pyfunction]
#[pyo3(signature = (out_dir, preset="small", rows=None, seed=1, order="random",
                     stripe_rows=4096, partitions=1, scale=1.0))]
#[allow(clippy::too_many_arguments)]
fn generate_dataset(
    out_dir: String,
    preset: &str,
    rows: Option<u64>,
    seed: u64,
    order: &str,
    stripe_rows: u32,
    partitions: u32,
    scale: f64,
) -> PyResult<u64> {
    let mut profile = match preset {
        "rm1" => DatasetProfile::rm1(),
        "rm2" => DatasetProfile::rm2(),
        "rm3" => DatasetProfile::rm3(),
        "small" => DatasetProfile::default(),
        other => return Err(val_err(format!("unknown preset {other}"))),
    };
    if scale != 1.0 {
        profile = profile.scaled(scale);
    }
    if let Some(rows) = rows {
        profile.rows_per_partition = rows;
    }
    profile.partitions = partitions;
    let order = match order {
        "schema" => FeatureOrderPolicy::SchemaOrder,
        "random" => FeatureOrderPolicy::Random { seed },
        other => return Err(val_err(format!("unknown order {other}"))),
    };
    let manifest = gen_dataset(
        &profile,
        seed,
        PathBuf::from(out_dir).as_path(),
        &GenConfig { order, stripe_rows, ..Default::default() },
    )
    .map_err(io_err)?;
    Ok(manifest.total_rows)
}

/// One planned I/O list plus its byte accounting and the analytic model.
#[pyclass]
struct Plan {
    inner: ReadPlan,
}

#[pymethods]
impl Plan {
    /// I/Os as (offset, length, over_read) tuples.
    fn ios(&self) -> Vec<(u64, u64, u64)> {
        self.inner.ios.iter().map(|io| (io.offset, io.length, io.over_read())).collect()
    }

    #[getter]
    fn requested_bytes(&self) -> u64 {
        self.inner.requested_bytes
    }

    #[getter]
    fn fetched_bytes(&self) -> u64 {
        self.inner.fetched_bytes
    }

    #[getter]
    fn over_read(&self) -> u64 {
        self.inner.over_read()
    }

    fn io_count(&self) -> usize {
        self.inner.io_count()
    }

    /// Simulated (seconds, effective bytes/second) under a seek+bandwidth
    /// model.
    #[pyo3(signature = (seek_ms=8.0, bandwidth_mbps=180.0, max_io_bytes=8 * 1024 * 1024))]
    fn simulate(&self, seek_ms: f64, bandwidth_mbps: f64, max_io_bytes: u64) -> (f64, f64) {
        let model = StorageModel {
            seek_time_s: seek_ms / 1e3,
            bandwidth_bps: bandwidth_mbps * 1e6,
            max_io_bytes,
        };
        simulate_throughput(&self.inner, &model)
    }
}

/// An open dataset directory.
#[pyclass]
struct Dataset {
    dir: PathBuf,
    manifest: DatasetManifest,
}

#[pymethods]
impl Dataset {
    #[new]
    fn open(dir: String) -> PyResult<Self> {
        let dir = PathBuf::from(dir);
        let manifest = DatasetManifest::load(&dir).map_err(io_err)?;
        Ok(Self { dir, manifest })
    }

    #[getter]
    fn total_rows(&self) -> u64 {
        self.manifest.total_rows
    }

    #[getter]
    fn table(&self) -> String {
        self.manifest.table.clone()
    }

    /// Feature tokens (`d0`, `s3`, `x1`) in schema order.
    fn features(&self) -> Vec<String> {
        self.manifest.features.iter().map(|f| feature_token(f.id)).collect()
    }

    fn partitions(&self) -> Vec<String> {
        self.manifest.partitions.iter().map(|p| p.key.clone()).collect()
    }

    /// Draws a popularity-biased projection of `count` features.
    #[pyo3(signature = (count, seed=0))]
    fn sample_projection(&self, count: usize, seed: u64) -> Vec<String> {
        sample_projections(&self.manifest, 1, count, seed)
            .pop()
            .map(|p| p.ids().iter().map(|&id| feature_token(id)).collect())
            .unwrap_or_default()
    }

    /// Plans a projected read over one file: mode is `per-stream`,
    /// `coalesced`, or `scan`.
    #[pyo3(signature = (features, mode="coalesced", file_index=0,
                         window_bytes=1_310_720, chunk_bytes=8 * 1024 * 1024))]
    fn plan(
        &self,
        features: Vec<String>,
        mode: &str,
        file_index: usize,
        window_bytes: u64,
        chunk_bytes: u64,
    ) -> PyResult<Plan> {
        let (reader, projection) = self.reader_and_projection(&features, file_index)?;
        let stripes = 0..reader.meta().stripe_count();
        let plan = match mode {
            "per-stream" => plan_per_stream(reader.meta(), stripes, &projection),
            "coalesced" => plan_coalesced(reader.meta(), stripes, &projection, window_bytes),
            "scan" => plan_stripe_scan(reader.meta(), stripes, &projection, chunk_bytes),
            other => return Err(val_err(format!("unknown mode {other}"))),
        }
        .map_err(val_err)?;
        Ok(Plan { inner: plan })
    }

    /// Reads projected rows of one file as dictionaries.
    #[pyo3(signature = (features, file_index=0, limit=None))]
    fn read_rows(
        &self,
        py: Python<'_>,
        features: Vec<String>,
        file_index: usize,
        limit: Option<usize>,
    ) -> PyResult<Py<PyList>> {
        let (reader, projection) = self.reader_and_projection(&features, file_index)?;
        let stripes = 0..reader.meta().stripe_count();
        let plan = plan_coalesced(reader.meta(), stripes.clone(), &projection, 1_310_720)
            .map_err(val_err)?;
        let rows = reader.read_rows(stripes, &projection, &plan, 0).map_err(io_err)?;
        let out = PyList::empty(py);
        for sample in rows.iter().take(limit.unwrap_or(usize::MAX)) {
            let d = PyDict::new(py);
            d.set_item("label", sample.label)?;
            let dense = PyDict::new(py);
            for (id, v) in &sample.dense {
                dense.set_item(feature_token(*id), *v)?;
            }
            d.set_item("dense", dense)?;
            let sparse = PyDict::new(py);
            for (id, ids) in &sample.sparse {
                sparse.set_item(feature_token(*id), ids.clone())?;
            }
            d.set_item("sparse", sparse)?;
            let scored = PyDict::new(py);
            for (id, pairs) in &sample.scored {
                scored.set_item(feature_token(*id), pairs.clone())?;
            }
            d.set_item("scored", scored)?;
            out.append(d)?;
        }
        Ok(out.into())
    }

    /// Runs a transform-graph manifest over one file's projected rows and
    /// returns packed batches.
    #[pyo3(signature = (features, manifest_text, batch_size=256, file_index=0, limit_rows=None))]
    fn execute(
        &self,
        py: Python<'_>,
        features: Vec<String>,
        manifest_text: &str,
        batch_size: u32,
        file_index: usize,
        limit_rows: Option<u64>,
    ) -> PyResult<Py<PyList>> {
        let (reader, projection) = self.reader_and_projection(&features, file_index)?;
        let graph = TransformGraph::parse_manifest(manifest_text).map_err(val_err)?;
        let limit = limit_rows.unwrap_or(u64::MAX);
        let stripe_rows = self.manifest.stripe_rows.max(1) as u64;
        let need = limit.div_ceil(stripe_rows) as u32;
        let stripes = 0..need.clamp(1, reader.meta().stripe_count());
        let plan = plan_coalesced(reader.meta(), stripes.clone(), &projection, 1_310_720)
            .map_err(val_err)?;
        let group = reader.read_rowgroup(stripes, &projection, &plan, 0).map_err(io_err)?;
        let group = if (group.rows as u64) > limit {
            group.slice(0, limit as usize)
        } else {
            group
        };
        let (batches, _) =
            execute_rowgroup(&graph, &group, projection.ids(), batch_size, 0).map_err(val_err)?;

        let out = PyList::empty(py);
        for batch in &batches {
            let d = PyDict::new(py);
            d.set_item("batch_id", batch.batch_id)?;
            d.set_item("rows", batch.rows)?;
            d.set_item("labels", batch.labels.clone())?;
            d.set_item("row_ids", batch.row_ids.clone())?;
            let dense = PyDict::new(py);
            for (id, buf) in &batch.dense {
                dense.set_item(feature_token(*id), (buf.width, buf.data.clone()))?;
            }
            d.set_item("dense", dense)?;
            let sparse = PyDict::new(py);
            for (id, buf) in &batch.sparse {
                let entry = PyDict::new(py);
                entry.set_item("values", buf.values.clone())?;
                entry.set_item("offsets", buf.offsets.clone())?;
                if let Some(scores) = &buf.scores {
                    entry.set_item("scores", scores.clone())?;
                }
                sparse.set_item(feature_token(*id), entry)?;
            }
            d.set_item("sparse", sparse)?;
            out.append(d)?;
        }
        Ok(out.into())
    }
}

impl Dataset {
    fn reader_and_projection(
        &self,
        features: &[String],
        file_index: usize,
    ) -> PyResult<(ColumnarReader, FeatureProjection)> {
        let files: Vec<&dsi_core::table::FileEntry> =
            self.manifest.partitions.iter().flat_map(|p| p.files.iter()).collect();
        let entry = files
            .get(file_index)
            .ok_or_else(|| val_err(format!("no file at index {file_index}")))?;
        let reader = ColumnarReader::open(self.dir.join(&entry.path)).map_err(io_err)?;
        let ids = features
            .iter()
            .map(|t| parse_feature(t))
            .collect::<PyResult<Vec<_>>>()?;
        let projection = FeatureProjection::new(ids).map_err(val_err)?;
        Ok((reader, projection))
    }
}

// --- operator catalog -------------------------------------------------------

#[pyfunction]
fn bucketize(x: f64, borders: Vec<f64>) -> u32 {
    dsi_core::transform::bucketize(x, &borders)
}

#[pyfunction]
fn sigrid_hash(ids: Vec<i64>, max: u64) -> PyResult<Vec<i64>> {
    if max == 0 {
        return Err(val_err("max must be positive"));
    }
    Ok(dsi_core::transform::sigrid_hash(&ids, max))
}

#[pyfunction]
fn first_x(ids: Vec<i64>, x: u32) -> Vec<i64> {
    dsi_core::transform::first_x(&ids, x)
}

#[pyfunction]
fn logit(p: f64, eps: f64) -> f64 {
    dsi_core::transform::logit(p, eps)
}

#[pyfunction]
fn box_cox(x: f64, lambda: f64) -> PyResult<f64> {
    dsi_core::transform::box_cox(x, lambda).map_err(val_err)
}

#[pyfunction]
fn onehot(index: u32, cardinality: u32) -> Vec<f32> {
    dsi_core::transform::onehot(index, cardinality)
}

#[pyfunction]
fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    dsi_core::transform::clamp(x, lo, hi)
}

#[pyfunction]
fn positive_modulus(x: i64, modulus: i64) -> PyResult<i64> {
    if modulus <= 0 {
        return Err(val_err("modulus must be positive"));
    }
    Ok(dsi_core::transform::positive_modulus(x, modulus))
}

#[pyfunction]
fn enumerate_ids(ids: Vec<i64>) -> Vec<(u32, i64)> {
    dsi_core::transform::enumerate_ids(&ids)
}

#[pyfunction]
fn id_list_intersect(a: Vec<i64>, b: Vec<i64>) -> Vec<i64> {
    dsi_core::transform::id_list_intersect(&a, &b)
}

#[pyfunction]
fn map_id(id: i64, table: BTreeMap<i64, i64>, default: i64) -> i64 {
    dsi_core::transform::map_id(id, &table, default)
}

#[pyfunction]
fn ngram(ids: Vec<i64>, n: u32) -> Vec<i64> {
    dsi_core::transform::ngram(&ids, n)
}

#[pyfunction]
fn cartesian(a: Vec<i64>, b: Vec<i64>) -> Vec<i64> {
    dsi_core::transform::cartesian(&a, &b)
}

/// `op` is "sum", "max", or "scale" (with `c`); returns a float for
/// reductions and a list of (id, score) pairs for scaling.
#[pyfunction]
#[pyo3(signature = (scored, op, c=1.0))]
fn compute_score(
    py: Python<'_>,
    scored: Vec<(i64, f32)>,
    op: &str,
    c: f32,
) -> PyResult<Py<PyAny>> {
    use dsi_core::transform::{ScoreOp, ScoreResult};
    let op = match op {
        "sum" => ScoreOp::Sum,
        "max" => ScoreOp::Max,
        "scale" => ScoreOp::Scale(c),
        other => return Err(val_err(format!("unknown score op {other}"))),
    };
    Ok(match dsi_core::transform::compute_score(&scored, op) {
        ScoreResult::Scalar(v) => v.into_pyobject(py)?.into_any().unbind(),
        ScoreResult::List(list) => list.into_pyobject(py)?.into_any().unbind(),
    })
}

#[pyfunction]
fn get_local_hour(ts: i64, offset: i64) -> u8 {
    dsi_core::transform::get_local_hour(ts, offset)
}

#[pyfunction]
fn sampling_keep(seed: u64, row_index: u64, rate: f64) -> bool {
    dsi_core::transform::sampling_keep(seed, row_index, rate)
}

#[pyfunction]
fn fnv1a(bytes: Vec<u8>) -> u64 {
    dsi_core::hash::fnv1a(&bytes)
}

#[pymodule]
fn pydsi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Plan>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(bucketize, m)?)?;
    m.add_function(wrap_pyfunction!(sigrid_hash, m)?)?;
    m.add_function(wrap_pyfunction!(first_x, m)?)?;
    m.add_function(wrap_pyfunction!(logit, m)?)?;
    m.add_function(wrap_pyfunction!(box_cox, m)?)?;
    m.add_function(wrap_pyfunction!(onehot, m)?)?;
    m.add_function(wrap_pyfunction!(clamp, m)?)?;
    m.add_function(wrap_pyfunction!(positive_modulus, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_ids, m)?)?;
    m.add_function(wrap_pyfunction!(id_list_intersect, m)?)?;
    m.add_function(wrap_pyfunction!(map_id, m)?)?;
    m.add_function(wrap_pyfunction!(ngram, m)?)?;
    m.add_function(wrap_pyfunction!(cartesian, m)?)?;
    m.add_function(wrap_pyfunction!(compute_score, m)?)?;
    m.add_function(wrap_pyfunction!(get_local_hour, m)?)?;
    m.add_function(wrap_pyfunction!(sampling_keep, m)?)?;
    m.add_function(wrap_pyfunction!(fnv1a, m)?)?;
    Ok(())
}
