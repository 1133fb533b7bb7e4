//! The progressive-optimization ladder.
//!
//! Starting from whole-stripe reads with row-major decode of every feature,
//! each step layers one optimization on top of the previous ones:
//!
//! 1. `baseline` — stripe scans, all features decoded into row-major maps
//! 2. `+ff`  feature filtering: only projected streams read and decoded
//! 3. `+fm`  in-memory flatmaps: decode straight into columnar row groups
//! 4. `+lo`  localized build optimizations (no-op here, reported as-is)
//! 5. `+cr`  coalesced reads within a byte window
//! 6. `+fr`  popularity-ordered feature layout
//! 7. `+ls`  large stripes
//!
//! Worker throughput is measured by running the decode+transform path;
//! storage throughput comes from the analytic seek/bandwidth model applied
//! to each step's read plan. Both columns are normalized to the baseline,
//! with the production-reported ratios printed alongside for comparison.

use std::path::Path;

use super::gen::{default_graph, gen_dataset, sample_projections, zipf_feature_weights};
use super::{GenConfig, HarnessError};
use crate::model::{FeatureProjection, Sample};
use crate::plan::{
    plan_coalesced, plan_per_stream, plan_stripe_scan, simulate_throughput, ReadPlan,
    StorageModel,
};
use crate::store::{ColumnarReader, FeatureOrderPolicy};
use crate::table::DatasetManifest;
use crate::transform::{execute_graph, execute_rowgroup, ExecStats, OpClass, TransformGraph};

pub const LADDER_STEPS: [&str; 7] = ["baseline", "+ff", "+fm", "+lo", "+cr", "+fr", "+ls"];

/// Production-reported throughput ratios for the same optimization
/// sequence, printed as a reference column next to measured values.
pub const REFERENCE_WORKER: [f64; 7] = [1.00, 2.00, 2.30, 2.94, 2.94, 2.94, 2.94];
pub const REFERENCE_STORAGE: [f64; 7] = [1.00, 0.03, 0.03, 0.03, 0.99, 1.84, 2.41];

/// Production-reported share of transform cycles spent in dense
/// normalization, sparse normalization, and feature generation.
pub const REFERENCE_TRANSFORM_SHARES: [f64; 3] = [0.05, 0.20, 0.75];

/// Production-reported per-stream I/O size distribution (bytes):
/// mean, p5, p25, p50, p75, p95.
pub const REFERENCE_IO_SIZES: [f64; 6] = [23_200.0, 18.0, 451.0, 1_240.0, 3_920.0, 97_700.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IoQuantiles {
    pub mean: f64,
    pub p5: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
}

/// Size distribution of a plan's I/Os.
pub fn io_size_quantiles(plan: &ReadPlan) -> IoQuantiles {
    let mut sizes: Vec<u64> = plan.ios.iter().map(|io| io.length).collect();
    sizes.sort_unstable();
    let q = |f: f64| -> f64 {
        if sizes.is_empty() {
            return 0.0;
        }
        let idx = ((sizes.len() - 1) as f64 * f).round() as usize;
        sizes[idx] as f64
    };
    let mean = if sizes.is_empty() {
        0.0
    } else {
        sizes.iter().sum::<u64>() as f64 / sizes.len() as f64
    };
    IoQuantiles { mean, p5: q(0.05), p25: q(0.25), p50: q(0.50), p75: q(0.75), p95: q(0.95) }
}

#[derive(Debug, Clone)]
pub struct LadderConfig {
    /// Coalescing window.
    pub window_bytes: u64,
    /// Chunk size of baseline stripe scans.
    pub chunk_bytes: u64,
    /// Stripe-row multiplier of the large-stripe step.
    pub ls_factor: u32,
    pub model: StorageModel,
    /// Projections sampled for the storage column.
    pub sessions: usize,
    /// Features per sampled projection, as a fraction of the table.
    pub projection_fraction: f64,
    /// Rows timed for the worker column.
    pub measure_rows: u64,
    pub batch_size: u32,
    pub seed: u64,
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self {
            window_bytes: 1_310_720,
            chunk_bytes: 8 * 1024 * 1024,
            ls_factor: 8,
            model: StorageModel::default(),
            sessions: 24,
            projection_fraction: 0.10,
            measure_rows: 20_000,
            batch_size: 512,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderStep {
    pub name: &'static str,
    pub worker_batches_per_s: f64,
    pub worker_norm: f64,
    pub storage_bytes_per_s: f64,
    pub storage_norm: f64,
    pub reference_worker: f64,
    pub reference_storage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LadderReport {
    pub steps: Vec<LadderStep>,
    /// Measured transform-cycle shares: dense norm, sparse norm, feature gen.
    pub transform_shares: [f64; 3],
    /// I/O size distribution of the per-stream plan, with the production
    /// reference row.
    pub per_stream_io: IoQuantiles,
}

impl LadderReport {
    pub fn step(&self, name: &str) -> &LadderStep {
        self.steps.iter().find(|s| s.name == name).expect("known ladder step")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Tsv,
    Markdown,
}

fn measure<F: FnMut() -> Result<(u64, ExecStats), HarnessError>>(
    mut run: F,
) -> Result<(f64, ExecStats), HarnessError> {
    let t0 = std::time::Instant::now();
    let (batches, stats) = run()?;
    let secs = t0.elapsed().as_secs_f64().max(1e-9);
    Ok((batches as f64 / secs, stats))
}

enum DecodePath {
    /// Whole-stripe fetch, every feature decoded, row-major samples.
    RowMajorAll,
    /// Projected per-stream fetch, row-major samples.
    RowMajorProjected,
    /// Projected fetch straight into a columnar row group.
    Columnar,
}

fn run_pipeline(
    reader: &ColumnarReader,
    projection: &FeatureProjection,
    graph: &TransformGraph,
    path: DecodePath,
    stripes: std::ops::Range<u32>,
    batch_size: u32,
    cfg: &LadderConfig,
) -> Result<(u64, ExecStats), HarnessError> {
    let meta = reader.meta();
    match path {
        DecodePath::RowMajorAll => {
            let all =
                FeatureProjection::new(meta.footer.schema.feature_ids().collect()).unwrap();
            let plan = plan_stripe_scan(meta, stripes.clone(), &all, cfg.chunk_bytes)?;
            let group = reader.read_rowgroup(stripes, &all, &plan, 0)?;
            let rows: Vec<Sample> = group.to_samples();
            let (batches, stats) = execute_graph(graph, &rows, projection.ids(), batch_size, 0)?;
            Ok((batches.len() as u64, stats))
        }
        DecodePath::RowMajorProjected => {
            let plan = plan_per_stream(meta, stripes.clone(), projection)?;
            let group = reader.read_rowgroup(stripes, projection, &plan, 0)?;
            let rows: Vec<Sample> = group.to_samples();
            let (batches, stats) = execute_graph(graph, &rows, projection.ids(), batch_size, 0)?;
            Ok((batches.len() as u64, stats))
        }
        DecodePath::Columnar => {
            let plan = plan_coalesced(meta, stripes.clone(), projection, cfg.window_bytes)?;
            let group = reader.read_rowgroup(stripes, projection, &plan, 0)?;
            let (batches, stats) =
                execute_rowgroup(graph, &group, projection.ids(), batch_size, 0)?;
            Ok((batches.len() as u64, stats))
        }
    }
}

fn storage_mean(
    reader: &ColumnarReader,
    projections: &[FeatureProjection],
    cfg: &LadderConfig,
    plan_for: impl Fn(&ColumnarReader, &FeatureProjection) -> Result<ReadPlan, HarnessError>,
) -> Result<f64, HarnessError> {
    let mut total = 0.0;
    for p in projections {
        let plan = plan_for(reader, p)?;
        let (_, effective) = simulate_throughput(&plan, &cfg.model);
        total += effective;
    }
    Ok(total / projections.len() as f64)
}

/// Runs the full ladder over a dataset generated with a random feature
/// order. The popularity-ordered and large-stripe variants are rewritten
/// (same seed, same logical rows) into sibling directories.
pub fn run_ladder(dataset_dir: &Path, cfg: &LadderConfig) -> Result<LadderReport, HarnessError> {
    let manifest = DatasetManifest::load(dataset_dir)?;
    let total_features = manifest.features.len();
    let per_projection =
        ((total_features as f64 * cfg.projection_fraction).round() as usize).max(1);

    // Sampled sessions drive both the storage column and the reordering
    // weights; the first doubles as the worker-measurement session.
    let projections = sample_projections(&manifest, cfg.sessions, per_projection, cfg.seed);
    let weights = zipf_feature_weights(&manifest, cfg.sessions, per_projection, cfg.seed);

    // Rewrites: identical logical data, different physical layout.
    let fr_dir = dataset_dir.join("variant-fr");
    let ls_dir = dataset_dir.join("variant-ls");
    if !fr_dir.join("manifest.json").exists() {
        gen_dataset(
            &manifest.profile,
            manifest.seed,
            &fr_dir,
            &GenConfig {
                order: FeatureOrderPolicy::Popularity { weights: weights.clone() },
                stripe_rows: manifest.stripe_rows,
                ..Default::default()
            },
        )?;
    }
    if !ls_dir.join("manifest.json").exists() {
        gen_dataset(
            &manifest.profile,
            manifest.seed,
            &ls_dir,
            &GenConfig {
                order: FeatureOrderPolicy::Popularity { weights: weights.clone() },
                stripe_rows: manifest.stripe_rows * cfg.ls_factor.max(1),
                ..Default::default()
            },
        )?;
    }

    let first_file = &manifest.partitions[0].files[0].path;
    let base = ColumnarReader::open(dataset_dir.join(first_file))?;
    let fr = ColumnarReader::open(fr_dir.join(first_file))?;
    let ls = ColumnarReader::open(ls_dir.join(first_file))?;

    // Worker measurements on the first sampled session.
    let session = &projections[0];
    let graph = default_graph(session)?;
    let measure_stripes = |reader: &ColumnarReader| -> std::ops::Range<u32> {
        let stripe_rows = reader.footer().stripes.first().map(|s| s.rows).unwrap_or(1) as u64;
        let need = cfg.measure_rows.div_ceil(stripe_rows.max(1)) as u32;
        0..need.clamp(1, reader.meta().stripe_count())
    };

    let base_range = measure_stripes(&base);
    let (w_baseline, _) = measure(|| {
        run_pipeline(
            &base,
            session,
            &graph,
            DecodePath::RowMajorAll,
            base_range.clone(),
            cfg.batch_size,
            cfg,
        )
    })?;
    let (w_ff, _) = measure(|| {
        run_pipeline(
            &base,
            session,
            &graph,
            DecodePath::RowMajorProjected,
            base_range.clone(),
            cfg.batch_size,
            cfg,
        )
    })?;
    let (w_fm, fm_stats) = measure(|| {
        run_pipeline(
            &base,
            session,
            &graph,
            DecodePath::Columnar,
            base_range.clone(),
            cfg.batch_size,
            cfg,
        )
    })?;
    // Localized build optimizations are compile-time toggles; nothing to
    // flip at run time, so the step measures identical to the flatmap path.
    let w_lo = w_fm;
    let (w_cr, _) = measure(|| {
        run_pipeline(
            &base,
            session,
            &graph,
            DecodePath::Columnar,
            base_range.clone(),
            cfg.batch_size,
            cfg,
        )
    })?;
    let fr_range = measure_stripes(&fr);
    let (w_fr, _) = measure(|| {
        run_pipeline(
            &fr,
            session,
            &graph,
            DecodePath::Columnar,
            fr_range.clone(),
            cfg.batch_size,
            cfg,
        )
    })?;
    let ls_range = measure_stripes(&ls);
    let (w_ls, _) = measure(|| {
        run_pipeline(
            &ls,
            session,
            &graph,
            DecodePath::Columnar,
            ls_range.clone(),
            cfg.batch_size,
            cfg,
        )
    })?;

    // Storage column: analytic model over every sampled session.
    let all_stripes = |r: &ColumnarReader| 0..r.meta().stripe_count();
    let s_baseline = storage_mean(&base, &projections, cfg, |r, p| {
        Ok(plan_stripe_scan(r.meta(), all_stripes(r), p, cfg.chunk_bytes)?)
    })?;
    let s_ff = storage_mean(&base, &projections, cfg, |r, p| {
        Ok(plan_per_stream(r.meta(), all_stripes(r), p)?)
    })?;
    let s_cr = storage_mean(&base, &projections, cfg, |r, p| {
        Ok(plan_coalesced(r.meta(), all_stripes(r), p, cfg.window_bytes)?)
    })?;
    let s_fr = storage_mean(&fr, &projections, cfg, |r, p| {
        Ok(plan_coalesced(r.meta(), all_stripes(r), p, cfg.window_bytes)?)
    })?;
    let s_ls = storage_mean(&ls, &projections, cfg, |r, p| {
        Ok(plan_coalesced(r.meta(), all_stripes(r), p, cfg.window_bytes)?)
    })?;

    let per_stream_plan = plan_per_stream(base.meta(), all_stripes(&base), session)?;
    let per_stream_io = io_size_quantiles(&per_stream_plan);

    let worker = [w_baseline, w_ff, w_fm, w_lo, w_cr, w_fr, w_ls];
    let storage = [s_baseline, s_ff, s_ff, s_ff, s_cr, s_fr, s_ls];
    let steps = LADDER_STEPS
        .iter()
        .enumerate()
        .map(|(i, &name)| LadderStep {
            name,
            worker_batches_per_s: worker[i],
            worker_norm: worker[i] / worker[0],
            storage_bytes_per_s: storage[i],
            storage_norm: storage[i] / storage[0],
            reference_worker: REFERENCE_WORKER[i],
            reference_storage: REFERENCE_STORAGE[i],
        })
        .collect();

    let transform_shares = [
        fm_stats.class_share(OpClass::DenseNorm),
        fm_stats.class_share(OpClass::SparseNorm),
        fm_stats.class_share(OpClass::FeatureGen),
    ];

    Ok(LadderReport { steps, transform_shares, per_stream_io })
}

/// Renders a report in the chosen format.
pub fn render_report(report: &LadderReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Tsv => {
            out.push_str(
                "step\tworker_batches_per_s\tworker_norm\treference_worker\tstorage_bytes_per_s\tstorage_norm\treference_storage\n",
            );
            for s in &report.steps {
                out.push_str(&format!(
                    "{}\t{:.2}\t{:.3}\t{:.2}\t{:.0}\t{:.3}\t{:.2}\n",
                    s.name,
                    s.worker_batches_per_s,
                    s.worker_norm,
                    s.reference_worker,
                    s.storage_bytes_per_s,
                    s.storage_norm,
                    s.reference_storage,
                ));
            }
        }
        ReportFormat::Markdown => {
            out.push_str("| step | worker (norm) | worker ref | storage (norm) | storage ref |\n");
            out.push_str("|------|---------------|------------|----------------|-------------|\n");
            for s in &report.steps {
                out.push_str(&format!(
                    "| {} | {:.2} | {:.2} | {:.2} | {:.2} |\n",
                    s.name, s.worker_norm, s.reference_worker, s.storage_norm, s.reference_storage,
                ));
            }
        }
    }
    out.push('\n');
    out.push_str(&format!(
        "# transform cycle shares (dense/sparse/feature-gen): measured {:.0}%/{:.0}%/{:.0}%, reference {:.0}%/{:.0}%/{:.0}%\n",
        report.transform_shares[0] * 100.0,
        report.transform_shares[1] * 100.0,
        report.transform_shares[2] * 100.0,
        REFERENCE_TRANSFORM_SHARES[0] * 100.0,
        REFERENCE_TRANSFORM_SHARES[1] * 100.0,
        REFERENCE_TRANSFORM_SHARES[2] * 100.0,
    ));
    let io = &report.per_stream_io;
    out.push_str(&format!(
        "# per-stream io sizes (B): measured mean {:.0} p5 {:.0} p25 {:.0} p50 {:.0} p75 {:.0} p95 {:.0}; reference mean {:.0} p5 {:.0} p25 {:.0} p50 {:.0} p75 {:.0} p95 {:.0}\n",
        io.mean, io.p5, io.p25, io.p50, io.p75, io.p95,
        REFERENCE_IO_SIZES[0], REFERENCE_IO_SIZES[1], REFERENCE_IO_SIZES[2],
        REFERENCE_IO_SIZES[3], REFERENCE_IO_SIZES[4], REFERENCE_IO_SIZES[5],
    ));
    out
}

/// Writes a report to a file.
pub fn emit_report(
    report: &LadderReport,
    format: ReportFormat,
    path: &Path,
) -> Result<(), HarnessError> {
    std::fs::write(path, render_report(report, format))?;
    Ok(())
}
