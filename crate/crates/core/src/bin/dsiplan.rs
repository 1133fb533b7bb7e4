//! Read-plan inspector: prints the physical I/Os a planner produces for a
//! projection over a columnar file, with over-read accounting and the
//! simulated storage throughput.

use std::path::PathBuf;

use clap::Parser;

use dsi_core::harness::io_size_quantiles;
use dsi_core::model::{FeatureId, FeatureKind, FeatureProjection};
use dsi_core::plan::{
    plan_coalesced, plan_per_stream, plan_stripe_scan, simulate_throughput, StorageModel,
};
use dsi_core::store::ColumnarReader;

#[derive(Parser, Debug)]
#[command(name = "dsiplan", about = "Plan and cost projected reads over a columnar file")]
struct Args {
    /// Columnar file to plan against.
    #[arg(long)]
    file: PathBuf,
    /// Planner: per-stream, coalesced, or scan.
    #[arg(long, default_value = "coalesced")]
    mode: String,
    /// Explicit projection, e.g. "d0,d3,s1" (d=dense, s=sparse, x=scored).
    #[arg(long)]
    features: Option<String>,
    /// Project the first K features of the file's physical layout.
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, default_value_t = 1_310_720)]
    window_bytes: u64,
    #[arg(long, default_value_t = 8.0)]
    seek_ms: f64,
    #[arg(long, default_value_t = 180.0)]
    bw_mbps: f64,
    #[arg(long, default_value_t = 8 * 1024 * 1024)]
    chunk_bytes: u64,
}

fn parse_features(spec: &str) -> Result<Vec<FeatureId>, String> {
    spec.split(',')
        .map(|token| {
            let token = token.trim();
            let (prefix, id) = token.split_at(1);
            let id: u32 = id.parse().map_err(|_| format!("bad feature {token}"))?;
            let kind = match prefix {
                "d" => FeatureKind::Dense,
                "s" => FeatureKind::Sparse,
                "x" => FeatureKind::ScoredSparse,
                _ => return Err(format!("bad feature {token}")),
            };
            Ok(FeatureId { id, kind })
        })
        .collect()
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DSI_LOG", "info")).init();
    let args = Args::parse();

    let reader = match ColumnarReader::open(&args.file) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("cannot open {}: {e}", args.file.display());
            std::process::exit(1);
        }
    };
    let ids = match (&args.features, args.top_k) {
        (Some(spec), _) => parse_features(spec).unwrap_or_else(|e| {
            eprintln!("{e}");
            std::process::exit(2);
        }),
        (None, Some(k)) => reader.footer().layout_order.iter().take(k).copied().collect(),
        (None, None) => reader.footer().layout_order.clone(),
    };
    let projection = FeatureProjection::new(ids).unwrap_or_else(|e| {
        eprintln!("bad projection: {e}");
        std::process::exit(2);
    });

    let stripes = 0..reader.meta().stripe_count();
    let plan = match args.mode.as_str() {
        "per-stream" => plan_per_stream(reader.meta(), stripes, &projection),
        "coalesced" => plan_coalesced(reader.meta(), stripes, &projection, args.window_bytes),
        "scan" => plan_stripe_scan(reader.meta(), stripes, &projection, args.chunk_bytes),
        other => {
            eprintln!("unknown mode {other}; expected per-stream, coalesced, or scan");
            std::process::exit(2);
        }
    }
    .unwrap_or_else(|e| {
        eprintln!("planning failed: {e}");
        std::process::exit(1);
    });

    println!("offset\tlength\tover_read");
    for io in &plan.ios {
        println!("{}\t{}\t{}", io.offset, io.length, io.over_read());
    }

    let model = StorageModel {
        seek_time_s: args.seek_ms / 1e3,
        bandwidth_bps: args.bw_mbps * 1e6,
        max_io_bytes: args.chunk_bytes,
    };
    let (seconds, effective) = simulate_throughput(&plan, &model);
    let q = io_size_quantiles(&plan);
    eprintln!(
        "# {} ios, requested {} B, fetched {} B, over-read {} B",
        plan.io_count(),
        plan.requested_bytes,
        plan.fetched_bytes,
        plan.over_read()
    );
    eprintln!("# io sizes (B): mean {:.0} p50 {:.0} p95 {:.0}", q.mean, q.p50, q.p95);
    eprintln!(
        "# simulated: {seconds:.6} s, effective {:.3} MB/s",
        effective / 1e6
    );
}
