//! Synthetic dataset generator.
//!
//! Writes a partitioned columnar dataset plus its manifest. Presets carry
//! the production-table feature statistics; `--scale` shrinks the feature
//! counts for desk-sized runs.

use std::path::PathBuf;

use clap::Parser;

use dsi_core::harness::{gen_dataset, zipf_feature_weights, GenConfig};
use dsi_core::store::{Codec, FeatureOrderPolicy};
use dsi_core::table::DatasetProfile;

#[derive(Parser, Debug)]
#[command(name = "dsigen", about = "Generate a synthetic columnar training dataset")]
struct Args {
    /// Dataset shape preset: rm1, rm2, rm3, or small.
    #[arg(long, default_value = "small")]
    preset: String,
    /// Rows per partition (overrides the preset).
    #[arg(long)]
    rows: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Physical feature order: schema, random, or popularity.
    #[arg(long, default_value = "random")]
    order: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    partitions: u32,
    #[arg(long, default_value_t = 1)]
    files_per_partition: u32,
    #[arg(long, default_value_t = 4096)]
    stripe_rows: u32,
    /// Scale factor applied to the preset's feature counts.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Stream codec: identity or deflate.
    #[arg(long, default_value = "identity")]
    codec: String,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DSI_LOG", "info")).init();
    let args = Args::parse();

    let mut profile = match args.preset.as_str() {
        "rm1" => DatasetProfile::rm1(),
        "rm2" => DatasetProfile::rm2(),
        "rm3" => DatasetProfile::rm3(),
        "small" => DatasetProfile::default(),
        other => {
            eprintln!("unknown preset {other}; expected rm1, rm2, rm3, or small");
            std::process::exit(2);
        }
    };
    if args.scale != 1.0 {
        profile = profile.scaled(args.scale);
    }
    if let Some(rows) = args.rows {
        profile.rows_per_partition = rows;
    }
    profile.partitions = args.partitions;
    profile.files_per_partition = args.files_per_partition;

    let codec = match args.codec.as_str() {
        "identity" => Codec::Identity,
        "deflate" => Codec::Deflate,
        other => {
            eprintln!("unknown codec {other}");
            std::process::exit(2);
        }
    };

    let order = match args.order.as_str() {
        "schema" => FeatureOrderPolicy::SchemaOrder,
        "random" => FeatureOrderPolicy::Random { seed: args.seed },
        "popularity" => {
            // Weight features by a synthetic window of recent sessions
            // drawn from the profile's popularity law.
            let probe_dir = args.out.join(".order-probe");
            let probe = gen_dataset(
                &DatasetProfile { rows_per_partition: 1, partitions: 1, ..profile.clone() },
                args.seed,
                &probe_dir,
                &GenConfig { stripe_rows: args.stripe_rows, ..Default::default() },
            )
            .unwrap_or_else(|e| {
                eprintln!("failed to derive popularity weights: {e}");
                std::process::exit(1);
            });
            let per = (probe.features.len() / 10).max(1);
            let weights = zipf_feature_weights(&probe, 64, per, args.seed);
            let _ = std::fs::remove_dir_all(&probe_dir);
            FeatureOrderPolicy::Popularity { weights }
        }
        other => {
            eprintln!("unknown order {other}; expected schema, random, or popularity");
            std::process::exit(2);
        }
    };

    let cfg = GenConfig { order, stripe_rows: args.stripe_rows, codec };
    match gen_dataset(&profile, args.seed, &args.out, &cfg) {
        Ok(manifest) => {
            println!(
                "wrote {} rows across {} partition(s), {} features, into {}",
                manifest.total_rows,
                manifest.partitions.len(),
                manifest.features.len(),
                args.out.display()
            );
        }
        Err(e) => {
            eprintln!("generation failed: {e}");
            std::process::exit(1);
        }
    }
}
