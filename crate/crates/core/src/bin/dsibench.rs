//! Benchmark orchestrator: the optimization ladder, live end-to-end runs
//! with a rate-driven trainer, and the autoscaler simulator.

use std::path::PathBuf;
use std::time::Duration;

use clap::{Parser, Subcommand};

use dsi_core::harness::{
    default_graph, emit_report, gen_dataset, render_report, run_ladder, run_live,
    run_scaling_sim, sample_projections, GenConfig, LadderConfig, LiveRunConfig, ReportFormat,
    ScalingSimConfig,
};
use dsi_core::model::SessionSpec;
use dsi_core::store::FeatureOrderPolicy;
use dsi_core::table::DatasetManifest;

#[derive(Parser, Debug)]
#[command(name = "dsibench", about = "Storage and preprocessing benchmark harness")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run the progressive-optimization ladder over a dataset.
    Ladder {
        #[arg(long)]
        dataset: PathBuf,
        /// Workers for the closing live end-to-end pass (0 skips it).
        #[arg(long, default_value_t = 2)]
        workers: usize,
        /// Trainer demand, batches per second, for the live pass.
        #[arg(long, default_value_t = 50.0)]
        trainer_rate: f64,
        #[arg(long, default_value_t = 1_310_720)]
        window_bytes: u64,
        /// Expected base stripe rows; the dataset is rewritten if it
        /// differs.
        #[arg(long)]
        stripe_rows: Option<u32>,
        #[arg(long)]
        report: PathBuf,
        /// Report format: tsv or md.
        #[arg(long, default_value = "tsv")]
        format: String,
        #[arg(long, default_value_t = 20_000)]
        measure_rows: u64,
        #[arg(long, default_value_t = 24)]
        sessions: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run one live session end to end and report stalls.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 2)]
        workers: usize,
        #[arg(long, default_value_t = 1)]
        clients: usize,
        #[arg(long, default_value_t = 4)]
        fanout: usize,
        /// Trainer demand, batches per second (0 = unpaced).
        #[arg(long, default_value_t = 0.0)]
        trainer_rate: f64,
        #[arg(long, default_value_t = 256)]
        batch_size: u32,
        #[arg(long, default_value_t = 4096)]
        split_size: u64,
        /// Features per projection as a fraction of the table.
        #[arg(long, default_value_t = 0.10)]
        projection_fraction: f64,
        #[arg(long, default_value_t = 120)]
        max_seconds: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// key=value worker settings applied to every spawned worker.
        #[arg(long)]
        worker_config: Option<PathBuf>,
    },
    /// Drive the autoscaling controller through the discrete-event fleet
    /// model.
    ScaleSim {
        /// Trainer demand, batches per evaluation period.
        #[arg(long, default_value_t = 64.0)]
        demand: f64,
        /// Per-worker capacity, batches per evaluation period.
        #[arg(long, default_value_t = 20.0)]
        capacity: f64,
        #[arg(long, default_value_t = 1)]
        initial_workers: u32,
        #[arg(long, default_value_t = 40)]
        periods: u32,
    },
}

fn session_from_manifest(
    manifest: &DatasetManifest,
    fraction: f64,
    batch_size: u32,
    split_size: u64,
    seed: u64,
) -> SessionSpec {
    let per = ((manifest.features.len() as f64 * fraction).round() as usize).max(1);
    let projection = sample_projections(manifest, 1, per, seed).pop().unwrap();
    let graph = default_graph(&projection).expect("default graph over projection");
    SessionSpec {
        table: manifest.table.clone(),
        partitions: manifest.partitions.iter().map(|p| p.key.clone()).collect(),
        projection,
        graph,
        batch_size,
        split_size,
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DSI_LOG", "info")).init();
    let args = Args::parse();
    match args.cmd {
        Cmd::Ladder {
            dataset,
            workers,
            trainer_rate,
            window_bytes,
            stripe_rows,
            report,
            format,
            measure_rows,
            sessions,
            seed,
        } => {
            let format = match format.as_str() {
                "tsv" => ReportFormat::Tsv,
                "md" => ReportFormat::Markdown,
                other => {
                    eprintln!("unknown format {other}");
                    std::process::exit(2);
                }
            };
            let mut manifest = DatasetManifest::load(&dataset).unwrap_or_else(|e| {
                eprintln!("cannot load dataset: {e}");
                std::process::exit(1);
            });
            if let Some(rows) = stripe_rows {
                if rows != manifest.stripe_rows {
                    eprintln!(
                        "rewriting dataset at {rows}-row stripes (was {})",
                        manifest.stripe_rows
                    );
                    manifest = gen_dataset(
                        &manifest.profile,
                        manifest.seed,
                        &dataset,
                        &GenConfig {
                            order: FeatureOrderPolicy::Random { seed: manifest.seed },
                            stripe_rows: rows,
                            ..Default::default()
                        },
                    )
                    .unwrap_or_else(|e| {
                        eprintln!("rewrite failed: {e}");
                        std::process::exit(1);
                    });
                }
            }
            let cfg = LadderConfig {
                window_bytes,
                measure_rows,
                sessions,
                seed,
                ..Default::default()
            };
            let ladder = run_ladder(&dataset, &cfg).unwrap_or_else(|e| {
                eprintln!("ladder failed: {e}");
                std::process::exit(1);
            });
            print!("{}", render_report(&ladder, format));
            emit_report(&ladder, format, &report).unwrap_or_else(|e| {
                eprintln!("cannot write report: {e}");
                std::process::exit(1);
            });

            if workers > 0 {
                let spec = session_from_manifest(&manifest, 0.10, 512, 4096, seed);
                let mut live = LiveRunConfig::new(dataset.clone(), spec);
                live.workers = workers;
                live.trainer_rate = if trainer_rate > 0.0 { Some(trainer_rate) } else { None };
                match run_live(&live) {
                    Ok(outcome) => {
                        for (i, stall) in outcome.stall.iter().enumerate() {
                            println!("client {i}: {}", stall.machine_line());
                        }
                    }
                    Err(e) => eprintln!("live pass failed: {e}"),
                }
            }
            println!("report written to {}", report.display());
        }
        Cmd::Run {
            dataset,
            workers,
            clients,
            fanout,
            trainer_rate,
            batch_size,
            split_size,
            projection_fraction,
            max_seconds,
            seed,
            worker_config,
        } => {
            let manifest = DatasetManifest::load(&dataset).unwrap_or_else(|e| {
                eprintln!("cannot load dataset: {e}");
                std::process::exit(1);
            });
            let spec =
                session_from_manifest(&manifest, projection_fraction, batch_size, split_size, seed);
            let mut cfg = LiveRunConfig::new(dataset, spec);
            if let Some(path) = worker_config {
                cfg.worker = dsi_core::worker::WorkerConfig::from_kv_file(&path)
                    .unwrap_or_else(|e| {
                        eprintln!("{e}");
                        std::process::exit(2);
                    });
            }
            cfg.workers = workers;
            cfg.clients = clients;
            cfg.fanout = fanout;
            cfg.trainer_rate = if trainer_rate > 0.0 { Some(trainer_rate) } else { None };
            cfg.max_duration = Duration::from_secs(max_seconds);
            match run_live(&cfg) {
                Ok(outcome) => {
                    let delivered: usize = outcome.row_ids.iter().map(|v| v.len()).sum();
                    println!(
                        "delivered {} rows in {:?} (complete: {})",
                        delivered, outcome.wall, outcome.completed
                    );
                    for (i, stall) in outcome.stall.iter().enumerate() {
                        println!("client {i}: {}", stall.machine_line());
                        println!("{}", outcome.stall[i]);
                    }
                    println!(
                        "master: {} splits, {} duplicates, {} reclaims",
                        outcome.master_metrics.splits_total,
                        outcome.master_metrics.duplicate_completions,
                        outcome.master_metrics.leases_reclaimed
                    );
                }
                Err(e) => {
                    eprintln!("run failed: {e}");
                    std::process::exit(1);
                }
            }
        }
        Cmd::ScaleSim { demand, capacity, initial_workers, periods } => {
            let result = run_scaling_sim(&ScalingSimConfig {
                demand,
                capacity_per_worker: capacity,
                initial_workers,
                periods,
                ..Default::default()
            });
            println!("period\tworkers\tbuffered");
            for (i, (w, b)) in
                result.workers_history.iter().zip(&result.buffered_history).enumerate()
            {
                println!("{i}\t{w}\t{b:.1}");
            }
            println!(
                "# settled at {} workers, {} stall periods, {:.1} buffered",
                result.final_workers, result.stall_periods, result.final_buffered
            );
        }
    }
}
