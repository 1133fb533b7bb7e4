//! Live end-to-end runs: a master, a worker fleet, and client threads on
//! one host, wired over loopback TCP exactly as a deployment would be.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use super::HarnessError;
use crate::client::{run_trainer, ClientConfig, ClientRunStats, DppClient, StallReport, TrainerConfig};
use crate::master::{Master, MasterConfig, MasterMetrics};
use crate::model::SessionSpec;
use crate::worker::{Worker, WorkerConfig};

#[derive(Debug, Clone)]
pub struct LiveRunConfig {
    pub dataset_dir: PathBuf,
    pub spec: SessionSpec,
    pub workers: usize,
    pub clients: usize,
    pub fanout: usize,
    /// Trainer pacing; `None` consumes as fast as batches arrive.
    pub trainer_rate: Option<f64>,
    pub master: MasterConfig,
    pub worker: WorkerConfig,
    pub max_duration: Duration,
}

impl LiveRunConfig {
    pub fn new(dataset_dir: PathBuf, spec: SessionSpec) -> Self {
        Self {
            dataset_dir,
            spec,
            workers: 2,
            clients: 1,
            fanout: 4,
            trainer_rate: None,
            master: MasterConfig {
                lease_ttl: Duration::from_secs(5),
                heartbeat_interval: Duration::from_millis(250),
                ..Default::default()
            },
            worker: WorkerConfig {
                heartbeat_interval: Duration::from_millis(250),
                ..Default::default()
            },
            max_duration: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LiveRunReport {
    /// Table-global ids of every delivered row, per client, in delivery
    /// order (duplicates preserved: this is what accounting audits).
    pub row_ids: Vec<Vec<u64>>,
    pub stall: Vec<StallReport>,
    pub client_stats: Vec<ClientRunStats>,
    pub master_metrics: MasterMetrics,
    pub completed: bool,
    pub wall: Duration,
}

/// Consumes a session through one client, optionally pacing like a trainer,
/// collecting delivered row ids.
pub fn drain_session(
    client: &mut DppClient,
    rate: Option<f64>,
    max_duration: Duration,
) -> (Vec<u64>, StallReport) {
    let start = Instant::now();
    let compute = rate.map(|r| Duration::from_secs_f64(1.0 / r));
    let mut row_ids = Vec::new();
    let mut busy = Duration::ZERO;
    let mut stall = Duration::ZERO;
    let mut batches = 0u64;
    while start.elapsed() < max_duration {
        let t0 = Instant::now();
        match client.next_batch_timeout(max_duration.saturating_sub(start.elapsed())) {
            Ok(Some(batch)) => {
                stall += t0.elapsed();
                batches += 1;
                row_ids.extend_from_slice(&batch.row_ids);
                if let Some(compute) = compute {
                    std::thread::sleep(compute);
                    busy += compute;
                }
            }
            Ok(None) => break,
            Err(_) => break,
        }
    }
    let denom = (busy + stall).as_secs_f64();
    let report = StallReport {
        wall_s: start.elapsed().as_secs_f64(),
        busy_s: busy.as_secs_f64(),
        stall_s: stall.as_secs_f64(),
        stall_fraction: if denom > 0.0 { stall.as_secs_f64() / denom } else { 0.0 },
        batches,
    };
    (row_ids, report)
}

/// Runs a complete session: master, `workers` workers, `clients` client
/// threads; returns delivery accounting and stall reports.
pub fn run_live(cfg: &LiveRunConfig) -> Result<LiveRunReport, HarnessError> {
    let start = Instant::now();
    let master = Master::start(
        cfg.master.clone(),
        cfg.spec.clone(),
        cfg.dataset_dir.to_string_lossy().to_string(),
    )?;
    let master_addr = master.addr().to_string();

    let mut workers = Vec::with_capacity(cfg.workers);
    for _ in 0..cfg.workers {
        workers.push(Worker::start(WorkerConfig {
            master_addr: master_addr.clone(),
            ..cfg.worker.clone()
        })?);
    }
    let endpoints: Vec<String> = workers.iter().map(|w| w.listen_addr().to_string()).collect();

    let mut handles = Vec::new();
    for c in 0..cfg.clients {
        let client_cfg = ClientConfig {
            endpoints: endpoints.clone(),
            client_index: c,
            total_clients: cfg.clients,
            fanout: cfg.fanout,
            master_addr: Some(master_addr.clone()),
            ..Default::default()
        };
        let rate = cfg.trainer_rate;
        let max_duration = cfg.max_duration;
        handles.push(std::thread::spawn(
            move || -> Result<(Vec<u64>, StallReport, ClientRunStats), HarnessError> {
                let mut client = DppClient::connect(client_cfg)?;
                let (ids, report) = drain_session(&mut client, rate, max_duration);
                let stats = client.stats();
                Ok((ids, report, stats))
            },
        ));
    }

    let mut report = LiveRunReport::default();
    for handle in handles {
        let (ids, stall, stats) = handle.join().expect("client thread panicked")?;
        report.row_ids.push(ids);
        report.stall.push(stall);
        report.client_stats.push(stats);
    }

    report.completed = master.wait_complete(Duration::from_secs(5));
    report.master_metrics = master.metrics();
    report.wall = start.elapsed();
    drop(workers);
    master.shutdown();
    Ok(report)
}

/// Paces a single client against a running fleet and reports stalls; the
/// plain trainer-simulator entry used by the benchmark binary.
pub fn paced_trainer_run(
    endpoints: Vec<String>,
    master_addr: Option<String>,
    rate: f64,
    max_batches: Option<u64>,
    max_duration: Option<Duration>,
) -> Result<StallReport, HarnessError> {
    let mut client = DppClient::connect(ClientConfig {
        endpoints,
        master_addr,
        ..Default::default()
    })?;
    Ok(run_trainer(
        &mut client,
        &TrainerConfig { rate_batches_per_s: rate, max_batches, max_duration },
    ))
}
