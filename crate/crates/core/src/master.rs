//! Control plane: split generation and leasing, progress tracking,
//! checkpointing, worker health, and the buffer-driven autoscaling
//! controller.
//!
//! All session state sits behind one mutex; connection handlers and the
//! housekeeping timer take it briefly and never across I/O. Recovery is
//! lease-based: a split not completed before its lease deadline (or whose
//! holder stops heartbeating) goes back on the queue. Delivery is therefore
//! exactly-once in failure-free runs and at-least-once under failures, with
//! duplicates surfaced as a metric rather than hidden.

use std::collections::{HashMap, HashSet, VecDeque};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicI64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::model::{validate_session, SessionSpec, Split, WorkerStats};
use crate::table::{DatasetManifest, TableError};
use crate::wire::{self, DrainReason, Message, SessionInfo, WireError};

#[derive(Debug, Error)]
pub enum MasterError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("table: {0}")]
    Table(#[from] TableError),
    #[error("wire: {0}")]
    Wire(#[from] WireError),
    #[error("checkpoint belongs to a different session")]
    CheckpointSpecMismatch,
    #[error("checkpoint file is not a checkpoint record")]
    BadCheckpoint,
    #[error("no checkpoint directory configured")]
    NoCheckpointDir,
    #[error("session spec is not executable: {0}")]
    InvalidSession(String),
}

/// Autoscaling controller knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalerConfig {
    pub evaluation_period: Duration,
    /// Target buffered batches per worker; scale up below this.
    pub buffer_floor_per_worker: f64,
    /// Utilization ceiling the fleet aims for.
    pub utilization_ceiling: f64,
    /// Largest worker-count change per decision.
    pub max_step: u32,
}

impl Default for ScalerConfig {
    fn default() -> Self {
        Self {
            evaluation_period: Duration::from_secs(2),
            buffer_floor_per_worker: 2.0,
            utilization_ceiling: 0.85,
            max_step: 2,
        }
    }
}

/// One scaling decision: add workers when buffers run dry or clients stall,
/// drain workers when buffers pile up and the fleet idles. Never drops the
/// fleet below one worker; steps are capped.
pub fn evaluate_scaling(
    cfg: &ScalerConfig,
    fleet: &[WorkerStats],
    client_stalls_in_period: u32,
    workers: u32,
) -> i32 {
    if workers == 0 {
        return cfg.max_step as i32;
    }
    let buffered: f64 = fleet.iter().map(|s| s.buffered_batches as f64).sum();
    let floor = cfg.buffer_floor_per_worker * workers as f64;
    if buffered < floor || client_stalls_in_period > 0 {
        let urgent = client_stalls_in_period > 0 || buffered == 0.0;
        return if urgent { cfg.max_step as i32 } else { 1 };
    }
    let mean_util = if fleet.is_empty() {
        0.0
    } else {
        fleet.iter().map(|s| (s.cpu + s.network) / 2.0).sum::<f64>() / fleet.len() as f64
    };
    if buffered > 4.0 * floor && mean_util < 0.5 * cfg.utilization_ceiling {
        let step = (cfg.max_step).min(workers - 1);
        return -(step as i32);
    }
    0
}

/// One recorded controller evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingDecision {
    pub period: u64,
    pub workers: u32,
    pub buffered: u32,
    pub stalls: u32,
    pub delta: i32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MasterMetrics {
    pub splits_total: u64,
    pub splits_completed: u64,
    pub duplicate_completions: u64,
    pub leases_reclaimed: u64,
    pub workers_declared_dead: u64,
    pub checkpoints_written: u64,
    pub client_stall_events: u64,
}

/// Restorable progress snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: u64,
    pub spec_digest: u64,
    pub cursor: u64,
    pub completed: Vec<u64>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), MasterError> {
        let msg = Message::CheckpointRecord {
            epoch: self.epoch,
            spec_digest: self.spec_digest,
            cursor: self.cursor,
            completed: self.completed.clone(),
        };
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, wire::frame_bytes(&msg))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MasterError> {
        let bytes = std::fs::read(path)?;
        let mut cursor = std::io::Cursor::new(bytes);
        match wire::read_message(&mut cursor)? {
            Message::CheckpointRecord { epoch, spec_digest, cursor, completed } => {
                Ok(Self { epoch, spec_digest, cursor, completed })
            }
            _ => Err(MasterError::BadCheckpoint),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MasterConfig {
    pub listen_addr: String,
    /// How long a split lease lives before it is reclaimed.
    pub lease_ttl: Duration,
    /// Expected worker heartbeat cadence.
    pub heartbeat_interval: Duration,
    /// Consecutive missed heartbeats before a worker is declared dead.
    pub missed_heartbeats_dead: u32,
    pub checkpoint_dir: Option<PathBuf>,
    /// Periodic checkpoint cadence; `None` leaves checkpoints on demand.
    pub checkpoint_period: Option<Duration>,
    pub scaler: ScalerConfig,
    pub housekeeping_tick: Duration,
}

impl Default for MasterConfig {
    fn default() -> Self {
        Self {
            listen_addr: "127.0.0.1:0".into(),
            lease_ttl: Duration::from_secs(30),
            heartbeat_interval: Duration::from_secs(1),
            missed_heartbeats_dead: 3,
            checkpoint_dir: None,
            checkpoint_period: None,
            scaler: ScalerConfig::default(),
            housekeeping_tick: Duration::from_millis(20),
        }
    }
}

/// Generates the deterministic split sequence for a session: each selected
/// partition's files chopped into `split_size`-row pieces (final remainder
/// smaller), never straddling a file boundary.
pub fn generate_splits(
    spec: &SessionSpec,
    manifest: &DatasetManifest,
) -> Result<Vec<Split>, MasterError> {
    let files = manifest.selected_rows(&spec.partitions)?;
    let stripe_rows = manifest.stripe_rows as u64;
    let mut splits = Vec::new();
    let mut id = 0u64;
    for file in files {
        let mut local = 0u64;
        while local < file.rows {
            let take = spec.split_size.min(file.rows - local);
            splits.push(Split {
                id,
                file: file.path.clone(),
                stripe_first: (local / stripe_rows) as u32,
                stripe_last: ((local + take - 1) / stripe_rows) as u32,
                row_first: file.row_offset + local,
                row_last: file.row_offset + local + take,
            });
            id += 1;
            local += take;
        }
    }
    Ok(splits)
}

struct Lease {
    worker: u64,
    deadline: Instant,
}

struct WorkerEntry {
    last_seen: Instant,
    stats: WorkerStats,
    draining: bool,
}

struct State {
    splits: Vec<Split>,
    cursor: u64,
    requeue: VecDeque<u64>,
    outstanding: HashMap<u64, Lease>,
    completed: HashSet<u64>,
    workers: HashMap<u64, WorkerEntry>,
    next_worker_id: u64,
    stalls_this_period: u32,
    metrics: MasterMetrics,
    scaling_log: Vec<ScalingDecision>,
    checkpoint_epoch: u64,
    conns: Vec<TcpStream>,
}

struct Inner {
    cfg: MasterConfig,
    spec: SessionSpec,
    spec_digest: u64,
    table_dir: String,
    state: Mutex<State>,
    shutdown: AtomicBool,
    /// Net worker delta the controller wants but cannot apply itself; an
    /// embedding orchestrator launches or retires workers from this.
    pending_scale: AtomicI64,
    addr: SocketAddr,
}

/// A running control-plane instance bound to one session.
pub struct Master {
    inner: Arc<Inner>,
    threads: Vec<std::thread::JoinHandle<()>>,
}

impl Master {
    pub fn start(
        cfg: MasterConfig,
        spec: SessionSpec,
        table_dir: impl Into<String>,
    ) -> Result<Self, MasterError> {
        Self::boot(cfg, spec, table_dir.into(), None)
    }

    /// Restores session progress from a checkpoint before serving. Splits
    /// completed in the checkpoint are never re-leased; everything issued
    /// but unfinished goes back on the queue.
    pub fn start_from_checkpoint(
        cfg: MasterConfig,
        spec: SessionSpec,
        table_dir: impl Into<String>,
        checkpoint: &Checkpoint,
    ) -> Result<Self, MasterError> {
        Self::boot(cfg, spec, table_dir.into(), Some(checkpoint))
    }

    fn boot(
        cfg: MasterConfig,
        spec: SessionSpec,
        table_dir: String,
        checkpoint: Option<&Checkpoint>,
    ) -> Result<Self, MasterError> {
        let manifest = DatasetManifest::load(Path::new(&table_dir))?;
        if let Some(partition) = spec.partitions.first() {
            let schema = manifest.schema_for(partition)?;
            let report = validate_session(&spec, &schema);
            if !report.is_ok() {
                let issues: Vec<String> =
                    report.issues.iter().map(|i| i.to_string()).collect();
                return Err(MasterError::InvalidSession(issues.join("; ")));
            }
        }
        let splits = generate_splits(&spec, &manifest)?;
        let spec_digest = spec.digest();

        let (cursor, completed, requeue, epoch) = match checkpoint {
            Some(ck) => {
                if ck.spec_digest != spec_digest {
                    return Err(MasterError::CheckpointSpecMismatch);
                }
                let completed: HashSet<u64> = ck.completed.iter().copied().collect();
                let requeue: VecDeque<u64> =
                    (0..ck.cursor).filter(|id| !completed.contains(id)).collect();
                (ck.cursor, completed, requeue, ck.epoch + 1)
            }
            None => (0, HashSet::new(), VecDeque::new(), 1),
        };

        let listener = TcpListener::bind(&cfg.listen_addr)?;
        let addr = listener.local_addr()?;
        let metrics = MasterMetrics {
            splits_total: splits.len() as u64,
            splits_completed: completed.len() as u64,
            ..Default::default()
        };

        let inner = Arc::new(Inner {
            cfg,
            spec,
            spec_digest,
            table_dir,
            state: Mutex::new(State {
                splits,
                cursor,
                requeue,
                outstanding: HashMap::new(),
                completed,
                workers: HashMap::new(),
                next_worker_id: 1,
                stalls_this_period: 0,
                metrics,
                scaling_log: Vec::new(),
                checkpoint_epoch: epoch,
                conns: Vec::new(),
            }),
            shutdown: AtomicBool::new(false),
            pending_scale: AtomicI64::new(0),
            addr,
        });

        let mut threads = Vec::new();
        {
            let inner = inner.clone();
            threads.push(std::thread::spawn(move || accept_loop(inner, listener)));
        }
        {
            let inner = inner.clone();
            threads.push(std::thread::spawn(move || housekeeping_loop(inner)));
        }
        Ok(Self { inner, threads })
    }

    pub fn addr(&self) -> SocketAddr {
        self.inner.addr
    }

    pub fn is_complete(&self) -> bool {
        let state = self.inner.state.lock().unwrap();
        state.completed.len() == state.splits.len()
    }

    /// Blocks until every split is completed or the timeout passes.
    pub fn wait_complete(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            if self.is_complete() {
                return true;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        self.is_complete()
    }

    pub fn metrics(&self) -> MasterMetrics {
        self.inner.state.lock().unwrap().metrics
    }

    pub fn scaling_log(&self) -> Vec<ScalingDecision> {
        self.inner.state.lock().unwrap().scaling_log.clone()
    }

    /// Splits currently leased out.
    pub fn outstanding_count(&self) -> usize {
        self.inner.state.lock().unwrap().outstanding.len()
    }

    /// Splits leased out or waiting on the requeue: the re-delivery exposure
    /// if everything in flight were re-run.
    pub fn unfinished_issued_count(&self) -> usize {
        let state = self.inner.state.lock().unwrap();
        state.outstanding.len() + state.requeue.len()
    }

    pub fn split_size(&self) -> u64 {
        self.inner.spec.split_size
    }

    /// Net scale delta requested by the controller since last taken.
    pub fn take_pending_scale(&self) -> i64 {
        self.inner.pending_scale.swap(0, Ordering::SeqCst)
    }

    pub fn checkpoint_now(&self) -> Result<PathBuf, MasterError> {
        checkpoint_inner(&self.inner)
    }

    /// Stops serving and joins every thread.
    pub fn shutdown(self) {
        drop(self);
    }
}

impl Drop for Master {
    fn drop(&mut self) {
        self.inner.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.inner.addr);
        if let Ok(state) = self.inner.state.lock() {
            for conn in &state.conns {
                let _ = conn.shutdown(std::net::Shutdown::Both);
            }
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn accept_loop(inner: Arc<Inner>, listener: TcpListener) {
    loop {
        let Ok((stream, _)) = listener.accept() else { break };
        if inner.shutdown.load(Ordering::SeqCst) {
            break;
        }
        if let Ok(clone) = stream.try_clone() {
            inner.state.lock().unwrap().conns.push(clone);
        }
        let inner = inner.clone();
        std::thread::spawn(move || connection_loop(inner, stream));
    }
}

fn connection_loop(inner: Arc<Inner>, mut stream: TcpStream) {
    loop {
        let msg = match wire::read_message(&mut stream) {
            Ok(msg) => msg,
            Err(_) => return, // disconnect or garbage; drop the connection
        };
        if inner.shutdown.load(Ordering::SeqCst) {
            return;
        }
        let Some(reply) = handle(&inner, msg) else { return };
        if wire::write_message(&mut stream, &reply).is_err() {
            return;
        }
    }
}

fn handle(inner: &Inner, msg: Message) -> Option<Message> {
    match msg {
        Message::RegisterWorker { listen_addr: _ } => {
            let mut state = inner.state.lock().unwrap();
            let id = state.next_worker_id;
            state.next_worker_id += 1;
            state.workers.insert(
                id,
                WorkerEntry {
                    last_seen: Instant::now(),
                    stats: WorkerStats::default(),
                    draining: false,
                },
            );
            log::info!("worker {id} registered");
            Some(Message::SessionInfo(Box::new(SessionInfo {
                worker_id: id,
                table_dir: inner.table_dir.clone(),
                spec: inner.spec.clone(),
            })))
        }
        Message::NextSplit { worker_id } => {
            let mut state = inner.state.lock().unwrap();
            if !state.workers.contains_key(&worker_id) {
                // Unknown or previously-dead sender: make it re-register.
                return Some(Message::Drain { reason: DrainReason::Reregister });
            }
            if state.workers[&worker_id].draining {
                return Some(Message::Drain { reason: DrainReason::ScaleDown });
            }
            let next = state.requeue.pop_front().or_else(|| {
                if (state.cursor as usize) < state.splits.len() {
                    let id = state.cursor;
                    state.cursor += 1;
                    Some(id)
                } else {
                    None
                }
            });
            match next {
                Some(id) => {
                    let deadline = Instant::now() + inner.cfg.lease_ttl;
                    state.outstanding.insert(id, Lease { worker: worker_id, deadline });
                    Some(Message::SplitAssign(state.splits[id as usize].clone()))
                }
                None if state.outstanding.is_empty() => Some(Message::EndOfData),
                // Leased splits may still be reclaimed; ask again shortly.
                None => Some(Message::Pending),
            }
        }
        Message::CompleteSplit { worker_id, split_id } => {
            let mut state = inner.state.lock().unwrap();
            if state.completed.contains(&split_id) {
                state.metrics.duplicate_completions += 1;
            } else {
                if let Some(lease) = state.outstanding.remove(&split_id) {
                    if lease.worker != worker_id {
                        // Late completion raced a re-issue; both processed it.
                        state.metrics.duplicate_completions += 1;
                    }
                }
                state.requeue.retain(|&id| id != split_id);
                state.completed.insert(split_id);
                state.metrics.splits_completed += 1;
            }
            Some(Message::CompleteAck)
        }
        Message::WorkerHeartbeat { worker_id, stats } => {
            let mut state = inner.state.lock().unwrap();
            match state.workers.get_mut(&worker_id) {
                Some(entry) => {
                    entry.last_seen = Instant::now();
                    entry.stats = stats.clamped();
                    if entry.draining {
                        Some(Message::Drain { reason: DrainReason::ScaleDown })
                    } else {
                        Some(Message::HeartbeatAck)
                    }
                }
                None => Some(Message::Drain { reason: DrainReason::Reregister }),
            }
        }
        Message::ClientHeartbeat { client_id: _, stall_events, batches_received: _ } => {
            let mut state = inner.state.lock().unwrap();
            state.stalls_this_period += stall_events;
            state.metrics.client_stall_events += stall_events as u64;
            Some(Message::HeartbeatAck)
        }
        // Anything else is a protocol violation; close the connection.
        _ => None,
    }
}

fn housekeeping_loop(inner: Arc<Inner>) {
    let started = Instant::now();
    let mut last_scale = Instant::now();
    let mut last_checkpoint = Instant::now();
    let mut period: u64 = 0;
    while !inner.shutdown.load(Ordering::SeqCst) {
        std::thread::sleep(inner.cfg.housekeeping_tick);
        let now = Instant::now();
        {
            let mut state = inner.state.lock().unwrap();

            // Workers that stopped heartbeating lose their leases at once.
            let dead_after = inner.cfg.heartbeat_interval * inner.cfg.missed_heartbeats_dead;
            if started.elapsed() >= dead_after {
                let dead: Vec<u64> = state
                    .workers
                    .iter()
                    .filter(|(_, w)| now.duration_since(w.last_seen) >= dead_after)
                    .map(|(&id, _)| id)
                    .collect();
                for id in dead {
                    state.workers.remove(&id);
                    state.metrics.workers_declared_dead += 1;
                    log::warn!("worker {id} declared dead");
                    reclaim_leases_of(&mut state, Some(id));
                }
            }

            // Expired leases go back on the queue.
            let expired: Vec<u64> = state
                .outstanding
                .iter()
                .filter(|(_, lease)| lease.deadline <= now)
                .map(|(&id, _)| id)
                .collect();
            for id in expired {
                state.outstanding.remove(&id);
                state.requeue.push_back(id);
                state.metrics.leases_reclaimed += 1;
            }

            // Scaling evaluation on its own cadence.
            if now.duration_since(last_scale) >= inner.cfg.scaler.evaluation_period {
                last_scale = now;
                period += 1;
                let fleet: Vec<WorkerStats> = state.workers.values().map(|w| w.stats).collect();
                let workers = fleet.len() as u32;
                let stalls = std::mem::take(&mut state.stalls_this_period);
                let delta = evaluate_scaling(&inner.cfg.scaler, &fleet, stalls, workers);
                let buffered: u32 = fleet.iter().map(|s| s.buffered_batches).sum();
                state.scaling_log.push(ScalingDecision { period, workers, buffered, stalls, delta });
                if delta != 0 {
                    inner.pending_scale.fetch_add(delta as i64, Ordering::SeqCst);
                }
                if delta < 0 {
                    // Drain the least-utilized workers first.
                    let mut candidates: Vec<(u64, f64)> = state
                        .workers
                        .iter()
                        .filter(|(_, w)| !w.draining)
                        .map(|(&id, w)| (id, (w.stats.cpu + w.stats.network) / 2.0))
                        .collect();
                    candidates.sort_by(|a, b| a.1.total_cmp(&b.1));
                    for (id, _) in candidates.into_iter().take((-delta) as usize) {
                        if let Some(w) = state.workers.get_mut(&id) {
                            w.draining = true;
                        }
                    }
                }
            }
        }

        if inner.cfg.checkpoint_dir.is_some() {
            if let Some(periodicity) = inner.cfg.checkpoint_period {
                if now.duration_since(last_checkpoint) >= periodicity {
                    last_checkpoint = now;
                    let _ = checkpoint_inner(&inner);
                }
            }
        }
    }
}

fn checkpoint_inner(inner: &Inner) -> Result<PathBuf, MasterError> {
    let dir = inner.cfg.checkpoint_dir.clone().ok_or(MasterError::NoCheckpointDir)?;
    std::fs::create_dir_all(&dir)?;
    let ck = {
        let mut state = inner.state.lock().unwrap();
        let epoch = state.checkpoint_epoch;
        state.checkpoint_epoch += 1;
        state.metrics.checkpoints_written += 1;
        let mut completed: Vec<u64> = state.completed.iter().copied().collect();
        completed.sort_unstable();
        Checkpoint { epoch, spec_digest: inner.spec_digest, cursor: state.cursor, completed }
    };
    let path = dir.join(format!("checkpoint-{:08}.ckpt", ck.epoch));
    ck.save(&path)?;
    Ok(path)
}

fn reclaim_leases_of(state: &mut State, worker: Option<u64>) {
    let reclaim: Vec<u64> = state
        .outstanding
        .iter()
        .filter(|(_, lease)| worker.is_none_or(|w| lease.worker == w))
        .map(|(&id, _)| id)
        .collect();
    for id in reclaim {
        state.outstanding.remove(&id);
        state.requeue.push_back(id);
        state.metrics.leases_reclaimed += 1;
    }
}

/// Finds the newest checkpoint file in a directory.
pub fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    paths.sort();
    paths.pop()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureId, FeatureProjection};
    use crate::table::{FileEntry, PartitionMeta};

    fn manifest_two_files() -> DatasetManifest {
        DatasetManifest {
            table: "t".into(),
            seed: 0,
            profile: crate::table::DatasetProfile::default(),
            total_rows: 10,
            stripe_rows: 4,
            order: "schema".into(),
            features: vec![crate::model::FeatureSpec {
                id: FeatureId::dense(0),
                coverage: 1.0,
                mean_sparse_len: 0.0,
            }],
            popularity_rank: vec![FeatureId::dense(0)],
            partitions: vec![
                PartitionMeta {
                    key: "2024-01-01".into(),
                    files: vec![FileEntry { path: "a.mdsi".into(), rows: 7, row_offset: 0 }],
                },
                PartitionMeta {
                    key: "2024-01-02".into(),
                    files: vec![FileEntry { path: "b.mdsi".into(), rows: 3, row_offset: 7 }],
                },
            ],
        }
    }

    fn spec(split_size: u64) -> SessionSpec {
        SessionSpec {
            table: "t".into(),
            partitions: vec!["2024-01-01".into(), "2024-01-02".into()],
            projection: FeatureProjection::new(vec![FeatureId::dense(0)]).unwrap(),
            graph: Default::default(),
            batch_size: 2,
            split_size,
        }
    }

    #[test]
    fn splits_cover_rows_in_size_pieces() {
        let splits = generate_splits(&spec(4), &manifest_two_files()).unwrap();
        let sizes: Vec<u64> = splits.iter().map(|s| s.rows()).collect();
        assert_eq!(sizes, vec![4, 3, 3]); // 7 = 4+3, then 3
        // Disjoint, exhaustive coverage of rows 0..10.
        let mut seen = std::collections::HashSet::new();
        for s in &splits {
            for r in s.row_first..s.row_last {
                assert!(seen.insert(r), "row {r} covered twice");
            }
        }
        assert_eq!(seen.len(), 10);
        // File boundaries never straddled.
        assert!(splits.iter().all(|s| (s.file == "a.mdsi") == (s.row_last <= 7)));
        // Stripe ranges follow 4-row stripes.
        assert_eq!((splits[0].stripe_first, splits[0].stripe_last), (0, 0));
        assert_eq!((splits[1].stripe_first, splits[1].stripe_last), (1, 1));
    }

    #[test]
    fn split_coverage_is_disjoint_and_exhaustive_at_scale() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(55);
        for trial in 0..200 {
            // Random table shape up to ~1e6 rows across partitions/files.
            let partitions = rng.random_range(1..5u32);
            let files_per = rng.random_range(1..4u32);
            let mut manifest = manifest_two_files();
            manifest.partitions.clear();
            let mut offset = 0u64;
            for p in 0..partitions {
                let key = crate::table::date_plus("2024-01-01", p);
                let mut files = Vec::new();
                for f in 0..files_per {
                    let rows = rng.random_range(0..100_000u64);
                    files.push(FileEntry {
                        path: format!("p{p}f{f}.mdsi"),
                        rows,
                        row_offset: offset,
                    });
                    offset += rows;
                }
                manifest.partitions.push(PartitionMeta { key, files });
            }
            manifest.total_rows = offset;
            let mut s = spec(rng.random_range(1..10_000u64));
            s.partitions = manifest.partitions.iter().map(|p| p.key.clone()).collect();

            let splits = generate_splits(&s, &manifest).unwrap();
            // Interval accounting: sorted, disjoint, and exactly covering
            // every file's row range without straddling files.
            let mut sorted = splits.clone();
            sorted.sort_by_key(|x| x.row_first);
            let mut covered = 0u64;
            let mut prev_end = 0u64;
            for split in &sorted {
                assert!(split.row_first >= prev_end, "trial {trial}: overlap");
                assert!(split.row_first == prev_end, "trial {trial}: gap");
                assert!(split.rows() > 0 && split.rows() <= s.split_size);
                let entry = manifest.file_entry(&split.file).unwrap();
                assert!(split.row_first >= entry.row_offset);
                assert!(split.row_last <= entry.row_offset + entry.rows);
                prev_end = split.row_last;
                covered += split.rows();
            }
            assert_eq!(covered, manifest.total_rows, "trial {trial}: coverage");
            // Monotone split ids.
            assert!(splits.windows(2).all(|w| w[0].id + 1 == w[1].id));
        }
    }

    #[test]
    fn zero_rows_yields_no_splits() {
        let mut manifest = manifest_two_files();
        manifest.partitions[0].files[0].rows = 0;
        manifest.partitions[1].files[0].rows = 0;
        let splits = generate_splits(&spec(4), &manifest).unwrap();
        assert!(splits.is_empty());
    }

    #[test]
    fn missing_partition_is_an_error() {
        let mut s = spec(4);
        s.partitions.push("2024-09-09".into());
        assert!(generate_splits(&s, &manifest_two_files()).is_err());
    }

    #[test]
    fn scaling_rule_signs_and_caps() {
        let cfg = ScalerConfig::default();
        let stats = |buffered: u32, cpu: f64| WorkerStats {
            cpu,
            memory: 0.2,
            network: cpu,
            buffered_batches: buffered,
            splits_completed: 0,
        };

        // Empty buffers with stalls: urgent scale-up at max step.
        let fleet = vec![stats(0, 0.9); 3];
        assert_eq!(evaluate_scaling(&cfg, &fleet, 5, 3), 2);
        // Below floor without stalls: gentle scale-up.
        let fleet = vec![stats(1, 0.9); 3];
        assert_eq!(evaluate_scaling(&cfg, &fleet, 0, 3), 1);
        // Fat buffers and an idle fleet: scale down, capped.
        let fleet = vec![stats(20, 0.1); 8];
        assert_eq!(evaluate_scaling(&cfg, &fleet, 0, 8), -2);
        // Never below one worker.
        let fleet = vec![stats(20, 0.1); 2];
        assert_eq!(evaluate_scaling(&cfg, &fleet, 0, 2), -1);
        let fleet = vec![stats(20, 0.1); 1];
        assert_eq!(evaluate_scaling(&cfg, &fleet, 0, 1), 0);
        // Healthy steady state: hold.
        let fleet = vec![stats(3, 0.7); 4];
        assert_eq!(evaluate_scaling(&cfg, &fleet, 0, 4), 0);
    }

    #[test]
    fn checkpoint_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ck = Checkpoint { epoch: 3, spec_digest: 99, cursor: 17, completed: vec![0, 2, 4] };
        let path = dir.path().join("checkpoint-00000003.ckpt");
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert_eq!(latest_checkpoint(dir.path()).unwrap(), path);
    }
}
