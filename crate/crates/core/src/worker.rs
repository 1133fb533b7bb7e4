//! Stateless data-plane node: fetches splits from the master, extracts them
//! with coalesced reads straight into feature-major row groups, runs the
//! transform graph, and serves buffered tensor batches to clients.
//!
//! The pipeline is extract -> transform -> buffer with bounded hand-offs;
//! the buffer is the only coupling between split processing and the client
//! serve path. A split is reported complete only after every one of its
//! batches has been handed to a client, so anything a crash strands in the
//! buffer is re-leased and re-processed elsewhere.

use std::collections::HashMap;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crossbeam_channel as channel;
use thiserror::Error;

use crate::flatmap::RowGroup;
use crate::model::{SessionSpec, Split, TensorBatch, WorkerStats};
use crate::plan::{plan_coalesced, PlanError};
use crate::store::{ColumnarReader, StoreError};
use crate::table::{DatasetManifest, TableError};
use crate::transform::{execute_rowgroup, ExecError, ExecStats};
use crate::wire::{self, DrainReason, Message, WireError};

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("wire: {0}")]
    Wire(#[from] WireError),
    #[error("table: {0}")]
    Table(#[from] TableError),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("plan: {0}")]
    Plan(#[from] PlanError),
    #[error("transform: {0}")]
    Exec(#[from] ExecError),
    #[error("split {0} references unknown file {1}")]
    UnknownFile(u64, String),
    #[error("master rejected registration")]
    RegistrationFailed,
    #[error("bad worker config: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub master_addr: String,
    pub listen_addr: String,
    /// Batches the buffer holds before extraction backpressures.
    pub buffer_capacity: usize,
    /// Task counts for the extract and transform stages.
    pub extract_tasks: usize,
    pub transform_tasks: usize,
    /// Coalescing window for planned reads.
    pub io_window_bytes: u64,
    pub heartbeat_interval: Duration,
    /// Minimum spacing between batch completions; throttles supply for
    /// stall experiments.
    pub min_batch_interval: Option<Duration>,
    /// Nominal NIC capacity used for the network-utilization statistic.
    pub nominal_net_bps: f64,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        Self {
            master_addr: String::new(),
            listen_addr: "127.0.0.1:0".into(),
            buffer_capacity: 8,
            extract_tasks: 1,
            transform_tasks: 1,
            io_window_bytes: 1_310_720,
            heartbeat_interval: Duration::from_millis(500),
            min_batch_interval: None,
            nominal_net_bps: 125_000_000.0,
        }
    }
}

impl WorkerConfig {
    /// Loads `key=value` lines over the defaults. Unknown keys error;
    /// `#` comments and blank lines are ignored.
    pub fn from_kv_file(path: &Path) -> Result<Self, WorkerError> {
        let mut cfg = Self::default();
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| {
                WorkerError::Config(format!("{}:{}: {what}", path.display(), lineno + 1))
            };
            let (key, value) =
                line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "master_addr" => cfg.master_addr = value.to_string(),
                "listen_addr" => cfg.listen_addr = value.to_string(),
                "buffer_capacity" => {
                    cfg.buffer_capacity = value.parse().map_err(|_| bad("bad integer"))?
                }
                "extract_tasks" => {
                    cfg.extract_tasks = value.parse().map_err(|_| bad("bad integer"))?
                }
                "transform_tasks" => {
                    cfg.transform_tasks = value.parse().map_err(|_| bad("bad integer"))?
                }
                "io_window_bytes" => {
                    cfg.io_window_bytes = value.parse().map_err(|_| bad("bad integer"))?
                }
                "heartbeat_ms" => {
                    cfg.heartbeat_interval =
                        Duration::from_millis(value.parse().map_err(|_| bad("bad integer"))?)
                }
                "min_batch_interval_ms" => {
                    cfg.min_batch_interval = Some(Duration::from_millis(
                        value.parse().map_err(|_| bad("bad integer"))?,
                    ))
                }
                "nominal_net_bps" => {
                    cfg.nominal_net_bps = value.parse().map_err(|_| bad("bad float"))?
                }
                _ => return Err(bad(&format!("unknown key {key}"))),
            }
        }
        Ok(cfg)
    }
}

/// Extracts one split with coalesced reads and runs the transform graph
/// over it: the whole data path of a worker with the service machinery
/// stripped away. Batch ids are numbered from 0.
pub fn extract_transform_split(
    table_dir: &Path,
    manifest: &DatasetManifest,
    reader: &ColumnarReader,
    split: &Split,
    spec: &SessionSpec,
    io_window: u64,
) -> Result<(Vec<TensorBatch>, ExecStats), WorkerError> {
    let _ = table_dir;
    let entry = manifest
        .file_entry(&split.file)
        .ok_or_else(|| WorkerError::UnknownFile(split.id, split.file.clone()))?;
    let stripes = split.stripe_first..split.stripe_last + 1;
    let plan = plan_coalesced(reader.meta(), stripes.clone(), &spec.projection, io_window)?;
    let stripe_row_start = split.stripe_first as u64 * manifest.stripe_rows as u64;
    let first_row_id = entry.row_offset + stripe_row_start;
    let group = reader.read_rowgroup(stripes, &spec.projection, &plan, first_row_id)?;
    // Splits need not align to stripes; trim the decoded edges.
    let a = (split.row_first - first_row_id) as usize;
    let b = (split.row_last - first_row_id) as usize;
    let group = if a == 0 && b == group.rows { group } else { group.slice(a, b) };
    let (batches, stats) =
        execute_rowgroup(&spec.graph, &group, spec.projection.ids(), spec.batch_size, 0)?;
    Ok((batches, stats))
}

/// Tracks undelivered batches of one split; the last delivery triggers the
/// completion report.
struct SplitTracker {
    split_id: u64,
    remaining: AtomicUsize,
}

struct BufferedBatch {
    batch: TensorBatch,
    tracker: Arc<SplitTracker>,
}

struct Shared {
    cfg: WorkerConfig,
    spec: SessionSpec,
    table_dir: PathBuf,
    manifest: DatasetManifest,
    worker_id: AtomicU64,
    shutdown: AtomicBool,
    draining: AtomicBool,
    eod_from_master: AtomicBool,
    splits_in_flight: AtomicUsize,
    buffer_rx: channel::Receiver<BufferedBatch>,
    buffer_len: AtomicUsize,
    push_seq: Mutex<u64>,
    complete_tx: channel::Sender<u64>,
    busy_nanos: AtomicU64,
    bytes_served: AtomicU64,
    splits_completed: AtomicU64,
    exec_stats: Mutex<ExecStats>,
    conns: Mutex<Vec<TcpStream>>,
    readers: Mutex<HashMap<String, Arc<ColumnarReader>>>,
    listen_addr: SocketAddr,
}

impl Shared {
    fn alive(&self) -> bool {
        !self.shutdown.load(Ordering::SeqCst)
    }

    fn track_conn(&self, stream: &TcpStream) {
        if let Ok(clone) = stream.try_clone() {
            self.conns.lock().unwrap().push(clone);
        }
    }

    fn reader_for(&self, file: &str) -> Result<Arc<ColumnarReader>, WorkerError> {
        let mut readers = self.readers.lock().unwrap();
        if let Some(r) = readers.get(file) {
            return Ok(r.clone());
        }
        let reader = Arc::new(ColumnarReader::open(self.table_dir.join(file))?);
        readers.insert(file.to_string(), reader.clone());
        Ok(reader)
    }

    fn connect_master(&self) -> Result<TcpStream, WorkerError> {
        let stream = TcpStream::connect(&self.cfg.master_addr)?;
        self.track_conn(&stream);
        Ok(stream)
    }

    /// Registers with the master (fresh or after a master restart) and
    /// adopts the returned worker id.
    fn register(&self) -> Result<u64, WorkerError> {
        let mut stream = self.connect_master()?;
        let reply = wire::request(
            &mut stream,
            &Message::RegisterWorker { listen_addr: self.listen_addr.to_string() },
        )?;
        match reply {
            Message::SessionInfo(info) => {
                self.worker_id.store(info.worker_id, Ordering::SeqCst);
                Ok(info.worker_id)
            }
            _ => Err(WorkerError::RegistrationFailed),
        }
    }
}

/// A running data-plane node.
pub struct Worker {
    shared: Arc<Shared>,
    threads: Vec<std::thread::JoinHandle<()>>,
}

impl Worker {
    pub fn start(cfg: WorkerConfig) -> Result<Self, WorkerError> {
        // Register once up front to learn the session.
        let mut stream = TcpStream::connect(&cfg.master_addr)?;
        let listener = TcpListener::bind(&cfg.listen_addr)?;
        let listen_addr = listener.local_addr()?;
        let reply = wire::request(
            &mut stream,
            &Message::RegisterWorker { listen_addr: listen_addr.to_string() },
        )?;
        let info = match reply {
            Message::SessionInfo(info) => info,
            _ => return Err(WorkerError::RegistrationFailed),
        };
        let table_dir = PathBuf::from(&info.table_dir);
        let manifest = DatasetManifest::load(&table_dir)?;

        let (buffer_tx, buffer_rx) = channel::bounded::<BufferedBatch>(cfg.buffer_capacity);
        let (complete_tx, complete_rx) = channel::unbounded::<u64>();
        let (group_tx, group_rx) = channel::bounded::<(Split, RowGroup)>(cfg.transform_tasks.max(1));

        let shared = Arc::new(Shared {
            spec: info.spec,
            table_dir,
            manifest,
            worker_id: AtomicU64::new(info.worker_id),
            shutdown: AtomicBool::new(false),
            draining: AtomicBool::new(false),
            eod_from_master: AtomicBool::new(false),
            splits_in_flight: AtomicUsize::new(0),
            buffer_rx,
            buffer_len: AtomicUsize::new(0),
            push_seq: Mutex::new(0),
            complete_tx,
            busy_nanos: AtomicU64::new(0),
            bytes_served: AtomicU64::new(0),
            splits_completed: AtomicU64::new(0),
            exec_stats: Mutex::new(ExecStats::default()),
            conns: Mutex::new(Vec::new()),
            readers: Mutex::new(HashMap::new()),
            listen_addr,
            cfg,
        });
        shared.track_conn(&stream);
        drop(stream);

        let mut threads = Vec::new();
        for _ in 0..shared.cfg.extract_tasks.max(1) {
            let shared = shared.clone();
            let tx = group_tx.clone();
            threads.push(std::thread::spawn(move || extract_loop(shared, tx)));
        }
        drop(group_tx);
        for _ in 0..shared.cfg.transform_tasks.max(1) {
            let shared = shared.clone();
            let rx = group_rx.clone();
            let tx = buffer_tx.clone();
            threads.push(std::thread::spawn(move || transform_loop(shared, rx, tx)));
        }
        drop(group_rx);
        drop(buffer_tx);
        {
            let shared = shared.clone();
            threads.push(std::thread::spawn(move || completion_loop(shared, complete_rx)));
        }
        {
            let shared = shared.clone();
            threads.push(std::thread::spawn(move || heartbeat_loop(shared)));
        }
        {
            let shared = shared.clone();
            threads.push(std::thread::spawn(move || accept_loop(shared, listener)));
        }
        Ok(Self { shared, threads })
    }

    pub fn listen_addr(&self) -> SocketAddr {
        self.shared.listen_addr
    }

    pub fn worker_id(&self) -> u64 {
        self.shared.worker_id.load(Ordering::SeqCst)
    }

    pub fn buffered(&self) -> usize {
        self.shared.buffer_len.load(Ordering::SeqCst)
    }

    /// Utilization and buffering statistics, as reported on heartbeats.
    pub fn stats(&self) -> WorkerStats {
        snapshot_stats(&self.shared, None)
    }

    /// Cumulative transform-executor statistics.
    pub fn exec_stats(&self) -> ExecStats {
        *self.shared.exec_stats.lock().unwrap()
    }

    pub fn is_draining(&self) -> bool {
        self.shared.draining.load(Ordering::SeqCst)
    }

    /// Abrupt stop: closes every socket and abandons buffered batches, like
    /// a process kill. Leased splits are left for the master to reclaim.
    pub fn kill(&self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.shared.listen_addr);
        for conn in self.shared.conns.lock().unwrap().drain(..) {
            let _ = conn.shutdown(std::net::Shutdown::Both);
        }
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        self.kill();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn snapshot_stats(shared: &Shared, window: Option<(Duration, u64, u64)>) -> WorkerStats {
    // Without a measurement window, report cumulative-rate approximations.
    let buffered = shared.buffer_len.load(Ordering::SeqCst) as u32;
    let capacity = shared.cfg.buffer_capacity.max(1) as f64;
    let tasks = (shared.cfg.extract_tasks + shared.cfg.transform_tasks).max(1) as f64;
    let (cpu, net) = match window {
        Some((elapsed, busy_delta, bytes_delta)) => {
            let secs = elapsed.as_secs_f64().max(1e-9);
            (
                busy_delta as f64 / 1e9 / (secs * tasks),
                bytes_delta as f64 / (secs * shared.cfg.nominal_net_bps),
            )
        }
        None => (0.0, 0.0),
    };
    WorkerStats {
        cpu,
        memory: buffered as f64 / capacity,
        network: net,
        buffered_batches: buffered,
        splits_completed: shared.splits_completed.load(Ordering::SeqCst),
    }
    .clamped()
}

fn extract_loop(shared: Arc<Shared>, group_tx: channel::Sender<(Split, RowGroup)>) {
    let mut conn: Option<TcpStream> = None;
    while shared.alive() {
        if shared.draining.load(Ordering::SeqCst) {
            return;
        }
        let stream = match conn.as_mut() {
            Some(s) => s,
            None => match shared.connect_master() {
                Ok(s) => conn.insert(s),
                Err(_) => {
                    std::thread::sleep(Duration::from_millis(50));
                    continue;
                }
            },
        };
        let worker_id = shared.worker_id.load(Ordering::SeqCst);
        let reply = match wire::request(stream, &Message::NextSplit { worker_id }) {
            Ok(reply) => reply,
            Err(_) => {
                conn = None;
                std::thread::sleep(Duration::from_millis(50));
                continue;
            }
        };
        match reply {
            Message::SplitAssign(split) => {
                shared.splits_in_flight.fetch_add(1, Ordering::SeqCst);
                let t0 = Instant::now();
                let extracted = shared
                    .reader_for(&split.file)
                    .and_then(|reader| {
                        let stripes = split.stripe_first..split.stripe_last + 1;
                        let plan = plan_coalesced(
                            reader.meta(),
                            stripes.clone(),
                            &shared.spec.projection,
                            shared.cfg.io_window_bytes,
                        )?;
                        let entry = shared
                            .manifest
                            .file_entry(&split.file)
                            .ok_or_else(|| WorkerError::UnknownFile(split.id, split.file.clone()))?;
                        let stripe_row_start =
                            split.stripe_first as u64 * shared.manifest.stripe_rows as u64;
                        let first_row_id = entry.row_offset + stripe_row_start;
                        let group =
                            reader.read_rowgroup(stripes, &shared.spec.projection, &plan, first_row_id)?;
                        let a = (split.row_first - first_row_id) as usize;
                        let b = (split.row_last - first_row_id) as usize;
                        Ok(if a == 0 && b == group.rows { group } else { group.slice(a, b) })
                    });
                shared.busy_nanos.fetch_add(t0.elapsed().as_nanos() as u64, Ordering::Relaxed);
                match extracted {
                    Ok(group) => {
                        // Blocking hand-off with shutdown checks.
                        let mut item = (split, group);
                        loop {
                            match group_tx.send_timeout(item, Duration::from_millis(50)) {
                                Ok(()) => break,
                                Err(channel::SendTimeoutError::Timeout(back)) => {
                                    if !shared.alive() {
                                        return;
                                    }
                                    item = back;
                                }
                                Err(channel::SendTimeoutError::Disconnected(_)) => return,
                            }
                        }
                    }
                    Err(err) => {
                        // Abandon the split; the lease will expire and be
                        // re-issued elsewhere.
                        log::warn!("abandoning split {}: {err}", split.id);
                        shared.splits_in_flight.fetch_sub(1, Ordering::SeqCst);
                    }
                }
            }
            Message::Pending => std::thread::sleep(Duration::from_millis(10)),
            Message::EndOfData => {
                shared.eod_from_master.store(true, Ordering::SeqCst);
                return;
            }
            Message::Drain { reason: DrainReason::ScaleDown } => {
                shared.draining.store(true, Ordering::SeqCst);
                return;
            }
            Message::Drain { reason: DrainReason::Reregister } => {
                // The master lost us (likely a restart); re-register.
                if shared.register().is_err() {
                    std::thread::sleep(Duration::from_millis(50));
                }
            }
            _ => {
                conn = None;
            }
        }
    }
}

fn transform_loop(
    shared: Arc<Shared>,
    group_rx: channel::Receiver<(Split, RowGroup)>,
    buffer_tx: channel::Sender<BufferedBatch>,
) {
    while shared.alive() {
        let (split, group) = match group_rx.recv_timeout(Duration::from_millis(50)) {
            Ok(item) => item,
            Err(channel::RecvTimeoutError::Timeout) => continue,
            Err(channel::RecvTimeoutError::Disconnected) => return,
        };
        let t0 = Instant::now();
        let result = execute_rowgroup(
            &shared.spec.graph,
            &group,
            shared.spec.projection.ids(),
            shared.spec.batch_size,
            0,
        );
        shared.busy_nanos.fetch_add(t0.elapsed().as_nanos() as u64, Ordering::Relaxed);
        let (batches, stats) = match result {
            Ok(r) => r,
            Err(err) => {
                log::warn!("abandoning split {}: {err}", split.id);
                shared.splits_in_flight.fetch_sub(1, Ordering::SeqCst);
                continue;
            }
        };
        shared.exec_stats.lock().unwrap().merge(&stats);

        let tracker =
            Arc::new(SplitTracker { split_id: split.id, remaining: AtomicUsize::new(batches.len()) });
        if batches.is_empty() {
            // Nothing to deliver; the split is complete as soon as it is
            // processed.
            let _ = shared.complete_tx.send(split.id);
            shared.splits_in_flight.fetch_sub(1, Ordering::SeqCst);
            continue;
        }
        for mut batch in batches {
            if let Some(gap) = shared.cfg.min_batch_interval {
                std::thread::sleep(gap);
            }
            // Batch ids are assigned at buffer insertion, under one lock, so
            // ids leave the buffer strictly increasing.
            let mut entry;
            {
                let mut seq = shared.push_seq.lock().unwrap();
                batch.batch_id = *seq;
                *seq += 1;
                entry = BufferedBatch { batch, tracker: tracker.clone() };
                loop {
                    match buffer_tx.send_timeout(entry, Duration::from_millis(50)) {
                        Ok(()) => {
                            shared.buffer_len.fetch_add(1, Ordering::SeqCst);
                            break;
                        }
                        Err(channel::SendTimeoutError::Timeout(back)) => {
                            if !shared.alive() {
                                return;
                            }
                            entry = back;
                        }
                        Err(channel::SendTimeoutError::Disconnected(_)) => return,
                    }
                }
            }
        }
    }
}

fn completion_loop(shared: Arc<Shared>, complete_rx: channel::Receiver<u64>) {
    let mut conn: Option<TcpStream> = None;
    loop {
        let split_id = match complete_rx.recv_timeout(Duration::from_millis(50)) {
            Ok(id) => id,
            Err(channel::RecvTimeoutError::Timeout) => {
                if !shared.alive() {
                    return;
                }
                continue;
            }
            Err(channel::RecvTimeoutError::Disconnected) => return,
        };
        // Retry until acknowledged; completions must not be dropped.
        loop {
            if !shared.alive() {
                return;
            }
            let stream = match conn.as_mut() {
                Some(s) => s,
                None => match shared.connect_master() {
                    Ok(s) => conn.insert(s),
                    Err(_) => {
                        std::thread::sleep(Duration::from_millis(50));
                        continue;
                    }
                },
            };
            let worker_id = shared.worker_id.load(Ordering::SeqCst);
            match wire::request(stream, &Message::CompleteSplit { worker_id, split_id }) {
                Ok(Message::CompleteAck) => {
                    shared.splits_completed.fetch_add(1, Ordering::SeqCst);
                    break;
                }
                Ok(_) | Err(_) => {
                    conn = None;
                    std::thread::sleep(Duration::from_millis(50));
                }
            }
        }
    }
}

fn heartbeat_loop(shared: Arc<Shared>) {
    let mut conn: Option<TcpStream> = None;
    let mut last = Instant::now();
    let mut last_busy = 0u64;
    let mut last_bytes = 0u64;
    while shared.alive() {
        std::thread::sleep(shared.cfg.heartbeat_interval);
        if !shared.alive() {
            return;
        }
        let now = Instant::now();
        let busy = shared.busy_nanos.load(Ordering::Relaxed);
        let bytes = shared.bytes_served.load(Ordering::Relaxed);
        let stats = snapshot_stats(
            &shared,
            Some((now.duration_since(last), busy - last_busy, bytes - last_bytes)),
        );
        last = now;
        last_busy = busy;
        last_bytes = bytes;
        // Line-protocol metrics dump, once per heartbeat interval.
        log::info!(
            "worker_stats,worker_id={} cpu={:.4},memory={:.4},network={:.4},buffered={}u,splits_completed={}u",
            shared.worker_id.load(Ordering::SeqCst),
            stats.cpu,
            stats.memory,
            stats.network,
            stats.buffered_batches,
            stats.splits_completed,
        );

        let stream = match conn.as_mut() {
            Some(s) => s,
            None => match shared.connect_master() {
                Ok(s) => conn.insert(s),
                Err(_) => continue,
            },
        };
        let worker_id = shared.worker_id.load(Ordering::SeqCst);
        match wire::request(stream, &Message::WorkerHeartbeat { worker_id, stats }) {
            Ok(Message::HeartbeatAck) => {}
            Ok(Message::Drain { reason: DrainReason::ScaleDown }) => {
                shared.draining.store(true, Ordering::SeqCst);
            }
            Ok(Message::Drain { reason: DrainReason::Reregister }) => {
                let _ = shared.register();
            }
            Ok(_) => {}
            Err(_) => conn = None,
        }
    }
}

fn accept_loop(shared: Arc<Shared>, listener: TcpListener) {
    loop {
        let Ok((stream, _)) = listener.accept() else { return };
        if !shared.alive() {
            return;
        }
        shared.track_conn(&stream);
        let shared = shared.clone();
        std::thread::spawn(move || serve_loop(shared, stream));
    }
}

fn serve_loop(shared: Arc<Shared>, mut stream: TcpStream) {
    loop {
        let msg = match wire::read_message(&mut stream) {
            Ok(msg) => msg,
            Err(_) => return,
        };
        if !shared.alive() {
            return;
        }
        let reply = match msg {
            Message::GetBatch { client_id: _ } => match shared.buffer_rx.try_recv() {
                Ok(entry) => {
                    shared.buffer_len.fetch_sub(1, Ordering::SeqCst);
                    Some(entry)
                }
                Err(_) => None,
            },
            _ => return,
        };
        match reply {
            Some(entry) => {
                let frame = wire::frame_bytes(&Message::Batch(Box::new(entry.batch)));
                if stream.write_all_flush(&frame).is_err() {
                    // Delivery failed; the batch is lost with this worker's
                    // buffer and the split will be re-leased eventually.
                    return;
                }
                shared.bytes_served.fetch_add(frame.len() as u64, Ordering::Relaxed);
                if entry.tracker.remaining.fetch_sub(1, Ordering::SeqCst) == 1 {
                    let _ = shared.complete_tx.send(entry.tracker.split_id);
                    shared.splits_in_flight.fetch_sub(1, Ordering::SeqCst);
                }
            }
            None => {
                let drained = shared.eod_from_master.load(Ordering::SeqCst)
                    && shared.splits_in_flight.load(Ordering::SeqCst) == 0
                    && shared.buffer_len.load(Ordering::SeqCst) == 0;
                let msg = if drained { Message::EndOfData } else { Message::Pending };
                if wire::write_message(&mut stream, &msg).is_err() {
                    return;
                }
            }
        }
    }
}

trait WriteAllFlush {
    fn write_all_flush(&mut self, bytes: &[u8]) -> std::io::Result<()>;
}

impl WriteAllFlush for TcpStream {
    fn write_all_flush(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        use std::io::Write;
        self.write_all(bytes)?;
        self.flush()
    }
}
