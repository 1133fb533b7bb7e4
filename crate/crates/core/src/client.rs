//! Client side of the data plane: partitioned round-robin batch fetching
//! across a capped set of worker connections, plus a rate-driven trainer
//! simulator that measures data stalls.

use std::net::TcpStream;
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::model::TensorBatch;
use crate::wire::{self, Message};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("client {client} would need {need} connections, fanout cap is {cap}")]
    FanoutExceeded { client: usize, need: usize, cap: usize },
    #[error("no workers assigned and none reachable")]
    NothingAssigned,
    #[error("timed out waiting for a batch")]
    Timeout,
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    /// Worker listen addresses, in fleet order.
    pub endpoints: Vec<String>,
    pub client_index: usize,
    pub total_clients: usize,
    /// Connection cap per client.
    pub fanout: usize,
    /// Sleep between full pending rotations.
    pub poll_interval: Duration,
    /// Wait before retrying a downed worker endpoint.
    pub reconnect_backoff: Duration,
    /// Master address for stall reporting; `None` disables reports.
    pub master_addr: Option<String>,
    pub heartbeat_interval: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoints: Vec::new(),
            client_index: 0,
            total_clients: 1,
            fanout: 4,
            poll_interval: Duration::from_millis(2),
            reconnect_backoff: Duration::from_millis(25),
            master_addr: None,
            heartbeat_interval: Duration::from_millis(500),
        }
    }
}

/// Static partitioned round-robin assignment: worker `w` belongs to client
/// `w mod total_clients`. Every worker lands on exactly one client; the
/// per-client connection count must fit the fanout cap.
pub fn build_routing(
    workers: usize,
    client_index: usize,
    total_clients: usize,
    fanout: usize,
) -> Result<Vec<usize>, ClientError> {
    assert!(total_clients > 0 && client_index < total_clients);
    let assigned: Vec<usize> =
        (0..workers).filter(|w| w % total_clients == client_index).collect();
    if assigned.len() > fanout {
        return Err(ClientError::FanoutExceeded {
            client: client_index,
            need: assigned.len(),
            cap: fanout,
        });
    }
    Ok(assigned)
}

enum EndpointState {
    Connected(TcpStream),
    Down { since: Instant },
    Exhausted,
}

struct Endpoint {
    addr: String,
    state: EndpointState,
    served: u64,
}

/// Counters a client accumulates over its lifetime.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClientRunStats {
    pub batches: u64,
    pub stall_events: u64,
    /// Wall time spent blocked inside `next_batch`.
    pub fetch_nanos: u64,
    /// Served-batch counts per worker endpoint, fleet order.
    pub per_worker: Vec<(String, u64)>,
    /// Most simultaneous open worker connections ever held.
    pub peak_connections: usize,
}

/// A batch-fetching client with partitioned round-robin routing.
pub struct DppClient {
    cfg: ClientConfig,
    endpoints: Vec<Endpoint>,
    cursor: usize,
    batches: u64,
    stall_events: u64,
    fetch_nanos: u64,
    peak_connections: usize,
    stall_counter: Arc<AtomicU32>,
    reporter_stop: Option<Arc<AtomicBool>>,
    reporter: Option<std::thread::JoinHandle<()>>,
}

impl DppClient {
    pub fn connect(cfg: ClientConfig) -> Result<Self, ClientError> {
        let assigned =
            build_routing(cfg.endpoints.len(), cfg.client_index, cfg.total_clients, cfg.fanout)?;
        let endpoints: Vec<Endpoint> = assigned
            .iter()
            .map(|&w| Endpoint {
                addr: cfg.endpoints[w].clone(),
                state: EndpointState::Down { since: Instant::now() - cfg.reconnect_backoff },
                served: 0,
            })
            .collect();

        let stall_counter = Arc::new(AtomicU32::new(0));
        let (reporter, reporter_stop) = match cfg.master_addr.clone() {
            Some(addr) => {
                let stop = Arc::new(AtomicBool::new(false));
                let counter = stall_counter.clone();
                let interval = cfg.heartbeat_interval;
                let client_id = cfg.client_index as u64;
                let stop2 = stop.clone();
                let handle = std::thread::spawn(move || {
                    let mut conn: Option<TcpStream> = None;
                    let mut batches_reported = 0u64;
                    while !stop2.load(Ordering::SeqCst) {
                        std::thread::sleep(interval);
                        let stalls = counter.swap(0, Ordering::SeqCst);
                        let stream = match conn.as_mut() {
                            Some(s) => s,
                            None => match TcpStream::connect(&addr) {
                                Ok(s) => conn.insert(s),
                                Err(_) => continue,
                            },
                        };
                        batches_reported += 1;
                        let msg = Message::ClientHeartbeat {
                            client_id,
                            stall_events: stalls,
                            batches_received: batches_reported,
                        };
                        if wire::request(stream, &msg).is_err() {
                            conn = None;
                        }
                    }
                });
                (Some(handle), Some(stop))
            }
            None => (None, None),
        };

        Ok(Self {
            cfg,
            endpoints,
            cursor: 0,
            batches: 0,
            stall_events: 0,
            fetch_nanos: 0,
            peak_connections: 0,
            stall_counter,
            reporter_stop,
            reporter,
        })
    }

    fn open_connections(&self) -> usize {
        self.endpoints
            .iter()
            .filter(|e| matches!(e.state, EndpointState::Connected(_)))
            .count()
    }

    /// Blocks until a batch arrives or every assigned worker reports end of
    /// data; `None` means the session is fully drained.
    pub fn next_batch(&mut self) -> Result<Option<TensorBatch>, ClientError> {
        self.next_batch_timeout(Duration::from_secs(3600))
    }

    pub fn next_batch_timeout(
        &mut self,
        timeout: Duration,
    ) -> Result<Option<TensorBatch>, ClientError> {
        let t0 = Instant::now();
        if self.endpoints.is_empty() {
            return Ok(None);
        }
        loop {
            if self.endpoints.iter().all(|e| matches!(e.state, EndpointState::Exhausted)) {
                self.fetch_nanos += t0.elapsed().as_nanos() as u64;
                return Ok(None);
            }
            let mut got: Option<TensorBatch> = None;
            for _ in 0..self.endpoints.len() {
                let i = self.cursor;
                self.cursor = (self.cursor + 1) % self.endpoints.len();
                if let Some(batch) = self.poll_endpoint(i) {
                    got = Some(batch);
                    break;
                }
            }
            let open = self.open_connections();
            self.peak_connections = self.peak_connections.max(open);
            debug_assert!(open <= self.cfg.fanout);
            match got {
                Some(batch) => {
                    self.batches += 1;
                    self.fetch_nanos += t0.elapsed().as_nanos() as u64;
                    return Ok(Some(batch));
                }
                None => {
                    // A full rotation came back empty: a stall candidate.
                    self.stall_events += 1;
                    self.stall_counter.fetch_add(1, Ordering::SeqCst);
                    if t0.elapsed() > timeout {
                        self.fetch_nanos += t0.elapsed().as_nanos() as u64;
                        return Err(ClientError::Timeout);
                    }
                    std::thread::sleep(self.cfg.poll_interval);
                }
            }
        }
    }

    fn poll_endpoint(&mut self, i: usize) -> Option<TensorBatch> {
        let backoff = self.cfg.reconnect_backoff;
        let ep = &mut self.endpoints[i];
        match &mut ep.state {
            EndpointState::Exhausted => None,
            EndpointState::Down { since } => {
                if since.elapsed() < backoff {
                    return None;
                }
                match TcpStream::connect(&ep.addr) {
                    Ok(stream) => {
                        ep.state = EndpointState::Connected(stream);
                        self.poll_endpoint(i)
                    }
                    Err(_) => {
                        ep.state = EndpointState::Down { since: Instant::now() };
                        None
                    }
                }
            }
            EndpointState::Connected(stream) => {
                let client_id = self.cfg.client_index as u64;
                match wire::request(stream, &Message::GetBatch { client_id }) {
                    Ok(Message::Batch(batch)) => {
                        ep.served += 1;
                        Some(*batch)
                    }
                    Ok(Message::Pending) => None,
                    Ok(Message::EndOfData) => {
                        ep.state = EndpointState::Exhausted;
                        None
                    }
                    Ok(_) | Err(_) => {
                        // Worker vanished; it may come back on the same
                        // address after a restart.
                        ep.state = EndpointState::Down { since: Instant::now() };
                        None
                    }
                }
            }
        }
    }

    pub fn stats(&self) -> ClientRunStats {
        ClientRunStats {
            batches: self.batches,
            stall_events: self.stall_events,
            fetch_nanos: self.fetch_nanos,
            per_worker: self.endpoints.iter().map(|e| (e.addr.clone(), e.served)).collect(),
            peak_connections: self.peak_connections,
        }
    }
}

impl Drop for DppClient {
    fn drop(&mut self) {
        if let Some(stop) = &self.reporter_stop {
            stop.store(true, Ordering::SeqCst);
        }
        if let Some(handle) = self.reporter.take() {
            let _ = handle.join();
        }
    }
}

/// Wall/busy/stall accounting of one simulated training run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StallReport {
    pub wall_s: f64,
    pub busy_s: f64,
    pub stall_s: f64,
    pub stall_fraction: f64,
    pub batches: u64,
}

impl StallReport {
    /// Single-line machine-readable record.
    pub fn machine_line(&self) -> String {
        format!(
            "stall_report wall_s={:.6} busy_s={:.6} stall_s={:.6} stall_fraction={:.6} batches={}",
            self.wall_s, self.busy_s, self.stall_s, self.stall_fraction, self.batches
        )
    }
}

impl std::fmt::Display for StallReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "wall time        {:>10.3} s", self.wall_s)?;
        writeln!(f, "busy time        {:>10.3} s", self.busy_s)?;
        writeln!(f, "stall time       {:>10.3} s", self.stall_s)?;
        writeln!(f, "stall fraction   {:>10.2} %", self.stall_fraction * 100.0)?;
        write!(f, "batches consumed {:>10}", self.batches)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainerConfig {
    /// Simulated compute demand: batches consumed per second.
    pub rate_batches_per_s: f64,
    pub max_batches: Option<u64>,
    pub max_duration: Option<Duration>,
}

/// Consumes batches at a fixed simulated compute rate and accounts time
/// blocked in `next_batch` as stall time.
pub fn run_trainer(client: &mut DppClient, cfg: &TrainerConfig) -> StallReport {
    let compute = Duration::from_secs_f64(1.0 / cfg.rate_batches_per_s);
    let start = Instant::now();
    let mut busy = Duration::ZERO;
    let mut stall = Duration::ZERO;
    let mut batches = 0u64;
    loop {
        if let Some(limit) = cfg.max_batches {
            if batches >= limit {
                break;
            }
        }
        if let Some(limit) = cfg.max_duration {
            if start.elapsed() >= limit {
                break;
            }
        }
        let t0 = Instant::now();
        match client.next_batch() {
            Ok(Some(_)) => {}
            Ok(None) => break,
            Err(_) => break,
        }
        stall += t0.elapsed();
        batches += 1;
        std::thread::sleep(compute);
        busy += compute;
    }
    let wall = start.elapsed();
    let denom = (busy + stall).as_secs_f64();
    StallReport {
        wall_s: wall.as_secs_f64(),
        busy_s: busy.as_secs_f64(),
        stall_s: stall.as_secs_f64(),
        stall_fraction: if denom > 0.0 { stall.as_secs_f64() / denom } else { 0.0 },
        batches,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routing_assigns_every_worker_once_within_fanout() {
        let workers = 7;
        let clients = 2;
        let mut seen = vec![0u32; workers];
        for c in 0..clients {
            let assigned = build_routing(workers, c, clients, 4).unwrap();
            assert!(assigned.len() <= 4);
            for w in assigned {
                seen[w] += 1;
            }
        }
        assert!(seen.iter().all(|&n| n == 1));
    }

    #[test]
    fn routing_rejects_fanout_overflow() {
        let err = build_routing(9, 0, 2, 4).unwrap_err();
        match err {
            ClientError::FanoutExceeded { need, cap, .. } => {
                assert_eq!(need, 5);
                assert_eq!(cap, 4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stall_report_line_is_parseable() {
        let report = StallReport {
            wall_s: 1.5,
            busy_s: 1.0,
            stall_s: 0.5,
            stall_fraction: 1.0 / 3.0,
            batches: 100,
        };
        let line = report.machine_line();
        assert!(line.starts_with("stall_report "));
        assert!(line.contains("batches=100"));
    }
}
