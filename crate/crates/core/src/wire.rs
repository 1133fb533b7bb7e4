//! Framed binary protocol shared by master, workers, and clients.
//!
//! Every frame is `[length u32 LE][type u8][payload]`, where `length`
//! counts the type byte plus the payload. Types: 1 RegisterWorker,
//! 2 NextSplit, 3 SplitAssign, 4 CompleteSplit, 5 Heartbeat, 6 Drain,
//! 7 GetBatch, 8 Batch, 9 EndOfData. Types 1, 4, 5, and 7 carry a leading
//! flavor byte distinguishing request from response; field layouts are
//! documented in `docs/wire.md`. Checkpoint files reuse the same framing
//! with the file-only type 10.

use std::io::{Read, Write};

use thiserror::Error;

use crate::model::{
    DenseBuffer, FeatureId, FeatureKind, FeatureProjection, SessionSpec, SparseBuffer, Split,
    TensorBatch, WorkerStats,
};
use crate::store::encode::{put_f32, put_f64, put_str, put_u32, put_u64, ByteReader};
use crate::transform::TransformGraph;

/// Frames larger than this are rejected as garbage.
pub const MAX_FRAME_BYTES: u32 = 1 << 30;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown message type {0}")]
    BadType(u8),
    #[error("unknown flavor {flavor} for type {ty}")]
    BadFlavor { ty: u8, flavor: u8 },
    #[error("frame of {0} bytes exceeds limit")]
    FrameTooLarge(u32),
    #[error("malformed payload: {0}")]
    Decode(&'static str),
}

impl From<crate::store::StoreError> for WireError {
    fn from(_: crate::store::StoreError) -> Self {
        WireError::Decode("truncated payload")
    }
}

/// Why a drain was issued: retire the worker, or identity unknown (the
/// control plane restarted) so the worker should register again.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrainReason {
    ScaleDown,
    Reregister,
}

/// Session parameters a worker receives when it registers.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionInfo {
    pub worker_id: u64,
    /// Directory containing the dataset manifest and files.
    pub table_dir: String,
    pub spec: SessionSpec,
}

/// Everything that can travel over a connection (or sit in a checkpoint
/// file).
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    RegisterWorker { listen_addr: String },
    SessionInfo(Box<SessionInfo>),
    NextSplit { worker_id: u64 },
    SplitAssign(Split),
    CompleteSplit { worker_id: u64, split_id: u64 },
    CompleteAck,
    WorkerHeartbeat { worker_id: u64, stats: WorkerStats },
    ClientHeartbeat { client_id: u64, stall_events: u32, batches_received: u64 },
    HeartbeatAck,
    Drain { reason: DrainReason },
    GetBatch { client_id: u64 },
    Pending,
    Batch(Box<TensorBatch>),
    EndOfData,
    CheckpointRecord { epoch: u64, spec_digest: u64, cursor: u64, completed: Vec<u64> },
}

impl Message {
    fn type_byte(&self) -> u8 {
        match self {
            Message::RegisterWorker { .. } | Message::SessionInfo(_) => 1,
            Message::NextSplit { .. } => 2,
            Message::SplitAssign(_) => 3,
            Message::CompleteSplit { .. } | Message::CompleteAck => 4,
            Message::WorkerHeartbeat { .. }
            | Message::ClientHeartbeat { .. }
            | Message::HeartbeatAck => 5,
            Message::Drain { .. } => 6,
            Message::GetBatch { .. } | Message::Pending => 7,
            Message::Batch(_) => 8,
            Message::EndOfData => 9,
            Message::CheckpointRecord { .. } => 10,
        }
    }
}

fn put_feature_key(buf: &mut Vec<u8>, id: FeatureId) {
    put_u32(buf, id.id);
    buf.push(id.kind.code());
}

fn read_feature_key(r: &mut ByteReader<'_>) -> Result<FeatureId, WireError> {
    let id = r.u32()?;
    let kind = FeatureKind::from_code(r.u8()?).ok_or(WireError::Decode("bad feature kind"))?;
    Ok(FeatureId { id, kind })
}

fn encode_payload(msg: &Message, buf: &mut Vec<u8>) {
    match msg {
        Message::RegisterWorker { listen_addr } => {
            buf.push(0);
            put_str(buf, listen_addr);
        }
        Message::SessionInfo(info) => {
            buf.push(1);
            put_u64(buf, info.worker_id);
            put_str(buf, &info.table_dir);
            let spec = &info.spec;
            put_str(buf, &spec.table);
            put_u32(buf, spec.partitions.len() as u32);
            for p in &spec.partitions {
                put_str(buf, p);
            }
            put_u32(buf, spec.projection.ids().len() as u32);
            for &id in spec.projection.ids() {
                put_feature_key(buf, id);
            }
            put_str(buf, &spec.graph.manifest_text());
            put_u32(buf, spec.batch_size);
            put_u64(buf, spec.split_size);
        }
        Message::NextSplit { worker_id } => put_u64(buf, *worker_id),
        Message::SplitAssign(split) => {
            put_u64(buf, split.id);
            put_str(buf, &split.file);
            put_u32(buf, split.stripe_first);
            put_u32(buf, split.stripe_last);
            put_u64(buf, split.row_first);
            put_u64(buf, split.row_last);
        }
        Message::CompleteSplit { worker_id, split_id } => {
            buf.push(0);
            put_u64(buf, *worker_id);
            put_u64(buf, *split_id);
        }
        Message::CompleteAck => buf.push(1),
        Message::WorkerHeartbeat { worker_id, stats } => {
            buf.push(0);
            put_u64(buf, *worker_id);
            put_f64(buf, stats.cpu);
            put_f64(buf, stats.memory);
            put_f64(buf, stats.network);
            put_u32(buf, stats.buffered_batches);
            put_u64(buf, stats.splits_completed);
        }
        Message::ClientHeartbeat { client_id, stall_events, batches_received } => {
            buf.push(1);
            put_u64(buf, *client_id);
            put_u32(buf, *stall_events);
            put_u64(buf, *batches_received);
        }
        Message::HeartbeatAck => buf.push(2),
        Message::Drain { reason } => buf.push(match reason {
            DrainReason::ScaleDown => 0,
            DrainReason::Reregister => 1,
        }),
        Message::GetBatch { client_id } => {
            buf.push(0);
            put_u64(buf, *client_id);
        }
        Message::Pending => buf.push(1),
        Message::Batch(batch) => {
            put_u64(buf, batch.batch_id);
            put_u32(buf, batch.rows);
            for &v in &batch.labels {
                put_f32(buf, v);
            }
            for &v in &batch.row_ids {
                put_u64(buf, v);
            }
            put_u32(buf, batch.dense.len() as u32);
            for (&id, col) in &batch.dense {
                put_feature_key(buf, id);
                put_u32(buf, col.width);
                for &v in &col.data {
                    put_f32(buf, v);
                }
            }
            put_u32(buf, batch.sparse.len() as u32);
            for (&id, col) in &batch.sparse {
                put_feature_key(buf, id);
                put_u64(buf, col.values.len() as u64);
                for &v in &col.values {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                for &o in &col.offsets {
                    buf.extend_from_slice(&o.to_le_bytes());
                }
                match &col.scores {
                    Some(scores) => {
                        buf.push(1);
                        for &s in scores {
                            put_f32(buf, s);
                        }
                    }
                    None => buf.push(0),
                }
            }
        }
        Message::EndOfData => {}
        Message::CheckpointRecord { epoch, spec_digest, cursor, completed } => {
            put_u64(buf, *epoch);
            put_u64(buf, *spec_digest);
            put_u64(buf, *cursor);
            put_u32(buf, completed.len() as u32);
            for &id in completed {
                put_u64(buf, id);
            }
        }
    }
}

fn decode_payload(ty: u8, payload: &[u8]) -> Result<Message, WireError> {
    let mut r = ByteReader::new(payload);
    let msg = match ty {
        1 => match r.u8()? {
            0 => Message::RegisterWorker { listen_addr: r.str()? },
            1 => {
                let worker_id = r.u64()?;
                let table_dir = r.str()?;
                let table = r.str()?;
                let n = r.u32()? as usize;
                let mut partitions = Vec::with_capacity(n);
                for _ in 0..n {
                    partitions.push(r.str()?);
                }
                let n = r.u32()? as usize;
                let mut ids = Vec::with_capacity(n);
                for _ in 0..n {
                    ids.push(read_feature_key(&mut r)?);
                }
                let projection =
                    FeatureProjection::new(ids).map_err(|_| WireError::Decode("projection"))?;
                let manifest = r.str()?;
                let graph = TransformGraph::parse_manifest(&manifest)
                    .map_err(|_| WireError::Decode("transform manifest"))?;
                let batch_size = r.u32()?;
                let split_size = r.u64()?;
                Message::SessionInfo(Box::new(SessionInfo {
                    worker_id,
                    table_dir,
                    spec: SessionSpec { table, partitions, projection, graph, batch_size, split_size },
                }))
            }
            flavor => return Err(WireError::BadFlavor { ty, flavor }),
        },
        2 => Message::NextSplit { worker_id: r.u64()? },
        3 => Message::SplitAssign(Split {
            id: r.u64()?,
            file: r.str()?,
            stripe_first: r.u32()?,
            stripe_last: r.u32()?,
            row_first: r.u64()?,
            row_last: r.u64()?,
        }),
        4 => match r.u8()? {
            0 => Message::CompleteSplit { worker_id: r.u64()?, split_id: r.u64()? },
            1 => Message::CompleteAck,
            flavor => return Err(WireError::BadFlavor { ty, flavor }),
        },
        5 => match r.u8()? {
            0 => Message::WorkerHeartbeat {
                worker_id: r.u64()?,
                stats: WorkerStats {
                    cpu: r.f64()?,
                    memory: r.f64()?,
                    network: r.f64()?,
                    buffered_batches: r.u32()?,
                    splits_completed: r.u64()?,
                },
            },
            1 => Message::ClientHeartbeat {
                client_id: r.u64()?,
                stall_events: r.u32()?,
                batches_received: r.u64()?,
            },
            2 => Message::HeartbeatAck,
            flavor => return Err(WireError::BadFlavor { ty, flavor }),
        },
        6 => match r.u8()? {
            0 => Message::Drain { reason: DrainReason::ScaleDown },
            1 => Message::Drain { reason: DrainReason::Reregister },
            flavor => return Err(WireError::BadFlavor { ty, flavor }),
        },
        7 => match r.u8()? {
            0 => Message::GetBatch { client_id: r.u64()? },
            1 => Message::Pending,
            flavor => return Err(WireError::BadFlavor { ty, flavor }),
        },
        8 => {
            let batch_id = r.u64()?;
            let rows = r.u32()? as usize;
            let mut labels = Vec::with_capacity(rows);
            for _ in 0..rows {
                labels.push(r.f32()?);
            }
            let mut row_ids = Vec::with_capacity(rows);
            for _ in 0..rows {
                row_ids.push(r.u64()?);
            }
            let mut dense = std::collections::BTreeMap::new();
            let n = r.u32()? as usize;
            for _ in 0..n {
                let id = read_feature_key(&mut r)?;
                let width = r.u32()?;
                let len = rows * width as usize;
                let mut data = Vec::with_capacity(len);
                for _ in 0..len {
                    data.push(r.f32()?);
                }
                dense.insert(id, DenseBuffer { width, data });
            }
            let mut sparse = std::collections::BTreeMap::new();
            let n = r.u32()? as usize;
            for _ in 0..n {
                let id = read_feature_key(&mut r)?;
                let vlen = r.u64()? as usize;
                let mut values = Vec::with_capacity(vlen);
                for _ in 0..vlen {
                    values.push(i64::from_le_bytes(r.bytes(8)?.try_into().unwrap()));
                }
                let mut offsets = Vec::with_capacity(rows + 1);
                for _ in 0..rows + 1 {
                    offsets.push(i32::from_le_bytes(r.bytes(4)?.try_into().unwrap()));
                }
                let scores = match r.u8()? {
                    0 => None,
                    1 => {
                        let mut s = Vec::with_capacity(vlen);
                        for _ in 0..vlen {
                            s.push(r.f32()?);
                        }
                        Some(s)
                    }
                    _ => return Err(WireError::Decode("bad scores marker")),
                };
                sparse.insert(id, SparseBuffer { values, offsets, scores });
            }
            Message::Batch(Box::new(TensorBatch {
                batch_id,
                rows: rows as u32,
                dense,
                sparse,
                labels,
                row_ids,
            }))
        }
        9 => Message::EndOfData,
        10 => {
            let epoch = r.u64()?;
            let spec_digest = r.u64()?;
            let cursor = r.u64()?;
            let n = r.u32()? as usize;
            let mut completed = Vec::with_capacity(n);
            for _ in 0..n {
                completed.push(r.u64()?);
            }
            Message::CheckpointRecord { epoch, spec_digest, cursor, completed }
        }
        other => return Err(WireError::BadType(other)),
    };
    if !r.is_empty() {
        return Err(WireError::Decode("trailing bytes"));
    }
    Ok(msg)
}

/// Serializes a message as one frame.
pub fn frame_bytes(msg: &Message) -> Vec<u8> {
    let mut payload = Vec::new();
    encode_payload(msg, &mut payload);
    let mut frame = Vec::with_capacity(5 + payload.len());
    put_u32(&mut frame, payload.len() as u32 + 1);
    frame.push(msg.type_byte());
    frame.extend_from_slice(&payload);
    frame
}

/// Writes one framed message.
pub fn write_message(w: &mut impl Write, msg: &Message) -> Result<(), WireError> {
    w.write_all(&frame_bytes(msg))?;
    w.flush()?;
    Ok(())
}

/// Reads one framed message, blocking until a full frame arrives.
pub fn read_message(r: &mut impl Read) -> Result<Message, WireError> {
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)?;
    let len = u32::from_le_bytes(len_bytes);
    if len == 0 {
        return Err(WireError::Decode("empty frame"));
    }
    if len > MAX_FRAME_BYTES {
        return Err(WireError::FrameTooLarge(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    decode_payload(body[0], &body[1..])
}

/// Writes a request and reads the response on a blocking stream.
pub fn request(stream: &mut std::net::TcpStream, msg: &Message) -> Result<Message, WireError> {
    write_message(stream, msg)?;
    read_message(stream)
}
