//! Feature-flattened columnar files.
//!
//! A file holds stripes of rows. Within a stripe, every feature's values
//! are stored as separate streams (presence bitmap, lengths, values,
//! scores), so a reader can fetch exactly the features a projection asks
//! for. The label column is a single stream at the front of each stripe,
//! outside the feature namespace.
//!
//! Layout, bit-exact (all integers little-endian):
//!
//! ```text
//! [magic "MDSI"][version u16]
//! stripe 0: [stream bytes ...][stripe footer]
//! stripe 1: ...
//! [file footer][footer length u32][magic "MDSI"]
//! ```
//!
//! See `docs/format.md` for the field-level breakdown.

pub mod encode;
mod layout;
mod reader;
mod writer;

pub use layout::{reorder_weights, resolve_layout};
pub use reader::ColumnarReader;
pub use writer::{write_table, write_table_to_path};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FeatureId, FeatureKind, ModelError, TableSchema};
use encode::{put_f64, put_str, put_u16, put_u32, put_u64, ByteReader};

pub const MAGIC: &[u8; 4] = b"MDSI";
pub const VERSION: u16 = 1;

/// Sentinel descriptor key for the label stream.
const LABEL_SENTINEL_ID: u32 = u32::MAX;
const LABEL_SENTINEL_KIND: u8 = 0xff;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a columnar file (bad magic)")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u16),
    #[error("file truncated")]
    Truncated,
    #[error("corrupt file: {0}")]
    Corrupt(&'static str),
    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(&'static str),
    #[error("stream descriptor outside file bounds")]
    DescriptorOutOfBounds,
    #[error("sample at row {row} violates schema: {source}")]
    SchemaViolation { row: u64, source: ModelError },
    #[error("feature {0} not in file")]
    UnknownFeature(FeatureId),
    #[error("read plan does not match file/stripes/projection: {0}")]
    PlanMismatch(String),
    #[error("stripe index {0} out of range")]
    BadStripeRange(u32),
}

/// What one stream holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StreamKind {
    Values,
    Lengths,
    Presence,
    Scores,
    Labels,
}

impl StreamKind {
    fn code(self) -> u8 {
        match self {
            StreamKind::Values => 0,
            StreamKind::Lengths => 1,
            StreamKind::Presence => 2,
            StreamKind::Scores => 3,
            StreamKind::Labels => 4,
        }
    }

    fn from_code(code: u8) -> Result<Self, StoreError> {
        Ok(match code {
            0 => StreamKind::Values,
            1 => StreamKind::Lengths,
            2 => StreamKind::Presence,
            3 => StreamKind::Scores,
            4 => StreamKind::Labels,
            _ => return Err(StoreError::Corrupt("bad stream kind")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Codec {
    #[default]
    Identity,
    Deflate,
}

impl Codec {
    fn code(self) -> u8 {
        match self {
            Codec::Identity => 0,
            Codec::Deflate => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self, StoreError> {
        Ok(match code {
            0 => Codec::Identity,
            1 => Codec::Deflate,
            _ => return Err(StoreError::Corrupt("bad codec")),
        })
    }

    pub fn compress(self, bytes: &[u8]) -> Vec<u8> {
        match self {
            Codec::Identity => bytes.to_vec(),
            Codec::Deflate => {
                use std::io::Write;
                let mut enc = flate2::write::DeflateEncoder::new(
                    Vec::new(),
                    flate2::Compression::default(),
                );
                enc.write_all(bytes).expect("in-memory compression");
                enc.finish().expect("in-memory compression")
            }
        }
    }

    pub fn decompress(self, bytes: &[u8], uncompressed_len: u64) -> Result<Vec<u8>, StoreError> {
        match self {
            Codec::Identity => Ok(bytes.to_vec()),
            Codec::Deflate => {
                use std::io::Read;
                let mut out = Vec::with_capacity(uncompressed_len as usize);
                let mut dec = flate2::read::DeflateDecoder::new(bytes);
                dec.read_to_end(&mut out).map_err(|_| StoreError::Corrupt("deflate stream"))?;
                if out.len() as u64 != uncompressed_len {
                    return Err(StoreError::Corrupt("decompressed length mismatch"));
                }
                Ok(out)
            }
        }
    }
}

/// Which column a descriptor belongs to: a feature or the label stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StreamOwner {
    Feature(FeatureId),
    Labels,
}

/// One stream's location and integrity metadata within the file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamDescriptor {
    pub owner: StreamOwner,
    pub kind: StreamKind,
    /// Absolute file offset of the on-disk (compressed) bytes.
    pub offset: u64,
    pub compressed_len: u64,
    pub uncompressed_len: u64,
    pub codec: Codec,
    /// FNV-1a over the on-disk bytes.
    pub checksum: u64,
}

/// Stripe metadata: row count, the stream directory in physical order, and
/// features wholly absent from the stripe (written as tombstones instead of
/// empty streams).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripeFooter {
    pub rows: u32,
    pub directory: Vec<StreamDescriptor>,
    pub absent: Vec<FeatureId>,
}

impl StripeFooter {
    /// Descriptors for `feature`, in physical order.
    pub fn streams_of(&self, feature: FeatureId) -> impl Iterator<Item = &StreamDescriptor> {
        self.directory
            .iter()
            .filter(move |d| d.owner == StreamOwner::Feature(feature))
    }

    pub fn labels_stream(&self) -> Option<&StreamDescriptor> {
        self.directory.iter().find(|d| d.owner == StreamOwner::Labels)
    }
}

/// Index entry for one stripe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StripeIndexEntry {
    pub data_offset: u64,
    pub footer_offset: u64,
    pub rows: u32,
}

/// File-level metadata written after the last stripe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileFooter {
    pub schema: TableSchema,
    pub stripes: Vec<StripeIndexEntry>,
    /// Physical feature order shared by every stripe.
    pub layout_order: Vec<FeatureId>,
    /// Weights used when the layout policy was popularity-based.
    pub popularity: Vec<(FeatureId, u64)>,
}

impl FileFooter {
    pub fn total_rows(&self) -> u64 {
        self.stripes.iter().map(|s| s.rows as u64).sum()
    }
}

/// How the writer orders feature streams on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureOrderPolicy {
    /// Ascending feature id (the schema's own order).
    SchemaOrder,
    /// Seeded shuffle, mimicking arbitrary generation order.
    Random { seed: u64 },
    /// Weight-descending, ties broken by ascending feature id.
    Popularity { weights: Vec<(FeatureId, u64)> },
}

/// Writer knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriterConfig {
    /// Rows buffered per stripe before flushing.
    pub target_stripe_rows: u32,
    /// Expected coalescing window of readers; advisory for layout sizing.
    pub coalesce_hint: u64,
    pub codec: Codec,
    pub order: FeatureOrderPolicy,
}

impl Default for WriterConfig {
    fn default() -> Self {
        Self {
            target_stripe_rows: 4096,
            coalesce_hint: 1_310_720,
            codec: Codec::Identity,
            order: FeatureOrderPolicy::SchemaOrder,
        }
    }
}

// --- serialization of footers ---------------------------------------------

fn put_feature_id(buf: &mut Vec<u8>, id: FeatureId) {
    put_u32(buf, id.id);
    buf.push(id.kind.code());
}

fn read_feature_id(r: &mut ByteReader<'_>) -> Result<FeatureId, StoreError> {
    let id = r.u32()?;
    let kind = FeatureKind::from_code(r.u8()?).ok_or(StoreError::Corrupt("bad feature kind"))?;
    Ok(FeatureId { id, kind })
}

impl StreamDescriptor {
    fn serialize_into(&self, buf: &mut Vec<u8>) {
        match self.owner {
            StreamOwner::Feature(id) => {
                put_u32(buf, id.id);
                buf.push(id.kind.code());
            }
            StreamOwner::Labels => {
                put_u32(buf, LABEL_SENTINEL_ID);
                buf.push(LABEL_SENTINEL_KIND);
            }
        }
        buf.push(self.kind.code());
        put_u64(buf, self.offset);
        put_u64(buf, self.compressed_len);
        put_u64(buf, self.uncompressed_len);
        buf.push(self.codec.code());
        put_u64(buf, self.checksum);
    }

    fn deserialize_from(r: &mut ByteReader<'_>) -> Result<Self, StoreError> {
        let raw_id = r.u32()?;
        let raw_kind = r.u8()?;
        let owner = if raw_id == LABEL_SENTINEL_ID && raw_kind == LABEL_SENTINEL_KIND {
            StreamOwner::Labels
        } else {
            let kind =
                FeatureKind::from_code(raw_kind).ok_or(StoreError::Corrupt("bad feature kind"))?;
            StreamOwner::Feature(FeatureId { id: raw_id, kind })
        };
        Ok(Self {
            owner,
            kind: StreamKind::from_code(r.u8()?)?,
            offset: r.u64()?,
            compressed_len: r.u64()?,
            uncompressed_len: r.u64()?,
            codec: Codec::from_code(r.u8()?)?,
            checksum: r.u64()?,
        })
    }
}

impl StripeFooter {
    pub(crate) fn serialize(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        put_u32(&mut buf, self.rows);
        put_u32(&mut buf, self.directory.len() as u32);
        for d in &self.directory {
            d.serialize_into(&mut buf);
        }
        put_u32(&mut buf, self.absent.len() as u32);
        for &id in &self.absent {
            put_feature_id(&mut buf, id);
        }
        let checksum = crate::hash::fnv1a(&buf);
        put_u64(&mut buf, checksum);
        buf
    }

    pub(crate) fn deserialize(bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() < 8 {
            return Err(StoreError::Truncated);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if crate::hash::fnv1a(body) != stored {
            return Err(StoreError::ChecksumMismatch("stripe footer"));
        }
        let mut r = ByteReader::new(body);
        let rows = r.u32()?;
        let n = r.u32()? as usize;
        let mut directory = Vec::with_capacity(n);
        for _ in 0..n {
            directory.push(StreamDescriptor::deserialize_from(&mut r)?);
        }
        let n = r.u32()? as usize;
        let mut absent = Vec::with_capacity(n);
        for _ in 0..n {
            absent.push(read_feature_id(&mut r)?);
        }
        if !r.is_empty() {
            return Err(StoreError::Corrupt("trailing bytes in stripe footer"));
        }
        Ok(Self { rows, directory, absent })
    }
}

impl FileFooter {
    pub(crate) fn serialize(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        put_str(&mut buf, &self.schema.table);
        put_str(&mut buf, &self.schema.partition);
        put_u32(&mut buf, self.schema.features().len() as u32);
        for f in self.schema.features() {
            put_feature_id(&mut buf, f.id);
            put_f64(&mut buf, f.coverage);
            put_f64(&mut buf, f.mean_sparse_len);
        }
        put_u32(&mut buf, self.stripes.len() as u32);
        for s in &self.stripes {
            put_u64(&mut buf, s.data_offset);
            put_u64(&mut buf, s.footer_offset);
            put_u32(&mut buf, s.rows);
        }
        put_u32(&mut buf, self.layout_order.len() as u32);
        for &id in &self.layout_order {
            put_feature_id(&mut buf, id);
        }
        put_u32(&mut buf, self.popularity.len() as u32);
        for &(id, w) in &self.popularity {
            put_feature_id(&mut buf, id);
            put_u64(&mut buf, w);
        }
        let checksum = crate::hash::fnv1a(&buf);
        put_u64(&mut buf, checksum);
        buf
    }

    pub(crate) fn deserialize(bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() < 8 {
            return Err(StoreError::Truncated);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        if crate::hash::fnv1a(body) != stored {
            return Err(StoreError::ChecksumMismatch("file footer"));
        }
        let mut r = ByteReader::new(body);
        let table = r.str()?;
        let partition = r.str()?;
        let n = r.u32()? as usize;
        let mut features = Vec::with_capacity(n);
        for _ in 0..n {
            let id = read_feature_id(&mut r)?;
            let coverage = r.f64()?;
            let mean_sparse_len = r.f64()?;
            features.push(crate::model::FeatureSpec { id, coverage, mean_sparse_len });
        }
        let schema = TableSchema::new(table, partition, features)
            .map_err(|_| StoreError::Corrupt("invalid schema snapshot"))?;
        let n = r.u32()? as usize;
        let mut stripes = Vec::with_capacity(n);
        for _ in 0..n {
            stripes.push(StripeIndexEntry {
                data_offset: r.u64()?,
                footer_offset: r.u64()?,
                rows: r.u32()?,
            });
        }
        let n = r.u32()? as usize;
        let mut layout_order = Vec::with_capacity(n);
        for _ in 0..n {
            layout_order.push(read_feature_id(&mut r)?);
        }
        let n = r.u32()? as usize;
        let mut popularity = Vec::with_capacity(n);
        for _ in 0..n {
            let id = read_feature_id(&mut r)?;
            let w = r.u64()?;
            popularity.push((id, w));
        }
        if !r.is_empty() {
            return Err(StoreError::Corrupt("trailing bytes in file footer"));
        }
        Ok(Self { schema, stripes, layout_order, popularity })
    }
}

/// File header bytes.
pub(crate) fn header_bytes() -> Vec<u8> {
    let mut buf = Vec::with_capacity(6);
    buf.extend_from_slice(MAGIC);
    put_u16(&mut buf, VERSION);
    buf
}

/// In-memory view of a file's metadata: everything planners need.
#[derive(Debug, Clone, PartialEq)]
pub struct FileMeta {
    pub footer: FileFooter,
    pub stripe_footers: Vec<StripeFooter>,
}

impl FileMeta {
    pub fn stripe_count(&self) -> u32 {
        self.footer.stripes.len() as u32
    }

    /// Byte extent `[start, end)` of a stripe's stream data.
    pub fn stripe_data_extent(&self, stripe: u32) -> (u64, u64) {
        let entry = &self.footer.stripes[stripe as usize];
        (entry.data_offset, entry.footer_offset)
    }
}
