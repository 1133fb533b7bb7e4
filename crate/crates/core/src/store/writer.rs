//! Streaming columnar writer.
//!
//! Rows are buffered and flushed as stripes every `target_stripe_rows`.
//! Within a stripe the label stream is written first, then each feature's
//! streams grouped together in the resolved layout order. A feature with no
//! covered rows in a stripe writes no streams, only a tombstone in the
//! stripe footer.

use std::io::Write;
use std::path::Path;

use super::encode::{put_f32, put_f64, put_id, put_uvarint};
use super::{
    header_bytes, layout, Codec, FileFooter, StoreError, StreamDescriptor,
    StreamKind, StreamOwner, StripeFooter, StripeIndexEntry, WriterConfig,
};
use crate::flatmap::{bitmap_new, bitmap_set};
use crate::hash::fnv1a;
use crate::model::{FeatureId, FeatureKind, Sample, TableSchema};

struct CountingSink<'a, W: Write> {
    inner: &'a mut W,
    pos: u64,
}

impl<'a, W: Write> CountingSink<'a, W> {
    fn write_all(&mut self, bytes: &[u8]) -> Result<(), StoreError> {
        self.inner.write_all(bytes)?;
        self.pos += bytes.len() as u64;
        Ok(())
    }
}

enum ColumnBuilder {
    Dense { present: Vec<u8>, values: Vec<u8>, covered: u32 },
    Sparse {
        present: Vec<u8>,
        lengths: Vec<u8>,
        values: Vec<u8>,
        scores: Option<Vec<u8>>,
        covered: u32,
    },
}

impl ColumnBuilder {
    fn new(kind: FeatureKind, rows: usize) -> Self {
        match kind {
            FeatureKind::Dense => {
                ColumnBuilder::Dense { present: bitmap_new(rows), values: Vec::new(), covered: 0 }
            }
            FeatureKind::Sparse => ColumnBuilder::Sparse {
                present: bitmap_new(rows),
                lengths: Vec::new(),
                values: Vec::new(),
                scores: None,
                covered: 0,
            },
            FeatureKind::ScoredSparse => ColumnBuilder::Sparse {
                present: bitmap_new(rows),
                lengths: Vec::new(),
                values: Vec::new(),
                scores: Some(Vec::new()),
                covered: 0,
            },
        }
    }
}

/// Writes `samples` as one columnar file into `sink`, returning the footer.
///
/// Samples are validated against `schema`; the first violation aborts the
/// write with the offending row index.
pub fn write_table<I, W>(
    samples: I,
    schema: &TableSchema,
    cfg: &WriterConfig,
    sink: &mut W,
) -> Result<FileFooter, StoreError>
where
    I: IntoIterator<Item = Sample>,
    W: Write,
{
    assert!(cfg.target_stripe_rows > 0, "stripe rows must be positive");
    let (layout_order, popularity) = layout::resolve_layout(schema, &cfg.order);
    let mut out = CountingSink { inner: sink, pos: 0 };
    out.write_all(&header_bytes())?;

    let mut stripes: Vec<StripeIndexEntry> = Vec::new();
    let mut buffer: Vec<Sample> = Vec::with_capacity(cfg.target_stripe_rows as usize);
    let mut row_index: u64 = 0;

    for sample in samples {
        sample
            .validate_against(schema)
            .map_err(|source| StoreError::SchemaViolation { row: row_index, source })?;
        row_index += 1;
        buffer.push(sample);
        if buffer.len() == cfg.target_stripe_rows as usize {
            stripes.push(flush_stripe(&mut out, &buffer, &layout_order, cfg.codec)?);
            buffer.clear();
        }
    }
    if !buffer.is_empty() {
        stripes.push(flush_stripe(&mut out, &buffer, &layout_order, cfg.codec)?);
        buffer.clear();
    }

    let footer = FileFooter {
        schema: schema.clone(),
        stripes,
        layout_order,
        popularity,
    };
    let footer_bytes = footer.serialize();
    out.write_all(&footer_bytes)?;
    let mut trailer = Vec::with_capacity(8);
    super::encode::put_u32(&mut trailer, footer_bytes.len() as u32);
    trailer.extend_from_slice(super::MAGIC);
    out.write_all(&trailer)?;
    out.inner.flush()?;
    Ok(footer)
}

/// Convenience wrapper writing to a fresh file at `path`.
pub fn write_table_to_path<I>(
    samples: I,
    schema: &TableSchema,
    cfg: &WriterConfig,
    path: impl AsRef<Path>,
) -> Result<FileFooter, StoreError>
where
    I: IntoIterator<Item = Sample>,
{
    let file = std::fs::File::create(path)?;
    let mut sink = std::io::BufWriter::new(file);
    let footer = write_table(samples, schema, cfg, &mut sink)?;
    sink.into_inner().map_err(|e| StoreError::Io(e.into_error()))?.sync_all()?;
    Ok(footer)
}

fn flush_stripe<W: Write>(
    out: &mut CountingSink<'_, W>,
    rows: &[Sample],
    layout_order: &[FeatureId],
    codec: Codec,
) -> Result<StripeIndexEntry, StoreError> {
    let data_offset = out.pos;
    let n = rows.len();

    // Column-building pass: one sweep over each row's present features.
    let mut index: std::collections::HashMap<FeatureId, usize> = Default::default();
    let mut builders: Vec<ColumnBuilder> = Vec::with_capacity(layout_order.len());
    for (i, &id) in layout_order.iter().enumerate() {
        index.insert(id, i);
        builders.push(ColumnBuilder::new(id.kind, n));
    }

    let mut labels = Vec::with_capacity(n * 4);
    for (r, sample) in rows.iter().enumerate() {
        put_f32(&mut labels, sample.label);
        for (id, &v) in &sample.dense {
            if let ColumnBuilder::Dense { present, values, covered } = &mut builders[index[id]] {
                bitmap_set(present, r);
                put_f64(values, v);
                *covered += 1;
            }
        }
        for (id, ids) in &sample.sparse {
            if let ColumnBuilder::Sparse { present, lengths, values, covered, .. } =
                &mut builders[index[id]]
            {
                bitmap_set(present, r);
                put_uvarint(lengths, ids.len() as u64);
                for &v in ids {
                    put_id(values, v);
                }
                *covered += 1;
            }
        }
        for (id, pairs) in &sample.scored {
            if let ColumnBuilder::Sparse { present, lengths, values, scores, covered } =
                &mut builders[index[id]]
            {
                bitmap_set(present, r);
                put_uvarint(lengths, pairs.len() as u64);
                let scores = scores.as_mut().expect("scored builder holds a score buffer");
                for &(v, s) in pairs {
                    put_id(values, v);
                    put_f32(scores, s);
                }
                *covered += 1;
            }
        }
    }

    // Emission pass: labels first, then feature streams in layout order.
    let mut directory: Vec<StreamDescriptor> = Vec::new();
    let mut absent: Vec<FeatureId> = Vec::new();
    emit_stream(out, &mut directory, StreamOwner::Labels, StreamKind::Labels, &labels, codec)?;
    for (&id, builder) in layout_order.iter().zip(&builders) {
        let owner = StreamOwner::Feature(id);
        match builder {
            ColumnBuilder::Dense { present, values, covered } => {
                if *covered == 0 {
                    absent.push(id);
                    continue;
                }
                emit_stream(out, &mut directory, owner, StreamKind::Presence, present, codec)?;
                emit_stream(out, &mut directory, owner, StreamKind::Values, values, codec)?;
            }
            ColumnBuilder::Sparse { present, lengths, values, scores, covered } => {
                if *covered == 0 {
                    absent.push(id);
                    continue;
                }
                emit_stream(out, &mut directory, owner, StreamKind::Presence, present, codec)?;
                emit_stream(out, &mut directory, owner, StreamKind::Lengths, lengths, codec)?;
                emit_stream(out, &mut directory, owner, StreamKind::Values, values, codec)?;
                if let Some(scores) = scores {
                    emit_stream(out, &mut directory, owner, StreamKind::Scores, scores, codec)?;
                }
            }
        }
    }

    let footer_offset = out.pos;
    let footer = StripeFooter { rows: n as u32, directory, absent };
    out.write_all(&footer.serialize())?;
    Ok(StripeIndexEntry { data_offset, footer_offset, rows: n as u32 })
}

fn emit_stream<W: Write>(
    out: &mut CountingSink<'_, W>,
    directory: &mut Vec<StreamDescriptor>,
    owner: StreamOwner,
    kind: StreamKind,
    bytes: &[u8],
    codec: Codec,
) -> Result<(), StoreError> {
    let compressed = codec.compress(bytes);
    directory.push(StreamDescriptor {
        owner,
        kind,
        offset: out.pos,
        compressed_len: compressed.len() as u64,
        uncompressed_len: bytes.len() as u64,
        codec,
        checksum: fnv1a(&compressed),
    });
    out.write_all(&compressed)
}
