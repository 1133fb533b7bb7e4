//! Columnar file reader: opens and verifies file metadata, executes read
//! plans, and decodes projected streams straight into feature-major row
//! groups.

use std::collections::HashMap;
use std::fs::File;
use std::ops::Range;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use super::encode::ByteReader;
use super::{
    FileFooter, FileMeta, StoreError, StreamDescriptor, StreamKind, StreamOwner, MAGIC, VERSION,
};
use crate::flatmap::{bitmap_get, bitmap_set, RowGroup};
use crate::hash::fnv1a;
use crate::model::{FeatureId, FeatureKind, FeatureProjection, Sample};
use crate::plan::ReadPlan;

/// An open columnar file with verified metadata, safe for concurrent
/// projected reads.
#[derive(Debug)]
pub struct ColumnarReader {
    path: PathBuf,
    file: File,
    file_len: u64,
    meta: FileMeta,
}

impl ColumnarReader {
    /// Opens a file, verifying magics, version, and every footer checksum.
    /// Stream descriptors are bounds-checked against their stripe extents.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path)?;
        let file_len = file.metadata()?.len();

        // Header: magic + version.
        if file_len < 14 {
            return Err(StoreError::Truncated);
        }
        let mut header = [0u8; 6];
        file.read_exact_at(&mut header, 0)?;
        if &header[..4] != MAGIC {
            return Err(StoreError::BadMagic);
        }
        let version = u16::from_le_bytes(header[4..6].try_into().unwrap());
        if version != VERSION {
            return Err(StoreError::BadVersion(version));
        }

        // Trailer: footer length + magic.
        let mut trailer = [0u8; 8];
        file.read_exact_at(&mut trailer, file_len - 8)?;
        if &trailer[4..] != MAGIC {
            return Err(StoreError::BadMagic);
        }
        let footer_len = u32::from_le_bytes(trailer[..4].try_into().unwrap()) as u64;
        if footer_len + 8 + 6 > file_len {
            return Err(StoreError::Truncated);
        }
        let footer_start = file_len - 8 - footer_len;
        let mut footer_bytes = vec![0u8; footer_len as usize];
        file.read_exact_at(&mut footer_bytes, footer_start)?;
        let footer = FileFooter::deserialize(&footer_bytes)?;

        // Stripe footers live between a stripe's data and the next stripe.
        let mut stripe_footers = Vec::with_capacity(footer.stripes.len());
        for (i, entry) in footer.stripes.iter().enumerate() {
            let end = match footer.stripes.get(i + 1) {
                Some(next) => next.data_offset,
                None => footer_start,
            };
            if entry.data_offset > entry.footer_offset || entry.footer_offset > end {
                return Err(StoreError::Corrupt("stripe index out of order"));
            }
            let len = (end - entry.footer_offset) as usize;
            let mut bytes = vec![0u8; len];
            file.read_exact_at(&mut bytes, entry.footer_offset)?;
            let sf = super::StripeFooter::deserialize(&bytes)?;
            if sf.rows != entry.rows {
                return Err(StoreError::Corrupt("stripe row count mismatch"));
            }
            for d in &sf.directory {
                if d.offset < entry.data_offset
                    || d.offset + d.compressed_len > entry.footer_offset
                {
                    return Err(StoreError::DescriptorOutOfBounds);
                }
            }
            stripe_footers.push(sf);
        }

        Ok(Self { path, file, file_len, meta: FileMeta { footer, stripe_footers } })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn meta(&self) -> &FileMeta {
        &self.meta
    }

    pub fn footer(&self) -> &FileFooter {
        &self.meta.footer
    }

    pub fn file_len(&self) -> u64 {
        self.file_len
    }

    /// Total rows in a stripe range.
    pub fn rows_in(&self, stripes: Range<u32>) -> u64 {
        self.meta.footer.stripes[stripes.start as usize..stripes.end as usize]
            .iter()
            .map(|s| s.rows as u64)
            .sum()
    }

    fn read_extent(&self, offset: u64, len: u64) -> Result<Vec<u8>, StoreError> {
        if offset + len > self.file_len {
            return Err(StoreError::DescriptorOutOfBounds);
        }
        let mut buf = vec![0u8; len as usize];
        self.file.read_exact_at(&mut buf, offset)?;
        Ok(buf)
    }

    fn fetch_stream(&self, d: &StreamDescriptor, what: &'static str) -> Result<Vec<u8>, StoreError> {
        let raw = self.read_extent(d.offset, d.compressed_len)?;
        if fnv1a(&raw) != d.checksum {
            return Err(StoreError::ChecksumMismatch(what));
        }
        d.codec.decompress(&raw, d.uncompressed_len)
    }

    /// Executes `plan` and decodes the projected features of `stripes` into
    /// a row group. `first_row_id` is the table-global id of the first row
    /// of `stripes.start`.
    ///
    /// The plan must cover exactly the projected streams of this file,
    /// stripe range, and projection; anything else is a plan mismatch.
    pub fn read_rowgroup(
        &self,
        stripes: Range<u32>,
        projection: &FeatureProjection,
        plan: &ReadPlan,
        first_row_id: u64,
    ) -> Result<RowGroup, StoreError> {
        if stripes.end > self.meta.stripe_count() || stripes.start > stripes.end {
            return Err(StoreError::BadStripeRange(stripes.end));
        }
        for id in projection.ids() {
            if !self.meta.footer.schema.contains(*id) {
                return Err(StoreError::UnknownFeature(*id));
            }
        }
        let selected: std::collections::HashSet<FeatureId> =
            projection.ids().iter().copied().collect();

        // Pull every planned byte range, verify, and decompress per stream.
        let mut streams: HashMap<(u32, u32), Vec<u8>> = HashMap::new();
        for io in &plan.ios {
            let bytes = self.read_extent(io.offset, io.length)?;
            for slot in &io.streams {
                let footer = self
                    .meta
                    .stripe_footers
                    .get(slot.stripe as usize)
                    .ok_or(StoreError::PlanMismatch("slot stripe out of range".into()))?;
                let d = footer
                    .directory
                    .get(slot.desc as usize)
                    .ok_or_else(|| StoreError::PlanMismatch("slot descriptor out of range".into()))?;
                if d.offset != slot.offset || d.compressed_len != slot.length {
                    return Err(StoreError::PlanMismatch("slot extent mismatch".into()));
                }
                let local = &bytes[(slot.offset - io.offset) as usize..]
                    [..slot.length as usize];
                if fnv1a(local) != d.checksum {
                    return Err(StoreError::ChecksumMismatch("feature stream"));
                }
                streams.insert((slot.stripe, slot.desc), d.codec.decompress(local, d.uncompressed_len)?);
            }
        }

        // The plan must cover exactly the projected streams in range.
        let mut expected = 0usize;
        for s in stripes.clone() {
            for (i, d) in self.meta.stripe_footers[s as usize].directory.iter().enumerate() {
                if let StreamOwner::Feature(f) = d.owner {
                    if selected.contains(&f) {
                        if !streams.contains_key(&(s, i as u32)) {
                            return Err(StoreError::PlanMismatch(format!(
                                "stream {i} of stripe {s} not covered"
                            )));
                        }
                        expected += 1;
                    }
                }
            }
        }
        if streams.len() != expected {
            return Err(StoreError::PlanMismatch("plan covers foreign streams".into()));
        }

        let total_rows = self.rows_in(stripes.clone()) as usize;
        let mut group = RowGroup::new(total_rows);
        for (i, rid) in group.row_ids.iter_mut().enumerate() {
            *rid = first_row_id + i as u64;
        }
        for &id in projection.ids() {
            match id.kind {
                FeatureKind::Dense => {
                    group.dense.insert(id, crate::flatmap::DenseColumn::absent(total_rows));
                }
                FeatureKind::Sparse => {
                    group.sparse.insert(id, crate::flatmap::SparseColumn::absent(total_rows, false));
                }
                FeatureKind::ScoredSparse => {
                    group.sparse.insert(id, crate::flatmap::SparseColumn::absent(total_rows, true));
                }
            }
        }

        let mut row_base = 0usize;
        for s in stripes {
            let footer = &self.meta.stripe_footers[s as usize];
            let rows = footer.rows as usize;
            self.decode_labels(footer, &mut group.labels[row_base..row_base + rows])?;

            for &id in projection.ids() {
                let descs: Vec<(u32, &StreamDescriptor)> = footer
                    .directory
                    .iter()
                    .enumerate()
                    .filter(|(_, d)| d.owner == StreamOwner::Feature(id))
                    .map(|(i, d)| (i as u32, d))
                    .collect();
                if descs.is_empty() {
                    // Wholly absent in this stripe: keep offsets flat.
                    if id.kind != FeatureKind::Dense {
                        let col = group.sparse.get_mut(&id).unwrap();
                        let len = col.values.len() as u32;
                        for r in 0..rows {
                            col.offsets[row_base + r + 1] = len;
                        }
                    }
                    continue;
                }
                let stream = |kind: StreamKind| -> Result<&Vec<u8>, StoreError> {
                    descs
                        .iter()
                        .find(|(_, d)| d.kind == kind)
                        .and_then(|(i, _)| streams.get(&(s, *i)))
                        .ok_or(StoreError::Corrupt("missing stream for covered feature"))
                };
                match id.kind {
                    FeatureKind::Dense => {
                        let presence = stream(StreamKind::Presence)?;
                        let values = stream(StreamKind::Values)?;
                        let col = group.dense.get_mut(&id).unwrap();
                        let mut r = ByteReader::new(values);
                        for i in 0..rows {
                            if bitmap_get(presence, i) {
                                bitmap_set(&mut col.present, row_base + i);
                                col.values[row_base + i] = r.f64()?;
                            }
                        }
                        if !r.is_empty() {
                            return Err(StoreError::Corrupt("dense values overrun"));
                        }
                    }
                    FeatureKind::Sparse | FeatureKind::ScoredSparse => {
                        let presence = stream(StreamKind::Presence)?;
                        let lengths = stream(StreamKind::Lengths)?;
                        let values = stream(StreamKind::Values)?;
                        let scores = if id.kind == FeatureKind::ScoredSparse {
                            Some(stream(StreamKind::Scores)?)
                        } else {
                            None
                        };
                        let col = group.sparse.get_mut(&id).unwrap();
                        let mut lr = ByteReader::new(lengths);
                        let mut vr = ByteReader::new(values);
                        let mut sr = scores.map(|s| ByteReader::new(s));
                        for i in 0..rows {
                            if bitmap_get(presence, i) {
                                bitmap_set(&mut col.present, row_base + i);
                                let n = lr.uvarint()? as usize;
                                for _ in 0..n {
                                    col.values.push(vr.id()?);
                                }
                                if let (Some(sr), Some(dst)) = (sr.as_mut(), col.scores.as_mut()) {
                                    for _ in 0..n {
                                        dst.push(sr.f32()?);
                                    }
                                }
                            }
                            col.offsets[row_base + i + 1] = col.values.len() as u32;
                        }
                        if !vr.is_empty() || !lr.is_empty() {
                            return Err(StoreError::Corrupt("sparse stream overrun"));
                        }
                    }
                }
            }
            row_base += rows;
        }

        debug_assert!(group.check_consistent());
        Ok(group)
    }

    fn decode_labels(
        &self,
        footer: &super::StripeFooter,
        out: &mut [f32],
    ) -> Result<(), StoreError> {
        let d = footer
            .labels_stream()
            .ok_or(StoreError::Corrupt("stripe missing label stream"))?;
        let bytes = self.fetch_stream(d, "label stream")?;
        if bytes.len() != out.len() * 4 {
            return Err(StoreError::Corrupt("label stream length"));
        }
        let mut r = ByteReader::new(&bytes);
        for v in out.iter_mut() {
            *v = r.f32()?;
        }
        Ok(())
    }

    /// Plan-driven projected read returning row-major samples.
    pub fn read_rows(
        &self,
        stripes: Range<u32>,
        projection: &FeatureProjection,
        plan: &ReadPlan,
        first_row_id: u64,
    ) -> Result<Vec<Sample>, StoreError> {
        Ok(self.read_rowgroup(stripes, projection, plan, first_row_id)?.to_samples())
    }

    /// Convenience full-table read with a per-stream plan.
    pub fn read_all(&self, projection: &FeatureProjection) -> Result<Vec<Sample>, StoreError> {
        let plan = crate::plan::plan_per_stream(&self.meta, 0..self.meta.stripe_count(), projection)
            .map_err(|e| StoreError::PlanMismatch(e.to_string()))?;
        self.read_rows(0..self.meta.stripe_count(), projection, &plan, 0)
    }
}
