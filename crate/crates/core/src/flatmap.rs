//! Feature-major in-memory row groups.
//!
//! Workers decode feature streams straight into this layout so the bytes
//! move disk -> columns -> tensors without a row-major detour. Dense columns
//! hold one value per row (absent rows filled with 0.0); sparse columns use
//! CSR offsets with empty ranges for absent rows. Presence bitmaps keep the
//! covered/uncovered distinction that the fill values erase.

use std::collections::BTreeMap;

use crate::model::{FeatureId, FeatureKind, Sample};

/// Allocates a presence bitmap for `rows` rows, all absent.
pub fn bitmap_new(rows: usize) -> Vec<u8> {
    vec![0u8; rows.div_ceil(8)]
}

/// Reads bit `i` (LSB-first within each byte).
#[inline]
pub fn bitmap_get(bits: &[u8], i: usize) -> bool {
    bits[i / 8] & (1 << (i % 8)) != 0
}

/// Sets bit `i`.
#[inline]
pub fn bitmap_set(bits: &mut [u8], i: usize) {
    bits[i / 8] |= 1 << (i % 8);
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseColumn {
    pub present: Vec<u8>,
    /// One value per row; uncovered rows hold 0.0.
    pub values: Vec<f64>,
}

impl DenseColumn {
    pub fn absent(rows: usize) -> Self {
        Self { present: bitmap_new(rows), values: vec![0.0; rows] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseColumn {
    pub present: Vec<u8>,
    /// CSR offsets, `rows + 1` entries.
    pub offsets: Vec<u32>,
    pub values: Vec<i64>,
    /// Parallel to `values` for scored features.
    pub scores: Option<Vec<f32>>,
}

impl SparseColumn {
    pub fn absent(rows: usize, scored: bool) -> Self {
        Self {
            present: bitmap_new(rows),
            offsets: vec![0; rows + 1],
            values: Vec::new(),
            scores: if scored { Some(Vec::new()) } else { None },
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[i64] {
        &self.values[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }

    #[inline]
    pub fn row_scores(&self, i: usize) -> &[f32] {
        match &self.scores {
            Some(s) => &s[self.offsets[i] as usize..self.offsets[i + 1] as usize],
            None => &[],
        }
    }
}

/// One split's worth of decoded rows, feature-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowGroup {
    pub rows: usize,
    /// Table-global id of each row.
    pub row_ids: Vec<u64>,
    pub labels: Vec<f32>,
    pub dense: BTreeMap<FeatureId, DenseColumn>,
    pub sparse: BTreeMap<FeatureId, SparseColumn>,
}

impl RowGroup {
    pub fn new(rows: usize) -> Self {
        Self {
            rows,
            row_ids: vec![0; rows],
            labels: vec![0.0; rows],
            dense: BTreeMap::new(),
            sparse: BTreeMap::new(),
        }
    }

    /// Builds a row group from row-major samples, keeping only `projection`
    /// features. `first_row_id` numbers the rows consecutively.
    pub fn from_samples(samples: &[Sample], projection: &[FeatureId], first_row_id: u64) -> Self {
        let rows = samples.len();
        let mut group = RowGroup::new(rows);
        for (i, s) in samples.iter().enumerate() {
            group.row_ids[i] = first_row_id + i as u64;
            group.labels[i] = s.label;
        }
        for &id in projection {
            match id.kind {
                FeatureKind::Dense => {
                    let mut col = DenseColumn::absent(rows);
                    for (i, s) in samples.iter().enumerate() {
                        if let Some(&v) = s.dense.get(&id) {
                            bitmap_set(&mut col.present, i);
                            col.values[i] = v;
                        }
                    }
                    group.dense.insert(id, col);
                }
                FeatureKind::Sparse => {
                    let mut col = SparseColumn::absent(rows, false);
                    for (i, s) in samples.iter().enumerate() {
                        if let Some(ids) = s.sparse.get(&id) {
                            bitmap_set(&mut col.present, i);
                            col.values.extend_from_slice(ids);
                        }
                        col.offsets[i + 1] = col.values.len() as u32;
                    }
                    group.sparse.insert(id, col);
                }
                FeatureKind::ScoredSparse => {
                    let mut col = SparseColumn::absent(rows, true);
                    let scores = col.scores.as_mut().unwrap();
                    for (i, s) in samples.iter().enumerate() {
                        if let Some(pairs) = s.scored.get(&id) {
                            bitmap_set(&mut col.present, i);
                            for &(v, sc) in pairs {
                                col.values.push(v);
                                scores.push(sc);
                            }
                        }
                        col.offsets[i + 1] = col.values.len() as u32;
                    }
                    group.sparse.insert(id, col);
                }
            }
        }
        group
    }

    /// Converts back to row-major samples; uncovered features are omitted.
    pub fn to_samples(&self) -> Vec<Sample> {
        let mut out = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let mut s = Sample { label: self.labels[i], ..Default::default() };
            for (&id, col) in &self.dense {
                if bitmap_get(&col.present, i) {
                    s.dense.insert(id, col.values[i]);
                }
            }
            for (&id, col) in &self.sparse {
                if bitmap_get(&col.present, i) {
                    if id.kind == FeatureKind::ScoredSparse {
                        let pairs = col
                            .row(i)
                            .iter()
                            .zip(col.row_scores(i))
                            .map(|(&v, &sc)| (v, sc))
                            .collect();
                        s.scored.insert(id, pairs);
                    } else {
                        s.sparse.insert(id, col.row(i).to_vec());
                    }
                }
            }
            out.push(s);
        }
        out
    }

    /// Copies rows `[start, end)` into a new group.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.rows);
        let rows = end - start;
        let mut group = RowGroup::new(rows);
        group.row_ids.copy_from_slice(&self.row_ids[start..end]);
        group.labels.copy_from_slice(&self.labels[start..end]);
        for (&id, col) in &self.dense {
            let mut sliced = DenseColumn::absent(rows);
            sliced.values.copy_from_slice(&col.values[start..end]);
            for i in 0..rows {
                if bitmap_get(&col.present, start + i) {
                    bitmap_set(&mut sliced.present, i);
                }
            }
            group.dense.insert(id, sliced);
        }
        for (&id, col) in &self.sparse {
            let scored = col.scores.is_some();
            let mut sliced = SparseColumn::absent(rows, scored);
            let base = col.offsets[start];
            for i in 0..rows {
                sliced.offsets[i + 1] = col.offsets[start + i + 1] - base;
                if bitmap_get(&col.present, start + i) {
                    bitmap_set(&mut sliced.present, i);
                }
            }
            let lo = col.offsets[start] as usize;
            let hi = col.offsets[end] as usize;
            sliced.values.extend_from_slice(&col.values[lo..hi]);
            if let (Some(dst), Some(src)) = (sliced.scores.as_mut(), col.scores.as_ref()) {
                dst.extend_from_slice(&src[lo..hi]);
            }
            group.sparse.insert(id, sliced);
        }
        group
    }

    /// Checks column lengths against the row count.
    pub fn check_consistent(&self) -> bool {
        if self.row_ids.len() != self.rows || self.labels.len() != self.rows {
            return false;
        }
        for col in self.dense.values() {
            if col.values.len() != self.rows || col.present.len() != self.rows.div_ceil(8) {
                return false;
            }
        }
        for col in self.sparse.values() {
            if col.offsets.len() != self.rows + 1
                || col.offsets[self.rows] as usize != col.values.len()
                || col.offsets.windows(2).any(|w| w[1] < w[0])
            {
                return false;
            }
            if let Some(s) = &col.scores {
                if s.len() != col.values.len() {
                    return false;
                }
            }
        }
        true
    }
}
