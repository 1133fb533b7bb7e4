//! Dataset manifests: the table-level metadata that ties partitions and
//! files together and assigns every row a table-global id.
//!
//! A dataset directory holds `manifest.json` plus one columnar file per
//! (partition, file index). Row ids run consecutively over partitions in
//! manifest order, then files in listed order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{FeatureId, FeatureSpec, TableSchema};

#[derive(Debug, Error)]
pub enum TableError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed manifest: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("manifest has no partition {0}")]
    MissingPartition(String),
}

/// Shape parameters of a synthetic dataset. Feature counts, coverage, and
/// sparse-length means follow the production table statistics the presets
/// are named after; lengths are geometric and feature popularity follows a
/// Zipf law over a seeded rank permutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub dense_features: u32,
    pub sparse_features: u32,
    pub scored_features: u32,
    /// Per-feature, per-row coverage probability.
    pub coverage: f64,
    /// Mean sparse list length (geometric, support starting at 0).
    pub mean_sparse_len: f64,
    /// Zipf exponent of feature popularity.
    pub zipf_exponent: f64,
    pub rows_per_partition: u64,
    pub partitions: u32,
    pub files_per_partition: u32,
    /// Categorical ids are drawn uniformly from `[0, id_range)`.
    pub id_range: i64,
}

impl Default for DatasetProfile {
    fn default() -> Self {
        Self {
            dense_features: 32,
            sparse_features: 8,
            scored_features: 0,
            coverage: 0.45,
            mean_sparse_len: 4.0,
            zipf_exponent: 1.2,
            rows_per_partition: 1000,
            partitions: 1,
            files_per_partition: 1,
            id_range: 1_000_000_000,
        }
    }
}

impl DatasetProfile {
    /// Large production-like preset: ~12k float and ~1.8k sparse features,
    /// coverage 0.45, mean sparse length 25.97.
    pub fn rm1() -> Self {
        Self {
            dense_features: 12_115,
            sparse_features: 1_763,
            coverage: 0.45,
            mean_sparse_len: 25.97,
            ..Default::default()
        }
    }

    pub fn rm2() -> Self {
        Self {
            dense_features: 12_596,
            sparse_features: 1_817,
            coverage: 0.41,
            mean_sparse_len: 25.57,
            ..Default::default()
        }
    }

    pub fn rm3() -> Self {
        Self {
            dense_features: 5_707,
            sparse_features: 188,
            coverage: 0.29,
            mean_sparse_len: 19.64,
            ..Default::default()
        }
    }

    /// Scales feature counts down while keeping the per-feature statistics,
    /// for desk-sized runs of the large presets.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.dense_features = ((self.dense_features as f64 * factor).round() as u32).max(1);
        self.sparse_features = ((self.sparse_features as f64 * factor).round() as u32).max(1);
        self.scored_features = (self.scored_features as f64 * factor).round() as u32;
        self
    }

    pub fn total_features(&self) -> u32 {
        self.dense_features + self.sparse_features + self.scored_features
    }

    pub fn total_rows(&self) -> u64 {
        self.rows_per_partition * self.partitions as u64
    }

    /// The table-wide feature list implied by the profile.
    pub fn schema_features(&self) -> Vec<FeatureSpec> {
        let mut feats = Vec::with_capacity(self.total_features() as usize);
        for i in 0..self.dense_features {
            feats.push(FeatureSpec {
                id: FeatureId::dense(i),
                coverage: self.coverage,
                mean_sparse_len: 0.0,
            });
        }
        for i in 0..self.sparse_features {
            feats.push(FeatureSpec {
                id: FeatureId::sparse(i),
                coverage: self.coverage,
                mean_sparse_len: self.mean_sparse_len,
            });
        }
        for i in 0..self.scored_features {
            feats.push(FeatureSpec {
                id: FeatureId::scored(i),
                coverage: self.coverage,
                mean_sparse_len: self.mean_sparse_len,
            });
        }
        feats
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the dataset directory.
    pub path: String,
    pub rows: u64,
    /// Table-global id of this file's first row.
    pub row_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionMeta {
    /// Partition key, `YYYY-MM-DD`.
    pub key: String,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub table: String,
    pub seed: u64,
    pub profile: DatasetProfile,
    pub total_rows: u64,
    /// Writer stripe size shared by every file.
    pub stripe_rows: u32,
    /// Human-readable layout policy description.
    pub order: String,
    pub features: Vec<FeatureSpec>,
    /// Features by descending popularity rank; drives projection sampling
    /// and popularity-ordered rewrites.
    pub popularity_rank: Vec<FeatureId>,
    pub partitions: Vec<PartitionMeta>,
}

impl DatasetManifest {
    pub fn manifest_path(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    pub fn load(dir: &Path) -> Result<Self, TableError> {
        let bytes = std::fs::read(Self::manifest_path(dir))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, dir: &Path) -> Result<(), TableError> {
        let json = serde_json::to_vec_pretty(self)?;
        std::fs::write(Self::manifest_path(dir), json)?;
        Ok(())
    }

    pub fn partition(&self, key: &str) -> Option<&PartitionMeta> {
        self.partitions.iter().find(|p| p.key == key)
    }

    pub fn file_entry(&self, path: &str) -> Option<&FileEntry> {
        self.partitions.iter().flat_map(|p| p.files.iter()).find(|f| f.path == path)
    }

    /// Schema view for one partition (the feature set is table-wide).
    pub fn schema_for(&self, partition: &str) -> Result<TableSchema, TableError> {
        if self.partition(partition).is_none() {
            return Err(TableError::MissingPartition(partition.to_string()));
        }
        Ok(TableSchema::new(self.table.clone(), partition, self.features.clone())
            .expect("manifest features validated at generation"))
    }

    /// Rows of the selected partitions, as (file, global row range) in
    /// manifest order.
    pub fn selected_rows(&self, partitions: &[String]) -> Result<Vec<&FileEntry>, TableError> {
        for key in partitions {
            if self.partition(key).is_none() {
                return Err(TableError::MissingPartition(key.clone()));
            }
        }
        let selected: std::collections::HashSet<&str> =
            partitions.iter().map(|s| s.as_str()).collect();
        Ok(self
            .partitions
            .iter()
            .filter(|p| selected.contains(p.key.as_str()))
            .flat_map(|p| p.files.iter())
            .collect())
    }
}

/// Adds `days` to a `YYYY-MM-DD` date string. Good for the partition-key
/// ranges synthetic datasets use.
pub fn date_plus(base: &str, days: u32) -> String {
    let parts: Vec<u32> = base.splitn(3, '-').map(|p| p.parse().unwrap_or(1)).collect();
    let (mut y, mut m, mut d) = (parts[0], parts[1], parts[2]);
    let leap = |y: u32| (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    let month_len = |y: u32, m: u32| match m {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        _ => {
            if leap(y) {
                29
            } else {
                28
            }
        }
    };
    for _ in 0..days {
        d += 1;
        if d > month_len(y, m) {
            d = 1;
            m += 1;
            if m > 12 {
                m = 1;
                y += 1;
            }
        }
    }
    format!("{y:04}-{m:02}-{d:02}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn date_arithmetic_handles_rollover() {
        assert_eq!(date_plus("2024-01-01", 0), "2024-01-01");
        assert_eq!(date_plus("2024-01-31", 1), "2024-02-01");
        assert_eq!(date_plus("2024-02-28", 1), "2024-02-29"); // leap year
        assert_eq!(date_plus("2023-02-28", 1), "2023-03-01");
        assert_eq!(date_plus("2024-12-31", 1), "2025-01-01");
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let manifest = DatasetManifest {
            table: "t".into(),
            seed: 7,
            profile: DatasetProfile::default(),
            total_rows: 30,
            stripe_rows: 8,
            order: "random(7)".into(),
            features: vec![FeatureSpec {
                id: FeatureId::dense(0),
                coverage: 0.5,
                mean_sparse_len: 0.0,
            }],
            popularity_rank: vec![FeatureId::dense(0)],
            partitions: vec![PartitionMeta {
                key: "2024-01-01".into(),
                files: vec![
                    FileEntry { path: "part-2024-01-01-000.mdsi".into(), rows: 20, row_offset: 0 },
                    FileEntry { path: "part-2024-01-01-001.mdsi".into(), rows: 10, row_offset: 20 },
                ],
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        manifest.save(dir.path()).unwrap();
        let back = DatasetManifest::load(dir.path()).unwrap();
        assert_eq!(back, manifest);
        assert!(back.file_entry("part-2024-01-01-001.mdsi").is_some());
        assert!(back.schema_for("2024-01-02").is_err());
    }
}
