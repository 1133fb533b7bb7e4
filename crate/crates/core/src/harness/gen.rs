//! Deterministic synthetic dataset generation.
//!
//! Rows stream straight into the columnar writer, so arbitrarily large
//! tables generate in constant memory. The random draw order is fixed by
//! the schema, never by the file layout policy, so rewriting a dataset in a
//! different physical order reproduces the same logical rows bit for bit.

use std::path::Path;

use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Geometric, Zipf};

use super::HarnessError;
use crate::model::{
    FeatureId, FeatureKind, FeatureProjection, FeatureSpec, Sample, TableSchema,
};
use crate::store::{write_table_to_path, Codec, FeatureOrderPolicy, WriterConfig};
use crate::table::{date_plus, DatasetManifest, DatasetProfile, FileEntry, PartitionMeta};
use crate::transform::{GraphInput, Operator, TransformGraph, TransformNode};

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub order: FeatureOrderPolicy,
    pub stripe_rows: u32,
    pub codec: Codec,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { order: FeatureOrderPolicy::SchemaOrder, stripe_rows: 4096, codec: Codec::Identity }
    }
}

struct SampleGen {
    rng: ChaCha12Rng,
    features: Vec<FeatureSpec>,
    lengths: Geometric,
    id_range: i64,
    remaining: u64,
}

impl SampleGen {
    fn new(seed: u64, profile: &DatasetProfile, rows: u64) -> Self {
        // Geometric over {0,1,...} with mean m has success probability
        // 1 / (1 + m).
        let p = 1.0 / (1.0 + profile.mean_sparse_len.max(0.0));
        Self {
            rng: ChaCha12Rng::seed_from_u64(seed),
            features: profile.schema_features(),
            lengths: Geometric::new(p).expect("probability in (0,1]"),
            id_range: profile.id_range,
            remaining: rows,
        }
    }
}

impl Iterator for SampleGen {
    type Item = Sample;

    fn next(&mut self) -> Option<Sample> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let mut s = Sample { label: self.rng.random::<f32>(), ..Default::default() };
        for f in &self.features {
            if self.rng.random::<f64>() >= f.coverage {
                continue;
            }
            match f.id.kind {
                FeatureKind::Dense => {
                    s.dense.insert(f.id, self.rng.random::<f64>());
                }
                FeatureKind::Sparse => {
                    let n = self.lengths.sample(&mut self.rng);
                    let ids =
                        (0..n).map(|_| self.rng.random_range(0..self.id_range)).collect();
                    s.sparse.insert(f.id, ids);
                }
                FeatureKind::ScoredSparse => {
                    let n = self.lengths.sample(&mut self.rng);
                    let pairs = (0..n)
                        .map(|_| {
                            (self.rng.random_range(0..self.id_range), self.rng.random::<f32>())
                        })
                        .collect();
                    s.scored.insert(f.id, pairs);
                }
            }
        }
        Some(s)
    }
}

/// Regenerates the exact sample stream of one dataset file, for oracle
/// comparisons against what its columnar file decodes to.
pub fn regen_samples(
    manifest: &DatasetManifest,
    partition: u32,
    file: u32,
) -> Result<impl Iterator<Item = Sample>, HarnessError> {
    let entry = manifest
        .partitions
        .get(partition as usize)
        .and_then(|p| p.files.get(file as usize))
        .ok_or_else(|| super::HarnessError::Config(format!("no file {partition}/{file}")))?;
    Ok(SampleGen::new(file_seed(manifest.seed, partition, file), &manifest.profile, entry.rows))
}

/// Per-file generation seed: one stream per (table seed, partition, file).
fn file_seed(seed: u64, partition: u32, file: u32) -> u64 {
    let mut bytes = [0u8; 16];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..12].copy_from_slice(&partition.to_le_bytes());
    bytes[12..].copy_from_slice(&file.to_le_bytes());
    crate::hash::fnv1a(&bytes)
}

/// The popularity rank permutation implied by a seed: index 0 is the most
/// popular feature. Deliberately decoupled from schema order so schema and
/// popularity layouts differ.
pub fn popularity_rank(profile: &DatasetProfile, seed: u64) -> Vec<FeatureId> {
    let mut ids: Vec<FeatureId> = profile.schema_features().iter().map(|f| f.id).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    ids.shuffle(&mut rng);
    ids
}

/// Writes a complete dataset (files + manifest) under `out_dir`.
pub fn gen_dataset(
    profile: &DatasetProfile,
    seed: u64,
    out_dir: &Path,
    cfg: &GenConfig,
) -> Result<DatasetManifest, HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    let features = profile.schema_features();
    let rank = popularity_rank(profile, seed);

    let mut partitions = Vec::with_capacity(profile.partitions as usize);
    let mut row_offset = 0u64;
    for p in 0..profile.partitions {
        let key = date_plus("2024-01-01", p);
        let schema = TableSchema::new("synth", key.clone(), features.clone())?;
        let files_per = profile.files_per_partition.max(1);
        let base_rows = profile.rows_per_partition / files_per as u64;
        let mut files = Vec::with_capacity(files_per as usize);
        for f in 0..files_per {
            let rows = if f == files_per - 1 {
                profile.rows_per_partition - base_rows * (files_per as u64 - 1)
            } else {
                base_rows
            };
            let path = format!("part-{key}-{f:03}.mdsi");
            let writer_cfg = WriterConfig {
                target_stripe_rows: cfg.stripe_rows,
                codec: cfg.codec,
                order: cfg.order.clone(),
                ..Default::default()
            };
            let samples = SampleGen::new(file_seed(seed, p, f), profile, rows);
            write_table_to_path(samples, &schema, &writer_cfg, out_dir.join(&path))?;
            files.push(FileEntry { path, rows, row_offset });
            row_offset += rows;
        }
        partitions.push(PartitionMeta { key, files });
    }

    let manifest = DatasetManifest {
        table: "synth".into(),
        seed,
        profile: profile.clone(),
        total_rows: row_offset,
        stripe_rows: cfg.stripe_rows,
        order: match &cfg.order {
            FeatureOrderPolicy::SchemaOrder => "schema".to_string(),
            FeatureOrderPolicy::Random { seed } => format!("random({seed})"),
            FeatureOrderPolicy::Popularity { .. } => "popularity".to_string(),
        },
        features,
        popularity_rank: rank,
        partitions,
    };
    manifest.save(out_dir)?;
    Ok(manifest)
}

/// Draws `count` projections of `features_per` distinct features each,
/// Zipf-distributed over the popularity ranks.
pub fn sample_projections(
    manifest: &DatasetManifest,
    count: usize,
    features_per: usize,
    seed: u64,
) -> Vec<FeatureProjection> {
    let rank = &manifest.popularity_rank;
    let n = rank.len();
    let features_per = features_per.clamp(1, n);
    let zipf = Zipf::new(n as f64, manifest.profile.zipf_exponent)
        .expect("zipf parameters positive");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut picked: Vec<FeatureId> = Vec::with_capacity(features_per);
            while picked.len() < features_per {
                let r = (zipf.sample(&mut rng) as usize - 1).min(n - 1);
                let id = rank[r];
                if !picked.contains(&id) {
                    picked.push(id);
                }
            }
            FeatureProjection::new(picked).expect("non-empty distinct projection")
        })
        .collect()
}

/// Popularity weights derived from a synthetic window of recent sessions:
/// the same counting that drives feature reordering in production rewrites.
pub fn zipf_feature_weights(
    manifest: &DatasetManifest,
    sessions: usize,
    features_per: usize,
    seed: u64,
) -> Vec<(FeatureId, u64)> {
    let projections = sample_projections(manifest, sessions, features_per, seed);
    let log: Vec<(u64, FeatureProjection)> =
        projections.into_iter().enumerate().map(|(i, p)| (i as u64, p)).collect();
    let universe: Vec<FeatureId> = manifest.features.iter().map(|f| f.id).collect();
    crate::store::reorder_weights(&log, log.len(), &universe)
}

/// Builds a representative transform graph over a projection: dense
/// normalization (logit, clamp, box-cox behind a clamp), sparse
/// normalization (truncate-then-hash, positive modulus), and the expensive
/// feature-generation chains (bucketize, n-gram, id mapping, cartesian
/// products) that dominate transform cycles.
pub fn default_graph(projection: &FeatureProjection) -> Result<TransformGraph, HarnessError> {
    let dense: Vec<FeatureId> =
        projection.ids().iter().filter(|id| id.kind == FeatureKind::Dense).copied().collect();
    let sparse: Vec<FeatureId> =
        projection.ids().iter().filter(|id| id.kind != FeatureKind::Dense).copied().collect();

    let mut nodes = Vec::new();
    let mut next = 1_000_000u32;
    let mut out = |nodes: &mut Vec<TransformNode>, op: Operator, inputs: Vec<GraphInput>| {
        let id = next;
        next += 1;
        nodes.push(TransformNode { output: id, op, inputs });
        id
    };

    for (i, &id) in dense.iter().enumerate() {
        let input = vec![GraphInput::Feature(id)];
        match i % 5 {
            0 => {
                out(&mut nodes, Operator::Logit { eps: 1e-6 }, input);
            }
            1 => {
                out(&mut nodes, Operator::Clamp { lo: 0.05, hi: 0.95 }, input);
            }
            2 => {
                let bucket = out(
                    &mut nodes,
                    Operator::Bucketize { borders: vec![0.1, 0.25, 0.5, 0.75, 0.9] },
                    input,
                );
                out(
                    &mut nodes,
                    Operator::Onehot { cardinality: 8 },
                    vec![GraphInput::Node(bucket)],
                );
            }
            3 => {
                let clamped = out(&mut nodes, Operator::Clamp { lo: 1e-3, hi: 1.0 }, input);
                out(&mut nodes, Operator::BoxCox { lambda: 0.5 }, vec![GraphInput::Node(clamped)]);
            }
            _ => {
                out(
                    &mut nodes,
                    Operator::Bucketize { borders: vec![0.2, 0.4, 0.6, 0.8] },
                    input,
                );
            }
        }
    }

    let mut truncated: Vec<u32> = Vec::new();
    for (j, &id) in sparse.iter().enumerate() {
        let input = vec![GraphInput::Feature(id)];
        let first = out(&mut nodes, Operator::FirstX { x: 16 }, input);
        truncated.push(first);
        match j % 3 {
            0 => {
                out(
                    &mut nodes,
                    Operator::SigridHash { max: 1_000_000 },
                    vec![GraphInput::Node(first)],
                );
            }
            1 => {
                out(
                    &mut nodes,
                    Operator::PositiveModulus { modulus: 999_983 },
                    vec![GraphInput::Node(first)],
                );
            }
            _ => {
                let table = (0..512).map(|k| (k, k * 31 + 7)).collect();
                out(
                    &mut nodes,
                    Operator::MapId { table, default: -1 },
                    vec![GraphInput::Feature(id)],
                );
            }
        }
    }

    // Derived-feature chains across sparse pairs: the expensive part of the
    // catalog, mirroring how generation dominates transform cycles.
    for pair in truncated.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let grams = out(
            &mut nodes,
            Operator::Ngram { n: 2 },
            vec![GraphInput::Node(a), GraphInput::Node(b)],
        );
        out(
            &mut nodes,
            Operator::SigridHash { max: 10_000_000 },
            vec![GraphInput::Node(grams)],
        );
        let cross = out(
            &mut nodes,
            Operator::Cartesian,
            vec![GraphInput::Node(a), GraphInput::Node(b)],
        );
        let crosscut =
            out(&mut nodes, Operator::FirstX { x: 64 }, vec![GraphInput::Node(cross)]);
        let cross_grams =
            out(&mut nodes, Operator::Ngram { n: 2 }, vec![GraphInput::Node(crosscut)]);
        out(
            &mut nodes,
            Operator::SigridHash { max: 10_000_000 },
            vec![GraphInput::Node(cross_grams)],
        );
    }

    Ok(TransformGraph::new(nodes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::ColumnarReader;

    fn small_profile() -> DatasetProfile {
        DatasetProfile {
            dense_features: 6,
            sparse_features: 3,
            scored_features: 1,
            coverage: 0.5,
            mean_sparse_len: 3.0,
            rows_per_partition: 200,
            partitions: 2,
            files_per_partition: 2,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_seed_deterministic_and_byte_identical() {
        let profile = small_profile();
        let cfg = GenConfig { stripe_rows: 64, ..Default::default() };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        gen_dataset(&profile, 11, a.path(), &cfg).unwrap();
        gen_dataset(&profile, 11, b.path(), &cfg).unwrap();
        for p in 0..2 {
            for f in 0..2 {
                let key = date_plus("2024-01-01", p);
                let name = format!("part-{key}-{f:03}.mdsi");
                let bytes_a = std::fs::read(a.path().join(&name)).unwrap();
                let bytes_b = std::fs::read(b.path().join(&name)).unwrap();
                assert_eq!(bytes_a, bytes_b, "file {name} differs across runs");
            }
        }
        let c = tempfile::tempdir().unwrap();
        gen_dataset(&profile, 12, c.path(), &cfg).unwrap();
        let bytes_a = std::fs::read(a.path().join("part-2024-01-01-000.mdsi")).unwrap();
        let bytes_c = std::fs::read(c.path().join("part-2024-01-01-000.mdsi")).unwrap();
        assert_ne!(bytes_a, bytes_c);
    }

    #[test]
    fn layout_rewrite_keeps_logical_rows() {
        let profile = DatasetProfile {
            rows_per_partition: 150,
            partitions: 1,
            ..small_profile()
        };
        let base = tempfile::tempdir().unwrap();
        let reordered = tempfile::tempdir().unwrap();
        let cfg_a = GenConfig {
            order: FeatureOrderPolicy::Random { seed: 5 },
            stripe_rows: 32,
            ..Default::default()
        };
        let manifest = gen_dataset(&profile, 3, base.path(), &cfg_a).unwrap();
        let weights = zipf_feature_weights(&manifest, 16, 3, 99);
        let cfg_b = GenConfig {
            order: FeatureOrderPolicy::Popularity { weights },
            stripe_rows: 32,
            ..Default::default()
        };
        gen_dataset(&profile, 3, reordered.path(), &cfg_b).unwrap();

        let projection =
            FeatureProjection::new(manifest.features.iter().map(|f| f.id).collect()).unwrap();
        let ra = ColumnarReader::open(base.path().join("part-2024-01-01-000.mdsi")).unwrap();
        let rb = ColumnarReader::open(reordered.path().join("part-2024-01-01-000.mdsi")).unwrap();
        assert_ne!(ra.footer().layout_order, rb.footer().layout_order);
        assert_eq!(ra.read_all(&projection).unwrap(), rb.read_all(&projection).unwrap());
    }

    #[test]
    fn empirical_coverage_and_length_match_profile() {
        let profile = DatasetProfile {
            dense_features: 4,
            sparse_features: 4,
            scored_features: 0,
            coverage: 0.45,
            mean_sparse_len: 6.0,
            rows_per_partition: 20_000,
            partitions: 1,
            files_per_partition: 1,
            ..Default::default()
        };
        let rows = profile.rows_per_partition;
        let mut covered = 0u64;
        let mut lengths = 0u64;
        let mut sparse_covered = 0u64;
        for s in SampleGen::new(7, &profile, rows) {
            covered += (s.dense.len() + s.sparse.len()) as u64;
            sparse_covered += s.sparse.len() as u64;
            lengths += s.sparse.values().map(|v| v.len() as u64).sum::<u64>();
        }
        let coverage = covered as f64 / (rows * 8) as f64;
        assert!((coverage - 0.45).abs() < 0.01, "coverage {coverage}");
        let mean_len = lengths as f64 / sparse_covered as f64;
        assert!((mean_len - 6.0).abs() < 0.15, "mean length {mean_len}");
    }

    #[test]
    fn zero_sparse_profile_writes_only_dense_streams() {
        let profile = DatasetProfile {
            dense_features: 4,
            sparse_features: 0,
            scored_features: 0,
            rows_per_partition: 50,
            partitions: 1,
            files_per_partition: 1,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        gen_dataset(&profile, 1, dir.path(), &GenConfig::default()).unwrap();
        let reader = ColumnarReader::open(dir.path().join("part-2024-01-01-000.mdsi")).unwrap();
        for footer in &reader.meta().stripe_footers {
            for d in &footer.directory {
                assert!(!matches!(
                    d.kind,
                    crate::store::StreamKind::Lengths | crate::store::StreamKind::Scores
                ));
            }
        }
    }

    #[test]
    fn projections_are_popularity_biased() {
        let profile = DatasetProfile {
            dense_features: 180,
            sparse_features: 20,
            rows_per_partition: 10,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let manifest = gen_dataset(&profile, 21, dir.path(), &GenConfig::default()).unwrap();
        let projections = sample_projections(&manifest, 200, 20, 5);
        let rank_of: std::collections::HashMap<FeatureId, usize> = manifest
            .popularity_rank
            .iter()
            .enumerate()
            .map(|(r, &id)| (id, r))
            .collect();
        let mean_rank: f64 = projections
            .iter()
            .flat_map(|p| p.ids().iter())
            .map(|id| rank_of[id] as f64)
            .sum::<f64>()
            / (200.0 * 20.0);
        // Uniform sampling would sit near 99.5; Zipf(1.2) pulls well below.
        assert!(mean_rank < 70.0, "mean rank {mean_rank}");
    }

    #[test]
    fn default_graph_validates_against_its_projection() {
        let ids: Vec<FeatureId> = (0..10)
            .map(FeatureId::dense)
            .chain((0..6).map(FeatureId::sparse))
            .collect();
        let projection = FeatureProjection::new(ids).unwrap();
        let graph = default_graph(&projection).unwrap();
        assert!(!graph.is_empty());
        let spec = crate::model::SessionSpec {
            table: "synth".into(),
            partitions: vec!["2024-01-01".into()],
            projection: projection.clone(),
            graph,
            batch_size: 4,
            split_size: 64,
        };
        let features = projection
            .ids()
            .iter()
            .map(|&id| FeatureSpec {
                id,
                coverage: 1.0,
                mean_sparse_len: if id.kind == FeatureKind::Dense { 0.0 } else { 1.0 },
            })
            .collect();
        let schema = TableSchema::new("synth", "2024-01-01", features).unwrap();
        let report = crate::model::validate_session(&spec, &schema);
        assert!(report.is_ok(), "{:?}", report.issues);
    }
}
