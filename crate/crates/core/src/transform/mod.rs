//! Preprocessing operator catalog and the per-feature transform graph.
//!
//! Every operator is a pure function of its inputs and parameters. The
//! scalar forms live here so tests can check them against independent
//! oracles; [`exec`] lifts them element-wise over mini-batches.

mod exec;
mod graph;

pub use exec::{execute_graph, execute_rowgroup, ExecError, ExecStats, OpClass};
pub use graph::{GraphError, GraphInput, TransformGraph, TransformNode};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{fnv1a, fnv1a_i64};

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("box-cox input {0} outside (0, inf)")]
    BoxCoxDomain(f64),
}

/// Bucket index of `x` given strictly increasing borders: the count of
/// borders at or below `x`.
pub fn bucketize(x: f64, borders: &[f64]) -> u32 {
    borders.iter().take_while(|&&b| b <= x).count() as u32
}

/// Normalizes a categorical id list into `[0, max)` by hashing each id.
pub fn sigrid_hash(ids: &[i64], max: u64) -> Vec<i64> {
    ids.iter().map(|&id| (fnv1a_i64(id) % max) as i64).collect()
}

/// Keeps the first `x` entries of a list.
pub fn first_x(ids: &[i64], x: u32) -> Vec<i64> {
    ids.iter().take(x as usize).copied().collect()
}

/// Logit transform with clamping: `ln(q / (1 - q))`, `q = clamp(p, eps, 1-eps)`.
pub fn logit(p: f64, eps: f64) -> f64 {
    let q = p.clamp(eps, 1.0 - eps);
    (q / (1.0 - q)).ln()
}

/// Box-Cox power transform; the `lambda = 0` branch is `ln x`.
pub fn box_cox(x: f64, lambda: f64) -> Result<f64, TransformError> {
    if x <= 0.0 || !x.is_finite() {
        return Err(TransformError::BoxCoxDomain(x));
    }
    if lambda == 0.0 {
        Ok(x.ln())
    } else {
        Ok((x.powf(lambda) - 1.0) / lambda)
    }
}

/// One-hot encodes `index` into a vector of `cardinality` floats. An
/// out-of-range index yields the all-zeros vector.
pub fn onehot(index: u32, cardinality: u32) -> Vec<f32> {
    let mut v = vec![0.0f32; cardinality as usize];
    if index < cardinality {
        v[index as usize] = 1.0;
    }
    v
}

/// `std::clamp` over f64.
pub fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    x.clamp(lo, hi)
}

/// Modulus that always lands in `[0, m)`.
pub fn positive_modulus(x: i64, m: i64) -> i64 {
    ((x % m) + m) % m
}

/// Pairs each id with its position.
pub fn enumerate_ids(ids: &[i64]) -> Vec<(u32, i64)> {
    ids.iter().enumerate().map(|(i, &id)| (i as u32, id)).collect()
}

/// Elements of `a`, in `a`'s order with duplicates collapsed, that also
/// occur in `b`.
pub fn id_list_intersect(a: &[i64], b: &[i64]) -> Vec<i64> {
    let b_set: std::collections::HashSet<i64> = b.iter().copied().collect();
    let mut seen = std::collections::HashSet::new();
    a.iter()
        .filter(|&&id| b_set.contains(&id) && seen.insert(id))
        .copied()
        .collect()
}

/// Fixed-table id remapping with a default for misses.
pub fn map_id(id: i64, table: &BTreeMap<i64, i64>, default: i64) -> i64 {
    table.get(&id).copied().unwrap_or(default)
}

/// Hashes each window of `n` consecutive ids over their concatenated
/// little-endian bytes. Yields `max(0, len - n + 1)` ids.
pub fn ngram(ids: &[i64], n: u32) -> Vec<i64> {
    let n = n as usize;
    if n == 0 || ids.len() < n {
        return Vec::new();
    }
    ids.windows(n)
        .map(|w| {
            let mut bytes = Vec::with_capacity(n * 8);
            for &id in w {
                bytes.extend_from_slice(&id.to_le_bytes());
            }
            fnv1a(&bytes) as i64
        })
        .collect()
}

/// Hash of every pair `(a_i, b_j)` in a-major order; `|a| * |b|` outputs.
pub fn cartesian(a: &[i64], b: &[i64]) -> Vec<i64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        for &y in b {
            let mut bytes = [0u8; 16];
            bytes[..8].copy_from_slice(&x.to_le_bytes());
            bytes[8..].copy_from_slice(&y.to_le_bytes());
            out.push(fnv1a(&bytes) as i64);
        }
    }
    out
}

/// Arithmetic applied to the score column of a scored list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScoreOp {
    Sum,
    Scale(f32),
    Max,
}

/// Result of [`compute_score`]: a reduction or a rescaled list.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreResult {
    Scalar(f32),
    List(Vec<(i64, f32)>),
}

/// Applies `op` to the scores of a `(id, score)` list. Reductions of an
/// empty list yield 0.
pub fn compute_score(scored: &[(i64, f32)], op: ScoreOp) -> ScoreResult {
    match op {
        ScoreOp::Sum => ScoreResult::Scalar(scored.iter().map(|&(_, s)| s).sum()),
        ScoreOp::Max => ScoreResult::Scalar(
            scored.iter().map(|&(_, s)| s).fold(0.0f32, f32::max),
        ),
        ScoreOp::Scale(c) => {
            ScoreResult::List(scored.iter().map(|&(id, s)| (id, s * c)).collect())
        }
    }
}

/// Hour of day in `[0, 24)` for a unix timestamp shifted by `offset` seconds.
pub fn get_local_hour(ts: i64, offset: i64) -> u8 {
    let day = positive_modulus(ts.wrapping_add(offset), 86_400);
    (day / 3_600) as u8
}

/// Deterministic keep/drop decision for row sampling: keep iff
/// `H(seed || row) / 2^64 < rate`.
pub fn sampling_keep(seed: u64, row_index: u64, rate: f64) -> bool {
    let mut bytes = [0u8; 16];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..].copy_from_slice(&row_index.to_le_bytes());
    (fnv1a(&bytes) as f64) / 18_446_744_073_709_551_616.0 < rate
}

/// One operator instance with its parameters, as carried by a graph node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Operator {
    Bucketize { borders: Vec<f64> },
    SigridHash { max: u64 },
    FirstX { x: u32 },
    Logit { eps: f64 },
    BoxCox { lambda: f64 },
    Onehot { cardinality: u32 },
    Clamp { lo: f64, hi: f64 },
    PositiveModulus { modulus: i64 },
    Enumerate,
    IdListIntersect,
    MapId { table: BTreeMap<i64, i64>, default: i64 },
    Ngram { n: u32 },
    Cartesian,
    ComputeScore { op: ScoreOp },
    GetLocalHour { utc_offset: i64 },
    Sampling { rate: f64, seed: u64 },
}

impl Operator {
    /// Manifest keyword for this operator.
    pub fn name(&self) -> &'static str {
        match self {
            Operator::Bucketize { .. } => "bucketize",
            Operator::SigridHash { .. } => "sigridhash",
            Operator::FirstX { .. } => "firstx",
            Operator::Logit { .. } => "logit",
            Operator::BoxCox { .. } => "boxcox",
            Operator::Onehot { .. } => "onehot",
            Operator::Clamp { .. } => "clamp",
            Operator::PositiveModulus { .. } => "posmod",
            Operator::Enumerate => "enumerate",
            Operator::IdListIntersect => "idlistintersect",
            Operator::MapId { .. } => "mapid",
            Operator::Ngram { .. } => "ngram",
            Operator::Cartesian => "cartesian",
            Operator::ComputeScore { .. } => "computescore",
            Operator::GetLocalHour { .. } => "getlocalhour",
            Operator::Sampling { .. } => "sampling",
        }
    }

    /// Number of inputs the operator consumes; `None` means one or more.
    pub fn arity(&self) -> Option<usize> {
        match self {
            Operator::Sampling { .. } => Some(0),
            Operator::IdListIntersect | Operator::Cartesian => Some(2),
            Operator::Ngram { .. } => None,
            _ => Some(1),
        }
    }

    /// Cost-accounting class, mirroring how transform cycles are reported.
    pub fn class(&self) -> OpClass {
        match self {
            Operator::Logit { .. }
            | Operator::BoxCox { .. }
            | Operator::Onehot { .. }
            | Operator::Clamp { .. } => OpClass::DenseNorm,
            Operator::SigridHash { .. }
            | Operator::FirstX { .. }
            | Operator::PositiveModulus { .. }
            | Operator::ComputeScore { .. } => OpClass::SparseNorm,
            Operator::Bucketize { .. }
            | Operator::Enumerate
            | Operator::IdListIntersect
            | Operator::MapId { .. }
            | Operator::Ngram { .. }
            | Operator::Cartesian
            | Operator::GetLocalHour { .. } => OpClass::FeatureGen,
            Operator::Sampling { .. } => OpClass::Selection,
        }
    }

    /// Validates operator parameters.
    pub fn check_params(&self) -> Result<(), GraphError> {
        let bad = |what: &str| Err(GraphError::BadParams(self.name(), what.to_string()));
        match self {
            Operator::Bucketize { borders } => {
                if borders.is_empty() {
                    return bad("borders must be nonempty");
                }
                if borders.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("borders must be strictly increasing");
                }
            }
            Operator::SigridHash { max } => {
                if *max == 0 {
                    return bad("max must be positive");
                }
            }
            Operator::Logit { eps } => {
                if !(*eps > 0.0 && *eps < 0.5) {
                    return bad("eps must be in (0, 0.5)");
                }
            }
            Operator::Onehot { cardinality } => {
                if *cardinality == 0 {
                    return bad("cardinality must be positive");
                }
            }
            Operator::Clamp { lo, hi } => {
                if lo > hi {
                    return bad("lo must not exceed hi");
                }
            }
            Operator::PositiveModulus { modulus } => {
                if *modulus <= 0 {
                    return bad("modulus must be positive");
                }
            }
            Operator::Ngram { n } => {
                if *n == 0 {
                    return bad("n must be at least 1");
                }
            }
            Operator::Sampling { rate, .. } => {
                if !(0.0..=1.0).contains(rate) {
                    return bad("rate must be in [0, 1]");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bucketize_counts_borders_at_or_below() {
        let borders = [10.0, 100.0];
        assert_eq!(bucketize(5.0, &borders), 0);
        assert_eq!(bucketize(10.0, &borders), 1);
        assert_eq!(bucketize(1000.0, &borders), 2);
    }

    #[test]
    fn sigrid_hash_max_one_is_all_zeros() {
        assert_eq!(sigrid_hash(&[1, -5, 900], 1), vec![0, 0, 0]);
        assert_eq!(sigrid_hash(&[], 1000), Vec::<i64>::new());
    }

    #[test]
    fn sigrid_hash_matches_hand_computed_fnv() {
        // FNV-1a over the 8 LE bytes of 7, reduced mod 1000.
        let h = fnv1a(&7i64.to_le_bytes());
        assert_eq!(sigrid_hash(&[7], 1000), vec![(h % 1000) as i64]);
    }

    #[test]
    fn first_x_truncates() {
        assert_eq!(first_x(&[3, 1, 4, 1, 5], 3), vec![3, 1, 4]);
        assert_eq!(first_x(&[3, 1, 4], 0), Vec::<i64>::new());
        assert_eq!(first_x(&[3, 1], 9), vec![3, 1]);
    }

    #[test]
    fn logit_midpoint_and_clamping() {
        assert_eq!(logit(0.5, 1e-6), 0.0);
        let eps = 1e-6f64;
        let expected = (eps / (1.0 - eps)).ln();
        assert!((logit(0.0, eps) - expected).abs() < 1e-15);
        // Symmetry at the clamp edges; a power-of-two epsilon keeps 1 - eps
        // exactly representable so the two logits are true negatives.
        let eps = 2f64.powi(-10);
        assert!((logit(1.0 - eps, eps) + logit(eps, eps)).abs() < 1e-12);
    }

    #[test]
    fn box_cox_identity_points_and_limit() {
        assert_eq!(box_cox(1.0, 0.7).unwrap(), 0.0);
        assert_eq!(box_cox(3.5, 1.0).unwrap(), 2.5);
        // lambda -> 0 approaches ln x.
        let near = box_cox(2.0, 1e-8).unwrap();
        assert!((near - 2.0f64.ln()).abs() < 1e-7);
        assert!(box_cox(0.0, 0.5).is_err());
        assert!(box_cox(-2.0, 0.5).is_err());
    }

    #[test]
    fn onehot_in_and_out_of_range() {
        assert_eq!(onehot(2, 4), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(onehot(9, 4), vec![0.0; 4]);
        assert_eq!(onehot(0, 1), vec![1.0]);
    }

    #[test]
    fn clamp_matches_std() {
        assert_eq!(clamp(5.0, 0.0, 3.0), 3.0);
        assert_eq!(clamp(-1.0, 0.0, 3.0), 0.0);
        assert_eq!(clamp(2.0, 0.0, 3.0), 2.0);
    }

    #[test]
    fn positive_modulus_never_negative() {
        assert_eq!(positive_modulus(-3, 5), 2);
        assert_eq!(positive_modulus(7, 5), 2);
        assert_eq!(positive_modulus(0, 5), 0);
    }

    #[test]
    fn enumerate_pairs_indices() {
        assert_eq!(enumerate_ids(&[]), Vec::<(u32, i64)>::new());
        assert_eq!(enumerate_ids(&[10, 20]), vec![(0, 10), (1, 20)]);
    }

    #[test]
    fn intersect_keeps_a_order_and_dedups() {
        assert_eq!(id_list_intersect(&[1, 2, 3], &[2, 3, 4]), vec![2, 3]);
        assert_eq!(id_list_intersect(&[1, 2], &[]), Vec::<i64>::new());
        assert_eq!(id_list_intersect(&[2, 2, 3], &[2]), vec![2]);
    }

    #[test]
    fn map_id_hit_and_miss() {
        let table: BTreeMap<i64, i64> = [(1, 10), (2, 20)].into_iter().collect();
        assert_eq!(map_id(1, &table, -1), 10);
        assert_eq!(map_id(5, &table, -1), -1);
        assert_eq!(map_id(5, &BTreeMap::new(), 7), 7);
    }

    #[test]
    fn ngram_windows_match_byte_concat_oracle() {
        let ids = [11i64, 22, 33];
        let out = ngram(&ids, 2);
        let expect = |a: i64, b: i64| {
            let mut bytes = Vec::new();
            bytes.extend_from_slice(&a.to_le_bytes());
            bytes.extend_from_slice(&b.to_le_bytes());
            fnv1a(&bytes) as i64
        };
        assert_eq!(out, vec![expect(11, 22), expect(22, 33)]);
        // Unigram is the raw 64-bit hash of each id.
        assert_eq!(ngram(&ids, 1), ids.iter().map(|&v| fnv1a_i64(v) as i64).collect::<Vec<_>>());
        assert_eq!(ngram(&ids, 5), Vec::<i64>::new());
    }

    #[test]
    fn cartesian_is_a_major_and_sized() {
        let out = cartesian(&[1, 2], &[3]);
        let expect = |a: i64, b: i64| {
            let mut bytes = Vec::new();
            bytes.extend_from_slice(&a.to_le_bytes());
            bytes.extend_from_slice(&b.to_le_bytes());
            fnv1a(&bytes) as i64
        };
        assert_eq!(out, vec![expect(1, 3), expect(2, 3)]);
        assert!(cartesian(&[], &[1, 2]).is_empty());
        assert_eq!(cartesian(&[1, 2, 3], &[4, 5]).len(), 6);
    }

    #[test]
    fn compute_score_variants() {
        assert_eq!(compute_score(&[], ScoreOp::Sum), ScoreResult::Scalar(0.0));
        assert_eq!(
            compute_score(&[(1, 1.0), (2, 2.0)], ScoreOp::Scale(2.0)),
            ScoreResult::List(vec![(1, 2.0), (2, 4.0)])
        );
        // Max agrees with a fold.
        let scored = [(1, 0.25f32), (2, 4.5), (3, 1.0)];
        let expect = scored.iter().fold(0.0f32, |m, &(_, s)| m.max(s));
        assert_eq!(compute_score(&scored, ScoreOp::Max), ScoreResult::Scalar(expect));
    }

    #[test]
    fn local_hour_wraps_modularly() {
        assert_eq!(get_local_hour(0, 0), 0);
        assert_eq!(get_local_hour(3600, 0), 1);
        assert_eq!(get_local_hour(0, -3600), 23);
    }

    #[test]
    fn sampling_extremes() {
        for row in 0..100 {
            assert!(sampling_keep(42, row, 1.0));
            assert!(!sampling_keep(42, row, 0.0));
        }
    }
}
