//! Physical feature ordering policies and popularity accounting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::FeatureOrderPolicy;
use crate::model::{FeatureId, FeatureProjection, TableSchema};

/// Resolves the on-disk feature order for a file. Returns the order plus the
/// popularity snapshot recorded in the footer (empty unless the policy is
/// popularity-based).
pub fn resolve_layout(
    schema: &TableSchema,
    policy: &FeatureOrderPolicy,
) -> (Vec<FeatureId>, Vec<(FeatureId, u64)>) {
    let mut ids: Vec<FeatureId> = schema.feature_ids().collect();
    match policy {
        FeatureOrderPolicy::SchemaOrder => (ids, Vec::new()),
        FeatureOrderPolicy::Random { seed } => {
            let mut rng = ChaCha12Rng::seed_from_u64(*seed);
            ids.shuffle(&mut rng);
            (ids, Vec::new())
        }
        FeatureOrderPolicy::Popularity { weights } => {
            let lookup: std::collections::HashMap<FeatureId, u64> =
                weights.iter().copied().collect();
            let weight_of = |id: &FeatureId| lookup.get(id).copied().unwrap_or(0);
            ids.sort_by(|a, b| weight_of(b).cmp(&weight_of(a)).then(a.cmp(b)));
            let snapshot = ids.iter().map(|id| (*id, weight_of(id))).collect();
            (ids, snapshot)
        }
    }
}

/// Counts, for each feature in `universe`, how many of the most recent
/// `window` sessions projected it. Sorted weight-descending with ascending
/// feature id breaking ties, ready to feed a popularity layout.
pub fn reorder_weights(
    access_log: &[(u64, FeatureProjection)],
    window: usize,
    universe: &[FeatureId],
) -> Vec<(FeatureId, u64)> {
    let start = access_log.len().saturating_sub(window);
    let mut counts: std::collections::HashMap<FeatureId, u64> =
        universe.iter().map(|&id| (id, 0)).collect();
    for (_, projection) in &access_log[start..] {
        for id in projection.ids() {
            if let Some(c) = counts.get_mut(id) {
                *c += 1;
            }
        }
    }
    let mut out: Vec<(FeatureId, u64)> = universe.iter().map(|&id| (id, counts[&id])).collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}
