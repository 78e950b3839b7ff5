use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, PartitionPlan, Shard};
use crate::error::{Error, Result};
use crate::seed::SeedTree;

/// `⌊n_l·f⌋` per label, topped up to `total` by largest fractional part.
fn stratified_counts(groups: &[Vec<usize>], frac: f64, total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = groups.iter().map(|g| g.len() as f64 * frac + 1e-9).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a].fract();
        let fb = quotas[b].fract();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let missing = total.saturating_sub(counts.iter().sum());
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientShards {
    pub train: Shard,
    pub test: Shard,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Stratified per-client split. The test set holds `⌊n·(1−ratio)⌋` samples,
/// and every label keeps `⌊n_l·(1−ratio)⌋` of them, so at the default ratio
/// any label with 4 or more samples is represented in the test set.
pub fn split_train_test(
    plan: &PartitionPlan,
    ds: &Dataset,
    ratio: f64,
    seed: u64,
) -> Result<Vec<ClientShards>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config("train_ratio", "must lie strictly between 0 and 1"));
    }
    let tree = SeedTree::new(seed);
    let mut out = Vec::with_capacity(plan.num_clients());
    for (client, idx) in plan.assignments.iter().enumerate() {
        if idx.len() < 4 {
            return Err(Error::config(
                "min_samples",
                format!("client {client} has {} samples; at least 4 are needed", idx.len()),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(tree.derive("split", 0, client as u64));
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
        for &i in idx {
            groups[ds.labels[i]].push(i);
        }
        groups.retain(|g| !g.is_empty());
        let test_frac = 1.0 - ratio;
        let n_test = (idx.len() as f64 * test_frac + 1e-9).floor() as usize;
        let per_label = stratified_counts(&groups, test_frac, n_test);
        let mut train_idx = Vec::new();
        let mut test_idx = Vec::new();
        for (group, k) in groups.iter_mut().zip(per_label) {
            group.shuffle(&mut rng);
            test_idx.extend_from_slice(&group[..k]);
            train_idx.extend_from_slice(&group[k..]);
        }
        train_idx.sort_unstable();
        test_idx.sort_unstable();
        out.push(ClientShards {
            train: ds.subset(&train_idx),
            test: ds.subset(&test_idx),
            train_idx,
            test_idx,
        });
    }
    Ok(out)
}
