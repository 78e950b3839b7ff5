use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

const DIRICHLET_ATTEMPTS: usize = 100;
const SHARD_JITTER: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum PartitionScheme {
    Pathological { classes_per_client: usize },
    Dirichlet { beta: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionPlan {
    /// Pool indices per client, each list sorted ascending.
    pub assignments: Vec<Vec<usize>>,
    pub scheme: PartitionScheme,
    pub seed: u64,
    /// Dirichlet only: `proportions[c][i]` is client `i`'s share of class `c`
    /// in the accepted draw.
    pub proportions: Option<Vec<Vec<f64>>>,
}

impl PartitionPlan {
    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn assigned(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }

    pub fn check_min_samples(&self, min_samples: usize) -> Result<()> {
        match self.assignments.iter().position(|a| a.len() < min_samples) {
            Some(i) => Err(Error::config(
                "min_samples",
                format!(
                    "client {i} received {} samples, fewer than {min_samples}",
                    self.assignments[i].len()
                ),
            )),
            None => Ok(()),
        }
    }

    /// One line per client: `client_id idx idx ...`.
    pub fn to_sidecar(&self) -> String {
        let mut out = String::new();
        for (i, a) in self.assignments.iter().enumerate() {
            out.push_str(&i.to_string());
            for idx in a {
                out.push(' ');
                out.push_str(&idx.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        crate::output::write_atomic(path, self.to_sidecar().as_bytes())
    }
}

/// Splits `total` into `weights.len()` integer parts proportional to
/// `weights`, handing leftover units to the largest fractional parts
/// (ties to the lower index).
pub(crate) fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Label-sorted shard scheme: each class is cut into `⌈N·m/C⌉` jittered
/// shards and client `i` draws one shard from each of the classes
/// `perm[(i·m + j) mod C]`, `j < m`. Shards nobody drew go round-robin to
/// the holders of that class, so label sets stay at exactly `m` classes.
pub fn partition_pathological(
    ds: &Dataset,
    num_clients: usize,
    classes_per_client: usize,
    seed: u64,
) -> Result<PartitionPlan> {
    let c = ds.num_classes;
    let m = classes_per_client;
    if num_clients == 0 {
        return Err(Error::config("num_clients", "must be positive"));
    }
    if m == 0 || m > c {
        return Err(Error::config(
            "classes_per_client",
            format!("must be in 1..={c}, got {m}"),
        ));
    }
    let shards_per_class = (num_clients * m).div_ceil(c);
    let by_class = ds.indices_by_class();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..c).collect();
    perm.shuffle(&mut rng);

    let mut holders = vec![Vec::new(); c];
    for i in 0..num_clients {
        for j in 0..m {
            holders[perm[(i * m + j) % c]].push(i);
        }
    }

    let mut assignments = vec![Vec::new(); num_clients];
    for class in 0..c {
        let idx = &by_class[class];
        let jitter: Vec<f64> = (0..shards_per_class)
            .map(|_| 1.0 + rng.random_range(-SHARD_JITTER..=SHARD_JITTER))
            .collect();
        if holders[class].is_empty() {
            continue;
        }
        if idx.len() < shards_per_class {
            return Err(Error::config(
                "classes_per_client",
                format!(
                    "class {class} has {} samples, cannot cut {shards_per_class} shards",
                    idx.len()
                ),
            ));
        }
        let mut sizes = largest_remainder(idx.len() - shards_per_class, &jitter);
        sizes.iter_mut().for_each(|s| *s += 1);
        let mut start = 0;
        for (k, size) in sizes.into_iter().enumerate() {
            let owner = holders[class][k % holders[class].len()];
            assignments[owner].extend_from_slice(&idx[start..start + size]);
            start += size;
        }
    }
    for a in &mut assignments {
        a.sort_unstable();
    }
    Ok(PartitionPlan {
        assignments,
        scheme: PartitionScheme::Pathological { classes_per_client },
        seed,
        proportions: None,
    })
}

fn dirichlet_draw(gamma: &Gamma<f64>, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let s: f64 = g.iter().sum();
        if s > 0.0 && s.is_finite() {
            return g.into_iter().map(|x| x / s).collect();
        }
    }
}

/// Per-class Dirichlet(β) shares, allocated as contiguous chunks of the
/// shuffled class indices. Draws are repeated until every client holds at
/// least `min_samples`.
pub fn partition_dirichlet(
    ds: &Dataset,
    num_clients: usize,
    beta: f64,
    seed: u64,
    min_samples: usize,
) -> Result<PartitionPlan> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::config("beta", "must be a positive finite number"));
    }
    if num_clients == 0 {
        return Err(Error::config("num_clients", "must be positive"));
    }
    let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::config("beta", e.to_string()))?;
    let by_class = ds.indices_by_class();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..DIRICHLET_ATTEMPTS {
        let mut assignments = vec![Vec::new(); num_clients];
        let mut proportions = Vec::with_capacity(by_class.len());
        for idx in &by_class {
            let q = dirichlet_draw(&gamma, num_clients, &mut rng);
            let mut shuffled = idx.clone();
            shuffled.shuffle(&mut rng);
            let counts = largest_remainder(shuffled.len(), &q);
            let mut start = 0;
            for (i, n) in counts.into_iter().enumerate() {
                assignments[i].extend_from_slice(&shuffled[start..start + n]);
                start += n;
            }
            proportions.push(q);
        }
        if assignments.iter().all(|a| a.len() >= min_samples) {
            for a in &mut assignments {
                a.sort_unstable();
            }
            return Ok(PartitionPlan {
                assignments,
                scheme: PartitionScheme::Dirichlet { beta },
                seed,
                proportions: Some(proportions),
            });
        }
    }
    Err(Error::config(
        "beta",
        format!(
            "no draw gave every client {min_samples} samples after {DIRICHLET_ATTEMPTS} attempts; \
             use a larger beta or fewer clients"
        ),
    ))
}
