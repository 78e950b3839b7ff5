use std::collections::BTreeSet;

use proptest::prelude::*;

use super::*;
use crate::autodiff::Tensor;

fn balanced_pool(num_classes: usize, per_class: usize) -> Dataset {
    let n = num_classes * per_class;
    let labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    let features = Tensor::new(vec![n, 1], (0..n).map(|i| i as f64).collect()).unwrap();
    Dataset::new(features, labels, num_classes).unwrap()
}

/// Brute-force audit: no index appears twice and every index is in range.
fn audit_disjoint(plan: &PartitionPlan, pool: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    for a in &plan.assignments {
        for &i in a {
            assert!(i < pool);
            assert!(seen.insert(i), "index {i} assigned twice");
        }
    }
    seen
}

fn label_set(ds: &Dataset, idx: &[usize]) -> BTreeSet<usize> {
    idx.iter().map(|&i| ds.labels[i]).collect()
}

#[test]
fn pathological_two_classes_each() {
    let ds = balanced_pool(10, 100);
    let plan = partition_pathological(&ds, 5, 2, 0).unwrap();
    for a in &plan.assignments {
        assert_eq!(label_set(&ds, a).len(), 2);
    }
    let seen = audit_disjoint(&plan, ds.len());
    assert_eq!(seen.len(), ds.len());
}

#[test]
fn pathological_all_classes() {
    let ds = balanced_pool(4, 30);
    let plan = partition_pathological(&ds, 3, 4, 5).unwrap();
    let seen = audit_disjoint(&plan, ds.len());
    assert_eq!(seen.len(), ds.len());
    for a in &plan.assignments {
        assert_eq!(label_set(&ds, a).len(), 4);
    }
}

#[test]
fn pathological_shards_are_unbalanced() {
    let ds = balanced_pool(10, 200);
    let plan = partition_pathological(&ds, 20, 2, 1).unwrap();
    let sizes: BTreeSet<usize> = plan.assignments.iter().map(Vec::len).collect();
    assert!(sizes.len() > 1);
    let seen = audit_disjoint(&plan, ds.len());
    assert_eq!(seen.len(), ds.len());
}

#[test]
fn pathological_rejects_infeasible() {
    let ds = balanced_pool(4, 3);
    assert!(matches!(
        partition_pathological(&ds, 4, 5, 0),
        Err(crate::Error::Config { .. })
    ));
    assert!(matches!(
        partition_pathological(&ds, 4, 0, 0),
        Err(crate::Error::Config { .. })
    ));
    // 20 clients × 2 classes over 4 classes needs 10 shards per class.
    assert!(matches!(
        partition_pathological(&ds, 20, 2, 0),
        Err(crate::Error::Config { .. })
    ));
}

#[test]
fn dirichlet_conserves_class_counts() {
    let ds = balanced_pool(5, 97);
    let plan = partition_dirichlet(&ds, 7, 0.5, 3, 1).unwrap();
    let seen = audit_disjoint(&plan, ds.len());
    assert_eq!(seen.len(), ds.len());
    for c in 0..5 {
        let total: usize = plan
            .assignments
            .iter()
            .map(|a| a.iter().filter(|&&i| ds.labels[i] == c).count())
            .sum();
        assert_eq!(total, 97);
    }
    for q in plan.proportions.as_ref().unwrap() {
        assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn dirichlet_large_beta_is_near_uniform() {
    // Read as: each share lies in [0.4, 0.6] of twice the equal share,
    // i.e. within ±20% of 1/N.
    let ds = balanced_pool(4, 400);
    let equal = 0.25;
    for seed in 0..10 {
        let plan = partition_dirichlet(&ds, 4, 1000.0, seed, 10).unwrap();
        for a in &plan.assignments {
            for c in 0..4 {
                let share = a.iter().filter(|&&i| ds.labels[i] == c).count() as f64 / 400.0;
                assert!(
                    (0.8 * equal..=1.2 * equal).contains(&share),
                    "seed {seed} class {c} share {share}"
                );
            }
        }
    }
}

#[test]
fn dirichlet_small_beta_leaves_gaps() {
    let ds = balanced_pool(10, 200);
    for seed in 0..10 {
        let plan = partition_dirichlet(&ds, 20, 0.1, seed, 10).unwrap();
        let gap = plan.assignments.iter().any(|a| label_set(&ds, a).len() < 10);
        assert!(gap, "seed {seed}");
    }
}

#[test]
fn dirichlet_gives_up_when_impossible() {
    let ds = balanced_pool(2, 10);
    match partition_dirichlet(&ds, 5, 0.5, 0, 10) {
        Err(crate::Error::Config { key, message }) => {
            assert_eq!(key, "beta");
            assert!(message.contains("larger beta"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        partition_dirichlet(&ds, 2, 0.0, 0, 1),
        Err(crate::Error::Config { .. })
    ));
}

#[test]
fn plans_are_deterministic() {
    let ds = balanced_pool(6, 50);
    let a = partition_dirichlet(&ds, 5, 0.3, 11, 5).unwrap();
    let b = partition_dirichlet(&ds, 5, 0.3, 11, 5).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_sidecar(), b.to_sidecar());
    let p = partition_pathological(&ds, 5, 2, 11).unwrap();
    let q = partition_pathological(&ds, 5, 2, 11).unwrap();
    assert_eq!(p, q);
}

#[test]
fn sidecar_format() {
    let plan = PartitionPlan {
        assignments: vec![vec![0, 3], vec![1, 2, 4]],
        scheme: PartitionScheme::Dirichlet { beta: 1.0 },
        seed: 0,
        proportions: None,
    };
    assert_eq!(plan.to_sidecar(), "0 0 3\n1 1 2 4\n");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.txt");
    plan.write_sidecar(&path).unwrap();
    assert_eq!(std::fs::read_to_string(path).unwrap(), plan.to_sidecar());
}

fn single_client_plan(idx: Vec<usize>) -> PartitionPlan {
    PartitionPlan {
        assignments: vec![idx],
        scheme: PartitionScheme::Pathological { classes_per_client: 1 },
        seed: 0,
        proportions: None,
    }
}

#[test]
fn split_hundred_is_exact() {
    let ds = balanced_pool(10, 10);
    let shards = split_train_test(&single_client_plan((0..100).collect()), &ds, 0.75, 0).unwrap();
    assert_eq!(shards[0].train.len(), 75);
    assert_eq!(shards[0].test.len(), 25);
}

#[test]
fn split_five_of_one_label() {
    let ds = balanced_pool(1, 5);
    let shards = split_train_test(&single_client_plan((0..5).collect()), &ds, 0.75, 0).unwrap();
    assert_eq!(shards[0].train.len(), 4);
    assert_eq!(shards[0].test.len(), 1);
}

#[test]
fn split_rejects_tiny_clients() {
    let ds = balanced_pool(1, 5);
    assert!(matches!(
        split_train_test(&single_client_plan(vec![0, 1, 2]), &ds, 0.75, 0),
        Err(crate::Error::Config { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn split_conserves_and_covers_labels(
        counts in proptest::collection::vec(1usize..30, 1..6),
        seed in 0u64..1000,
    ) {
        let mut labels = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            labels.extend(std::iter::repeat(c).take(n));
        }
        let n = labels.len();
        prop_assume!(n >= 4);
        let ds = Dataset::new(
            Tensor::new(vec![n, 1], vec![0.0; n]).unwrap(),
            labels,
            counts.len(),
        ).unwrap();
        let shards = split_train_test(&single_client_plan((0..n).collect()), &ds, 0.75, seed).unwrap();
        let s = &shards[0];
        let train: BTreeSet<usize> = s.train_idx.iter().copied().collect();
        let test: BTreeSet<usize> = s.test_idx.iter().copied().collect();
        prop_assert!(train.is_disjoint(&test));
        prop_assert_eq!(train.len() + test.len(), n);
        prop_assert_eq!(test.len(), n / 4);
        for (c, &k) in counts.iter().enumerate() {
            if k >= 4 {
                prop_assert!(s.test.labels.contains(&c));
            }
        }
    }

    #[test]
    fn dirichlet_plans_partition_the_pool(
        clients in 1usize..8,
        beta in 0.05f64..5.0,
        seed in 0u64..1000,
    ) {
        let ds = balanced_pool(4, 40);
        if let Ok(plan) = partition_dirichlet(&ds, clients, beta, seed, 0) {
            let seen = audit_disjoint(&plan, ds.len());
            prop_assert_eq!(seen.len(), ds.len());
        }
    }

    #[test]
    fn pathological_label_sets_have_m_classes(
        clients in 1usize..12,
        m in 1usize..5,
        seed in 0u64..1000,
    ) {
        let ds = balanced_pool(5, 60);
        let plan = partition_pathological(&ds, clients, m, seed).unwrap();
        audit_disjoint(&plan, ds.len());
        for a in &plan.assignments {
            prop_assert_eq!(label_set(&ds, a).len(), m);
        }
    }
}
