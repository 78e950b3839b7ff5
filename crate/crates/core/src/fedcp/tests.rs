use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::{numeric_gradients, relative_error};
use crate::autodiff::ParamSet;
use crate::nn::tests::{arch, cpn_loop, linear_loop, mlp_loop, random};
use crate::nn::{init_params, ArchSpec};

fn toy_shard(rng: &mut ChaCha8Rng, n: usize, d: usize, c: usize) -> Shard {
    Shard {
        features: random(rng, n, d),
        labels: (0..n).map(|_| rng.random_range(0..c)).collect(),
    }
}

fn toy_client(a: &ArchSpec, seed: u64, n: usize) -> ClientState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let mut bundle = init_params(a, seed).unwrap();
    // Give every part distinct, non-trivial values so that no gradient
    // path is accidentally zero.
    for l in &mut bundle.personal_fe.layers {
        l.bias = random(&mut rng, 1, l.out_dim()).reshape(&[l.out_dim()]).unwrap();
    }
    let k = a.feature_dim;
    bundle.personal_head = Head::new(
        random(&mut rng, a.num_classes, k),
        random(&mut rng, 1, a.num_classes).reshape(&[a.num_classes]).unwrap(),
    )
    .unwrap();
    bundle.global_head = Head::new(
        random(&mut rng, a.num_classes, k),
        random(&mut rng, 1, a.num_classes).reshape(&[a.num_classes]).unwrap(),
    )
    .unwrap();
    bundle.global_fe = crate::nn::FeatureExtractor::init(a.input_dim, &a.hidden, k, &mut rng);
    if let Some(cpn) = bundle.cpn.as_mut() {
        cpn.ln_gain = random(&mut rng, 1, 2 * k).map(|x| 1.0 + 0.3 * x).reshape(&[2 * k]).unwrap();
        cpn.ln_bias = random(&mut rng, 1, 2 * k).map(|x| 0.3 * x).reshape(&[2 * k]).unwrap();
    }
    let train = toy_shard(&mut rng, n, a.input_dim, a.num_classes);
    let test = toy_shard(&mut rng, n, a.input_dim, a.num_classes);
    ClientState::new(0, bundle, train, test, 1.0)
}

fn hyper(lambda: f64, bandwidth: Bandwidth) -> LocalHyper {
    LocalHyper {
        lambda,
        epochs: 1,
        batch_size: 4,
        lr: 0.1,
        bandwidth,
    }
}

#[test]
fn client_vector_cases() {
    let h = Head::new(
        Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(),
        Tensor::vector(vec![10.0, 20.0]),
    )
    .unwrap();
    assert_eq!(client_vector(&h).data(), &[4.0, 6.0]);
    let z = Head::new(Tensor::zeros(&[3, 2]), Tensor::zeros(&[3])).unwrap();
    assert_eq!(client_vector(&z).data(), &[0.0, 0.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = random(&mut rng, 10, 32);
    let head = Head::new(w.clone(), Tensor::zeros(&[10])).unwrap();
    let v = client_vector(&head);
    for k in 0..32 {
        let mut acc = 0.0;
        for c in 0..10 {
            acc += w.at(c, k);
        }
        assert!((v.data()[k] - acc).abs() <= 1e-12);
    }
}

#[test]
fn cpn_input_cases() {
    let c = cpn_input(&Tensor::vector(vec![3.0, 4.0]), &Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap()).unwrap();
    assert!((c.data()[0] - 0.6).abs() < 1e-15 && (c.data()[1] - 0.8).abs() < 1e-15);
    let c = cpn_input(&Tensor::vector(vec![1.0, 0.0]), &Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap();
    assert_eq!(c.data(), &[1.0, 0.0]);
    let h = Tensor::from_rows(&[vec![2.0, -4.0, 6.0, 8.0]]).unwrap();
    let c = cpn_input(&Tensor::zeros(&[4]), &h).unwrap();
    assert_eq!(c.data(), &[1.0, -2.0, 3.0, 4.0]);
    assert!(cpn_input(&Tensor::zeros(&[3]), &h).is_err());
}

#[test]
fn tied_heads_ignore_the_policy() {
    let a = arch(5, vec![6], 4, 3);
    let mut client = toy_client(&a, 1, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = random(&mut rng, 3, 4);
    let b = Tensor::vector(vec![0.4, -1.0, 2.0]);
    let half = Head::new(w.clone(), b.map(|x| x / 2.0)).unwrap();
    client.bundle.global_head = half.clone();
    client.bundle.personal_head = half;
    client.refresh_v();
    let x = random(&mut rng, 6, 5);
    let out = fedcp_forward(&client, &x, &Behavior::FEDCP).unwrap();
    for i in 0..6 {
        let expect = linear_loop(&w, &b, out.h.row(i));
        for c in 0..3 {
            assert!((out.logits.at(i, c) - expect[c]).abs() <= 1e-10);
        }
    }
}

#[test]
fn saturated_policy_routes_to_global_head() {
    let a = ArchSpec {
        cpn: crate::nn::CpnSpec {
            activation: crate::nn::Activation::Relu,
            norm: crate::nn::Norm::None,
        },
        ..arch(5, vec![], 4, 3)
    };
    let mut client = toy_client(&a, 3, 4);
    let cpn = client.bundle.cpn.as_mut().unwrap();
    cpn.fc.weight = Tensor::zeros(&[8, 4]);
    cpn.fc.bias = Tensor::vector((0..8).map(|j| if j % 2 == 0 { 800.0 } else { 0.0 }).collect());
    let x = random(&mut ChaCha8Rng::seed_from_u64(3), 5, 5);
    let out = fedcp_forward(&client, &x, &Behavior::FEDCP).unwrap();
    let p = out.policy.unwrap();
    assert!(p.r.data().iter().all(|&r| r == 1.0));
    let gh = &client.bundle.global_head;
    let pb = client.bundle.personal_head.bias();
    for i in 0..5 {
        let g = linear_loop(gh.weight(), gh.bias(), out.h.row(i));
        for c in 0..3 {
            assert!((out.logits.at(i, c) - (g[c] + pb.data()[c])).abs() <= 1e-12);
        }
    }
}

/// The full inference pipeline written with plain loops.
fn pipeline_loop(client: &ClientState, x: &[f64]) -> Vec<f64> {
    let b = &client.bundle;
    let h = mlp_loop(&b.personal_fe, x);
    let norm = client.v.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let c: Vec<f64> = h.iter().zip(client.v.data()).map(|(h, v)| h * v / norm).collect();
    let (r, s) = cpn_loop(b.cpn.as_ref().unwrap(), &c);
    let rh: Vec<f64> = h.iter().zip(&r).map(|(h, r)| h * r).collect();
    let sh: Vec<f64> = h.iter().zip(&s).map(|(h, s)| h * s).collect();
    let g = linear_loop(b.global_head.weight(), b.global_head.bias(), &rh);
    let p = linear_loop(b.personal_head.weight(), b.personal_head.bias(), &sh);
    g.iter().zip(&p).map(|(a, b)| a + b).collect()
}

#[test]
fn forward_matches_loop_oracle() {
    for seed in 0..5 {
        let a = arch(6, vec![7, 5], 4, 3);
        let client = toy_client(&a, seed, 3);
        let x = random(&mut ChaCha8Rng::seed_from_u64(seed + 50), 5, 6);
        let out = fedcp_forward(&client, &x, &Behavior::FEDCP).unwrap();
        for i in 0..5 {
            let expect = pipeline_loop(&client, x.row(i));
            for c in 0..3 {
                assert!((out.logits.at(i, c) - expect[c]).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn ablation_routings_match_their_definitions() {
    let a = arch(5, vec![6], 4, 3);
    let mut client = toy_client(&a, 7, 4);
    let x = random(&mut ChaCha8Rng::seed_from_u64(8), 3, 5);
    let b = client.bundle.clone();
    let h = crate::nn::extract_features(&b.personal_fe, &x).unwrap();

    let dual = Behavior { routing: Routing::DualHead, align: true };
    let out = fedcp_forward(&client, &x, &dual).unwrap();
    for i in 0..3 {
        let g = linear_loop(b.global_head.weight(), b.global_head.bias(), h.row(i));
        let p = linear_loop(b.personal_head.weight(), b.personal_head.bias(), h.row(i));
        for c in 0..3 {
            assert!((out.logits.at(i, c) - g[c] - p[c]).abs() <= 1e-12);
        }
    }
    assert!(out.policy.is_none());

    let only = Behavior { routing: Routing::PersonalOnly, align: false };
    let out = fedcp_forward(&client, &x, &only).unwrap();
    for i in 0..3 {
        let p = linear_loop(b.personal_head.weight(), b.personal_head.bias(), h.row(i));
        for c in 0..3 {
            assert!((out.logits.at(i, c) - p[c]).abs() <= 1e-12);
        }
    }

    // Client-only input: every row gets the same policy.
    let client_only = Behavior { routing: Routing::Policy(CpnInput::ClientOnly), align: true };
    let p = fedcp_forward(&client, &x, &client_only).unwrap().policy.unwrap();
    assert_eq!(p.s.row(0), p.s.row(2));

    // Sample-only input ignores v entirely.
    let sample_only = Behavior { routing: Routing::Policy(CpnInput::SampleOnly), align: true };
    let before = fedcp_forward(&client, &x, &sample_only).unwrap();
    client.v = Tensor::vector(vec![5.0, -1.0, 0.0, 2.0]);
    let after = fedcp_forward(&client, &x, &sample_only).unwrap();
    assert_eq!(before.logits, after.logits);

    let random_in = Behavior { routing: Routing::Policy(CpnInput::Random), align: true };
    assert!(matches!(fedcp_forward(&client, &x, &random_in), Err(Error::Usage(_))));
    client.random_input = Some(Tensor::vector(vec![0.3, -0.2, 0.9, 0.1]));
    let p = fedcp_forward(&client, &x, &random_in).unwrap().policy.unwrap();
    assert_eq!(p.r.row(0), p.r.row(1));
}

#[test]
fn mmd_loss_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, 6, 3);
    let b = random(&mut rng, 6, 3);
    assert!(mmd_loss(&a, &a, Bandwidth::Median).unwrap().abs() <= 1e-10);
    assert_eq!(
        mmd_loss(&a, &b, Bandwidth::Median).unwrap(),
        mmd_loss(&b, &a, Bandwidth::Median).unwrap()
    );
    let hp = Tensor::from_rows(&[vec![0.0], vec![0.0]]).unwrap();
    let hg = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
    let expect = 2.0 - 2.0 * (-1.0f64).exp();
    assert!((mmd_loss(&hp, &hg, Bandwidth::Single(1.0)).unwrap() - expect).abs() < 1e-12);
    assert!((expect - 1.26424).abs() < 1e-5);
    let one = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
    assert_eq!(mmd_loss(&one, &one.map(|x| x + 1.0), Bandwidth::Median).unwrap(), 0.0);
}

#[test]
fn median_distance_oracle() {
    // Rows 0, 1, 3 on a line: squared distances 1, 9, 4 → median 4.
    let a = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
    let b = Tensor::from_rows(&[vec![3.0]]).unwrap();
    assert_eq!(median_sq_distance(&a, &b), 4.0);
    assert_eq!(bandwidths(Bandwidth::Median, &a, &b), vec![1.0, 2.0, 4.0, 8.0, 16.0]);
    let z = Tensor::zeros(&[2, 2]);
    assert_eq!(bandwidths(Bandwidth::Median, &z, &z)[2], 1.0);
}

#[test]
fn fuse_cases() {
    let mk = |w: f64, b: f64| Head::new(Tensor::full(&[2, 3], w), Tensor::full(&[2], b)).unwrap();
    let a = mk(0.0, 4.0);
    let b = mk(2.0, 0.0);
    let f = fuse_upload_head(&a, &b).unwrap();
    assert!(f.weight().data().iter().all(|&x| x == 1.0));
    assert!(f.bias().data().iter().all(|&x| x == 2.0));
    assert_eq!(fuse_upload_head(&a, &a).unwrap(), a);
    let ff = fuse_upload_head(&f, &b).unwrap();
    assert!(ff.weight().data().iter().all(|&x| x == (0.0 + 3.0 * 2.0) / 4.0));
    assert_eq!(a, mk(0.0, 4.0));
    let wrong = Head::new(Tensor::zeros(&[3, 3]), Tensor::zeros(&[3])).unwrap();
    assert!(matches!(fuse_upload_head(&a, &wrong), Err(Error::Dimension { .. })));
}

#[test]
fn argmax_breaks_ties_low() {
    assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    assert_eq!(argmax(&[0.0, 0.0]), 0);
    assert_eq!(argmax(&[-1.0, -2.0, 5.0]), 2);
}

#[test]
fn memorized_sample_scores_one() {
    let a = arch(3, vec![], 2, 2);
    let mut client = toy_client(&a, 0, 1);
    client.bundle.personal_head = Head::new(Tensor::zeros(&[2, 2]), Tensor::vector(vec![0.0, 5.0])).unwrap();
    client.bundle.global_head = client.bundle.personal_head.clone();
    let shard = Shard {
        features: Tensor::from_rows(&[vec![0.1, 0.2, 0.3]]).unwrap(),
        labels: vec![1],
    };
    let e = evaluate(&client, &shard, &Behavior::FEDCP).unwrap().unwrap();
    assert_eq!(e.accuracy, 1.0);
    let empty = Shard { features: Tensor::zeros(&[0, 3]), labels: vec![] };
    assert!(evaluate(&client, &empty, &Behavior::FEDCP).unwrap().is_none());
}

#[test]
fn untrained_ten_class_model_is_near_chance() {
    let a = arch(8, vec![16], 8, 10);
    let mut accs = Vec::new();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 77);
        let client = ClientState::new(
            0,
            init_params(&a, seed).unwrap(),
            toy_shard(&mut rng, 1, 8, 10),
            toy_shard(&mut rng, 1, 8, 10),
            1.0,
        );
        let shard = Shard {
            features: random(&mut rng, 1000, 8),
            labels: (0..1000).map(|i| i % 10).collect(),
        };
        accs.push(evaluate(&client, &shard, &Behavior::FEDCP).unwrap().unwrap().accuracy);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.1).abs() <= 0.05, "{accs:?}");
}

#[test]
fn plain_sgd_decreases_loss() {
    let a = arch(4, vec![], 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 40;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let data: Vec<f64> = labels
        .iter()
        .flat_map(|&y| {
            let sign = if y == 0 { 1.0 } else { -1.0 };
            let noise: Vec<f64> = (0..4).map(|_| rng.random_range(-0.2..0.2)).collect();
            noise.into_iter().map(move |e| sign + e)
        })
        .collect();
    let shard = Shard { features: Tensor::new(vec![n, 4], data).unwrap(), labels };
    let mut client = ClientState::new(0, init_params(&a, 1).unwrap(), shard.clone(), shard, 1.0);
    let plain = Behavior { routing: Routing::PersonalOnly, align: false };
    let h = LocalHyper { epochs: 5, ..hyper(0.0, Bandwidth::Median) };
    let before = training_loss(&client, &plain, &h).unwrap().unwrap();
    let stats = local_train(&mut client, &plain, &h, &mut rng).unwrap();
    let after = training_loss(&client, &plain, &h).unwrap().unwrap();
    assert_eq!(stats.epoch_loss.len(), 5);
    assert!(stats.epoch_loss[4] < stats.epoch_loss[0]);
    assert!(after < before, "{before} → {after}");
}

fn trainable_tensors(client: &ClientState) -> ParamSet {
    let b = &client.bundle;
    let mut ps = b.personal_fe.param_set("personal_fe");
    ps.extend(b.personal_head.param_set("personal_head"));
    ps.extend(b.cpn.as_ref().unwrap().param_set("cpn"));
    ps
}

fn load_trainable(client: &mut ClientState, values: &[Tensor]) {
    let mut ps = trainable_tensors(client);
    for (e, v) in ps.entries_mut().iter_mut().zip(values) {
        e.value = v.clone();
    }
    let split = |prefix: &str| {
        let mut out = ParamSet::new();
        for e in ps.entries().iter().filter(|e| e.name.starts_with(prefix)) {
            out.push(e.name.clone(), e.value.clone());
        }
        out
    };
    let b = &mut client.bundle;
    b.personal_fe.load_param_set("personal_fe", &split("personal_fe.")).unwrap();
    b.personal_head.load_param_set("personal_head", &split("personal_head.")).unwrap();
    b.cpn.as_mut().unwrap().load_param_set("cpn", &split("cpn.")).unwrap();
}

fn loss_value(client: &ClientState, x: &Tensor, y: &[usize], h: &LocalHyper) -> f64 {
    let mut g = Graph::new();
    let lv = build_local_loss(&mut g, client, x, y, &Behavior::FEDCP, h, false).unwrap();
    g.value(lv.total).item()
}

#[test]
fn full_objective_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let a = arch(3, vec![5], 4, 3);
        let client = toy_client(&a, seed, 4);
        let (x, y) = client.train.batch(&[0, 1, 2, 3]);
        // Pin the bandwidth bank at the unperturbed point so the
        // finite-difference objective is the same function.
        let hp = crate::nn::extract_features(&client.bundle.personal_fe, &x).unwrap();
        let hg = crate::nn::extract_features(&client.bundle.global_fe, &x).unwrap();
        let h = hyper(5.0, Bandwidth::Bank(median_sq_distance(&hp, &hg)));

        let mut g = Graph::new();
        let lv = build_local_loss(&mut g, &client, &x, &y, &Behavior::FEDCP, &h, true).unwrap();
        assert!(lv.align.is_some());
        let grads = g.backward(lv.total).unwrap();

        let ps = trainable_tensors(&client);
        let inputs: Vec<Tensor> = ps.entries().iter().map(|e| e.value.clone()).collect();
        let mut probe = client.clone();
        let numeric = numeric_gradients(&inputs, 1e-5, |vals| {
            load_trainable(&mut probe, vals);
            loss_value(&probe, &x, &y, &h)
        });
        for (e, n) in ps.entries().iter().zip(&numeric) {
            let an = grads.get(&e.name).unwrap();
            let err = relative_error(an, n);
            assert!(err <= 1e-4, "seed {seed} {}: {err}", e.name);
        }
    }
}

#[test]
fn one_step_delta_is_minus_lr_times_gradient() {
    let a = arch(3, vec![5], 4, 3);
    let mut client = toy_client(&a, 9, 4);
    let mut h = hyper(2.0, Bandwidth::Bank(1.0));
    h.batch_size = 4;
    let inputs: Vec<Tensor> = trainable_tensors(&client).entries().iter().map(|e| e.value.clone()).collect();
    let (x, y) = client.train.batch(&[0, 1, 2, 3]);
    let mut probe = client.clone();
    let numeric = numeric_gradients(&inputs, 1e-5, |vals| {
        load_trainable(&mut probe, vals);
        loss_value(&probe, &x, &y, &h)
    });
    // A single full-size batch: the shuffle only permutes rows, which leaves
    // the mean loss unchanged.
    local_train(&mut client, &Behavior::FEDCP, &h, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let after = trainable_tensors(&client);
    for ((before, e), n) in inputs.iter().zip(after.entries()).zip(&numeric) {
        let delta = e.value.zip_map(before, |a, b| a - b).unwrap();
        let expect = n.map(|g| -h.lr * g);
        assert!(relative_error(&delta, &expect) <= 1e-4, "{}", e.name);
    }
}

#[test]
fn local_train_respects_freeze_and_v() {
    let a = arch(4, vec![6], 4, 3);
    let mut client = toy_client(&a, 2, 13);
    let fe = client.bundle.global_fe.to_bytes();
    let head = client.bundle.global_head.to_bytes();
    let v = client.v.to_bytes();
    let personal = client.bundle.personal_head.to_bytes();
    let stats = local_train(
        &mut client,
        &Behavior::FEDCP,
        &LocalHyper { epochs: 2, ..hyper(5.0, Bandwidth::Median) },
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    assert_eq!(stats.batches, 8);
    assert!(stats.align_term > 0.0);
    assert_eq!(client.bundle.global_fe.to_bytes(), fe);
    assert_eq!(client.bundle.global_head.to_bytes(), head);
    assert_eq!(client.v.to_bytes(), v);
    assert_ne!(client.bundle.personal_head.to_bytes(), personal);
    client.refresh_v();
    assert_ne!(client.v.to_bytes(), v);
}

#[test]
fn dual_head_training_leaves_cpn_alone() {
    let a = arch(4, vec![], 4, 3);
    let mut client = toy_client(&a, 4, 8);
    let cpn = client.bundle.cpn.clone();
    let dual = Behavior { routing: Routing::DualHead, align: false };
    let stats = local_train(&mut client, &dual, &hyper(5.0, Bandwidth::Median), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(stats.align_term, 0.0);
    assert_eq!(client.bundle.cpn, cpn);
}

#[test]
fn empty_shard_is_skipped() {
    let a = arch(4, vec![], 4, 3);
    let mut client = toy_client(&a, 4, 8);
    client.train = Shard { features: Tensor::zeros(&[0, 4]), labels: vec![] };
    let stats = local_train(&mut client, &Behavior::FEDCP, &hyper(1.0, Bandwidth::Median), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(stats.skipped);
    assert!(training_loss(&client, &Behavior::FEDCP, &hyper(1.0, Bandwidth::Median)).unwrap().is_none());
}

#[test]
fn training_is_deterministic() {
    let a = arch(4, vec![5], 4, 3);
    let run = || {
        let mut c = toy_client(&a, 6, 11);
        local_train(&mut c, &Behavior::FEDCP, &hyper(5.0, Bandwidth::Median), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        c.bundle.personal_fe.to_bytes()
    };
    assert_eq!(run(), run());
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mmd_properties(a in matrix(4, 3), b in matrix(4, 3)) {
        let ab = mmd_loss(&a, &b, Bandwidth::Median).unwrap();
        prop_assert!(ab >= -1e-10);
        prop_assert_eq!(ab, mmd_loss(&b, &a, Bandwidth::Median).unwrap());
        prop_assert!(mmd_loss(&a, &a, Bandwidth::Median).unwrap().abs() <= 1e-10);
    }

    #[test]
    fn fuse_is_linear(w1 in matrix(2, 3), w2 in matrix(2, 3), alpha in -4.0f64..4.0) {
        let h = |w: &Tensor, s: f64| Head::new(w.map(|x| x * s), Tensor::vector(vec![s, -s])).unwrap();
        let lhs = fuse_upload_head(&h(&w1, alpha), &h(&w2, alpha)).unwrap();
        let rhs = fuse_upload_head(&h(&w1, 1.0), &h(&w2, 1.0)).unwrap();
        for (l, r) in lhs.weight().data().iter().zip(rhs.weight().data()) {
            prop_assert!((l - alpha * r).abs() <= 1e-12);
        }
    }

    #[test]
    fn policies_are_complete(seed in 0u64..500, scale in 0.01f64..100.0) {
        let a = arch(5, vec![4], 4, 3);
        let client = toy_client(&a, seed, 2);
        let x = random(&mut ChaCha8Rng::seed_from_u64(seed), 4, 5).map(|v| v * scale);
        let p = fedcp_forward(&client, &x, &Behavior::FEDCP).unwrap().policy.unwrap();
        for (r, s) in p.r.data().iter().zip(p.s.data()) {
            prop_assert!((r + s - 1.0).abs() <= 1e-12);
            prop_assert!(*r > 0.0 && *r < 1.0);
        }
    }
}
