//! Built-in checks run by `fedcp-sim selftest`.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{check_graph, numeric_gradients, relative_error, DEFAULT_STEP};
use crate::autodiff::{Fault, Graph, ParamSet, Tensor, Var, LN_EPS};
use crate::data::{partition_dirichlet, partition_pathological, split_train_test, synth_clusters, Shard};
use crate::error::Result;
use crate::fedcp::{
    build_local_loss, client_vector, cpn_input, median_sq_distance, mmd_loss, Bandwidth, Behavior, ClientState,
    LocalHyper,
};
use crate::nn::{cpn_forward, extract_features, init_params, ArchSpec, Cpn, CpnSpec, Head, Module};

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_SEEDS: u64 = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckRow {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

/// Every check. `fault` corrupts the backward pass of the checked graphs.
pub fn run(fault: Option<Fault>) -> Vec<CheckRow> {
    let mut rows = gradient_checks(fault);
    rows.extend(policy_checks(100_000));
    rows.extend(mmd_checks());
    rows.extend(partition_audits(20));
    rows
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape matches data")
}

/// Pushes values away from zero so ReLU kinks stay out of reach of the
/// finite-difference step.
fn off_kink(t: Tensor) -> Tensor {
    t.map(|x| if x.abs() < 0.05 { x + x.signum() * 0.05 } else { x })
}

fn weighted_sum(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = g.constant(random(&mut rng, g.value(v).shape()));
    let p = g.hadamard(v, w)?;
    g.sum(p)
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

fn op_cases(seed: u64) -> Vec<(&'static str, Vec<Tensor>, Build)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.random_range(1..=6);
    let k = rng.random_range(1..=6);
    let n = rng.random_range(1..=6);
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
    let mut t = |shape: &[usize]| random(&mut rng, shape);
    vec![
        ("matmul", vec![t(&[b, k]), t(&[k, n])], Box::new(move |g, v| {
            let p = g.matmul(v[0], v[1])?;
            weighted_sum(g, p, seed)
        })),
        ("matmul_nt", vec![t(&[b, k]), t(&[n, k])], Box::new(move |g, v| {
            let p = g.matmul_nt(v[0], v[1])?;
            weighted_sum(g, p, seed)
        })),
        ("add", vec![t(&[b, k]), t(&[b, k])], Box::new(move |g, v| {
            let p = g.add(v[0], v[1])?;
            weighted_sum(g, p, seed)
        })),
        ("add_row", vec![t(&[b, k]), t(&[k])], Box::new(move |g, v| {
            let p = g.add(v[0], v[1])?;
            let p = g.tanh(p)?;
            weighted_sum(g, p, seed)
        })),
        ("hadamard", vec![t(&[b, k]), t(&[b, k])], Box::new(move |g, v| {
            let p = g.hadamard(v[0], v[1])?;
            weighted_sum(g, p, seed)
        })),
        ("hadamard_row", vec![t(&[b, k]), t(&[k])], Box::new(move |g, v| {
            let p = g.hadamard(v[0], v[1])?;
            weighted_sum(g, p, seed)
        })),
        ("relu", vec![off_kink(t(&[b, k]))], Box::new(move |g, v| {
            let p = g.relu(v[0])?;
            weighted_sum(g, p, seed)
        })),
        ("tanh", vec![t(&[b, k])], Box::new(move |g, v| {
            let p = g.tanh(v[0])?;
            weighted_sum(g, p, seed)
        })),
        ("sigmoid", vec![t(&[b, k])], Box::new(move |g, v| {
            let p = g.sigmoid(v[0])?;
            weighted_sum(g, p, seed)
        })),
        ("layer_norm", vec![t(&[b, k + 1]), t(&[k + 1]), t(&[k + 1])], Box::new(move |g, v| {
            let p = g.layer_norm(v[0], v[1], v[2], LN_EPS)?;
            weighted_sum(g, p, seed)
        })),
        ("pair_softmax", vec![t(&[b, 2 * k])], Box::new(move |g, v| {
            let r = g.reshape(v[0], &[b, k, 2])?;
            let p = g.pair_softmax(r)?;
            let c = g.pair_component(p, 1)?;
            weighted_sum(g, c, seed)
        })),
        ("cross_entropy", vec![t(&[b, n])], Box::new(move |g, v| g.cross_entropy(v[0], &labels))),
        ("scale", vec![t(&[b, k])], Box::new(move |g, v| {
            let p = g.scale(v[0], -2.5)?;
            weighted_sum(g, p, seed)
        })),
        ("mmd", vec![t(&[b, k]), t(&[n, k])], Box::new(|g, v| g.mmd(v[0], v[1], &[0.25, 1.0, 4.0]))),
    ]
}

fn trainable(client: &ClientState) -> ParamSet {
    let b = &client.bundle;
    let mut ps = b.personal_fe.param_set("personal_fe");
    ps.extend(b.personal_head.param_set("personal_head"));
    if let Some(cpn) = &b.cpn {
        ps.extend(cpn.param_set("cpn"));
    }
    ps
}

fn load_trainable(client: &mut ClientState, values: &[Tensor]) -> Result<()> {
    let names: Vec<String> = trainable(client).entries().iter().map(|e| e.name.clone()).collect();
    let part = |prefix: &str| {
        let mut ps = ParamSet::new();
        for (name, v) in names.iter().zip(values) {
            if name.starts_with(prefix) {
                ps.push(name.clone(), v.clone());
            }
        }
        ps
    };
    let b = &mut client.bundle;
    b.personal_fe.load_param_set("personal_fe", &part("personal_fe."))?;
    b.personal_head.load_param_set("personal_head", &part("personal_head."))?;
    if let Some(cpn) = b.cpn.as_mut() {
        cpn.load_param_set("cpn", &part("cpn."))?;
    }
    Ok(())
}

/// A small client whose parameters are all perturbed away from their
/// structured initial values, so no gradient path is trivially zero.
fn perturbed_client(seed: u64) -> Result<ClientState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc11e);
    let arch = ArchSpec {
        input_dim: 3,
        hidden: vec![5],
        feature_dim: 4,
        num_classes: 3,
        cpn: CpnSpec::default(),
    };
    let mut bundle = init_params(&arch, seed)?;
    for l in &mut bundle.personal_fe.layers {
        l.bias = random(&mut rng, &[l.out_dim()]);
    }
    bundle.personal_head = Head::new(random(&mut rng, &[3, 4]), random(&mut rng, &[3]))?;
    bundle.global_head = Head::new(random(&mut rng, &[3, 4]), random(&mut rng, &[3]))?;
    bundle.global_fe = crate::nn::FeatureExtractor::init(3, &[5], 4, &mut rng);
    if let Some(cpn) = bundle.cpn.as_mut() {
        cpn.ln_gain = random(&mut rng, &[8]).map(|x| 1.0 + 0.3 * x);
        cpn.ln_bias = random(&mut rng, &[8]).map(|x| 0.3 * x);
    }
    let shard = |rng: &mut ChaCha8Rng| Shard {
        features: random(rng, &[4, 3]),
        labels: (0..4).map(|_| rng.random_range(0..3)).collect(),
    };
    let train = shard(&mut rng);
    let test = shard(&mut rng);
    Ok(ClientState::new(0, bundle, train, test, 1.0))
}

/// Relative error of the full local objective (cross-entropy plus λ·MMD²
/// through the policy network) against central differences. The bandwidth
/// bank is pinned at the unperturbed point so both sides see one function.
pub fn full_loss_error(seed: u64, fault: Option<Fault>) -> Result<f64> {
    let client = perturbed_client(seed)?;
    let (x, y) = client.train.batch(&[0, 1, 2, 3]);
    let hp = extract_features(&client.bundle.personal_fe, &x)?;
    let hg = extract_features(&client.bundle.global_fe, &x)?;
    let hyper = LocalHyper {
        lambda: 5.0,
        epochs: 1,
        batch_size: 4,
        lr: 0.1,
        bandwidth: Bandwidth::Bank(median_sq_distance(&hp, &hg)),
    };
    let mut g = match fault {
        Some(f) => Graph::with_fault(f),
        None => Graph::new(),
    };
    let lv = build_local_loss(&mut g, &client, &x, &y, &Behavior::FEDCP, &hyper, true)?;
    let grads = g.backward(lv.total)?;
    let ps = trainable(&client);
    let inputs: Vec<Tensor> = ps.entries().iter().map(|e| e.value.clone()).collect();
    let mut probe = client.clone();
    let mut failure = None;
    let numeric = numeric_gradients(&inputs, DEFAULT_STEP, |vals| {
        let value = load_trainable(&mut probe, vals).and_then(|()| {
            let mut g = Graph::new();
            let lv = build_local_loss(&mut g, &probe, &x, &y, &Behavior::FEDCP, &hyper, false)?;
            Ok(g.value(lv.total).item())
        });
        value.unwrap_or_else(|e| {
            failure.get_or_insert(e);
            f64::NAN
        })
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let mut worst: f64 = 0.0;
    for (e, n) in ps.entries().iter().zip(&numeric) {
        let zero = Tensor::zeros(n.shape());
        worst = worst.max(relative_error(grads.get(&e.name).unwrap_or(&zero), n));
    }
    Ok(worst)
}

pub fn gradient_checks(fault: Option<Fault>) -> Vec<CheckRow> {
    let mut worst: Vec<(&'static str, f64, Option<String>)> = Vec::new();
    for seed in 0..GRAD_SEEDS {
        for (name, inputs, build) in op_cases(seed) {
            let slot = match worst.iter().position(|w| w.0 == name) {
                Some(i) => i,
                None => {
                    worst.push((name, 0.0, None));
                    worst.len() - 1
                }
            };
            match check_graph(&inputs, fault, build) {
                Ok(err) => worst[slot].1 = worst[slot].1.max(err),
                Err(e) => worst[slot].2 = Some(format!("seed {seed}: {e}")),
            }
        }
        let slot = match worst.iter().position(|w| w.0 == "full_loss") {
            Some(i) => i,
            None => {
                worst.push(("full_loss", 0.0, None));
                worst.len() - 1
            }
        };
        match full_loss_error(seed, fault) {
            Ok(err) => worst[slot].1 = worst[slot].1.max(err),
            Err(e) => worst[slot].2 = Some(format!("seed {seed}: {e}")),
        }
    }
    worst
        .into_iter()
        .map(|(name, err, failure)| match failure {
            Some(msg) => CheckRow::new(format!("grad.{name}"), false, msg),
            None => CheckRow::new(
                format!("grad.{name}"),
                err <= GRAD_TOLERANCE,
                format!("max rel err {err:.2e} over {GRAD_SEEDS} seeds"),
            ),
        })
        .collect()
}

/// Largest `|r + s − 1|`, whether every entry lies strictly inside (0, 1),
/// over `samples` random policy forwards.
pub fn policy_sum_check(samples: usize) -> Result<(f64, bool)> {
    let mut worst: f64 = 0.0;
    let mut open = true;
    let mut done = 0;
    let mut seed = 0;
    while done < samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(1..=16);
        let rows = (samples - done).min(1000);
        let spec = CpnSpec {
            activation: [crate::nn::Activation::Relu, crate::nn::Activation::Tanh, crate::nn::Activation::Sigmoid]
                [seed as usize % 3],
            norm: if seed % 2 == 0 { crate::nn::Norm::LayerNorm } else { crate::nn::Norm::None },
        };
        let cpn = Cpn::init(k, spec, &mut rng);
        let c = random(&mut rng, &[rows, k]).map(|x| 3.0 * x);
        let p = cpn_forward(&cpn, &c)?;
        for (r, s) in p.r.data().iter().zip(p.s.data()) {
            worst = worst.max((r + s - 1.0).abs());
            open &= *r > 0.0 && *r < 1.0 && *s > 0.0 && *s < 1.0;
        }
        done += rows;
        seed += 1;
    }
    Ok((worst, open))
}

/// Mean fraction of features routed to the personalized head by freshly
/// initialized models on random inputs, averaged over `inits` inits.
pub fn fresh_pir(inits: u64) -> Result<f64> {
    let arch = ArchSpec {
        input_dim: 16,
        hidden: vec![32],
        feature_dim: 32,
        num_classes: 10,
        cpn: CpnSpec::default(),
    };
    let mut total = 0.0;
    for seed in 0..inits {
        let bundle = init_params(&arch, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf00d);
        let x = random(&mut rng, &[64, 16]);
        let h = extract_features(&bundle.personal_fe, &x)?;
        let c = cpn_input(&client_vector(&bundle.personal_head), &h)?;
        let p = cpn_forward(bundle.cpn.as_ref().expect("fresh bundles carry a CPN"), &c)?;
        total += p.s.sum() / p.s.len() as f64;
    }
    Ok(total / inits as f64)
}

pub fn policy_checks(samples: usize) -> Vec<CheckRow> {
    let mut rows = Vec::new();
    match policy_sum_check(samples) {
        Ok((worst, open)) => {
            rows.push(CheckRow::new(
                "policy.sum_to_one",
                worst <= 1e-12,
                format!("max |r+s-1| = {worst:.2e} over {samples} forwards"),
            ));
            rows.push(CheckRow::new("policy.open_interval", open, "r, s in (0, 1)"));
        }
        Err(e) => rows.push(CheckRow::new("policy.sum_to_one", false, e.to_string())),
    }
    match fresh_pir(10) {
        Ok(pir) => rows.push(CheckRow::new(
            "policy.fresh_pir",
            (0.48..=0.52).contains(&pir),
            format!("mean {pir:.4}"),
        )),
        Err(e) => rows.push(CheckRow::new("policy.fresh_pir", false, e.to_string())),
    }
    rows
}

pub fn mmd_checks() -> Vec<CheckRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let a = random(&mut rng, &[7, 5]);
    let b = random(&mut rng, &[7, 5]).map(|x| x + 0.5);
    let mut rows = Vec::new();
    let row = |name: &str, r: Result<(bool, String)>| match r {
        Ok((pass, detail)) => CheckRow::new(name, pass, detail),
        Err(e) => CheckRow::new(name, false, e.to_string()),
    };
    rows.push(row(
        "mmd.self_zero",
        mmd_loss(&a, &a, Bandwidth::Median).map(|m| (m.abs() <= 1e-10, format!("mmd(A,A) = {m:.2e}"))),
    ));
    rows.push(row(
        "mmd.symmetry",
        mmd_loss(&a, &b, Bandwidth::Median).and_then(|ab| {
            let ba = mmd_loss(&b, &a, Bandwidth::Median)?;
            Ok((ab == ba, format!("{ab} vs {ba}")))
        }),
    ));
    let x = Tensor::from_rows(&[vec![0.0], vec![0.0]]).expect("rectangular");
    let y = Tensor::from_rows(&[vec![1.0], vec![1.0]]).expect("rectangular");
    let expect = 2.0 - 2.0 * (-1.0f64).exp();
    rows.push(row(
        "mmd.pinned_two_by_one",
        mmd_loss(&x, &y, Bandwidth::Single(1.0))
            .map(|m| ((m - expect).abs() <= 1e-6, format!("{m:.8} vs {expect:.8}"))),
    ));
    rows
}

/// Disjointness, conservation, Dirichlet proportion sums and split sizes
/// over `pairs` random (scheme, seed) draws.
pub fn partition_audits(pairs: u64) -> Vec<CheckRow> {
    let mut failures = Vec::new();
    let mut worst_sum: f64 = 0.0;
    let ds = match synth_clusters(10, 4, 40, 0.3, 99) {
        Ok(d) => d,
        Err(e) => return vec![CheckRow::new("partition.audit", false, e.to_string())],
    };
    for seed in 0..pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa0d1);
        let plan = if seed % 2 == 0 {
            let beta = [0.1, 0.5, 1.0, 10.0][rng.random_range(0..4)];
            partition_dirichlet(&ds, rng.random_range(2..=12), beta, seed, 4)
        } else {
            // Enough clients that every class has a holder.
            let m = rng.random_range(1..=3);
            let n = ds.num_classes.div_ceil(m) + rng.random_range(0..=6);
            partition_pathological(&ds, n, m, seed)
        };
        let plan = match plan {
            Ok(p) => p,
            Err(e) => {
                failures.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let mut seen = BTreeSet::new();
        let disjoint = plan.assignments.iter().flatten().all(|&i| seen.insert(i));
        if !disjoint || seen.len() != ds.len() || seen.iter().next_back() != Some(&(ds.len() - 1)) {
            failures.push(format!("seed {seed}: not an exact cover"));
        }
        if let Some(props) = &plan.proportions {
            for q in props {
                worst_sum = worst_sum.max((q.iter().sum::<f64>() - 1.0).abs());
            }
        }
        match split_train_test(&plan, &ds, 0.75, seed) {
            Ok(shards) => {
                for (c, s) in shards.iter().enumerate() {
                    let total = plan.assignments[c].len();
                    let test = (total as f64 * 0.25 + 1e-9).floor() as usize;
                    let mut idx: Vec<usize> = s.train_idx.iter().chain(&s.test_idx).copied().collect();
                    idx.sort_unstable();
                    if s.test_idx.len() != test || idx != plan.assignments[c] {
                        failures.push(format!("seed {seed}: client {c} split is off"));
                    }
                }
            }
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    vec![
        CheckRow::new(
            "partition.cover_and_split",
            failures.is_empty(),
            failures.first().cloned().unwrap_or_else(|| format!("{pairs} plans audited")),
        ),
        CheckRow::new(
            "partition.dirichlet_sums",
            worst_sum <= 1e-12,
            format!("max |sum - 1| = {worst_sum:.2e}"),
        ),
    ]
}
