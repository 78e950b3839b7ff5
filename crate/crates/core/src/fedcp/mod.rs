//! Per-client FedCP computation: CPN input, dual-head routing, feature
//! alignment, local SGD and upload-head fusion.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{mmd_value, Graph, Tensor, Var};
use crate::data::Shard;
use crate::error::{Error, Result};
use crate::nn::{Head, ModelBundle, Module, Policy, PolicyVars};

#[cfg(test)]
mod tests;

/// Norms below this count as zero when normalizing `v`.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// What the CPN is conditioned on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpnInput {
    /// `(v/‖v‖) ⊙ h`
    Combined,
    /// `h` alone.
    SampleOnly,
    /// `v/‖v‖` repeated for every row.
    ClientOnly,
    /// A per-client random vector, fixed at creation, repeated for every row.
    Random,
}

/// How features reach the heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routing {
    /// `g(r⊙h; global) + g(s⊙h; personal)` with `(r, s)` from the CPN.
    Policy(CpnInput),
    /// `g(h; global) + g(h; personal)`.
    DualHead,
    /// `g(h; personal)` only.
    PersonalOnly,
}

/// The per-client part of an algorithm variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Behavior {
    pub routing: Routing,
    /// Adds the λ-weighted MMD term against the frozen global extractor.
    pub align: bool,
}

impl Behavior {
    pub const FEDCP: Behavior = Behavior {
        routing: Routing::Policy(CpnInput::Combined),
        align: true,
    };

    pub fn uses_cpn(&self) -> bool {
        matches!(self.routing, Routing::Policy(_))
    }
}

/// RBF bandwidth selection for the MMD term.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Bandwidth {
    /// Bank `γ·2^j, j = −2..2` around the median pairwise squared distance.
    #[default]
    Median,
    /// The same bank around a fixed `γ`.
    Bank(f64),
    /// One fixed bandwidth.
    Single(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalHyper {
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub bandwidth: Bandwidth,
}

/// One client's model plus the data it owns.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub bundle: ModelBundle,
    /// Column sums of the personal head, refreshed once per round.
    pub v: Tensor,
    pub train: Shard,
    pub test: Shard,
    pub n_weight: f64,
    pub random_input: Option<Tensor>,
}

impl ClientState {
    pub fn new(id: usize, bundle: ModelBundle, train: Shard, test: Shard, n_weight: f64) -> Self {
        let v = client_vector(&bundle.personal_head);
        Self {
            id,
            bundle,
            v,
            train,
            test,
            n_weight,
            random_input: None,
        }
    }

    pub fn refresh_v(&mut self) {
        self.v = client_vector(&self.bundle.personal_head);
    }
}

/// Column sums of the head's `C×K` weight; the bias is not included.
pub fn client_vector(head: &Head) -> Tensor {
    let w = head.weight();
    let mut v = vec![0.0; w.cols()];
    for c in 0..w.rows() {
        for (acc, x) in v.iter_mut().zip(w.row(c)) {
            *acc += x;
        }
    }
    Tensor::vector(v)
}

/// `v/‖v‖`, or `1/√K` in every slot when `‖v‖` is degenerate.
pub fn unit_direction(v: &Tensor) -> Tensor {
    let n = v.norm();
    if n < DEGENERATE_NORM {
        Tensor::full(v.shape(), 1.0 / (v.len() as f64).sqrt())
    } else {
        v.map(|x| x / n)
    }
}

/// `(v/‖v‖) ⊙ h` row by row.
pub fn cpn_input(v: &Tensor, h: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let hv = g.constant(h.clone());
    let c = combined_input(&mut g, v, hv)?;
    Ok(g.value(c).clone())
}

fn combined_input(g: &mut Graph, v: &Tensor, h: Var) -> Result<Var> {
    let k = g.value(h).cols();
    if v.len() != k {
        return Err(Error::dim(
            "cpn_input",
            format!("v has length {}, features have width {k}", v.len()),
        ));
    }
    let unit = g.constant(unit_direction(v));
    g.hadamard(h, unit)
}

fn repeat_rows(row: &Tensor, rows: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows * row.len());
    for _ in 0..rows {
        data.extend_from_slice(row.data());
    }
    Tensor::new(vec![rows, row.len()], data)
}

fn build_cpn_input(g: &mut Graph, client: &ClientState, input: CpnInput, h: Var) -> Result<Var> {
    let rows = g.value(h).rows();
    match input {
        CpnInput::Combined => combined_input(g, &client.v, h),
        CpnInput::SampleOnly => Ok(h),
        CpnInput::ClientOnly => {
            let c = repeat_rows(&unit_direction(&client.v), rows)?;
            Ok(g.constant(c))
        }
        CpnInput::Random => {
            let r = client.random_input.as_ref().ok_or_else(|| {
                Error::Usage(format!("client {} has no random CPN input", client.id))
            })?;
            let c = repeat_rows(r, rows)?;
            Ok(g.constant(c))
        }
    }
}

/// Graph handles for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub logits: Var,
    pub h: Var,
    pub policy: Option<PolicyVars>,
}

/// Builds the client's forward pass. With `trainable`, the personal
/// extractor, personal head and CPN are registered as parameters under the
/// prefixes `personal_fe`, `personal_head` and `cpn`; the global head is
/// always a constant.
pub fn build_forward(
    g: &mut Graph,
    client: &ClientState,
    x: &Tensor,
    behavior: &Behavior,
    trainable: bool,
) -> Result<ForwardVars> {
    let b = &client.bundle;
    let fe = b.personal_fe.bind(g, trainable.then_some("personal_fe"));
    let xv = g.constant(x.clone());
    let h = fe.forward(g, xv)?;
    let personal = b.personal_head.bind(g, trainable.then_some("personal_head"));
    let (logits, policy) = match behavior.routing {
        Routing::Policy(input) => {
            let cpn = b
                .cpn
                .as_ref()
                .ok_or_else(|| Error::Usage("policy routing needs a CPN".into()))?;
            let bound = cpn.bind(g, trainable.then_some("cpn"));
            let c = build_cpn_input(g, client, input, h)?;
            let p = bound.forward(g, c)?;
            let global = b.global_head.bind(g, None);
            let rh = g.hadamard(p.r, h)?;
            let sh = g.hadamard(p.s, h)?;
            let out_r = global.forward(g, rh)?;
            let out_s = personal.forward(g, sh)?;
            (g.add(out_r, out_s)?, Some(p))
        }
        Routing::DualHead => {
            let global = b.global_head.bind(g, None);
            let a = global.forward(g, h)?;
            let p = personal.forward(g, h)?;
            (g.add(a, p)?, None)
        }
        Routing::PersonalOnly => (personal.forward(g, h)?, None),
    };
    Ok(ForwardVars { logits, h, policy })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub policy: Option<Policy>,
    pub h: Tensor,
}

/// Inference-mode forward using the client's cached `v`.
pub fn fedcp_forward(client: &ClientState, x: &Tensor, behavior: &Behavior) -> Result<ForwardOutput> {
    let mut g = Graph::new();
    let f = build_forward(&mut g, client, x, behavior, false)?;
    Ok(ForwardOutput {
        logits: g.value(f.logits).clone(),
        policy: f.policy.map(|p| Policy {
            r: g.value(p.r).clone(),
            s: g.value(p.s).clone(),
        }),
        h: g.value(f.h).clone(),
    })
}

/// Median of the squared distances over all row pairs of the joint batch.
pub fn median_sq_distance(a: &Tensor, b: &Tensor) -> f64 {
    let rows: Vec<&[f64]> = (0..a.rows())
        .map(|i| a.row(i))
        .chain((0..b.rows()).map(|i| b.row(i)))
        .collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(
                rows[i]
                    .iter()
                    .zip(rows[j])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>(),
            );
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len() / 2;
    if d.len() % 2 == 1 {
        d[m]
    } else {
        0.5 * (d[m - 1] + d[m])
    }
}

fn bank(gamma: f64) -> Vec<f64> {
    (-2..=2).map(|j| gamma * 2f64.powi(j)).collect()
}

/// Concrete bandwidths for one batch.
pub fn bandwidths(mode: Bandwidth, hp: &Tensor, hg: &Tensor) -> Vec<f64> {
    match mode {
        Bandwidth::Median => {
            let gamma = median_sq_distance(hp, hg);
            bank(if gamma > 1e-12 { gamma } else { 1.0 })
        }
        Bandwidth::Bank(gamma) => bank(gamma),
        Bandwidth::Single(bw) => vec![bw],
    }
}

/// Biased MMD² between personal and global features. Batches with fewer
/// than two rows give 0.
pub fn mmd_loss(hp: &Tensor, hg: &Tensor, mode: Bandwidth) -> Result<f64> {
    if hp.shape() != hg.shape() || hp.rank() != 2 {
        return Err(Error::dim(
            "mmd_loss",
            format!("{:?} vs {:?}", hp.shape(), hg.shape()),
        ));
    }
    if hp.rows() < 2 {
        log::debug!("mmd skipped: batch of {} rows", hp.rows());
        return Ok(0.0);
    }
    Ok(mmd_value(hp, hg, &bandwidths(mode, hp, hg)))
}

/// Graph handles for the local objective `CE + λ·MMD²`.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub ce: Var,
    /// The already λ-scaled alignment term, when one was added.
    pub align: Option<Var>,
    pub forward: ForwardVars,
}

pub fn build_local_loss(
    g: &mut Graph,
    client: &ClientState,
    x: &Tensor,
    y: &[usize],
    behavior: &Behavior,
    hyper: &LocalHyper,
    trainable: bool,
) -> Result<LossVars> {
    let forward = build_forward(g, client, x, behavior, trainable)?;
    let ce = g.cross_entropy(forward.logits, y)?;
    let mut total = ce;
    let mut align = None;
    if behavior.align && hyper.lambda != 0.0 {
        if x.rows() < 2 {
            log::debug!("client {}: mmd skipped on a batch of 1", client.id);
        } else {
            let hg = crate::nn::extract_features(&client.bundle.global_fe, x)?;
            let bw = bandwidths(hyper.bandwidth, g.value(forward.h), &hg);
            let hgv = g.constant(hg);
            let m = g.mmd(forward.h, hgv, &bw)?;
            let term = g.scale(m, hyper.lambda)?;
            total = g.add(ce, term)?;
            align = Some(term);
        }
    }
    Ok(LossVars {
        total,
        ce,
        align,
        forward,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainStats {
    /// Mean total loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean λ·MMD² over all batches.
    pub align_term: f64,
    pub batches: usize,
    pub skipped: bool,
}

fn check_hyper(hyper: &LocalHyper) -> Result<()> {
    if hyper.batch_size == 0 {
        return Err(Error::config("batch_size", "must be positive"));
    }
    if !(hyper.lr > 0.0) || !hyper.lr.is_finite() {
        return Err(Error::config("lr", "must be a positive finite number"));
    }
    if !(hyper.lambda >= 0.0) || !hyper.lambda.is_finite() {
        return Err(Error::config("lambda", "must be a non-negative finite number"));
    }
    Ok(())
}

/// Local epochs of mini-batch SGD on the personal extractor, personal head
/// and (when routed through it) the CPN. Global copies are never written.
pub fn local_train(
    client: &mut ClientState,
    behavior: &Behavior,
    hyper: &LocalHyper,
    rng: &mut ChaCha8Rng,
) -> Result<TrainStats> {
    check_hyper(hyper)?;
    let mut stats = TrainStats::default();
    let n = client.train.len();
    if n == 0 {
        log::warn!("client {} has an empty training shard; skipped", client.id);
        stats.skipped = true;
        return Ok(stats);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut align_sum = 0.0;
    for _ in 0..hyper.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let (x, y) = client.train.batch(chunk);
            let mut g = Graph::new();
            let lv = build_local_loss(&mut g, client, &x, &y, behavior, hyper, true)?;
            loss_sum += g.value(lv.total).item() * chunk.len() as f64;
            if let Some(a) = lv.align {
                align_sum += g.value(a).item();
            }
            let grads = g.backward(lv.total)?;
            let b = &mut client.bundle;
            b.personal_fe.apply_sgd("personal_fe", &grads, hyper.lr)?;
            b.personal_head.apply_sgd("personal_head", &grads, hyper.lr)?;
            if behavior.uses_cpn() {
                if let Some(cpn) = b.cpn.as_mut() {
                    cpn.apply_sgd("cpn", &grads, hyper.lr)?;
                }
            }
            stats.batches += 1;
        }
        stats.epoch_loss.push(loss_sum / n as f64);
    }
    if stats.batches > 0 {
        stats.align_term = align_sum / stats.batches as f64;
    }
    Ok(stats)
}

/// Sample-weighted mean of the local objective over the training shard,
/// evaluated in fixed index order without updating anything.
pub fn training_loss(client: &ClientState, behavior: &Behavior, hyper: &LocalHyper) -> Result<Option<f64>> {
    check_hyper(hyper)?;
    let n = client.train.len();
    if n == 0 {
        return Ok(None);
    }
    let idx: Vec<usize> = (0..n).collect();
    let mut sum = 0.0;
    for chunk in idx.chunks(hyper.batch_size) {
        let (x, y) = client.train.batch(chunk);
        let mut g = Graph::new();
        let lv = build_local_loss(&mut g, client, &x, &y, behavior, hyper, false)?;
        sum += g.value(lv.total).item() * chunk.len() as f64;
    }
    Ok(Some(sum / n as f64))
}

/// Elementwise mean of two heads, weights and biases alike.
pub fn fuse_upload_head(global: &Head, personal: &Head) -> Result<Head> {
    if global.weight().shape() != personal.weight().shape()
        || global.bias().shape() != personal.bias().shape()
    {
        return Err(Error::dim(
            "fuse_upload_head",
            format!(
                "{:?} vs {:?}",
                global.weight().shape(),
                personal.weight().shape()
            ),
        ));
    }
    let w = global.weight().zip_map(personal.weight(), |a, b| (a + b) / 2.0)?;
    let b = global.bias().zip_map(personal.bias(), |a, b| (a + b) / 2.0)?;
    Head::new(w, b)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// Mean of `s` over every sample and feature, when a CPN routed the pass.
    pub pir: Option<f64>,
}

/// Accuracy of the client's inference model on `shard`; `None` when empty.
pub fn evaluate(client: &ClientState, shard: &Shard, behavior: &Behavior) -> Result<Option<Evaluation>> {
    if shard.is_empty() {
        return Ok(None);
    }
    let out = fedcp_forward(client, &shard.features, behavior)?;
    let correct = (0..shard.len())
        .filter(|&i| argmax(out.logits.row(i)) == shard.labels[i])
        .count();
    Ok(Some(Evaluation {
        correct,
        total: shard.len(),
        accuracy: correct as f64 / shard.len() as f64,
        pir: out.policy.map(|p| p.s.sum() / p.s.len() as f64),
    }))
}
