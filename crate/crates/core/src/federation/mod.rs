//! Server-side protocol: sampling, broadcast, parallel local training,
//! weighted aggregation and per-round metrics.

mod aggregate;
mod report;
mod variant;

use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use aggregate::aggregate;
pub use report::{clients_jsonl, rounds_csv, RoundReport, CSV_HEADER};
pub use variant::{make_variant, variant_by_id, Algorithm, Upload, Variant};

use crate::autodiff::{ParamSet, Tensor};
use crate::data::{
    partition_dirichlet, partition_pathological, split_train_test, Dataset, PartitionPlan,
    PartitionScheme,
};
use crate::error::{Error, Result};
use crate::fedcp::{
    evaluate, fuse_upload_head, CpnInput, Routing, local_train, training_loss, Bandwidth, ClientState, Evaluation,
    LocalHyper, TrainStats,
};
use crate::nn::{init_params_with, ArchSpec, Cpn, FeatureExtractor, Head, Module};
use crate::seed::SeedTree;

/// Client joining ratio: fixed, or redrawn uniformly each round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoSpec {
    Fixed(f64),
    Range(f64, f64),
}

impl Default for RhoSpec {
    fn default() -> Self {
        RhoSpec::Fixed(1.0)
    }
}

impl RhoSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |r: f64| r > 0.0 && r <= 1.0;
        match *self {
            RhoSpec::Fixed(r) if ok(r) => Ok(()),
            RhoSpec::Fixed(r) => Err(Error::config("rho", format!("must lie in (0, 1], got {r}"))),
            RhoSpec::Range(lo, hi) if ok(lo) && ok(hi) && lo <= hi => Ok(()),
            RhoSpec::Range(lo, hi) => Err(Error::config(
                "rho",
                format!("range needs 0 < min <= max <= 1, got [{lo}, {hi}]"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub num_clients: usize,
    pub rounds: usize,
    pub rho: RhoSpec,
    pub lr: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub arch: ArchSpec,
    pub partition: PartitionScheme,
    pub min_samples: usize,
    pub train_ratio: f64,
    pub master_seed: u64,
    #[serde(skip)]
    pub bandwidth: Bandwidth,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.rho.validate()?;
        self.arch.validate()?;
        if self.num_clients == 0 {
            return Err(Error::config("partition.num_clients", "must be positive"));
        }
        if self.rounds == 0 {
            return Err(Error::config("training.rounds", "must be at least 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config("training.lr", "must be a positive finite number"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config("training.lambda", "must be a non-negative finite number"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be positive"));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::config("partition.train_ratio", "must lie in (0, 1)"));
        }
        match self.partition {
            PartitionScheme::Dirichlet { beta } if !(beta > 0.0) || !beta.is_finite() => {
                Err(Error::config("partition.beta", "must be a positive finite number"))
            }
            PartitionScheme::Pathological { classes_per_client: 0 } => Err(Error::config(
                "partition.classes_per_client",
                "must be positive",
            )),
            _ => Ok(()),
        }
    }

    pub fn local_hyper(&self) -> LocalHyper {
        LocalHyper {
            lambda: self.lambda,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            bandwidth: self.bandwidth,
        }
    }
}

/// `max(1, ⌈ρ_t·N⌉)` distinct ids, ascending.
pub fn sample_clients(n: usize, rho: RhoSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let r = match rho {
        RhoSpec::Fixed(r) => r,
        RhoSpec::Range(lo, hi) if lo < hi => rng.random_range(lo..=hi),
        RhoSpec::Range(lo, _) => lo,
    };
    // The small slack keeps products like 0.1·20 from rounding up to 3.
    let count = ((r * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1));
    if count >= n {
        return (0..n).collect();
    }
    let mut ids = index::sample(rng, n, count).into_vec();
    ids.sort_unstable();
    ids
}

/// Mean over samples, then over features, of the personal routing weight.
pub fn compute_pir(s: &Tensor) -> f64 {
    s.sum() / s.len() as f64
}

/// The server's copy of the shared parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerModel {
    pub fe: FeatureExtractor,
    pub head: Head,
    pub cpn: Option<Cpn>,
}

impl ServerModel {
    fn load(&mut self, ps: &ParamSet, upload: Upload) -> Result<()> {
        let pick = |prefix: &str| {
            let mut out = ParamSet::new();
            let dotted = format!("{prefix}.");
            for e in ps.entries().iter().filter(|e| e.name.starts_with(&dotted)) {
                out.push(e.name.clone(), e.value.clone());
            }
            out
        };
        self.fe.load_param_set("fe", &pick("fe"))?;
        if upload != Upload::Extractor {
            self.head.load_param_set("head", &pick("head"))?;
        }
        if upload == Upload::ExtractorHeadCpn {
            let cpn = self
                .cpn
                .as_mut()
                .ok_or_else(|| Error::Protocol("server holds no CPN".into()))?;
            cpn.load_param_set("cpn", &pick("cpn"))?;
        }
        Ok(())
    }
}

/// Overwrites a selected client with the server state and refreshes `v`.
/// The personal head is kept, except for FedAvg where it is the shared head.
pub fn broadcast_and_overwrite(server: &ServerModel, client: &mut ClientState, variant: &Variant) -> Result<()> {
    let id = client.id;
    let b = &mut client.bundle;
    let check = |what: &str, ok: bool| {
        if ok {
            Ok(())
        } else {
            Err(Error::Protocol(format!("{what} shape differs between server and client {id}")))
        }
    };
    check(
        "feature extractor",
        server.fe.param_set("").same_layout(&b.personal_fe.param_set("")),
    )?;
    check(
        "head",
        server.head.weight().shape() == b.personal_head.weight().shape(),
    )?;
    b.personal_fe = server.fe.clone();
    b.global_fe = server.fe.clone();
    b.global_head = server.head.clone();
    if variant.is_fedavg() {
        b.personal_head = server.head.clone();
    }
    if variant.has_cpn() {
        b.cpn = server.cpn.clone();
    }
    client.refresh_v();
    Ok(())
}

/// What a client sends after local training.
pub fn client_upload(client: &ClientState, upload: Upload) -> Result<ParamSet> {
    let b = &client.bundle;
    let mut ps = b.personal_fe.param_set("fe");
    match upload {
        Upload::Extractor => {}
        Upload::Model => ps.extend(b.personal_head.param_set("head")),
        Upload::ExtractorHead | Upload::ExtractorHeadCpn => {
            let fused = fuse_upload_head(&b.global_head, &b.personal_head)?;
            ps.extend(fused.param_set("head"));
        }
    }
    if upload == Upload::ExtractorHeadCpn {
        let cpn = b
            .cpn
            .as_ref()
            .ok_or_else(|| Error::Protocol(format!("client {} holds no CPN", client.id)))?;
        ps.extend(cpn.param_set("cpn"));
    }
    Ok(ps)
}

struct ClientRound {
    weight: f64,
    loss_bef: f64,
    loss_aft: f64,
    stats: TrainStats,
    upload: ParamSet,
}

pub struct Simulation {
    config: RunConfig,
    variant: Variant,
    seeds: SeedTree,
    server: ServerModel,
    clients: Vec<ClientState>,
    plan: PartitionPlan,
    pool: rayon::ThreadPool,
    round: usize,
    best: f64,
    reports: Vec<RoundReport>,
}

impl Simulation {
    /// Partitions `dataset`, splits each client 75/25 and initializes all
    /// `N` clients from one shared draw.
    pub fn new(config: RunConfig, dataset: &Dataset, workers: usize) -> Result<Self> {
        config.validate()?;
        if dataset.dim() != config.arch.input_dim {
            return Err(Error::config(
                "model.input_dim",
                format!("dataset has {} features, model expects {}", dataset.dim(), config.arch.input_dim),
            ));
        }
        if dataset.num_classes > config.arch.num_classes {
            return Err(Error::config(
                "model.num_classes",
                format!("dataset has {} classes, model has {}", dataset.num_classes, config.arch.num_classes),
            ));
        }
        let seeds = SeedTree::new(config.master_seed);
        let plan = make_partition(&config, dataset, &seeds)?;
        let shards = split_train_test(&plan, dataset, config.train_ratio, seeds.derive("split", 0, 0))?;
        let variant = make_variant(config.algorithm);

        let mut init_rng = seeds.stream("init", 0, 0);
        let mut bundle = init_params_with(&config.arch, &mut init_rng)?;
        if !variant.has_cpn() {
            bundle = bundle.without_cpn();
        }
        let server = ServerModel {
            fe: bundle.personal_fe.clone(),
            head: bundle.personal_head.clone(),
            cpn: bundle.cpn.clone(),
        };
        let total_train: usize = shards.iter().map(|s| s.train.len()).sum();
        let k = config.arch.feature_dim;
        let clients = shards
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let weight = s.train.len() as f64 / total_train as f64;
                let mut c = ClientState::new(i, bundle.clone(), s.train, s.test, weight);
                if variant.behavior.routing == Routing::Policy(CpnInput::Random) {
                    let mut rng = seeds.stream("cpn_input", 0, i as u64);
                    let r: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
                    c.random_input = Some(Tensor::vector(r));
                }
                c
            })
            .collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            config,
            variant,
            seeds,
            server,
            clients,
            plan,
            pool,
            round: 0,
            best: 0.0,
            reports: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn variant(&self) -> &Variant {
        &self.variant
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn clients_mut(&mut self) -> &mut [ClientState] {
        &mut self.clients
    }

    pub fn server(&self) -> &ServerModel {
        &self.server
    }

    pub fn plan(&self) -> &PartitionPlan {
        &self.plan
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn reports(&self) -> &[RoundReport] {
        &self.reports
    }

    pub fn best_accuracy(&self) -> f64 {
        self.best
    }

    pub fn is_finished(&self) -> bool {
        self.round >= self.config.rounds
    }

    /// Runs every remaining round.
    pub fn run(&mut self) -> Result<&[RoundReport]> {
        while !self.is_finished() {
            self.run_round()?;
        }
        Ok(&self.reports)
    }

    pub fn run_round(&mut self) -> Result<RoundReport> {
        let started = Instant::now();
        self.round += 1;
        let t = self.round as u64;
        let selected = sample_clients(
            self.clients.len(),
            self.config.rho,
            &mut self.seeds.stream("sample", t, 0),
        );
        let hyper = self.config.local_hyper();
        let (server, variant, seeds) = (&self.server, self.variant, self.seeds);

        let mut chosen: Vec<&mut ClientState> = self
            .clients
            .iter_mut()
            .filter(|c| selected.binary_search(&c.id).is_ok())
            .collect();
        let outcomes: Vec<(usize, Result<ClientRound>)> = self.pool.install(|| {
            chosen
                .par_iter_mut()
                .map(|c| {
                    let snapshot = (**c).clone();
                    let res = client_round(server, c, &variant, &hyper, &mut seeds.stream("train", t, c.id as u64));
                    if res.is_err() {
                        **c = snapshot;
                    }
                    (c.id, res)
                })
                .collect()
        });

        let mut done = Vec::new();
        let mut skipped = Vec::new();
        for (id, res) in outcomes {
            match res {
                Ok(r) if r.weight > 0.0 => done.push(r),
                Ok(_) => {
                    log::warn!("round {t}: client {id} has no training data; skipped");
                    skipped.push(id);
                }
                Err(e) => {
                    log::warn!("round {t}: client {id} failed and was skipped: {e}");
                    skipped.push(id);
                }
            }
        }
        if done.is_empty() {
            return Err(Error::Protocol(format!("round {t}: every selected client failed")));
        }
        let n_t: f64 = done.iter().map(|r| r.weight).sum();
        let weighted = |f: &dyn Fn(&ClientRound) -> f64| done.iter().map(|r| r.weight / n_t * f(r)).sum::<f64>();
        let loss_bef = weighted(&|r| r.loss_bef);
        let loss_aft = weighted(&|r| r.loss_aft);
        let align_term = weighted(&|r| r.stats.align_term);

        let uploads: Vec<(ParamSet, f64)> = done.into_iter().map(|r| (r.upload, r.weight)).collect();
        let merged = aggregate(&uploads)?;
        self.server.load(&merged, self.variant.upload)?;

        if self.variant.is_fedavg() {
            for c in &mut self.clients {
                c.bundle.personal_fe = self.server.fe.clone();
                c.bundle.personal_head = self.server.head.clone();
            }
        }

        let behavior = self.variant.behavior;
        let clients = &self.clients;
        let evals: Vec<Option<Evaluation>> = self.pool.install(|| {
            clients
                .par_iter()
                .map(|c| evaluate(c, &c.test, &behavior))
                .collect::<Result<Vec<_>>>()
        })?;
        let accuracy: Vec<Option<f64>> = evals.iter().map(|e| e.map(|e| e.accuracy)).collect();
        let pir: Vec<Option<f64>> = evals.iter().map(|e| e.and_then(|e| e.pir)).collect();
        let present: Vec<f64> = accuracy.iter().flatten().copied().collect();
        let (acc_mean, acc_std) = mean_std(&present);
        self.best = self.best.max(acc_mean);
        let pirs: Vec<f64> = pir.iter().flatten().copied().collect();
        let pir_mean = (!pirs.is_empty()).then(|| pirs.iter().sum::<f64>() / pirs.len() as f64);

        let report = RoundReport {
            t: self.round,
            selected,
            skipped,
            loss_bef,
            loss_aft,
            accuracy,
            acc_mean,
            acc_std,
            acc_best: self.best,
            pir,
            pir_mean,
            align_term,
            wall_time: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "round {} acc {:.4} best {:.4} loss {:.4} → {:.4}",
            report.t,
            report.acc_mean,
            report.acc_best,
            report.loss_bef,
            report.loss_aft
        );
        self.reports.push(report.clone());
        Ok(report)
    }
}

fn client_round(
    server: &ServerModel,
    client: &mut ClientState,
    variant: &Variant,
    hyper: &LocalHyper,
    rng: &mut ChaCha8Rng,
) -> Result<ClientRound> {
    broadcast_and_overwrite(server, client, variant)?;
    let behavior = variant.behavior;
    let loss_bef = training_loss(client, &behavior, hyper)?.unwrap_or(0.0);
    let stats = local_train(client, &behavior, hyper, rng)?;
    let loss_aft = training_loss(client, &behavior, hyper)?.unwrap_or(0.0);
    if !loss_bef.is_finite() {
        return Err(Error::Numeric { op: "loss_bef" });
    }
    if !loss_aft.is_finite() {
        return Err(Error::Numeric { op: "loss_aft" });
    }
    Ok(ClientRound {
        weight: client.n_weight,
        loss_bef,
        loss_aft,
        stats,
        upload: client_upload(client, variant.upload)?,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn make_partition(config: &RunConfig, dataset: &Dataset, seeds: &SeedTree) -> Result<PartitionPlan> {
    let seed = seeds.derive("partition", 0, 0);
    let plan = match config.partition {
        PartitionScheme::Pathological { classes_per_client } => {
            partition_pathological(dataset, config.num_clients, classes_per_client, seed)?
        }
        PartitionScheme::Dirichlet { beta } => {
            partition_dirichlet(dataset, config.num_clients, beta, seed, config.min_samples)?
        }
    };
    plan.check_min_samples(config.min_samples)?;
    Ok(plan)
}
