//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_idx, synth_clusters, Dataset, PartitionScheme};
use crate::error::{Error, Result};
use crate::federation::{Algorithm, RhoSpec, RunConfig};
use crate::fedcp::Bandwidth;
use crate::nn::{ArchSpec, CpnSpec};
use crate::seed::SeedTree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Synthetic {
        num_classes: usize,
        dim: usize,
        per_class: usize,
        sigma: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Dirichlet,
    Pathological,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub scheme: SchemeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes_per_client: Option<usize>,
    pub num_clients: usize,
    #[serde(default = "default_min_samples")]
    pub min_samples: usize,
    #[serde(default = "default_train_ratio")]
    pub train_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Defaults to the dataset's feature count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    /// Defaults to the dataset's class count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default)]
    pub cpn: CpnSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub rounds: usize,
    #[serde(default)]
    pub rho: RhoSpec,
    #[serde(alias = "eta")]
    pub lr: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub partition: PartitionSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_min_samples() -> usize {
    10
}
fn default_train_ratio() -> f64 {
    0.75
}
fn default_lambda() -> f64 {
    5.0
}
fn default_epochs() -> usize {
    1
}
fn default_batch_size() -> usize {
    10
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("fedcp-out")
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    parse_config_str(&std::fs::read_to_string(path)?)
}

impl ExperimentConfig {
    /// Checks everything that does not depend on the loaded dataset.
    pub fn validate(&self) -> Result<()> {
        if let DatasetSpec::Synthetic { num_classes, dim, per_class, sigma } = self.dataset {
            if !(sigma > 0.0) || !sigma.is_finite() {
                return Err(Error::config("dataset.sigma", "must be a positive finite number"));
            }
            for (key, v) in [
                ("dataset.num_classes", num_classes),
                ("dataset.dim", dim),
                ("dataset.per_class", per_class),
            ] {
                if v == 0 {
                    return Err(Error::config(key, "must be positive"));
                }
            }
        }
        self.scheme()?;
        self.training
            .rho
            .validate()
            .map_err(|e| match e {
                Error::Config { message, .. } => Error::config("training.rho", message),
                other => other,
            })?;
        let t = &self.training;
        if t.rounds == 0 {
            return Err(Error::config("training.rounds", "must be at least 1"));
        }
        if !(t.lr > 0.0) || !t.lr.is_finite() {
            return Err(Error::config("training.lr", "must be a positive finite number"));
        }
        if !(t.lambda >= 0.0) || !t.lambda.is_finite() {
            return Err(Error::config("training.lambda", "must be a non-negative finite number"));
        }
        if t.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be positive"));
        }
        if self.partition.num_clients == 0 {
            return Err(Error::config("partition.num_clients", "must be positive"));
        }
        if self.model.feature_dim == 0 {
            return Err(Error::config("model.feature_dim", "must be positive"));
        }
        Ok(())
    }

    pub fn scheme(&self) -> Result<PartitionScheme> {
        let p = &self.partition;
        match p.scheme {
            SchemeName::Dirichlet => {
                let beta = p
                    .beta
                    .ok_or_else(|| Error::config("partition.beta", "required for the dirichlet scheme"))?;
                if !(beta > 0.0) || !beta.is_finite() {
                    return Err(Error::config("partition.beta", format!("must be positive, got {beta}")));
                }
                Ok(PartitionScheme::Dirichlet { beta })
            }
            SchemeName::Pathological => {
                let m = p.classes_per_client.ok_or_else(|| {
                    Error::config("partition.classes_per_client", "required for the pathological scheme")
                })?;
                if m == 0 {
                    return Err(Error::config("partition.classes_per_client", "must be positive"));
                }
                Ok(PartitionScheme::Pathological { classes_per_client: m })
            }
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSpec::Idx { images, labels } => load_idx(images, labels),
            DatasetSpec::Synthetic { num_classes, dim, per_class, sigma } => synth_clusters(
                *num_classes,
                *dim,
                *per_class,
                *sigma,
                SeedTree::new(self.master_seed).derive("data", 0, 0),
            ),
        }
    }

    pub fn run_config(&self, dataset: &Dataset) -> Result<RunConfig> {
        let m = &self.model;
        let rc = RunConfig {
            algorithm: self.algorithm,
            num_clients: self.partition.num_clients,
            rounds: self.training.rounds,
            rho: self.training.rho,
            lr: self.training.lr,
            lambda: self.training.lambda,
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            arch: ArchSpec {
                input_dim: m.input_dim.unwrap_or(dataset.dim()),
                hidden: m.hidden.clone(),
                feature_dim: m.feature_dim,
                num_classes: m.num_classes.unwrap_or(dataset.num_classes),
                cpn: m.cpn,
            },
            partition: self.scheme()?,
            min_samples: self.partition.min_samples,
            train_ratio: self.partition.train_ratio,
            master_seed: self.master_seed,
            bandwidth: Bandwidth::Median,
        };
        rc.validate()?;
        Ok(rc)
    }
}
