//! The three network roles: feature extractor, head, and the conditional
//! policy network (CPN).

mod cpn;
mod linear;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cpn::{BoundCpn, Cpn, PolicyVars};
pub use linear::{BoundFeatureExtractor, BoundLinear, FeatureExtractor, Head, Linear};

use crate::autodiff::{sgd_step, Gradients, Graph, ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[default]
    LayerNorm,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CpnSpec {
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub norm: Norm,
}

/// Network dimensions: `input_dim → hidden… → feature_dim` for the
/// extractor, `feature_dim → num_classes` for each head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub cpn: CpnSpec,
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("model.input_dim", self.input_dim),
            ("model.feature_dim", self.feature_dim),
            ("model.num_classes", self.num_classes),
        ];
        for (key, v) in checks {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "widths must be positive"));
        }
        Ok(())
    }
}

/// Anything holding named parameter tensors.
pub trait Module {
    fn visit(&self, f: &mut dyn FnMut(String, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    fn param_set(&self, prefix: &str) -> ParamSet {
        let mut ps = ParamSet::new();
        self.visit(&mut |name, t| ps.push(join(prefix, &name), t.clone()));
        ps
    }

    /// Overwrites every tensor from a set with the same layout.
    fn load_param_set(&mut self, prefix: &str, ps: &ParamSet) -> Result<()> {
        let mut idx = 0;
        let mut err = None;
        self.visit_mut(&mut |name, t| {
            if err.is_some() {
                return;
            }
            match ps.entries().get(idx) {
                Some(e) if e.name == join(prefix, &name) && e.value.shape() == t.shape() => {
                    *t = e.value.clone();
                }
                other => {
                    err = Some(Error::Protocol(format!(
                        "parameter layout mismatch at `{}`: got {:?}",
                        join(prefix, &name),
                        other.map(|e| (&e.name, e.value.shape()))
                    )));
                }
            }
            idx += 1;
        });
        match err {
            Some(e) => Err(e),
            None if idx != ps.len() => Err(Error::Protocol(format!(
                "parameter count mismatch: module has {idx}, set has {}",
                ps.len()
            ))),
            None => Ok(()),
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| {
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&t.to_bytes());
        });
        out
    }

    /// SGD on this module's parameters using gradients recorded under `prefix`.
    fn apply_sgd(&mut self, prefix: &str, grads: &Gradients, lr: f64) -> Result<()> {
        let mut ps = self.param_set(prefix);
        sgd_step(&mut ps, grads.named(), lr)?;
        self.load_param_set(prefix, &ps)
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Everything one client holds: frozen global copies, personalized parts,
/// and the policy network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub global_fe: FeatureExtractor,
    pub global_head: Head,
    pub personal_fe: FeatureExtractor,
    pub personal_head: Head,
    pub cpn: Option<Cpn>,
}

impl ModelBundle {
    /// Parameters of the inference model: personal extractor, both heads and
    /// the CPN. The frozen global extractor is training-only and not counted.
    pub fn param_count(&self) -> usize {
        self.personal_fe.param_count()
            + self.global_head.param_count()
            + self.personal_head.param_count()
            + self.cpn.as_ref().map_or(0, Module::param_count)
    }

    pub fn without_cpn(mut self) -> Self {
        self.cpn = None;
        self
    }
}

/// Fresh parameters drawn from a stream seeded by `seed`.
///
/// Weights are `Uniform(±1/√fan_in)`, biases zero, layer-norm gain one and
/// bias zero. Global and personal copies start identical.
pub fn init_params(arch: &ArchSpec, seed: u64) -> Result<ModelBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_params_with(arch, &mut rng)
}

pub fn init_params_with(arch: &ArchSpec, rng: &mut ChaCha8Rng) -> Result<ModelBundle> {
    arch.validate()?;
    let fe = FeatureExtractor::init(arch.input_dim, &arch.hidden, arch.feature_dim, rng);
    let head = Head::init(arch.feature_dim, arch.num_classes, rng);
    let cpn = Cpn::init(arch.feature_dim, arch.cpn, rng);
    Ok(ModelBundle {
        global_fe: fe.clone(),
        global_head: head.clone(),
        personal_fe: fe,
        personal_head: head,
        cpn: Some(cpn),
    })
}

/// `h = f(x)` evaluated outside of any training graph.
pub fn extract_features(fe: &FeatureExtractor, x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = fe.bind(&mut g, None);
    let xv = g.constant(x.clone());
    let h = bound.forward(&mut g, xv)?;
    Ok(g.value(h).clone())
}

pub fn head_forward(head: &Head, h: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let bound = head.bind(&mut g, None);
    let hv = g.constant(h.clone());
    let out = bound.forward(&mut g, hv)?;
    Ok(g.value(out).clone())
}

/// Per-sample routing weights; `r + s = 1` elementwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub r: Tensor,
    pub s: Tensor,
}

pub fn cpn_forward(cpn: &Cpn, c: &Tensor) -> Result<Policy> {
    let mut g = Graph::new();
    let bound = cpn.bind(&mut g, None);
    let cv = g.constant(c.clone());
    let p = bound.forward(&mut g, cv)?;
    Ok(Policy {
        r: g.value(p.r).clone(),
        s: g.value(p.s).clone(),
    })
}
