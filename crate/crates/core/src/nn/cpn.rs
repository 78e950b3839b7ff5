use rand_chacha::ChaCha8Rng;

use super::linear::{BoundLinear, Linear};
use super::{join, Activation, CpnSpec, Module, Norm};
use crate::autodiff::{Graph, Tensor, Var, LN_EPS};
use crate::error::{Error, Result};

/// Conditional policy network: `FC(K→2K) → norm → activation → pair softmax`.
///
/// The `2K` outputs are read as `K` interleaved pairs `(a[2k], a[2k+1])`;
/// the softmax of pair `k` yields `(r_k, s_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cpn {
    pub fc: Linear,
    pub ln_gain: Tensor,
    pub ln_bias: Tensor,
    pub spec: CpnSpec,
}

impl Cpn {
    pub fn init(feature_dim: usize, spec: CpnSpec, rng: &mut ChaCha8Rng) -> Self {
        Self {
            fc: Linear::init(feature_dim, 2 * feature_dim, rng),
            ln_gain: Tensor::ones(&[2 * feature_dim]),
            ln_bias: Tensor::zeros(&[2 * feature_dim]),
            spec,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.fc.in_dim()
    }

    pub fn bind(&self, g: &mut Graph, prefix: Option<&str>) -> BoundCpn {
        let fc = self.fc.bind(g, prefix.map(|p| join(p, "fc")).as_deref());
        let ln = match (self.spec.norm, prefix) {
            (Norm::None, _) => None,
            (Norm::LayerNorm, Some(p)) => Some((
                g.param(join(p, "ln_gain"), self.ln_gain.clone()),
                g.param(join(p, "ln_bias"), self.ln_bias.clone()),
            )),
            (Norm::LayerNorm, None) => Some((
                g.constant(self.ln_gain.clone()),
                g.constant(self.ln_bias.clone()),
            )),
        };
        BoundCpn {
            fc,
            ln,
            activation: self.spec.activation,
            k: self.feature_dim(),
        }
    }
}

impl Module for Cpn {
    fn visit(&self, f: &mut dyn FnMut(String, &Tensor)) {
        self.fc.visit(&mut |n, t| f(format!("fc.{n}"), t));
        if self.spec.norm == Norm::LayerNorm {
            f("ln_gain".into(), &self.ln_gain);
            f("ln_bias".into(), &self.ln_bias);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.fc.visit_mut(&mut |n, t| f(format!("fc.{n}"), t));
        if self.spec.norm == Norm::LayerNorm {
            f("ln_gain".into(), &mut self.ln_gain);
            f("ln_bias".into(), &mut self.ln_bias);
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PolicyVars {
    pub r: Var,
    pub s: Var,
}

#[derive(Clone, Debug)]
pub struct BoundCpn {
    fc: BoundLinear,
    ln: Option<(Var, Var)>,
    activation: Activation,
    k: usize,
}

impl BoundCpn {
    pub fn forward(&self, g: &mut Graph, c: Var) -> Result<PolicyVars> {
        let width = g.value(c).cols();
        if g.value(c).rank() != 2 || width != self.k {
            return Err(Error::dim(
                "cpn_forward",
                format!("input {:?}, expected width {}", g.value(c).shape(), self.k),
            ));
        }
        let b = g.value(c).rows();
        let mut z = self.fc.forward(g, c)?;
        if let Some((gain, bias)) = self.ln {
            z = g.layer_norm(z, gain, bias, LN_EPS)?;
        }
        let a = match self.activation {
            Activation::Relu => g.relu(z)?,
            Activation::Tanh => g.tanh(z)?,
            Activation::Sigmoid => g.sigmoid(z)?,
        };
        let pairs = g.reshape(a, &[b, self.k, 2])?;
        let p = g.pair_softmax(pairs)?;
        Ok(PolicyVars {
            r: g.pair_component(p, 0)?,
            s: g.pair_component(p, 1)?,
        })
    }
}
