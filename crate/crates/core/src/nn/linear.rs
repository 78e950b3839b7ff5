use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{join, Module};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Fully connected layer, `y = x·Wᵀ + b` with `W` stored `out×in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            weight: Tensor::new(vec![fan_out, fan_in], data).expect("shape"),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Registers the weights in `g`: as trainable parameters under `prefix`,
    /// or as constants when `prefix` is `None`.
    pub fn bind(&self, g: &mut Graph, prefix: Option<&str>) -> BoundLinear {
        match prefix {
            Some(p) => BoundLinear {
                weight: g.param(join(p, "weight"), self.weight.clone()),
                bias: g.param(join(p, "bias"), self.bias.clone()),
            },
            None => BoundLinear {
                weight: g.constant(self.weight.clone()),
                bias: g.constant(self.bias.clone()),
            },
        }
    }
}

impl Module for Linear {
    fn visit(&self, f: &mut dyn FnMut(String, &Tensor)) {
        f("weight".into(), &self.weight);
        f("bias".into(), &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        f("weight".into(), &mut self.weight);
        f("bias".into(), &mut self.bias);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl BoundLinear {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = g.matmul_nt(x, self.weight)?;
        g.add(y, self.bias)
    }
}

/// MLP `f: R^D → R^K` with ReLU between layers (none after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    pub layers: Vec<Linear>,
}

impl FeatureExtractor {
    pub fn init(input_dim: usize, hidden: &[usize], feature_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(feature_dim);
        let layers = dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Linear::in_dim)
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::out_dim)
    }

    pub fn bind(&self, g: &mut Graph, prefix: Option<&str>) -> BoundFeatureExtractor {
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.bind(g, prefix.map(|p| format!("{p}.layers.{i}")).as_deref()))
            .collect();
        BoundFeatureExtractor {
            layers,
            input_dim: self.input_dim(),
        }
    }
}

impl Module for FeatureExtractor {
    fn visit(&self, f: &mut dyn FnMut(String, &Tensor)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&mut |n, t| f(format!("layers.{i}.{n}"), t));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&mut |n, t| f(format!("layers.{i}.{n}"), t));
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoundFeatureExtractor {
    layers: Vec<BoundLinear>,
    input_dim: usize,
}

impl BoundFeatureExtractor {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        if g.value(x).cols() != self.input_dim {
            return Err(Error::dim(
                "extract_features",
                format!("input width {} != {}", g.value(x).cols(), self.input_dim),
            ));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i + 1 < self.layers.len() {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// The last FC layer, mapping `K` features to `C` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub fc: Linear,
}

impl Head {
    pub fn init(feature_dim: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            fc: Linear::init(feature_dim, num_classes, rng),
        }
    }

    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.len() != weight.shape()[0] || bias.rank() != 1 {
            return Err(Error::dim(
                "head",
                format!("weight {:?}, bias {:?}", weight.shape(), bias.shape()),
            ));
        }
        Ok(Self {
            fc: Linear { weight, bias },
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.fc.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.fc.bias
    }

    pub fn num_classes(&self) -> usize {
        self.fc.out_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.fc.in_dim()
    }

    pub fn bind(&self, g: &mut Graph, prefix: Option<&str>) -> BoundLinear {
        self.fc.bind(g, prefix)
    }
}

impl Module for Head {
    fn visit(&self, f: &mut dyn FnMut(String, &Tensor)) {
        self.fc.visit(f)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.fc.visit_mut(f)
    }
}
