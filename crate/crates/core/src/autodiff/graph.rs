//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node holding its output value.
//! Nodes are appended in creation order, so the tape is topologically sorted
//! by construction and [`Graph::backward`] simply walks it in reverse.

use std::collections::BTreeMap;

use super::tensor::{mm, mm_nt, mm_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate backward-pass corruption used as a negative control for the
/// gradient checks.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Drops the mean-correction terms from the layer-norm input gradient.
    LayerNormBackward,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    HadamardRow(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Reshape(Var),
    PairSoftmax(Var),
    PairComponent(Var, usize),
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    Sum(Var),
    Scale(Var, f64),
    Mmd {
        x: Var,
        y: Var,
        bandwidths: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    name: Option<String>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

/// Result of [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    named: BTreeMap<String, Tensor>,
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a named parameter.
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.named.get(name)
    }

    /// Gradient flowing into any node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.by_node.get(v.0).and_then(Option::as_ref)
    }

    pub fn named(&self) -> &BTreeMap<String, Tensor> {
        &self.named
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor> {
        self.named
    }
}

fn broadcast_row_len(a: &Tensor, row: &Tensor) -> Option<usize> {
    let k = a.cols();
    let ok = a.rank() == 2
        && ((row.rank() == 1 && row.shape()[0] == k)
            || (row.rank() == 2 && row.shape()[0] == 1 && row.shape()[1] == k));
    ok.then_some(k)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn with_fault(fault: Fault) -> Self {
        Self {
            nodes: Vec::new(),
            fault: Some(fault),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf; receives a gradient under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        self.push_node(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            name: Some(name.into()),
        })
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            name: None,
        })
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_node(&mut self, node: Node) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &'static str) -> Result<Var> {
        let value = value.ensure_finite(name)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_node(Node {
            value,
            op,
            requires_grad,
            name: None,
        }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::dim(
                "matmul",
                format!("{:?} · {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = Tensor::new(vec![m, n], mm(ta.data(), tb.data(), m, k, n))?;
        self.push(out, Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// `a · bᵀ`, the shape used by linear layers storing weights as `out×in`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[1] {
            return Err(Error::dim(
                "matmul_nt",
                format!("{:?} · {:?}ᵀ", ta.shape(), tb.shape()),
            ));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
        let out = Tensor::new(vec![m, n], mm_nt(ta.data(), tb.data(), m, k, n))?;
        self.push(out, Op::MatMulNt(a, b), &[a, b], "matmul_nt")
    }

    /// Elementwise sum; `b` may also be a row broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let out = ta.zip_map(tb, |x, y| x + y)?;
            return self.push(out, Op::Add(a, b), &[a, b], "add");
        }
        let Some(k) = broadcast_row_len(ta, tb) else {
            return Err(Error::dim(
                "add",
                format!("{:?} + {:?}", ta.shape(), tb.shape()),
            ));
        };
        let row = tb.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + row[i % k])
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(out, Op::AddRow(a, b), &[a, b], "add")
    }

    /// Elementwise product; `b` may also be a row broadcast over `a`'s rows.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let out = ta.zip_map(tb, |x, y| x * y)?;
            return self.push(out, Op::Hadamard(a, b), &[a, b], "hadamard");
        }
        let Some(k) = broadcast_row_len(ta, tb) else {
            return Err(Error::dim(
                "hadamard",
                format!("{:?} ⊙ {:?}", ta.shape(), tb.shape()),
            ));
        };
        let row = tb.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * row[i % k])
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(out, Op::HadamardRow(a, b), &[a, b], "hadamard")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a), &[a], "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a], "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a], "sigmoid")
    }

    /// Per-row normalization with biased variance, then `· gain + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 || tx.shape()[1] == 0 {
            return Err(Error::dim("layer_norm", format!("input {:?}", tx.shape())));
        }
        let (b, d) = (tx.shape()[0], tx.shape()[1]);
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.len() != d || tb.len() != d {
            return Err(Error::dim(
                "layer_norm",
                format!("gain {:?} / bias {:?} for width {d}", tg.shape(), tb.shape()),
            ));
        }
        let mut xhat = Vec::with_capacity(b * d);
        let mut inv_std = Vec::with_capacity(b);
        let mut out = Vec::with_capacity(b * d);
        for i in 0..b {
            let row = tx.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let n = (v - mean) * is;
                xhat.push(n);
                out.push(n * tg.data()[j] + tb.data()[j]);
            }
        }
        let out = Tensor::new(vec![b, d], out)?;
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
            "layer_norm",
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        self.push(out, Op::Reshape(a), &[a], "reshape")
    }

    /// Softmax over each trailing pair of a `B×K×2` tensor.
    pub fn pair_softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 3 || ta.shape()[2] != 2 {
            return Err(Error::dim(
                "pair_softmax",
                format!("expected B×K×2, got {:?}", ta.shape()),
            ));
        }
        let mut data = Vec::with_capacity(ta.len());
        for pair in ta.data().chunks_exact(2) {
            let m = pair[0].max(pair[1]);
            let e0 = (pair[0] - m).exp();
            let e1 = (pair[1] - m).exp();
            let z = e0 + e1;
            data.push(e0 / z);
            data.push(e1 / z);
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(out, Op::PairSoftmax(a), &[a], "pair_softmax")
    }

    /// Slice `[.., .., j]` of a `B×K×2` tensor as `B×K`.
    pub fn pair_component(&mut self, a: Var, j: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 3 || ta.shape()[2] != 2 || j > 1 {
            return Err(Error::dim(
                "pair_component",
                format!("component {j} of {:?}", ta.shape()),
            ));
        }
        let data = ta.data().chunks_exact(2).map(|p| p[j]).collect();
        let out = Tensor::new(vec![ta.shape()[0], ta.shape()[1]], data)?;
        self.push(out, Op::PairComponent(a, j), &[a], "pair_component")
    }

    /// Mean cross-entropy of softmax(logits) against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        if tl.rank() != 2 || tl.shape()[0] != labels.len() || tl.shape()[0] == 0 {
            return Err(Error::dim(
                "cross_entropy",
                format!("logits {:?} for {} labels", tl.shape(), labels.len()),
            ));
        }
        let (b, c) = (tl.shape()[0], tl.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut probs = Vec::with_capacity(b * c);
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = tl.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + z.ln();
            total += lse - row[y];
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let out = Tensor::scalar(total / b as f64);
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            &[logits],
            "cross_entropy",
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a], "sum")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c), &[a], "scale")
    }

    /// Biased squared MMD between the rows of `x` and `y` under a mean of RBF
    /// kernels `exp(-‖u-v‖² / bw)`, one per bandwidth.
    pub fn mmd(&mut self, x: Var, y: Var, bandwidths: &[f64]) -> Result<Var> {
        let (tx, ty) = (self.value(x), self.value(y));
        if tx.rank() != 2 || ty.rank() != 2 || tx.cols() != ty.cols() {
            return Err(Error::dim(
                "mmd",
                format!("{:?} vs {:?}", tx.shape(), ty.shape()),
            ));
        }
        if tx.rows() == 0 || ty.rows() == 0 {
            return Err(Error::dim("mmd", "empty batch"));
        }
        if bandwidths.is_empty() || bandwidths.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::Input(format!("invalid bandwidths {bandwidths:?}")));
        }
        let value = mmd_value(tx, ty, bandwidths);
        let out = Tensor::scalar(value);
        self.push(
            out,
            Op::Mmd {
                x,
                y,
                bandwidths: bandwidths.to_vec(),
            },
            &[x, y],
            "mmd",
        )
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Every named parameter gets an entry; parameters the loss does not
    /// depend on receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut named = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Op::Leaf, Some(name)) = (&node.op, &node.name) {
                let g = grads[idx]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                if named.insert(name.clone(), g).is_some() {
                    return Err(Error::Usage(format!("duplicate parameter name `{name}`")));
                }
            }
        }
        Ok(Gradients {
            named,
            by_node: grads,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.axpy(1.0, &g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => Ok(()),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.requires_grad(*a) {
                    // dA = dC · Bᵀ
                    let da = Tensor::new(vec![m, k], mm_nt(g.data(), tb.data(), m, n, k))?;
                    self.accumulate(grads, *a, da)?;
                }
                if self.requires_grad(*b) {
                    // dB = Aᵀ · dC
                    let db = Tensor::new(vec![k, n], mm_tn(ta.data(), g.data(), m, k, n))?;
                    self.accumulate(grads, *b, db)?;
                }
                Ok(())
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
                if self.requires_grad(*a) {
                    let da = Tensor::new(vec![m, k], mm(g.data(), tb.data(), m, n, k))?;
                    self.accumulate(grads, *a, da)?;
                }
                if self.requires_grad(*b) {
                    let db = Tensor::new(vec![n, k], mm_tn(g.data(), ta.data(), m, n, k))?;
                    self.accumulate(grads, *b, db)?;
                }
                Ok(())
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone())?;
                if self.requires_grad(*row) {
                    let shape = self.value(*row).shape().to_vec();
                    self.accumulate(grads, *row, Tensor::new(shape, column_sums(g))?)?;
                }
                Ok(())
            }
            Op::Hadamard(a, b) => {
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y)?)?;
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y)?)?;
                }
                Ok(())
            }
            Op::HadamardRow(a, row) => {
                let (ta, tr) = (self.value(*a), self.value(*row));
                let k = ta.cols();
                if self.requires_grad(*a) {
                    let data = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &x)| x * tr.data()[i % k])
                        .collect();
                    self.accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), data)?)?;
                }
                if self.requires_grad(*row) {
                    let prod = g.zip_map(ta, |x, y| x * y)?;
                    let shape = tr.shape().to_vec();
                    self.accumulate(grads, *row, Tensor::new(shape, column_sums(&prod))?)?;
                }
                Ok(())
            }
            Op::Relu(a) => {
                let d = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                self.accumulate(grads, *a, d)
            }
            Op::Tanh(a) => {
                let d = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y))?;
                self.accumulate(grads, *a, d)
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))?;
                self.accumulate(grads, *a, d)
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (b, d) = (g.shape()[0], g.shape()[1]);
                let tg = self.value(*gain).data();
                if self.requires_grad(*x) {
                    let mut dx = Vec::with_capacity(b * d);
                    for i in 0..b {
                        let gi = &g.data()[i * d..(i + 1) * d];
                        let xi = &xhat[i * d..(i + 1) * d];
                        let dxhat: Vec<f64> = gi.iter().zip(tg).map(|(a, w)| a * w).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx =
                            dxhat.iter().zip(xi).map(|(a, h)| a * h).sum::<f64>() / d as f64;
                        for j in 0..d {
                            let v = match self.fault {
                                Some(Fault::LayerNormBackward) => dxhat[j] * inv_std[i],
                                None => (dxhat[j] - mean_d - xi[j] * mean_dx) * inv_std[i],
                            };
                            dx.push(v);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![b, d], dx)?)?;
                }
                if self.requires_grad(*gain) {
                    let mut dg = vec![0.0; d];
                    for (i, &gv) in g.data().iter().enumerate() {
                        dg[i % d] += gv * xhat[i];
                    }
                    let shape = self.value(*gain).shape().to_vec();
                    self.accumulate(grads, *gain, Tensor::new(shape, dg)?)?;
                }
                if self.requires_grad(*bias) {
                    let shape = self.value(*bias).shape().to_vec();
                    self.accumulate(grads, *bias, Tensor::new(shape, column_sums(g))?)?;
                }
                Ok(())
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape();
                self.accumulate(grads, *a, g.reshape(shape)?)
            }
            Op::PairSoftmax(a) => {
                let p = node.value.data();
                let mut d = Vec::with_capacity(p.len());
                for (pp, gg) in p.chunks_exact(2).zip(g.data().chunks_exact(2)) {
                    let dot = pp[0] * gg[0] + pp[1] * gg[1];
                    d.push(pp[0] * (gg[0] - dot));
                    d.push(pp[1] * (gg[1] - dot));
                }
                self.accumulate(grads, *a, Tensor::new(node.value.shape().to_vec(), d)?)
            }
            Op::PairComponent(a, j) => {
                let shape = self.value(*a).shape().to_vec();
                let mut d = vec![0.0; shape.iter().product()];
                for (i, &gv) in g.data().iter().enumerate() {
                    d[2 * i + j] = gv;
                }
                self.accumulate(grads, *a, Tensor::new(shape, d)?)
            }
            Op::CrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let shape = self.value(*logits).shape().to_vec();
                let (b, c) = (shape[0], shape[1]);
                let scale = g.item() / b as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &y) in labels.iter().enumerate() {
                    d[i * c + y] -= scale;
                }
                self.accumulate(grads, *logits, Tensor::new(shape, d)?)
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape();
                self.accumulate(grads, *a, Tensor::full(shape, g.item()))
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|v| v * c)),
            Op::Mmd { x, y, bandwidths } => {
                let (tx, ty) = (self.value(*x), self.value(*y));
                let (dx, dy) = mmd_grads(tx, ty, bandwidths);
                let up = g.item();
                if self.requires_grad(*x) {
                    self.accumulate(grads, *x, dx.map(|v| v * up))?;
                }
                if self.requires_grad(*y) {
                    self.accumulate(grads, *y, dy.map(|v| v * up))?;
                }
                Ok(())
            }
        }
    }
}

fn column_sums(g: &Tensor) -> Vec<f64> {
    let k = g.cols();
    let mut out = vec![0.0; k];
    for (i, &v) in g.data().iter().enumerate() {
        out[i % k] += v;
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kernel(d2: f64, bandwidths: &[f64]) -> f64 {
    bandwidths.iter().map(|bw| (-d2 / bw).exp()).sum::<f64>() / bandwidths.len() as f64
}

/// dk/d(d²) for the averaged kernel.
fn kernel_slope(d2: f64, bandwidths: &[f64]) -> f64 {
    bandwidths
        .iter()
        .map(|bw| -(-d2 / bw).exp() / bw)
        .sum::<f64>()
        / bandwidths.len() as f64
}

/// Terms are summed in sorted order so that `mean_kernel(a, b)` and
/// `mean_kernel(b, a)` agree bit for bit.
fn mean_kernel(a: &Tensor, b: &Tensor, bandwidths: &[f64]) -> f64 {
    let mut terms = Vec::with_capacity(a.rows() * b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            terms.push(kernel(sq_dist(a.row(i), b.row(j)), bandwidths));
        }
    }
    terms.sort_by(f64::total_cmp);
    terms.iter().sum::<f64>() / terms.len() as f64
}

pub(crate) fn mmd_value(x: &Tensor, y: &Tensor, bandwidths: &[f64]) -> f64 {
    mean_kernel(x, x, bandwidths) + mean_kernel(y, y, bandwidths)
        - 2.0 * mean_kernel(x, y, bandwidths)
}

fn mmd_grads(x: &Tensor, y: &Tensor, bandwidths: &[f64]) -> (Tensor, Tensor) {
    let (nx, ny, k) = (x.rows(), y.rows(), x.cols());
    let mut dx = vec![0.0; nx * k];
    let mut dy = vec![0.0; ny * k];
    // ∂k(u,v)/∂u = slope · 2(u - v) = -∂k(u,v)/∂v
    let coeff = |a: &[f64], b: &[f64], weight: f64| {
        kernel_slope(sq_dist(a, b), bandwidths) * 2.0 * weight
    };

    let wxx = 1.0 / (nx * nx) as f64;
    for i in 0..nx {
        for j in (0..nx).filter(|&j| j != i) {
            let s = coeff(x.row(i), x.row(j), wxx);
            for t in 0..k {
                let diff = s * (x.at(i, t) - x.at(j, t));
                dx[i * k + t] += diff;
                dx[j * k + t] -= diff;
            }
        }
    }
    let wyy = 1.0 / (ny * ny) as f64;
    for i in 0..ny {
        for j in (0..ny).filter(|&j| j != i) {
            let s = coeff(y.row(i), y.row(j), wyy);
            for t in 0..k {
                let diff = s * (y.at(i, t) - y.at(j, t));
                dy[i * k + t] += diff;
                dy[j * k + t] -= diff;
            }
        }
    }
    let wxy = -2.0 / (nx * ny) as f64;
    for i in 0..nx {
        for j in 0..ny {
            let s = coeff(x.row(i), y.row(j), wxy);
            for t in 0..k {
                let diff = s * (x.at(i, t) - y.at(j, t));
                dx[i * k + t] += diff;
                dy[j * k + t] -= diff;
            }
        }
    }
    (
        Tensor::new(vec![nx, k], dx).expect("shape"),
        Tensor::new(vec![ny, k], dy).expect("shape"),
    )
}
