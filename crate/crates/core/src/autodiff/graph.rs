//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in creation order, so the node list is
//! already a topological order. [`Graph::backward`] walks it in reverse and
//! accumulates gradients additively into each input.

use crate::autodiff::activation::{leaky, leaky_slope, Activation};
use crate::autodiff::conv::{conv2d_backward, conv2d_forward, Conv2dParams};
use crate::autodiff::norm::{
    batch_norm_backward, batch_norm_forward, layer_norm_c_backward, layer_norm_c_forward, layout,
    BnMode,
};
use crate::autodiff::pool::{
    global_avg_pool_backward, global_avg_pool_forward, maxpool2d_backward, maxpool2d_forward,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv2d(Conv2dParams),
    Linear,
    MaxPool2d { argmax: Vec<usize> },
    GlobalAvgPool,
    LayerNormC { xhat: Vec<f64>, inv_std: Vec<f64> },
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64>, mode: BnMode },
    Activation(Activation),
    Prelu,
    Add,
    Scale(f64),
    WeightedSum(Tensor),
    SoftmaxCrossEntropy { probs: Vec<f64>, labels: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d(_) => "conv2d",
            Op::Linear => "linear",
            Op::MaxPool2d { .. } => "maxpool2d",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::LayerNormC { .. } => "layer_norm_c",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Activation(_) => "activation",
            Op::Prelu => "prelu",
            Op::Add => "add",
            Op::Scale(_) => "scale",
            Op::WeightedSum(_) => "weighted_sum",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    inputs: Vec<Var>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` if no path connects it to the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Gradient of `v`, zero-filled when `v` is unreachable from the loss.
    pub fn get_or_zeros(&self, graph: &Graph, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros_like(graph.value(v)))
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A constant leaf; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            inputs: Vec::new(),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: Vec<Var>) -> Result<Var> {
        let node = self.nodes.len();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                node,
                op: op.name(),
            });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Ok(Var(node))
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, p: Conv2dParams) -> Result<Var> {
        let out = conv2d_forward(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            p,
        )?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.push(out, Op::Conv2d(p), inputs)
    }

    /// `y = x W^T + b` for `x: [N, Cin]`, `W: [Cout, Cin]`, `b: [Cout]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(weight), self.value(bias));
        let ([n, cin], [cout, wcin], [bcout]) = (xv.shape(), wv.shape(), bv.shape()) else {
            return Err(Error::Shape(format!(
                "linear expects [N,Cin], [Cout,Cin], [Cout]; got {:?}, {:?}, {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        };
        if cin != wcin || cout != bcout {
            return Err(Error::Shape(format!(
                "linear input width {cin}, weight {:?}, bias {:?}",
                wv.shape(),
                bv.shape()
            )));
        }
        let (n, cin, cout) = (*n, *cin, *cout);
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = vec![0.0; n * cout];
        for i in 0..n {
            let row = &xd[i * cin..(i + 1) * cin];
            for o in 0..cout {
                let w = &wd[o * cin..(o + 1) * cin];
                out[i * cout + o] = bd[o] + row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let out = Tensor::new(vec![n, cout], out)?;
        self.push(out, Op::Linear, vec![x, weight, bias])
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize, padding: usize) -> Result<Var> {
        let (out, argmax) = maxpool2d_forward(self.value(x), k, stride, padding)?;
        self.push(out, Op::MaxPool2d { argmax }, vec![x])
    }

    /// `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = global_avg_pool_forward(self.value(x))?;
        self.push(out, Op::GlobalAvgPool, vec![x])
    }

    pub fn layer_norm_c(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let f = layer_norm_c_forward(self.value(x), self.value(gamma), self.value(beta), eps)?;
        self.push(
            f.out,
            Op::LayerNormC {
                xhat: f.xhat,
                inv_std: f.inv_std,
            },
            vec![x, gamma, beta],
        )
    }

    /// Running statistics are caller-owned buffers, updated in place in
    /// [`BnMode::Train`].
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut Tensor,
        running_var: &mut Tensor,
        momentum: f64,
        eps: f64,
        mode: BnMode,
    ) -> Result<Var> {
        let f = batch_norm_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            momentum,
            eps,
            mode,
        )?;
        self.push(
            f.out,
            Op::BatchNorm {
                xhat: f.xhat,
                inv_std: f.inv_std,
                mode,
            },
            vec![x, gamma, beta],
        )
    }

    /// Elementwise activation. For [`Activation::Prelu`] use [`Graph::prelu`].
    pub fn activation(&mut self, kind: Activation, x: Var) -> Result<Var> {
        if kind == Activation::Prelu {
            return Err(Error::InvalidArgument(
                "prelu needs a slope parameter; use Graph::prelu".into(),
            ));
        }
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| kind.apply(v)).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(out, Op::Activation(kind), vec![x])
    }

    /// PReLU with one learned slope per channel (`alpha: [C]`).
    pub fn prelu(&mut self, x: Var, alpha: Var) -> Result<Var> {
        let (xv, av) = (self.value(x), self.value(alpha));
        let l = layout(xv.shape())?;
        if av.shape() != [l.c] {
            return Err(Error::Shape(format!(
                "prelu slope {:?} for {} channels",
                av.shape(),
                l.c
            )));
        }
        let a = av.data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| leaky(v, a[(i / l.plane) % l.c]))
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(out, Op::Prelu, vec![x, alpha])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape(format!(
                "add {:?} + {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(out, Op::Add, vec![a, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let mut out = self.value(x).clone();
        out.scale(c);
        self.push(out, Op::Scale(c), vec![x])
    }

    /// Scalar `sum_i weights_i * x_i`.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != weights.shape() {
            return Err(Error::Shape(format!(
                "weighted sum of {:?} with weights {:?}",
                xv.shape(),
                weights.shape()
            )));
        }
        let s = xv.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        self.push(Tensor::scalar(s), Op::WeightedSum(weights), vec![x])
    }

    /// Mean softmax cross-entropy of `logits: [N, K]` against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let [n, k] = lv.shape() else {
            return Err(Error::Shape(format!(
                "cross-entropy expects [N,K] logits, got {:?}",
                lv.shape()
            )));
        };
        let (n, k) = (*n, *k);
        if labels.len() != n || n == 0 {
            return Err(Error::Shape(format!(
                "{} labels for {n} logit rows",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!("label {bad} outside {k} classes")));
        }
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for (i, row) in lv.data().chunks(k).enumerate() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + z.ln();
            loss += lse - row[labels[i]];
            for (j, v) in row.iter().enumerate() {
                probs[i * k + j] = (v - m).exp() / z;
            }
        }
        self.push(
            Tensor::scalar(loss / n as f64),
            Op::SoftmaxCrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            vec![logits],
        )
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            let need: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let input_grads = self.node_backward(node, &dy, &need)?;
            for ((v, g), needed) in node.inputs.iter().zip(input_grads).zip(need) {
                let Some(g) = g else { continue };
                if !needed {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.axpy(1.0, &g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn node_backward(&self, node: &Node, dy: &Tensor, need: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let input = |j: usize| self.value(node.inputs[j]);
        let grads = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d(p) => {
                let need_bias = need.get(2).copied().unwrap_or(false);
                let g = conv2d_backward(input(0), input(1), dy, *p, [need[0], need[1], need_bias])?;
                vec![g.input, g.weight, g.bias]
            }
            Op::Linear => {
                let (x, w) = (input(0), input(1));
                let (n, cin) = (x.shape()[0], x.shape()[1]);
                let cout = w.shape()[0];
                let (xd, wd, dyd) = (x.data(), w.data(), dy.data());
                let mut dx = vec![0.0; n * cin];
                let mut dw = vec![0.0; cout * cin];
                let mut db = vec![0.0; cout];
                for i in 0..n {
                    for o in 0..cout {
                        let d = dyd[i * cout + o];
                        db[o] += d;
                        for j in 0..cin {
                            dx[i * cin + j] += d * wd[o * cin + j];
                            dw[o * cin + j] += d * xd[i * cin + j];
                        }
                    }
                }
                vec![
                    Some(Tensor::new(vec![n, cin], dx)?),
                    Some(Tensor::new(vec![cout, cin], dw)?),
                    Some(Tensor::new(vec![cout], db)?),
                ]
            }
            Op::MaxPool2d { argmax } => {
                vec![Some(maxpool2d_backward(input(0).shape(), argmax, dy)?)]
            }
            Op::GlobalAvgPool => vec![Some(global_avg_pool_backward(input(0).shape(), dy)?)],
            Op::LayerNormC { xhat, inv_std } => {
                let (dx, dg, db) = layer_norm_c_backward(input(0).shape(), input(1), xhat, inv_std, dy)?;
                vec![Some(dx), Some(dg), Some(db)]
            }
            Op::BatchNorm {
                xhat,
                inv_std,
                mode,
            } => {
                let (dx, dg, db) =
                    batch_norm_backward(input(0).shape(), input(1), xhat, inv_std, dy, *mode)?;
                vec![Some(dx), Some(dg), Some(db)]
            }
            Op::Activation(kind) => {
                let x = input(0);
                let data = x
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&v, &d)| d * kind.derivative(v))
                    .collect();
                vec![Some(Tensor::new(x.shape().to_vec(), data)?)]
            }
            Op::Prelu => {
                let (x, alpha) = (input(0), input(1));
                let l = layout(x.shape())?;
                let a = alpha.data();
                let mut dx = vec![0.0; x.numel()];
                let mut da = vec![0.0; l.c];
                for (i, (&v, &d)) in x.data().iter().zip(dy.data()).enumerate() {
                    let c = (i / l.plane) % l.c;
                    dx[i] = d * leaky_slope(v, a[c]);
                    if v <= 0.0 {
                        da[c] += d * v;
                    }
                }
                vec![
                    Some(Tensor::new(x.shape().to_vec(), dx)?),
                    Some(Tensor::new(vec![l.c], da)?),
                ]
            }
            Op::Add => vec![Some(dy.clone()), Some(dy.clone())],
            Op::Scale(c) => {
                let mut g = dy.clone();
                g.scale(*c);
                vec![Some(g)]
            }
            Op::WeightedSum(w) => {
                let mut g = w.clone();
                g.scale(dy.item());
                vec![Some(g)]
            }
            Op::SoftmaxCrossEntropy { probs, labels } => {
                let shape = input(0).shape().to_vec();
                let (n, k) = (shape[0], shape[1]);
                let s = dy.item() / n as f64;
                let mut g = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    g[i * k + l] -= 1.0;
                }
                for v in &mut g {
                    *v *= s;
                }
                vec![Some(Tensor::new(shape, g)?)]
            }
        };
        Ok(grads)
    }
}
