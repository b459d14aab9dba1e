//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every differentiable operation appends a node holding its output value,
//! its input node ids, and whatever context the backward rule needs. Nodes
//! are created in evaluation order, so the tape is already topologically
//! sorted and `backward` is a single reverse sweep.
//!
//! Convolution weights use the layout `[f, c, kh, kw]` for both directions:
//! `conv2d` maps `c` input channels to `f` output channels, and `deconv2d`
//! maps `f` back to `c` with the same tensor. That shared layout is what
//! makes the two operations exact adjoints of one another,
//! `<conv2d(x, w), y> == <x, deconv2d(y, w)>`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::invalid_arg;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Elementwise nonlinearity selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

impl Activation {
    /// Parse an activation name as it appears in config files.
    pub fn parse(name: &str, slope: Option<f64>) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "lrelu" | "leaky_relu" => {
                let a = slope.unwrap_or(0.2);
                if !(0.0 < a && a < 1.0) {
                    return Err(invalid_arg!("lrelu slope must be in (0,1), got {a}"));
                }
                Ok(Activation::LeakyRelu(a))
            }
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(invalid_arg!("unknown activation kind '{other}'")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu(_) => "lrelu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }
}

/// Per-channel batch statistics produced by a training-mode batchnorm node.
#[derive(Debug, Clone)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    /// Biased (divide-by-m) variance over the reduction set.
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    h_in: usize,
    w_in: usize,
    f_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    Matmul(usize, usize),
    AddRowBias(usize, usize),
    Conv2d { x: usize, w: usize, geom: ConvGeom },
    Deconv2d { x: usize, w: usize, geom: ConvGeom },
    BatchNormTrain {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        channels: usize,
        spatial: usize,
    },
    BatchNormEval {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        channels: usize,
        spatial: usize,
    },
    Act(usize, Activation),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Clamp(usize, f64, f64),
    Reshape(usize),
    SumAll(usize),
    MeanAll(usize),
    SumRows(usize),
    Dropout { x: usize, mask: Vec<f64> },
    CrossEntropyLogits { logits: usize, labels: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

/// Gradient map produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros when `v` was not reached from the loss.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(v).shape()).expect("valid shape"),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    /// Register an input; gradient participation follows `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad;
        self.push(t, needs, Op::Leaf)
    }

    /// Register an input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, false, Op::Leaf)
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(invalid_arg!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, self.needs(&[a.0, b.0]), Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, self.needs(&[a.0, b.0]), Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, self.needs(&[a.0, b.0]), Op::Mul(a.0, b.0)))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.push(v, self.needs(&[a.0]), Op::Neg(a.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(v, self.needs(&[a.0]), Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, self.needs(&[a.0]), Op::AddScalar(a.0, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(invalid_arg!("matmul expects rank-2 operands, got {sa:?} x {sb:?}"));
        }
        if sa[1] != sb[0] {
            return Err(invalid_arg!(
                "matmul inner dimensions disagree: {sa:?} x {sb:?}"
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.push(v, self.needs(&[a.0, b.0]), Op::Matmul(a.0, b.0)))
    }

    /// `x[B, n] + bias[n]`, broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x).shape(), self.value(bias).shape());
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(invalid_arg!("add_row_bias: incompatible {sx:?} + {sb:?}"));
        }
        let (rows, cols) = (sx[0], sx[1]);
        let xv = self.value(x).data();
        let bv = self.value(bias).data();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                out.push(xv[r * cols + c] + bv[c]);
            }
        }
        let v = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(v, self.needs(&[x.0, bias.0]), Op::AddRowBias(x.0, bias.0)))
    }

    /// Strided cross-correlation. `x: [N,C,H,W]`, `w: [F,C,kh,kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = conv_geom(self.value(x).shape(), self.value(w).shape(), stride, pad)?;
        let out = conv_fwd(&geom, self.value(x).data(), self.value(w).data());
        let v = Tensor::new(
            vec![geom.batch, geom.f_out, geom.h_out, geom.w_out],
            out,
        )?;
        Ok(self.push(v, self.needs(&[x.0, w.0]), Op::Conv2d { x: x.0, w: w.0, geom }))
    }

    /// Transposed convolution, the adjoint of [`Tape::conv2d`].
    /// `x: [N,F,H,W]`, `w: [F,C,kh,kw]`, output `[N,C,(H-1)*stride-2*pad+kh, ...]`.
    pub fn deconv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        let sw = self.value(w).shape().to_vec();
        if sx.len() != 4 || sw.len() != 4 {
            return Err(invalid_arg!("deconv2d expects rank-4 input and weight"));
        }
        if sx[1] != sw[0] {
            return Err(invalid_arg!(
                "deconv2d channel mismatch: input has {} channels, weight maps {}",
                sx[1],
                sw[0]
            ));
        }
        if stride == 0 {
            return Err(invalid_arg!("stride must be >= 1"));
        }
        let (h_up, w_up) = (
            (sx[2] - 1) * stride + sw[2],
            (sx[3] - 1) * stride + sw[3],
        );
        if h_up <= 2 * pad || w_up <= 2 * pad {
            return Err(invalid_arg!("deconv2d output extent would be non-positive"));
        }
        // Geometry of the conv whose adjoint this is: conv maps the deconv
        // output space back onto the deconv input space.
        let geom = ConvGeom {
            batch: sx[0],
            c_in: sw[1],
            h_in: h_up - 2 * pad,
            w_in: w_up - 2 * pad,
            f_out: sw[0],
            kh: sw[2],
            kw: sw[3],
            stride,
            pad,
            h_out: sx[2],
            w_out: sx[3],
        };
        let out = deconv_fwd(&geom, self.value(x).data(), self.value(w).data());
        let v = Tensor::new(vec![geom.batch, geom.c_in, geom.h_in, geom.w_in], out)?;
        Ok(self.push(v, self.needs(&[x.0, w.0]), Op::Deconv2d { x: x.0, w: w.0, geom }))
    }

    /// Training-mode batch normalization over the batch (and spatial dims for
    /// rank-4 input), per channel. Returns the node plus the batch statistics
    /// so the caller can maintain running estimates.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BnBatchStats)> {
        let (channels, spatial) = bn_layout(self.value(x).shape())?;
        if self.value(x).shape()[0] < 2 {
            return Err(invalid_arg!(
                "batchnorm in training mode requires batch size >= 2"
            ));
        }
        check_bn_params(self.value(gamma).shape(), self.value(beta).shape(), channels)?;
        let xv = self.value(x).data();
        let batch = self.value(x).shape()[0];
        let m = (batch * spatial) as f64;

        let mut mean = vec![0.0; channels];
        let mut var = vec![0.0; channels];
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * spatial;
                for s in 0..spatial {
                    mean[c] += xv[base + s];
                }
            }
        }
        for mc in mean.iter_mut() {
            *mc /= m;
        }
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * spatial;
                for s in 0..spatial {
                    let d = xv[base + s] - mean[c];
                    var[c] += d * d;
                }
            }
        }
        for vc in var.iter_mut() {
            *vc /= m;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();

        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = vec![0.0; xv.len()];
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * spatial;
                for s in 0..spatial {
                    let xhat = (xv[base + s] - mean[c]) * inv_std[c];
                    out[base + s] = gv[c] * xhat + bv[c];
                }
            }
        }
        let stats = BnBatchStats {
            mean: mean.clone(),
            var: var.clone(),
        };
        let v = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let needs = self.needs(&[x.0, gamma.0, beta.0]);
        let var_node = self.push(
            v,
            needs,
            Op::BatchNormTrain {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                mean,
                inv_std,
                channels,
                spatial,
            },
        );
        Ok((var_node, stats))
    }

    /// Inference-mode batch normalization using running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (channels, spatial) = bn_layout(self.value(x).shape())?;
        check_bn_params(self.value(gamma).shape(), self.value(beta).shape(), channels)?;
        if running_mean.len() != channels || running_var.len() != channels {
            return Err(invalid_arg!("running statistics length mismatch"));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let xv = self.value(x).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let batch = self.value(x).shape()[0];
        let mut out = vec![0.0; xv.len()];
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * spatial;
                for s in 0..spatial {
                    out[base + s] = gv[c] * (xv[base + s] - running_mean[c]) * inv_std[c] + bv[c];
                }
            }
        }
        let v = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let needs = self.needs(&[x.0, gamma.0, beta.0]);
        Ok(self.push(
            v,
            needs,
            Op::BatchNormEval {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                mean: running_mean.to_vec(),
                inv_std,
                channels,
                spatial,
            },
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let v = match kind {
            Activation::Relu => self.value(x).map(|t| if t > 0.0 { t } else { 0.0 }),
            Activation::LeakyRelu(a) => self.value(x).map(|t| if t > 0.0 { t } else { a * t }),
            Activation::Sigmoid => self.value(x).map(|t| 1.0 / (1.0 + (-t).exp())),
            Activation::Tanh => self.value(x).map(f64::tanh),
        };
        self.push(v, self.needs(&[x.0]), Op::Act(x.0, kind))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::exp);
        self.push(v, self.needs(&[x.0]), Op::Exp(x.0))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::ln);
        self.push(v, self.needs(&[x.0]), Op::Ln(x.0))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::sqrt);
        self.push(v, self.needs(&[x.0]), Op::Sqrt(x.0))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).map(|t| t.clamp(lo, hi));
        self.push(v, self.needs(&[x.0]), Op::Clamp(x.0, lo, hi))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(v, self.needs(&[x.0]), Op::Reshape(x.0)))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, self.needs(&[x.0]), Op::SumAll(x.0))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).mean());
        self.push(v, self.needs(&[x.0]), Op::MeanAll(x.0))
    }

    /// Reduce every dimension except the first: `[B, ...] -> [B]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        if shape.len() < 2 {
            return Err(invalid_arg!("sum_rows expects rank >= 2, got {shape:?}"));
        }
        let rows = shape[0];
        let cols: usize = shape[1..].iter().product();
        let xv = self.value(x).data();
        let out: Vec<f64> = (0..rows)
            .map(|r| xv[r * cols..(r + 1) * cols].iter().sum())
            .collect();
        let v = Tensor::new(vec![rows], out)?;
        Ok(self.push(v, self.needs(&[x.0]), Op::SumRows(x.0)))
    }

    /// Inverted dropout: keeps each element with probability `1-p` and
    /// rescales by `1/(1-p)` so expectations match inference.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid_arg!("dropout probability must be in [0,1), got {p}"));
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.keep(keep) { 1.0 / keep } else { 0.0 })
            .collect();
        let xv = self.value(x).data();
        let out: Vec<f64> = xv.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let v = Tensor::new(self.value(x).shape().to_vec(), out)?;
        Ok(self.push(v, self.needs(&[x.0]), Op::Dropout { x: x.0, mask }))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits[B, C]`. Numerically stable (max-shifted) with a fused,
    /// closed-form backward rule.
    pub fn cross_entropy_logits(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.value(logits).shape();
        if shape.len() != 2 {
            return Err(invalid_arg!("cross_entropy_logits expects [B, C] logits"));
        }
        let (b, c) = (shape[0], shape[1]);
        if labels.len() != b {
            return Err(invalid_arg!("{} labels for batch of {b}", labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(invalid_arg!("label {bad} out of range for {c} classes"));
        }
        let xv = self.value(logits).data();
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for r in 0..b {
            let row = &xv[r * c..(r + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..c {
                let e = (row[j] - mx).exp();
                probs[r * c + j] = e;
                z += e;
            }
            for j in 0..c {
                probs[r * c + j] /= z;
            }
            loss += z.ln() + mx - row[labels[r]];
        }
        loss /= b as f64;
        let v = Tensor::scalar(loss);
        let needs = self.needs(&[logits.0]);
        Ok(self.push(
            v,
            needs,
            Op::CrossEntropyLogits {
                logits: logits.0,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse sweep from a scalar loss. Gradients are accumulated for every
    /// node on a path from a `requires_grad` leaf to the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(invalid_arg!(
                "backward expects a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let gy = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(id, &gy, &mut grads)?;
            grads[id] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let accum = |grads: &mut [Option<Tensor>], target: usize, delta: Tensor| {
            match &mut grads[target] {
                Some(g) => {
                    let sum = g.add(&delta).expect("gradient shapes agree");
                    *g = sum;
                }
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.nodes[*a].needs_grad {
                    accum(grads, *a, gy.clone());
                }
                if self.nodes[*b].needs_grad {
                    accum(grads, *b, gy.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.nodes[*a].needs_grad {
                    accum(grads, *a, gy.clone());
                }
                if self.nodes[*b].needs_grad {
                    accum(grads, *b, gy.map(|g| -g));
                }
            }
            Op::Mul(a, b) => {
                if self.nodes[*a].needs_grad {
                    accum(grads, *a, gy.zip(&self.nodes[*b].value, |g, bv| g * bv)?);
                }
                if self.nodes[*b].needs_grad {
                    accum(grads, *b, gy.zip(&self.nodes[*a].value, |g, av| g * av)?);
                }
            }
            Op::Neg(a) => {
                if self.nodes[*a].needs_grad {
                    accum(grads, *a, gy.map(|g| -g));
                }
            }
            Op::Scale(a, c) => {
                if self.nodes[*a].needs_grad {
                    let c = *c;
                    accum(grads, *a, gy.map(|g| c * g));
                }
            }
            Op::AddScalar(a, _) => {
                if self.nodes[*a].needs_grad {
                    accum(grads, *a, gy.clone());
                }
            }
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.nodes[*a].value.shape(), self.nodes[*b].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.nodes[*a].needs_grad {
                    let da = matmul_nt(gy.data(), self.nodes[*b].value.data(), m, n, k);
                    accum(grads, *a, Tensor::new(vec![m, k], da)?);
                }
                if self.nodes[*b].needs_grad {
                    let db = matmul_tn(self.nodes[*a].value.data(), gy.data(), m, k, n);
                    accum(grads, *b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::AddRowBias(x, bias) => {
                let shape = self.nodes[*x].value.shape();
                let (rows, cols) = (shape[0], shape[1]);
                if self.nodes[*x].needs_grad {
                    accum(grads, *x, gy.clone());
                }
                if self.nodes[*bias].needs_grad {
                    let gv = gy.data();
                    let mut db = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            db[c] += gv[r * cols + c];
                        }
                    }
                    accum(grads, *bias, Tensor::new(vec![cols], db)?);
                }
            }
            Op::Conv2d { x, w, geom } => {
                if self.nodes[*x].needs_grad {
                    let dx = deconv_fwd(geom, gy.data(), self.nodes[*w].value.data());
                    accum(
                        grads,
                        *x,
                        Tensor::new(self.nodes[*x].value.shape().to_vec(), dx)?,
                    );
                }
                if self.nodes[*w].needs_grad {
                    let dw = conv_dw(geom, self.nodes[*x].value.data(), gy.data());
                    accum(
                        grads,
                        *w,
                        Tensor::new(self.nodes[*w].value.shape().to_vec(), dw)?,
                    );
                }
            }
            Op::Deconv2d { x, w, geom } => {
                if self.nodes[*x].needs_grad {
                    let dx = conv_fwd(geom, gy.data(), self.nodes[*w].value.data());
                    accum(
                        grads,
                        *x,
                        Tensor::new(self.nodes[*x].value.shape().to_vec(), dx)?,
                    );
                }
                if self.nodes[*w].needs_grad {
                    // In the adjoint (conv) view, gy plays the conv input and
                    // the deconv input plays the conv output gradient.
                    let dw = conv_dw(geom, gy.data(), self.nodes[*x].value.data());
                    accum(
                        grads,
                        *w,
                        Tensor::new(self.nodes[*w].value.shape().to_vec(), dw)?,
                    );
                }
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                channels,
                spatial,
            } => {
                let xv = self.nodes[*x].value.data();
                let gv = self.nodes[*gamma].value.data();
                let gyv = gy.data();
                let batch = self.nodes[*x].value.shape()[0];
                let (channels, spatial) = (*channels, *spatial);
                let m = (batch * spatial) as f64;

                let mut sum_dy = vec![0.0; channels];
                let mut sum_dy_xhat = vec![0.0; channels];
                for b in 0..batch {
                    for c in 0..channels {
                        let base = (b * channels + c) * spatial;
                        for s in 0..spatial {
                            let xhat = (xv[base + s] - mean[c]) * inv_std[c];
                            sum_dy[c] += gyv[base + s];
                            sum_dy_xhat[c] += gyv[base + s] * xhat;
                        }
                    }
                }
                if self.nodes[*gamma].needs_grad {
                    accum(grads, *gamma, Tensor::new(vec![channels], sum_dy_xhat.clone())?);
                }
                if self.nodes[*beta].needs_grad {
                    accum(grads, *beta, Tensor::new(vec![channels], sum_dy.clone())?);
                }
                if self.nodes[*x].needs_grad {
                    let mut dx = vec![0.0; xv.len()];
                    for b in 0..batch {
                        for c in 0..channels {
                            let base = (b * channels + c) * spatial;
                            for s in 0..spatial {
                                let xhat = (xv[base + s] - mean[c]) * inv_std[c];
                                dx[base + s] = gv[c] * inv_std[c] / m
                                    * (m * gyv[base + s] - sum_dy[c] - xhat * sum_dy_xhat[c]);
                            }
                        }
                    }
                    accum(grads, *x, Tensor::new(self.nodes[*x].value.shape().to_vec(), dx)?);
                }
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                channels,
                spatial,
            } => {
                let xv = self.nodes[*x].value.data();
                let gv = self.nodes[*gamma].value.data();
                let gyv = gy.data();
                let batch = self.nodes[*x].value.shape()[0];
                let (channels, spatial) = (*channels, *spatial);
                if self.nodes[*x].needs_grad {
                    let mut dx = vec![0.0; xv.len()];
                    for b in 0..batch {
                        for c in 0..channels {
                            let base = (b * channels + c) * spatial;
                            for s in 0..spatial {
                                dx[base + s] = gyv[base + s] * gv[c] * inv_std[c];
                            }
                        }
                    }
                    accum(grads, *x, Tensor::new(self.nodes[*x].value.shape().to_vec(), dx)?);
                }
                if self.nodes[*gamma].needs_grad || self.nodes[*beta].needs_grad {
                    let mut dgamma = vec![0.0; channels];
                    let mut dbeta = vec![0.0; channels];
                    for b in 0..batch {
                        for c in 0..channels {
                            let base = (b * channels + c) * spatial;
                            for s in 0..spatial {
                                let xhat = (xv[base + s] - mean[c]) * inv_std[c];
                                dgamma[c] += gyv[base + s] * xhat;
                                dbeta[c] += gyv[base + s];
                            }
                        }
                    }
                    if self.nodes[*gamma].needs_grad {
                        accum(grads, *gamma, Tensor::new(vec![channels], dgamma)?);
                    }
                    if self.nodes[*beta].needs_grad {
                        accum(grads, *beta, Tensor::new(vec![channels], dbeta)?);
                    }
                }
            }
            Op::Act(a, kind) => {
                if self.nodes[*a].needs_grad {
                    let y = &self.nodes[id].value;
                    let x = &self.nodes[*a].value;
                    let dx = match kind {
                        Activation::Relu => gy.zip(x, |g, t| if t > 0.0 { g } else { 0.0 })?,
                        Activation::LeakyRelu(alpha) => {
                            let alpha = *alpha;
                            gy.zip(x, |g, t| if t > 0.0 { g } else { alpha * g })?
                        }
                        Activation::Sigmoid => gy.zip(y, |g, s| g * s * (1.0 - s))?,
                        Activation::Tanh => gy.zip(y, |g, t| g * (1.0 - t * t))?,
                    };
                    accum(grads, *a, dx);
                }
            }
            Op::Exp(a) => {
                if self.nodes[*a].needs_grad {
                    accum(grads, *a, gy.zip(&self.nodes[id].value, |g, e| g * e)?);
                }
            }
            Op::Ln(a) => {
                if self.nodes[*a].needs_grad {
                    accum(grads, *a, gy.zip(&self.nodes[*a].value, |g, x| g / x)?);
                }
            }
            Op::Sqrt(a) => {
                if self.nodes[*a].needs_grad {
                    // Guard the derivative at 0 so identical inputs to a norm
                    // do not poison the whole gradient with infinities.
                    accum(
                        grads,
                        *a,
                        gy.zip(&self.nodes[id].value, |g, s| {
                            if s > 0.0 {
                                g * 0.5 / s
                            } else {
                                0.0
                            }
                        })?,
                    );
                }
            }
            Op::Clamp(a, lo, hi) => {
                if self.nodes[*a].needs_grad {
                    let (lo, hi) = (*lo, *hi);
                    accum(
                        grads,
                        *a,
                        gy.zip(&self.nodes[*a].value, |g, x| {
                            if x > lo && x < hi {
                                g
                            } else {
                                0.0
                            }
                        })?,
                    );
                }
            }
            Op::Reshape(a) => {
                if self.nodes[*a].needs_grad {
                    accum(grads, *a, gy.reshape(self.nodes[*a].value.shape())?);
                }
            }
            Op::SumAll(a) => {
                if self.nodes[*a].needs_grad {
                    let g = gy.item()?;
                    accum(grads, *a, Tensor::full(self.nodes[*a].value.shape(), g)?);
                }
            }
            Op::MeanAll(a) => {
                if self.nodes[*a].needs_grad {
                    let n = self.nodes[*a].value.numel() as f64;
                    let g = gy.item()? / n;
                    accum(grads, *a, Tensor::full(self.nodes[*a].value.shape(), g)?);
                }
            }
            Op::SumRows(a) => {
                if self.nodes[*a].needs_grad {
                    let shape = self.nodes[*a].value.shape();
                    let rows = shape[0];
                    let cols: usize = shape[1..].iter().product();
                    let gv = gy.data();
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            dx[r * cols + c] = gv[r];
                        }
                    }
                    accum(grads, *a, Tensor::new(shape.to_vec(), dx)?);
                }
            }
            Op::Dropout { x, mask } => {
                if self.nodes[*x].needs_grad {
                    let gv = gy.data();
                    let dx: Vec<f64> = gv.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                    accum(
                        grads,
                        *x,
                        Tensor::new(self.nodes[*x].value.shape().to_vec(), dx)?,
                    );
                }
            }
            Op::CrossEntropyLogits {
                logits,
                labels,
                probs,
            } => {
                if self.nodes[*logits].needs_grad {
                    let shape = self.nodes[*logits].value.shape();
                    let (b, c) = (shape[0], shape[1]);
                    let g = gy.item()? / b as f64;
                    let mut dx = probs.clone();
                    for (r, &y) in labels.iter().enumerate() {
                        dx[r * c + y] -= 1.0;
                    }
                    for v in dx.iter_mut() {
                        *v *= g;
                    }
                    accum(grads, *logits, Tensor::new(vec![b, c], dx)?);
                }
            }
        }
        Ok(())
    }
}

fn bn_layout(shape: &[usize]) -> Result<(usize, usize)> {
    match shape.len() {
        2 => Ok((shape[1], 1)),
        4 => Ok((shape[1], shape[2] * shape[3])),
        _ => Err(invalid_arg!(
            "batchnorm expects rank-2 or rank-4 input, got {shape:?}"
        )),
    }
}

fn check_bn_params(gamma: &[usize], beta: &[usize], channels: usize) -> Result<()> {
    if gamma != [channels] || beta != [channels] {
        return Err(invalid_arg!(
            "batchnorm gamma/beta must have shape [{channels}], got {gamma:?}/{beta:?}"
        ));
    }
    Ok(())
}

fn conv_geom(sx: &[usize], sw: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
    if sx.len() != 4 || sw.len() != 4 {
        return Err(invalid_arg!(
            "conv2d expects rank-4 input and weight, got {sx:?} and {sw:?}"
        ));
    }
    if sx[1] != sw[1] {
        return Err(invalid_arg!(
            "conv2d channel mismatch: input has {} channels, weight expects {}",
            sx[1],
            sw[1]
        ));
    }
    if stride == 0 {
        return Err(invalid_arg!("stride must be >= 1"));
    }
    let (h, w, kh, kw) = (sx[2], sx[3], sw[2], sw[3]);
    if kh > h + 2 * pad || kw > w + 2 * pad {
        return Err(invalid_arg!(
            "kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * pad,
            w + 2 * pad
        ));
    }
    Ok(ConvGeom {
        batch: sx[0],
        c_in: sx[1],
        h_in: h,
        w_in: w,
        f_out: sw[0],
        kh,
        kw,
        stride,
        pad,
        h_out: (h + 2 * pad - kh) / stride + 1,
        w_out: (w + 2 * pad - kw) / stride + 1,
    })
}

// ---- raw kernels ----------------------------------------------------------
//
// Each output element is produced by exactly one task with a fixed inner
// summation order, so parallel and sequential execution are bit-identical.

fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (r, &bv) in row.iter_mut().zip(brow) {
                *r += av * bv;
            }
        }
    });
    out
}

/// `a[m,n] * b[k,n]^T -> [m,k]`
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    out.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        let arow = &a[i * n..(i + 1) * n];
        for (j, r) in row.iter_mut().enumerate() {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for p in 0..n {
                acc += arow[p] * brow[p];
            }
            *r = acc;
        }
    });
    out
}

/// `a[m,k]^T * b[m,n] -> [k,n]`
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for p in 0..m {
            let av = a[p * k + i];
            let brow = &b[p * n..(p + 1) * n];
            for (r, &bv) in row.iter_mut().zip(brow) {
                *r += av * bv;
            }
        }
    });
    out
}

/// Forward convolution in the geometry's conv view:
/// `x[n, c_in, h_in, w_in] -> y[n, f_out, h_out, w_out]`.
fn conv_fwd(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
    let plane = g.h_out * g.w_out;
    let mut y = vec![0.0; g.batch * g.f_out * plane];
    y.par_chunks_mut(plane).enumerate().for_each(|(nf, out)| {
        let n = nf / g.f_out;
        let f = nf % g.f_out;
        for oh in 0..g.h_out {
            for ow in 0..g.w_out {
                let mut acc = 0.0;
                for c in 0..g.c_in {
                    let xbase = ((n * g.c_in + c) * g.h_in) * g.w_in;
                    let wbase = ((f * g.c_in + c) * g.kh) * g.kw;
                    for i in 0..g.kh {
                        let ih = (oh * g.stride + i) as isize - g.pad as isize;
                        if ih < 0 || ih >= g.h_in as isize {
                            continue;
                        }
                        let xrow = xbase + ih as usize * g.w_in;
                        let wrow = wbase + i * g.kw;
                        for j in 0..g.kw {
                            let iw = (ow * g.stride + j) as isize - g.pad as isize;
                            if iw < 0 || iw >= g.w_in as isize {
                                continue;
                            }
                            acc += x[xrow + iw as usize] * w[wrow + j];
                        }
                    }
                }
                out[oh * g.w_out + ow] = acc;
            }
        }
    });
    y
}

/// Adjoint of [`conv_fwd`]: scatter `x[n, f_out, h_out, w_out]` back to
/// `y[n, c_in, h_in, w_in]`, written in gather form for determinism.
fn deconv_fwd(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
    let plane = g.h_in * g.w_in;
    let stride = g.stride as isize;
    let mut y = vec![0.0; g.batch * g.c_in * plane];
    y.par_chunks_mut(plane).enumerate().for_each(|(nc, out)| {
        let n = nc / g.c_in;
        let c = nc % g.c_in;
        for h in 0..g.h_in {
            for wd in 0..g.w_in {
                let mut acc = 0.0;
                for f in 0..g.f_out {
                    let xbase = ((n * g.f_out + f) * g.h_out) * g.w_out;
                    let wbase = ((f * g.c_in + c) * g.kh) * g.kw;
                    for i in 0..g.kh {
                        let num = h as isize + g.pad as isize - i as isize;
                        if num < 0 || num % stride != 0 {
                            continue;
                        }
                        let oh = (num / stride) as usize;
                        if oh >= g.h_out {
                            continue;
                        }
                        let xrow = xbase + oh * g.w_out;
                        let wrow = wbase + i * g.kw;
                        for j in 0..g.kw {
                            let num2 = wd as isize + g.pad as isize - j as isize;
                            if num2 < 0 || num2 % stride != 0 {
                                continue;
                            }
                            let ow = (num2 / stride) as usize;
                            if ow >= g.w_out {
                                continue;
                            }
                            acc += x[xrow + ow] * w[wrow + j];
                        }
                    }
                }
                out[h * g.w_in + wd] = acc;
            }
        }
    });
    y
}

/// Weight gradient in the conv view: pairs the conv input `x` with the conv
/// output gradient `dy`.
fn conv_dw(g: &ConvGeom, x: &[f64], dy: &[f64]) -> Vec<f64> {
    let block = g.kh * g.kw;
    let mut dw = vec![0.0; g.f_out * g.c_in * block];
    dw.par_chunks_mut(block).enumerate().for_each(|(fc, out)| {
        let f = fc / g.c_in;
        let c = fc % g.c_in;
        for i in 0..g.kh {
            for j in 0..g.kw {
                let mut acc = 0.0;
                for n in 0..g.batch {
                    let xbase = ((n * g.c_in + c) * g.h_in) * g.w_in;
                    let ybase = ((n * g.f_out + f) * g.h_out) * g.w_out;
                    for oh in 0..g.h_out {
                        let ih = (oh * g.stride + i) as isize - g.pad as isize;
                        if ih < 0 || ih >= g.h_in as isize {
                            continue;
                        }
                        let xrow = xbase + ih as usize * g.w_in;
                        let yrow = ybase + oh * g.w_out;
                        for ow in 0..g.w_out {
                            let iw = (ow * g.stride + j) as isize - g.pad as isize;
                            if iw < 0 || iw >= g.w_in as isize {
                                continue;
                            }
                            acc += dy[yrow + ow] * x[xrow + iw as usize];
                        }
                    }
                }
                out[i * g.kw + j] = acc;
            }
        }
    });
    dw
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, shape: &[usize], data: Vec<f64>) -> Var {
        tape.leaf(Tensor::new(shape.to_vec(), data).unwrap().with_grad())
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let eye = leaf(
            &mut tape,
            &[3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        );
        let b = leaf(&mut tape, &[3, 2], vec![5.0, -1.0, 2.0, 0.5, 7.0, 3.0]);
        let y = tape.matmul(eye, b).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(b).data());

        // Naive triple-loop oracle for a 2x2 * 2x1 product.
        let a = leaf(&mut tape, &[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let c = leaf(&mut tape, &[2, 1], vec![5.0, 6.0]);
        let p = tape.matmul(a, c).unwrap();
        let (av, cv) = (vec![1.0, 2.0, 3.0, 4.0], vec![5.0, 6.0]);
        let mut oracle = vec![0.0; 2];
        for i in 0..2 {
            for j in 0..1 {
                for k in 0..2 {
                    oracle[i] += av[i * 2 + k] * cv[k + j];
                }
            }
        }
        assert_eq!(tape.value(p).data(), &oracle[..]);
        assert_eq!(oracle, vec![17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_mismatch_is_rejected() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2, 3], vec![0.0; 6]);
        let b = leaf(&mut tape, &[2, 2], vec![0.0; 4]);
        assert!(tape.matmul(a, b).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2, 3], vec![1.0, -2.0, 3.0, 0.0, 5.0, -6.0]);
        let s = tape.sum_all(x);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn backward_of_sum_of_squares_is_two_x() {
        let mut tape = Tape::new();
        let data = vec![1.0, -2.0, 3.0, 0.5];
        let x = leaf(&mut tape, &[4], data.clone());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum_all(sq);
        let grads = tape.backward(s).unwrap();
        let expect: Vec<f64> = data.iter().map(|v| 2.0 * v).collect();
        assert_eq!(grads.get(x).unwrap().data(), &expect[..]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[3], vec![1.0, 2.0, 3.0]);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], vec![1.0, 2.0]);
        let y = leaf(&mut tape, &[2], vec![3.0, 4.0]);
        let s = tape.sum_all(x);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(&tape, y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn activation_values() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[4], vec![-1.0, 2.0, 0.0, -2.0]);
        let r = tape.activation(x, Activation::Relu);
        assert_eq!(tape.value(r).data(), &[0.0, 2.0, 0.0, 0.0]);
        let s = tape.activation(x, Activation::Sigmoid);
        assert_eq!(tape.value(s).data()[2], 0.5);
        let t = tape.activation(x, Activation::Tanh);
        assert_eq!(tape.value(t).data()[2], 0.0);
        let l = tape.activation(x, Activation::LeakyRelu(0.2));
        assert!((tape.value(l).data()[3] - (-0.4)).abs() < 1e-15);
    }

    #[test]
    fn activation_parse_rejects_unknown() {
        assert!(Activation::parse("relu", None).is_ok());
        assert!(Activation::parse("swish", None).is_err());
        assert!(Activation::parse("lrelu", Some(1.5)).is_err());
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 1, 3, 3], (1..=9).map(|v| v as f64).collect());
        let w = leaf(&mut tape, &[1, 1, 1, 1], vec![1.0]);
        let y = tape.conv2d(x, w, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn conv2d_sliding_window_oracle() {
        // 3x3 ones, 2x2 ones kernel, stride 1, no padding -> 2x2 of fours.
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 1, 3, 3], vec![1.0; 9]);
        let w = leaf(&mut tape, &[1, 1, 2, 2], vec![1.0; 4]);
        let y = tape.conv2d(x, w, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(tape.value(y).data(), &[4.0; 4]);
    }

    #[test]
    fn conv2d_channel_mismatch() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 2, 3, 3], vec![0.0; 18]);
        let w = leaf(&mut tape, &[1, 3, 2, 2], vec![0.0; 12]);
        assert!(tape.conv2d(x, w, 1, 0).is_err());
    }

    #[test]
    fn deconv2d_identity_and_shape() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 1, 3, 3], (1..=9).map(|v| v as f64).collect());
        let w = leaf(&mut tape, &[1, 1, 1, 1], vec![1.0]);
        let y = tape.deconv2d(x, w, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());

        let x2 = leaf(&mut tape, &[1, 1, 2, 2], vec![1.0; 4]);
        let w2 = leaf(&mut tape, &[1, 1, 2, 2], vec![1.0; 4]);
        let y2 = tape.deconv2d(x2, w2, 2, 0).unwrap();
        assert_eq!(tape.value(y2).shape(), &[1, 1, 4, 4]);
    }

    #[test]
    fn conv_deconv_adjointness() {
        // <conv(x,w), y> == <x, deconv(y,w)> on random tensors.
        let mut rng = Rng::from_seed(99);
        for &(stride, pad) in &[(1usize, 0usize), (2, 1), (2, 2), (3, 1)] {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::randn(&[2, 3, 7, 6], &mut rng).unwrap());
            let w = tape.leaf(Tensor::randn(&[4, 3, 3, 3], &mut rng).unwrap());
            let cx = tape.conv2d(x, w, stride, pad).unwrap();
            let y = tape.leaf(Tensor::randn(tape.value(cx).shape(), &mut rng).unwrap());
            let dy = tape.deconv2d(y, w, stride, pad).unwrap();
            let lhs = tape.value(cx).dot(tape.value(y)).unwrap();
            let rhs = tape.value(x).dot(tape.value(dy)).unwrap();
            assert!(
                (lhs - rhs).abs() < 1e-8,
                "adjoint identity broken at stride={stride} pad={pad}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn batchnorm_normalizes_per_channel() {
        let mut rng = Rng::from_seed(5);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::randn(&[8, 3, 4, 4], &mut rng).unwrap());
        let gamma = tape.leaf(Tensor::full(&[3], 1.0).unwrap());
        let beta = tape.leaf(Tensor::zeros(&[3]).unwrap());
        let (y, _) = tape.batchnorm_train(x, gamma, beta, 1e-5).unwrap();
        let yv = tape.value(y);
        for c in 0..3 {
            let mut vals = Vec::new();
            for b in 0..8 {
                for s in 0..16 {
                    vals.push(yv.data()[(b * 3 + c) * 16 + s]);
                }
            }
            let t = Tensor::new(vec![vals.len()], vals).unwrap();
            assert!(t.mean().abs() < 1e-10, "channel {c} mean {}", t.mean());
            assert!((t.variance() - 1.0).abs() < 1e-4, "channel {c} var {}", t.variance());
        }
    }

    #[test]
    fn batchnorm_scale_and_shift() {
        let mut rng = Rng::from_seed(6);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::randn(&[64, 2], &mut rng).unwrap());
        let gamma = tape.leaf(Tensor::full(&[2], 2.0).unwrap());
        let beta = tape.leaf(Tensor::full(&[2], 3.0).unwrap());
        let (y, _) = tape.batchnorm_train(x, gamma, beta, 1e-5).unwrap();
        let yv = tape.value(y);
        assert!((yv.mean() - 3.0).abs() < 1e-10);
        assert!((yv.variance() - 4.0).abs() < 1e-3);
    }

    #[test]
    fn batchnorm_rejects_batch_of_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[1, 4]).unwrap());
        let gamma = tape.leaf(Tensor::full(&[4], 1.0).unwrap());
        let beta = tape.leaf(Tensor::zeros(&[4]).unwrap());
        assert!(tape.batchnorm_train(x, gamma, beta, 1e-5).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2, 4], vec![0.0; 8]);
        let loss = tape.cross_entropy_logits(x, &[1, 3]).unwrap();
        assert!((tape.value(loss).item().unwrap() - (4.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn dropout_mask_scaling() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1000], vec![1.0; 1000]);
        let mut rng = Rng::from_seed(3);
        let y = tape.dropout(x, 0.5, &mut rng).unwrap();
        let kept = tape.value(y).data().iter().filter(|&&v| v > 0.0).count();
        assert!((300..700).contains(&kept));
        assert!(tape
            .value(y)
            .data()
            .iter()
            .all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-15));
    }
}
