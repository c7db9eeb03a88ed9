//! Small fully-connected networks with hand-written reverse-mode gradients.
//!
//! Used for the encoder, the decoder and the frozen task function when the
//! task is not linear. Layers are `y = act(W·x + b)`; the forward pass keeps a
//! [`Tape`] of layer inputs and pre-activations for [`Net::backward`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::data_io::DataMatrix;
use crate::error::{Error, Result};
use crate::numerics::{self, Matrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
    Logistic,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Logistic => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Derivative at pre-activation `z`; the ReLU subgradient at 0 is 0.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Logistic => {
                let s = self.apply(z);
                s * (1.0 - s)
            }
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Logistic => "logistic",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "logistic" => Ok(Activation::Logistic),
            other => Err(Error::Format(format!("unknown activation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Feed-forward network; consecutive layer dimensions chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    layers: Vec<Layer>,
}

/// Intermediate values recorded by [`Net::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

/// Parameter gradients, laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Matrix, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Net) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (Matrix::zeros(l.output_dim(), l.input_dim()), vec![0.0; l.output_dim()]))
                .collect(),
        }
    }

    /// `self += scale·other`.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            numerics::axpy(scale, ow.as_slice(), w.as_mut_slice());
            numerics::axpy(scale, ob, b);
        }
    }

    /// Flattened in the same order as [`Net::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }
}

impl Net {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("a network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::dims(format!("layer {k}: bias length {} for {} outputs", l.bias.len(), l.output_dim())));
            }
            if l.weights.as_slice().iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue(format!("layer {k} parameters")));
            }
        }
        for (k, w) in layers.windows(2).enumerate() {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::dims(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    w[0].output_dim(),
                    k + 1,
                    w[1].input_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights in `±√(6/(fan_in + fan_out))`, zero biases.
    ///
    /// `dims` lists the widths from input to output; `activations` has one
    /// entry per layer.
    pub fn init(dims: &[usize], activations: &[Activation], rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} widths need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weights: Matrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-limit..=limit)),
                    bias: vec![0.0; fan_out],
                    activation,
                }
            })
            .collect();
        Self::new(layers)
    }

    /// One identity layer with `W = I`, `b = 0`.
    pub fn identity(n: usize) -> Self {
        Self { layers: vec![Layer { weights: Matrix::identity(n), bias: vec![0.0; n], activation: Activation::Identity }] }
    }

    /// One affine identity-activation layer.
    pub fn affine(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        Self::new(vec![Layer { weights, bias, activation: Activation::Identity }])
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn output_activation(&self) -> Activation {
        self.layers[self.layers.len() - 1].activation
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(x)?;
        let mut tape = Tape { inputs: Vec::with_capacity(self.layers.len()), pre: Vec::with_capacity(self.layers.len()) };
        let mut cur = x.to_vec();
        for l in &self.layers {
            let mut z = l.weights.matvec(&cur)?;
            numerics::axpy(1.0, &l.bias, &mut z);
            let out = z.iter().map(|&v| l.activation.apply(v)).collect();
            tape.inputs.push(std::mem::replace(&mut cur, out));
            tape.pre.push(z);
        }
        Ok((cur, tape))
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for l in &self.layers {
            let mut z = l.weights.matvec(&cur)?;
            numerics::axpy(1.0, &l.bias, &mut z);
            cur = z.into_iter().map(|v| l.activation.apply(v)).collect();
        }
        Ok(cur)
    }

    pub fn predict_data(&self, data: &DataMatrix) -> Result<Matrix> {
        data.matrix().map_rows(self.output_dim(), |r| self.predict(r))
    }

    /// Reverse pass: gradients of `upstream · output` with respect to the
    /// parameters and to the input.
    pub fn backward(&self, tape: &Tape, upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::TapeMismatch(format!("{} recorded layers for a {}-layer net", tape.inputs.len(), self.layers.len())));
        }
        for (k, (l, (inp, pre))) in self.layers.iter().zip(tape.inputs.iter().zip(&tape.pre)).enumerate() {
            if inp.len() != l.input_dim() || pre.len() != l.output_dim() {
                return Err(Error::TapeMismatch(format!("layer {k} shapes differ from the tape")));
            }
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::dims(format!("upstream gradient of length {} for {} outputs", upstream.len(), self.output_dim())));
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.to_vec();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let pre = &tape.pre[k];
            let inp = &tape.inputs[k];
            let dz: Vec<f64> = g.iter().zip(pre).map(|(gi, &z)| gi * l.activation.derivative(z)).collect();
            let dw = Matrix::from_fn(l.output_dim(), l.input_dim(), |i, j| dz[i] * inp[j]);
            g = l.weights.tmatvec(&dz)?;
            grads.push((dw, dz));
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, g))
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.rows() * l.weights.cols() + l.bias.len()).sum()
    }

    /// Flattened parameters: per layer, row-major weights then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::dims(format!("{} parameters for a net with {}", params.len(), self.num_params())));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.as_slice().len();
            l.weights.as_mut_slice().copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Squared Frobenius norm of all parameters.
    pub fn param_norm2(&self) -> f64 {
        self.params().iter().map(|v| v * v).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::dims(format!("input of length {} for a net expecting {}", x.len(), self.input_dim())));
        }
        Ok(())
    }

    /// Versioned text form; values are written with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = format!("net v1\nlayers {}\n", self.layers.len());
        for l in &self.layers {
            s.push_str(&format!("layer {} {} {}\n", l.input_dim(), l.output_dim(), l.activation));
            s.push_str(&format!("w {}\n", join17(l.weights.as_slice())));
            s.push_str(&format!("b {}\n", join17(&l.bias)));
        }
        s
    }

    /// Parses [`Net::to_text`] output from a line iterator.
    pub fn parse_lines<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<Self> {
        let header = next_line(lines)?;
        if header != "net v1" {
            return Err(Error::Format(format!("expected \"net v1\", found {header:?}")));
        }
        let count: usize = keyed(next_line(lines)?, "layers")?
            .parse()
            .map_err(|_| Error::Format("bad layer count".into()))?;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let spec = keyed(next_line(lines)?, "layer")?;
            let parts: Vec<&str> = spec.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::Format(format!("bad layer line {spec:?}")));
            }
            let parse_dim = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad dimension {s:?}")));
            let (inp, out) = (parse_dim(parts[0])?, parse_dim(parts[1])?);
            let activation: Activation = parts[2].parse()?;
            let w = parse_floats(keyed(next_line(lines)?, "w")?)?;
            let b = parse_floats(keyed(next_line(lines)?, "b")?)?;
            layers.push(Layer { weights: Matrix::from_vec(out, inp, w)?, bias: b, activation });
        }
        Self::new(layers)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::parse_lines(&mut text.lines())
    }
}

pub(crate) fn join17(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ")
}

pub(crate) fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::Format(format!("bad number {t:?}"))))
        .collect()
}

pub(crate) fn next_line<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<&'a str> {
    lines
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or_else(|| Error::Format("unexpected end of file".into()))
}

pub(crate) fn keyed<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    match line.split_once(char::is_whitespace) {
        Some((k, rest)) if k == key => Ok(rest.trim()),
        None if line == key => Ok(""),
        _ => Err(Error::Format(format!("expected {key:?}, found {line:?}"))),
    }
}

/// Per-sample task loss `l(ŷ, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossFn {
    SquaredL2,
    /// `−Σ y·ln ŷ + (1 − y)·ln(1 − ŷ)`; targets must lie in `[0, 1]`.
    BinaryCrossEntropy,
}

const BCE_CLAMP: f64 = 1e-12;

impl LossFn {
    pub fn tag(self) -> &'static str {
        match self {
            LossFn::SquaredL2 => "squared_l2",
            LossFn::BinaryCrossEntropy => "binary_cross_entropy",
        }
    }

    /// Value and gradient with respect to the prediction.
    pub fn value_and_grad(self, pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        if pred.len() != target.len() {
            return Err(Error::dims(format!("prediction of length {} vs target {}", pred.len(), target.len())));
        }
        match self {
            LossFn::SquaredL2 => {
                let grad: Vec<f64> = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t)).collect();
                let value = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
                Ok((value, grad))
            }
            LossFn::BinaryCrossEntropy => {
                let mut value = 0.0;
                let mut grad = Vec::with_capacity(pred.len());
                for (&p, &t) in pred.iter().zip(target) {
                    if !(0.0..=1.0).contains(&t) {
                        return Err(Error::BadTarget(t));
                    }
                    let q = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    value -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
                    grad.push(if p == q { -t / q + (1.0 - t) / (1.0 - q) } else { 0.0 });
                }
                Ok((value, grad))
            }
        }
    }
}

impl fmt::Display for LossFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for LossFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared_l2" | "squared-l2" | "mse" => Ok(LossFn::SquaredL2),
            "binary_cross_entropy" | "bce" | "cross-entropy" => Ok(LossFn::BinaryCrossEntropy),
            other => Err(Error::InvalidArgument(format!("unknown loss {other:?}"))),
        }
    }
}

/// `l(f(x̂), f(x))` and its gradient with respect to `x̂`; `f` stays frozen.
pub fn task_loss(f: &Net, loss: LossFn, x_hat: &[f64], x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let target = f.predict(x)?;
    task_loss_with_target(f, loss, x_hat, &target)
}

/// As [`task_loss`] with `f(x)` precomputed.
pub fn task_loss_with_target(f: &Net, loss: LossFn, x_hat: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if loss == LossFn::BinaryCrossEntropy && f.output_activation() != Activation::Logistic {
        return Err(Error::InvalidArgument("cross-entropy needs a logistic output layer".into()));
    }
    let (pred, tape) = f.forward(x_hat)?;
    let (value, g) = loss.value_and_grad(&pred, target)?;
    let (_, dx) = f.backward(&tape, &g)?;
    Ok((value, dx))
}

/// Adaptive-moment optimiser (`β₁ = 0.9`, `β₂ = 0.999`, `ε̂ = 1e-8`).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(lr: f64, num_params: usize) -> Self {
        Self { lr, m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grads[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grads[i] * grads[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Architecture of a task network: hidden widths, hidden activation, output
/// activation, and training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskArch {
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub loss: LossFn,
}

impl TaskArch {
    /// One hidden ReLU layer with an identity head and squared loss.
    pub fn regression(hidden: usize) -> Self {
        Self { hidden: vec![hidden], hidden_activation: Activation::Relu, output_activation: Activation::Identity, loss: LossFn::SquaredL2 }
    }

    /// One hidden ReLU layer with a logistic head and cross-entropy.
    pub fn binary_classifier(hidden: usize) -> Self {
        Self {
            hidden: vec![hidden],
            hidden_activation: Activation::Relu,
            output_activation: Activation::Logistic,
            loss: LossFn::BinaryCrossEntropy,
        }
    }

    pub fn build(&self, input: usize, output: usize, rng: &mut impl Rng) -> Result<Net> {
        let mut dims = vec![input];
        dims.extend(&self.hidden);
        dims.push(output);
        let mut acts = vec![self.hidden_activation; self.hidden.len()];
        acts.push(self.output_activation);
        Net::init(&dims, &acts, rng)
    }
}

/// A trained task network and its final mean training loss.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub net: Net,
    pub final_loss: f64,
}

/// Full-batch Adam training of a task network on `(data, targets)`.
pub fn pretrain_task(
    data: &DataMatrix,
    targets: &Matrix,
    arch: &TaskArch,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<Pretrained> {
    if targets.rows() != data.len() {
        return Err(Error::dims(format!("{} targets for {} samples", targets.rows(), data.len())));
    }
    let mut stream = rng::stream(seed);
    let mut net = arch.build(data.dim(), targets.cols(), &mut stream)?;
    let mut opt = Adam::new(lr, net.num_params());
    let n = data.len() as f64;

    let batch = |net: &Net| -> Result<(f64, Gradients)> {
        let mut total = 0.0;
        let mut acc = Gradients::zeros_like(net);
        for (x, t) in data.rows().zip(targets.row_iter()) {
            let (pred, tape) = net.forward(x)?;
            let (v, g) = arch.loss.value_and_grad(&pred, t)?;
            let (grads, _) = net.backward(&tape, &g)?;
            acc.accumulate(&grads, 1.0 / n);
            total += v;
        }
        Ok((total / n, acc))
    };

    let mut params = net.params();
    for epoch in 0..epochs {
        let (loss, grads) = batch(&net)?;
        if !loss.is_finite() || loss > 1e6 {
            return Err(Error::NonFiniteValue(format!("task pretraining loss {loss} at epoch {epoch}")));
        }
        opt.step(&mut params, &grads.flatten());
        net.set_params(&params)?;
    }
    let (final_loss, _) = batch(&net)?;
    Ok(Pretrained { net, final_loss })
}
