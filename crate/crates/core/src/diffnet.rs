//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Gradients are flattened in a fixed order: for each layer, the weight
//! matrix row-major (`out × in`) followed by the bias.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{ensure_dims, Error, Result};
use crate::rng::Rng;
use crate::tensor::Matrix;

/// Lower and upper clamp for probabilities that enter a logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative given both the pre-activation and the activation output.
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - out * out,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => out * (1.0 - out),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Input(format!("unknown activation {other:?}"))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clamped probability and the derivative of the clamp.
pub fn clamp_prob(p: f64) -> (f64, f64) {
    if p < PROB_CLAMP {
        (PROB_CLAMP, 0.0)
    } else if p > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, 0.0)
    } else {
        (p, 1.0)
    }
}

/// An affine map `W x + b` followed by an activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Per-layer intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    pub input: Matrix,
    pub pre: Matrix,
    pub output: Matrix,
}

impl Dense {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        ensure_dims("bias", weight.rows(), bias.len())?;
        Ok(Dense {
            weight,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights in `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`; zero bias.
    pub fn init(input: usize, output: usize, activation: Activation, rng: &mut Rng) -> Self {
        let a = (6.0 / (input + output) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.random_range(-a..=a))
            .collect();
        Dense {
            weight: Matrix::from_vec(output, input, data).expect("sized above"),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Dense {
            weight: Matrix::identity(dim),
            bias: vec![0.0; dim],
            activation: Activation::Identity,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut out = x.matmul_t(&self.weight);
        let act = self.activation;
        for i in 0..out.rows() {
            for (v, b) in out.row_mut(i).iter_mut().zip(&self.bias) {
                *v = act.apply(*v + b);
            }
        }
        out
    }

    pub fn forward_cached(&self, x: &Matrix) -> DenseCache {
        let mut pre = x.matmul_t(&self.weight);
        for i in 0..pre.rows() {
            for (v, b) in pre.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        let mut output = pre.clone();
        let act = self.activation;
        output.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        DenseCache {
            input: x.clone(),
            pre,
            output,
        }
    }

    /// Returns `(flat parameter gradient, input gradient)`.
    pub fn backward(&self, cache: &DenseCache, grad_out: &Matrix) -> (Vec<f64>, Matrix) {
        let mut g_pre = grad_out.clone();
        let act = self.activation;
        for ((g, &p), &o) in g_pre
            .data_mut()
            .iter_mut()
            .zip(cache.pre.data())
            .zip(cache.output.data())
        {
            *g *= act.derivative(p, o);
        }
        let dw = g_pre.t_matmul(&cache.input);
        let mut db = vec![0.0; g_pre.cols()];
        for i in 0..g_pre.rows() {
            for (b, g) in db.iter_mut().zip(g_pre.row(i)) {
                *b += g;
            }
        }
        let dx = g_pre.matmul(&self.weight);
        let mut flat = dw.into_data();
        flat.extend(db);
        (flat, dx)
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.weight.data().iter().chain(&self.bias).copied()
    }

    pub fn load_params(&mut self, flat: &[f64]) {
        let nw = self.weight.data().len();
        self.weight.data_mut().copy_from_slice(&flat[..nw]);
        let nb = self.bias.len();
        self.bias.copy_from_slice(&flat[nw..nw + nb]);
    }
}

/// A feed-forward stack of [`Dense`] layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Dense>,
}

/// Intermediates of a full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<DenseCache>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        &self.layers.last().expect("networks have at least one layer").output
    }
}

impl Network {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("network needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::contract(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.params().any(|p| !p.is_finite()) {
                return Err(Error::Input(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Network { layers })
    }

    /// Fully connected network through `dims`, `hidden` activations and an
    /// `output` activation on the last layer.
    pub fn mlp(dims: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output sizes");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Dense::init(dims[i], dims[i + 1], act, rng)
            })
            .collect();
        Network { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(Dense::params).collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        ensure_dims("parameter vector", self.param_count(), flat.len())?;
        let mut offset = 0;
        for l in &mut self.layers {
            let n = l.param_count();
            l.load_params(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        ensure_dims("network input", self.input_dim(), x.cols())?;
        if !x.is_finite() {
            return Err(Error::Input("non-finite network input".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h);
            if !h.is_finite() {
                return Err(Error::Numeric(format!("non-finite activation in layer {i}")));
            }
        }
        Ok(h)
    }

    pub fn forward_trace(&self, x: &Matrix) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut layers: Vec<DenseCache> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let input = layers.last().map_or(x, |c| &c.output);
            let cache = l.forward_cached(input);
            if !cache.output.is_finite() {
                return Err(Error::Numeric(format!("non-finite activation in layer {i}")));
            }
            layers.push(cache);
        }
        Ok(ForwardTrace { layers })
    }

    /// Outputs of every layer, in order.
    pub fn activations(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        Ok(self
            .forward_trace(x)?
            .layers
            .into_iter()
            .map(|c| c.output)
            .collect())
    }

    /// Back-propagates `grad_out` (gradient w.r.t. the network output).
    pub fn backward(&self, trace: &ForwardTrace, grad_out: &Matrix) -> Result<(Gradient, Matrix)> {
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (i, (l, cache)) in self.layers.iter().zip(&trace.layers).enumerate().rev() {
            let (pg, dx) = l.backward(cache, &g);
            if pg.iter().any(|v| !v.is_finite()) || !dx.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient in layer {i}")));
            }
            grads.push(pg);
            g = dx;
        }
        grads.reverse();
        Ok((Gradient(grads.concat()), g))
    }
}

/// Flat gradient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn zeros(n: usize) -> Self {
        Gradient(vec![0.0; n])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add_scaled(&mut self, c: f64, other: &Gradient) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.0.iter_mut().for_each(|v| *v *= c);
    }
}

impl Deref for Gradient {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A scalar objective over a batch of network outputs.
pub trait Objective {
    /// Mean batch loss and its gradient with respect to `outputs`.
    fn evaluate(&self, outputs: &Matrix) -> Result<(f64, Matrix)>;
}

impl<T: Objective + ?Sized> Objective for &T {
    fn evaluate(&self, outputs: &Matrix) -> Result<(f64, Matrix)> {
        (**self).evaluate(outputs)
    }
}

/// Softmax cross-entropy on logits with integer labels.
pub struct CrossEntropy<'a> {
    pub labels: &'a [usize],
}

impl Objective for CrossEntropy<'_> {
    fn evaluate(&self, logits: &Matrix) -> Result<(f64, Matrix)> {
        ensure_dims("labels", logits.rows(), self.labels.len())?;
        let n = logits.rows() as f64;
        let mut grad = Matrix::zeros(logits.rows(), logits.cols());
        let mut total = 0.0;
        for (i, &y) in self.labels.iter().enumerate() {
            if y >= logits.cols() {
                return Err(Error::contract(format!("label {y} out of range")));
            }
            let probs = softmax(logits.row(i));
            let (p, dclamp) = clamp_prob(probs[y]);
            total -= p.ln();
            // d(-ln p_y)/dz_k = p_k - 1[k = y], gated by the clamp.
            let g = grad.row_mut(i);
            for (k, gk) in g.iter_mut().enumerate() {
                let indicator = if k == y { 1.0 } else { 0.0 };
                *gk = dclamp * (probs[k] - indicator) / n;
            }
        }
        Ok((total / n, grad))
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `mean_i ½‖oᵢ − tᵢ‖²`.
pub struct MeanSquared<'a> {
    pub targets: &'a Matrix,
}

impl Objective for MeanSquared<'_> {
    fn evaluate(&self, outputs: &Matrix) -> Result<(f64, Matrix)> {
        if outputs.rows() != self.targets.rows() || outputs.cols() != self.targets.cols() {
            return Err(Error::contract("targets do not match outputs"));
        }
        let n = outputs.rows() as f64;
        let diff = outputs.sub(self.targets);
        let loss = 0.5 * diff.frobenius_sq() / n;
        Ok((loss, diff.scaled(1.0 / n)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BceTarget {
    /// Loss `−mean log D`.
    Real,
    /// Loss `−mean log(1 − D)`.
    Fake,
}

/// Binary log-loss on a single probability output column.
pub struct Bce {
    pub target: BceTarget,
}

impl Objective for Bce {
    fn evaluate(&self, probs: &Matrix) -> Result<(f64, Matrix)> {
        ensure_dims("probability output width", 1, probs.cols())?;
        let n = probs.rows() as f64;
        let mut grad = Matrix::zeros(probs.rows(), 1);
        let mut total = 0.0;
        for i in 0..probs.rows() {
            let d = probs.get(i, 0);
            let (loss, g) = match self.target {
                BceTarget::Real => {
                    let (p, dc) = clamp_prob(d);
                    (-p.ln(), -dc / p)
                }
                BceTarget::Fake => {
                    let (q, dc) = clamp_prob(1.0 - d);
                    (-q.ln(), dc / q)
                }
            };
            total += loss;
            grad.set(i, 0, g / n);
        }
        Ok((total / n, grad))
    }
}

/// `factor · inner`.
pub struct Scaled<O> {
    pub factor: f64,
    pub inner: O,
}

impl<O: Objective> Objective for Scaled<O> {
    fn evaluate(&self, outputs: &Matrix) -> Result<(f64, Matrix)> {
        let (l, mut g) = self.inner.evaluate(outputs)?;
        g.scale(self.factor);
        Ok((self.factor * l, g))
    }
}

fn objective_grad(obj: &dyn Objective, out: &Matrix) -> Result<(f64, Matrix)> {
    let (loss, g) = obj.evaluate(out)?;
    if !loss.is_finite() || !g.is_finite() {
        return Err(Error::Numeric(format!("non-finite objective value {loss}")));
    }
    Ok((loss, g))
}

/// Loss and its gradient with respect to the parameters.
pub fn grad_params(net: &Network, x: &Matrix, obj: &dyn Objective) -> Result<(f64, Gradient)> {
    let (loss, g, _) = grad_both(net, x, obj)?;
    Ok((loss, g))
}

/// Loss and its gradient with respect to the inputs.
pub fn grad_input(net: &Network, x: &Matrix, obj: &dyn Objective) -> Result<(f64, Matrix)> {
    let (loss, _, gx) = grad_both(net, x, obj)?;
    Ok((loss, gx))
}

pub fn grad_both(net: &Network, x: &Matrix, obj: &dyn Objective) -> Result<(f64, Gradient, Matrix)> {
    let trace = net.forward_trace(x)?;
    let (loss, g_out) = objective_grad(obj, trace.output())?;
    let (gp, gx) = net.backward(&trace, &g_out)?;
    Ok((loss, gp, gx))
}

pub fn loss(net: &Network, x: &Matrix, obj: &dyn Objective) -> Result<f64> {
    let out = net.forward(x)?;
    Ok(obj.evaluate(&out)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Descent,
    Ascent,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First-order optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub kind: OptimKind,
    pub lr: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl OptimState {
    pub fn sgd(lr: f64) -> Self {
        OptimState {
            kind: OptimKind::Sgd,
            lr,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn adam(lr: f64, n: usize) -> Self {
        OptimState {
            kind: OptimKind::Adam,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn new(kind: OptimKind, lr: f64, n: usize) -> Self {
        match kind {
            OptimKind::Sgd => OptimState::sgd(lr),
            OptimKind::Adam => OptimState::adam(lr, n),
        }
    }

    /// Updates `params` in place.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], dir: Direction) -> Result<()> {
        ensure_dims("gradient", params.len(), grad.len())?;
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::contract(format!("learning rate {} is invalid", self.lr)));
        }
        let sgn = match dir {
            Direction::Descent => -1.0,
            Direction::Ascent => 1.0,
        };
        match self.kind {
            OptimKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p += sgn * self.lr * g;
                }
            }
            OptimKind::Adam => {
                ensure_dims("adam moments", params.len(), self.m.len())?;
                self.t += 1;
                let b1t = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let b2t = 1.0 - ADAM_BETA2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = self.m[i] / b1t;
                    let v_hat = self.v[i] / b2t;
                    params[i] += sgn * self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }
}

/// Applies one optimizer step to a network.
pub fn step(net: &mut Network, grad: &Gradient, opt: &mut OptimState, dir: Direction) -> Result<()> {
    let mut params = net.params();
    opt.apply(&mut params, grad, dir)?;
    net.set_params(&params)
}
