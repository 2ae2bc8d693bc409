//! Attacks, oracles and evaluation for the adversarial-training meta-game.
//!
//! Attackers (rows) are fixed perturbations of the training set and maximize
//! the classifier's cross-entropy; classifiers (columns) minimize it.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::diffnet::{self, sign, Activation, CrossEntropy, Direction, Network, Objective, OptimState};
use crate::double_oracle::{OracleGame, OracleRequest};
use crate::error::{ensure_dims, Error, Result};
use crate::metagame::MixedStrategy;
use crate::rng::{self, Rng};
use crate::supernet::{SearchOptim, Supernet};
use crate::tensor::Matrix;

/// Inputs with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    pub x: Matrix,
    pub y: Vec<usize>,
}

impl Labeled {
    pub fn new(x: Matrix, y: Vec<usize>) -> Result<Self> {
        ensure_dims("label count", x.rows(), y.len())?;
        Ok(Labeled { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Labeled {
        Labeled {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.y.iter().max().map_or(0, |m| m + 1)
    }
}

/// Per-example additive perturbation of a fixed dataset, `‖δ‖_∞ ≤ eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub delta: Matrix,
    pub eps: f64,
}

impl Perturbation {
    pub fn zeros(n: usize, dim: usize, eps: f64) -> Self {
        Perturbation {
            delta: Matrix::zeros(n, dim),
            eps,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.delta.data().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `x[idx] + δ[idx]`.
    pub fn perturb(&self, x: &Matrix, idx: &[usize]) -> Matrix {
        let mut out = x.select_rows(idx);
        out.add_assign(&self.delta.select_rows(idx));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub eps: f64,
    pub step: f64,
    pub iters: usize,
    pub random_start: bool,
    /// Optional data-domain bounds applied after every step.
    pub clip: Option<(f64, f64)>,
}

impl AttackConfig {
    /// PGD-`iters` with step `eps / 4` and a random start.
    pub fn pgd(eps: f64, iters: usize) -> Self {
        AttackConfig {
            eps,
            step: eps / 4.0,
            iters,
            random_start: true,
            clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) || !self.eps.is_finite() {
            return Err(Error::contract(format!("attack budget {} is invalid", self.eps)));
        }
        if !(self.step > 0.0) || self.iters == 0 {
            return Err(Error::contract("attack needs a positive step and at least one iteration"));
        }
        Ok(())
    }
}

/// Cross-entropy input gradient of the batch-mean loss.
pub fn input_grad(net: &Network, x: &Matrix, y: &[usize]) -> Result<Matrix> {
    Ok(diffnet::grad_input(net, x, &CrossEntropy { labels: y })?.1)
}

fn clip_domain(x: &mut Matrix, clip: Option<(f64, f64)>) {
    if let Some((lo, hi)) = clip {
        x.data_mut().iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    }
}

/// `x + ε · sign(∇ₓ l)`.
pub fn fgsm(net: &Network, x: &Matrix, y: &[usize], eps: f64, clip: Option<(f64, f64)>) -> Result<Matrix> {
    let g = input_grad(net, x, y)?;
    let mut out = x.clone();
    for (v, gi) in out.data_mut().iter_mut().zip(g.data()) {
        *v += eps * sign(*gi);
    }
    clip_domain(&mut out, clip);
    Ok(out)
}

/// Projected signed-gradient ascent inside the `∞`-ball around `x`.
pub fn pgd(net: &Network, x: &Matrix, y: &[usize], cfg: &AttackConfig, rng: &mut Rng) -> Result<Matrix> {
    cfg.validate()?;
    let mut cur = x.clone();
    if cfg.random_start && cfg.eps > 0.0 {
        for v in cur.data_mut() {
            *v += rng.random_range(-cfg.eps..=cfg.eps);
        }
        clip_domain(&mut cur, cfg.clip);
    }
    for _ in 0..cfg.iters {
        let g = input_grad(net, &cur, y)?;
        for ((v, gi), x0) in cur.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
            *v = (*v + cfg.step * sign(*gi)).max(x0 - cfg.eps).min(x0 + cfg.eps);
        }
        clip_domain(&mut cur, cfg.clip);
    }
    Ok(cur)
}

fn sampler(sigma: &MixedStrategy) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(sigma.probs()).map_err(|e| Error::contract(format!("mixture weights: {e}")))
}

fn check_pool<T>(what: &str, pool: &[T], sigma: &MixedStrategy) -> Result<()> {
    if pool.is_empty() {
        return Err(Error::contract(format!("empty {what} pool")));
    }
    ensure_dims(&format!("{what} mixture"), pool.len(), sigma.len())
}

fn minibatches(idx: &[usize], batch: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order = idx.to_vec();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackerConfig {
    pub eps: f64,
    /// Replays per mini-batch.
    pub hops: usize,
    pub epochs: usize,
    pub batch: usize,
}

impl Default for AttackerConfig {
    fn default() -> Self {
        AttackerConfig {
            eps: 0.1,
            hops: 4,
            epochs: 1,
            batch: 64,
        }
    }
}

/// Free-style perturbation training against the classifier mixture, starting
/// from `δ = 0`. Every hop samples a classifier and takes a clipped signed
/// step of size `eps`; `observe` sees the perturbation after every hop.
pub fn attacker_oracle(
    classifiers: &[Network],
    sigma_c: &MixedStrategy,
    data: &Labeled,
    cfg: &AttackerConfig,
    seed: u64,
    observe: &mut dyn FnMut(&Perturbation),
) -> Result<Perturbation> {
    check_pool("classifier", classifiers, sigma_c)?;
    let pick = sampler(sigma_c)?;
    let mut r = rng::stream(seed, rng::ATTACK, 0);
    let mut p = Perturbation::zeros(data.len(), data.x.cols(), cfg.eps);
    let all: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        for b in minibatches(&all, cfg.batch, &mut r) {
            let y: Vec<usize> = b.iter().map(|&i| data.y[i]).collect();
            for _ in 0..cfg.hops {
                let theta = &classifiers[pick.sample(&mut r)];
                let g = input_grad(theta, &p.perturb(&data.x, &b), &y)?;
                for (k, &i) in b.iter().enumerate() {
                    for (d, gi) in p.delta.row_mut(i).iter_mut().zip(g.row(k)) {
                        *d = (*d + cfg.eps * sign(*gi)).clamp(-cfg.eps, cfg.eps);
                    }
                }
                observe(&p);
            }
        }
    }
    Ok(p)
}

/// Models that expose the input gradient of a batch objective.
pub trait InputGradient {
    fn loss_input_grad(&self, x: &Matrix, obj: &dyn Objective) -> Result<(f64, Matrix)>;
}

impl InputGradient for Network {
    fn loss_input_grad(&self, x: &Matrix, obj: &dyn Objective) -> Result<(f64, Matrix)> {
        diffnet::grad_input(self, x, obj)
    }
}

impl InputGradient for Supernet {
    fn loss_input_grad(&self, x: &Matrix, obj: &dyn Objective) -> Result<(f64, Matrix)> {
        let (l, _, gx) = self.grad(x, obj)?;
        Ok((l, gx))
    }
}

/// Input-landscape curvature proxy `mean_i ‖∇ₓ lᵢ(xᵢ + h uᵢ) − ∇ₓ lᵢ(xᵢ)‖₂ / h`
/// with `uᵢ = sign ∇ₓ lᵢ(xᵢ)`, where `lᵢ` is the per-example loss of `obj`.
pub fn advrush_regularizer<M: InputGradient + ?Sized>(model: &M, x: &Matrix, obj: &dyn Objective, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::contract(format!("regularizer step {h} must be positive")));
    }
    let n = x.rows() as f64;
    let (_, g0) = model.loss_input_grad(x, obj)?;
    let mut shifted = x.clone();
    for (v, g) in shifted.data_mut().iter_mut().zip(g0.data()) {
        *v += h * sign(*g);
    }
    let (_, g1) = model.loss_input_grad(&shifted, obj)?;
    // The objective is a batch mean, so per-example gradients are n times the rows.
    let diff = g1.sub(&g0);
    let total: f64 = (0..diff.rows())
        .map(|i| diff.row(i).iter().map(|v| v * v).sum::<f64>().sqrt() * n / h)
        .sum();
    Ok(total / n)
}

/// Central finite-difference gradient of the regularizer over `α`.
pub fn regularizer_alpha_grad(s: &Supernet, x: &Matrix, obj: &dyn Objective, h: f64, fd_step: f64) -> Result<Vec<f64>> {
    let base = s.alpha();
    let mut probe = s.clone();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut a = base.clone();
        a[i] = base[i] + fd_step;
        probe.set_alpha(&a)?;
        let up = advrush_regularizer(&probe, x, obj, h)?;
        a[i] = base[i] - fd_step;
        probe.set_alpha(&a)?;
        let down = advrush_regularizer(&probe, x, obj, h)?;
        grad.push((up - down) / (2.0 * fd_step));
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierSearchConfig {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub iterations: usize,
    pub batch: usize,
    pub lr_alpha: f64,
    pub lr_weight: f64,
    /// Iterations before the regularizer is switched on; `usize::MAX` disables it.
    pub warmup: usize,
    pub gamma_reg: f64,
    /// Input step of the curvature proxy.
    pub reg_h: f64,
    /// Finite-difference step for its architecture gradient.
    pub reg_fd_step: f64,
}

impl Default for ClassifierSearchConfig {
    fn default() -> Self {
        ClassifierSearchConfig {
            widths: vec![16, 16],
            activations: vec![Activation::Tanh, Activation::Relu, Activation::Sigmoid],
            iterations: 200,
            batch: 64,
            lr_alpha: 3e-3,
            lr_weight: 1e-2,
            warmup: 50,
            gamma_reg: 0.01,
            reg_h: 1e-2,
            reg_fd_step: 1e-4,
        }
    }
}

impl ClassifierSearchConfig {
    pub fn supernet(&self, input_dim: usize, classes: usize, rng: &mut Rng) -> Result<Supernet> {
        let mut dims = vec![input_dim];
        dims.extend(&self.widths);
        Supernet::build(&dims, &self.activations, classes, Activation::Identity, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierFinetuneConfig {
    pub hops: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for ClassifierFinetuneConfig {
    fn default() -> Self {
        ClassifierFinetuneConfig {
            hops: 4,
            epochs: 5,
            lr: 0.1,
            batch: 64,
        }
    }
}

/// Architecture search against the attacker mixture on the first half
/// (weights) and second half (architecture) of `data`. `observe` sees the
/// architecture logits after every iteration.
pub fn classifier_search(
    attackers: &[Perturbation],
    sigma_a: &MixedStrategy,
    data: &Labeled,
    cfg: &ClassifierSearchConfig,
    seed: u64,
    observe: &mut dyn FnMut(usize, &[f64]),
) -> Result<Supernet> {
    check_pool("attacker", attackers, sigma_a)?;
    for a in attackers {
        ensure_dims("perturbation rows", data.len(), a.delta.rows())?;
    }
    if data.len() < 2 {
        return Err(Error::contract("classifier search needs at least two examples"));
    }
    let pick = sampler(sigma_a)?;
    let mut init = rng::stream(seed, rng::INIT, 0);
    let mut sn = cfg.supernet(data.x.cols(), data.num_classes().max(2), &mut init)?;
    let mut opt = SearchOptim::adam(&sn, cfg.lr_alpha, cfg.lr_weight);
    let mut r = rng::stream(seed, rng::ORACLE_COL, 0);
    let half = data.len() / 2;
    for t in 0..cfg.iterations {
        let train: Vec<usize> = (0..cfg.batch).map(|_| r.random_range(0..half)).collect();
        let delta = &attackers[pick.sample(&mut r)];
        let y: Vec<usize> = train.iter().map(|&i| data.y[i]).collect();
        let (_, g, _) = sn.grad(&delta.perturb(&data.x, &train), &CrossEntropy { labels: &y })?;
        opt.weight_step(&mut sn, &g.weights, Direction::Descent)?;

        let val: Vec<usize> = (0..cfg.batch).map(|_| r.random_range(half..data.len())).collect();
        let delta = &attackers[pick.sample(&mut r)];
        let y: Vec<usize> = val.iter().map(|&i| data.y[i]).collect();
        let xv = delta.perturb(&data.x, &val);
        let obj = CrossEntropy { labels: &y };
        let (_, g, _) = sn.grad(&xv, &obj)?;
        let mut ga = g.alpha;
        if t >= cfg.warmup && cfg.gamma_reg != 0.0 {
            let gr = regularizer_alpha_grad(&sn, &xv, &obj, cfg.reg_h, cfg.reg_fd_step)?;
            for (a, b) in ga.iter_mut().zip(&gr) {
                *a += cfg.gamma_reg * b;
            }
        }
        opt.arch_step(&mut sn, &ga, Direction::Descent)?;
        observe(t, &sn.alpha());
    }
    Ok(sn)
}

/// Plain SGD on `l(x + δ, y, θ)`, replaying each mini-batch `hops` times
/// with a fresh `δ ∼ σ_a` per hop.
pub fn finetune_classifier(
    net: &Network,
    attackers: &[Perturbation],
    sigma_a: &MixedStrategy,
    data: &Labeled,
    cfg: &ClassifierFinetuneConfig,
    seed: u64,
) -> Result<Network> {
    check_pool("attacker", attackers, sigma_a)?;
    let pick = sampler(sigma_a)?;
    let mut r = rng::stream(seed, rng::FINETUNE, 0);
    let mut theta = net.clone();
    let mut opt = OptimState::sgd(cfg.lr);
    let all: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        for b in minibatches(&all, cfg.batch, &mut r) {
            let y: Vec<usize> = b.iter().map(|&i| data.y[i]).collect();
            for _ in 0..cfg.hops {
                let delta = &attackers[pick.sample(&mut r)];
                let (_, g) = diffnet::grad_params(&theta, &delta.perturb(&data.x, &b), &CrossEntropy { labels: &y })?;
                diffnet::step(&mut theta, &g, &mut opt, Direction::Descent)?;
            }
        }
    }
    Ok(theta)
}

/// Search, discretization and finetuning against the attacker mixture.
pub fn classifier_oracle(
    attackers: &[Perturbation],
    sigma_a: &MixedStrategy,
    data: &Labeled,
    search: &ClassifierSearchConfig,
    finetune: &ClassifierFinetuneConfig,
    seed: u64,
) -> Result<Network> {
    let sn = classifier_search(attackers, sigma_a, data, search, seed, &mut |_, _| {})?;
    finetune_classifier(&sn.discretize(), attackers, sigma_a, data, finetune, seed)
}

/// Mean cross-entropy of `net` on `(x + δ, y)` over the rows `idx`.
pub fn at_payoff(net: &Network, delta: &Perturbation, data: &Labeled, idx: &[usize]) -> Result<f64> {
    ensure_dims("perturbation rows", data.len(), delta.delta.rows())?;
    let y: Vec<usize> = idx.iter().map(|&i| data.y[i]).collect();
    diffnet::loss(net, &delta.perturb(&data.x, idx), &CrossEntropy { labels: &y })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Attack {
    Clean,
    Fgsm { eps: f64 },
    Pgd(AttackConfig),
}

impl Attack {
    pub fn name(&self) -> String {
        match self {
            Attack::Clean => "clean".into(),
            Attack::Fgsm { .. } => "fgsm".into(),
            Attack::Pgd(c) => format!("pgd-{}", c.iters),
        }
    }

    pub fn eps(&self) -> f64 {
        match self {
            Attack::Clean => 0.0,
            Attack::Fgsm { eps } => *eps,
            Attack::Pgd(c) => c.eps,
        }
    }

    pub fn iters(&self) -> usize {
        match self {
            Attack::Clean => 0,
            Attack::Fgsm { .. } => 1,
            Attack::Pgd(c) => c.iters,
        }
    }
}

pub fn predict(net: &Network, x: &Matrix) -> Result<Vec<usize>> {
    let logits = net.forward(x)?;
    Ok((0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}

/// Accuracy under `attack` of the classifier mixture: each example is
/// assigned a classifier drawn from `sigma` and attacked white-box against it.
pub fn evaluate_robust(nets: &[Network], sigma: &MixedStrategy, data: &Labeled, attack: &Attack, seed: u64) -> Result<f64> {
    check_pool("classifier", nets, sigma)?;
    if data.is_empty() {
        return Err(Error::contract("empty evaluation set"));
    }
    let pick = sampler(sigma)?;
    let mut r = rng::stream(seed, rng::EVAL, 0);
    let assign: Vec<usize> = (0..data.len()).map(|_| pick.sample(&mut r)).collect();
    let mut correct = 0usize;
    for (k, net) in nets.iter().enumerate() {
        let idx: Vec<usize> = (0..data.len()).filter(|&i| assign[i] == k).collect();
        if idx.is_empty() {
            continue;
        }
        let sub = data.select(&idx);
        let x_adv = match attack {
            Attack::Clean => sub.x.clone(),
            Attack::Fgsm { eps } => fgsm(net, &sub.x, &sub.y, *eps, None)?,
            Attack::Pgd(cfg) => pgd(net, &sub.x, &sub.y, cfg, &mut r)?,
        };
        let pred = predict(net, &x_adv)?;
        correct += pred.iter().zip(&sub.y).filter(|(p, y)| p == y).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// A fixed-architecture classifier trained on clean data with Adam; the
/// standard-training baseline.
pub fn train_standard(data: &Labeled, widths: &[usize], lr: f64, batch: usize, steps: u64, seed: u64) -> Result<Network> {
    let mut init = rng::stream(seed, rng::INIT, 0);
    let mut dims = vec![data.x.cols()];
    dims.extend(widths);
    dims.push(data.num_classes().max(2));
    let mut net = Network::mlp(&dims, Activation::Tanh, Activation::Identity, &mut init);
    let mut opt = OptimState::adam(lr, net.param_count());
    let mut r = rng::stream(seed, rng::ORACLE_COL, 0);
    for _ in 0..steps {
        let idx: Vec<usize> = (0..batch).map(|_| r.random_range(0..data.len())).collect();
        let b = data.select(&idx);
        let (_, g) = diffnet::grad_params(&net, &b.x, &CrossEntropy { labels: &b.y })?;
        diffnet::step(&mut net, &g, &mut opt, Direction::Descent)?;
    }
    Ok(net)
}

/// The adversarial-training meta-game: attackers are rows, classifiers columns.
pub struct AtGame {
    pub data: Labeled,
    /// Rows of `data` on which payoffs are evaluated.
    pub eval_idx: Vec<usize>,
    pub attacker: AttackerConfig,
    pub search: ClassifierSearchConfig,
    pub finetune: ClassifierFinetuneConfig,
    /// Classifier weight updates taken so far (search and finetuning).
    pub classifier_steps: u64,
    /// Attacker hops taken so far and the largest `‖δ‖_∞` seen after any of them.
    pub attacker_hops: u64,
    pub max_abs_delta: f64,
}

impl AtGame {
    /// `δ = 0` and a random discretized classifier.
    pub fn initial_strategies(&self, seed: u64) -> Result<(Perturbation, Network)> {
        let mut r = rng::stream(seed, rng::INIT, 0);
        let sn = self.search.supernet(self.data.x.cols(), self.data.num_classes().max(2), &mut r)?;
        Ok((Perturbation::zeros(self.data.len(), self.data.x.cols(), self.attacker.eps), sn.discretize()))
    }

    fn finetune_steps(&self) -> u64 {
        let batches = self.data.len().div_ceil(self.finetune.batch.max(1));
        (self.finetune.epochs * batches * self.finetune.hops) as u64
    }
}

impl OracleGame for AtGame {
    type Row = Perturbation;
    type Col = Network;

    fn row_oracle(&mut self, req: OracleRequest<'_, Network>) -> Result<Perturbation> {
        let (mut hops, mut max) = (self.attacker_hops, self.max_abs_delta);
        let p = attacker_oracle(req.opponents, req.opponent_mix, &self.data, &self.attacker, req.seed, &mut |p| {
            hops += 1;
            max = max.max(p.max_abs());
        })?;
        self.attacker_hops = hops;
        self.max_abs_delta = max;
        Ok(p)
    }

    fn col_oracle(&mut self, req: OracleRequest<'_, Perturbation>) -> Result<Network> {
        self.classifier_steps += self.search.iterations as u64 + self.finetune_steps();
        classifier_oracle(req.opponents, req.opponent_mix, &self.data, &self.search, &self.finetune, req.seed)
    }

    fn payoff(&self, row: &Perturbation, col: &Network) -> Result<f64> {
        at_payoff(col, row, &self.data, &self.eval_idx)
    }
}
