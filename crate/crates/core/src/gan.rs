//! Best-response oracles and finetuning for the GAN meta-game.
//!
//! Generators are the row player and maximize the discriminator loss
//! [`gan_payoff`]; discriminators are the column player and minimize it.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::diffnet::{self, Activation, Bce, BceTarget, Direction, Gradient, Network, Objective, OptimState};
use crate::double_oracle::{FinetuneOutcome, FinetuneRequest, OracleGame, OracleRequest};
use crate::error::{ensure_dims, Error, Result};
use crate::metagame::{solve_zero_sum, MixedStrategy, PayoffMatrix};
use crate::rng::{self, Rng};
use crate::supernet::{select_by_adv_loss, SearchOptim, Supernet, SupernetGrad};
use crate::tensor::Matrix;

/// Floor applied to every harmonic-mean input.
pub const HM_FLOOR: f64 = 1e-8;

/// Shapes of the generator and discriminator search spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct GanSpace {
    pub latent_dim: usize,
    pub data_dim: usize,
    /// Cell output widths of the generator supernet.
    pub gen_widths: Vec<usize>,
    /// Cell output widths of the discriminator supernet.
    pub disc_widths: Vec<usize>,
    /// Affine candidates per cell (identity is added when dims allow).
    pub activations: Vec<Activation>,
}

impl Default for GanSpace {
    fn default() -> Self {
        GanSpace {
            latent_dim: 2,
            data_dim: 2,
            gen_widths: vec![32, 32],
            disc_widths: vec![32, 32],
            activations: vec![Activation::Tanh, Activation::Relu, Activation::Sigmoid],
        }
    }
}

impl GanSpace {
    pub fn generator_supernet(&self, rng: &mut Rng) -> Result<Supernet> {
        let mut dims = vec![self.latent_dim];
        dims.extend(&self.gen_widths);
        Supernet::build(&dims, &self.activations, self.data_dim, Activation::Identity, rng)
    }

    pub fn discriminator_supernet(&self, rng: &mut Rng) -> Result<Supernet> {
        let mut dims = vec![self.data_dim];
        dims.extend(&self.disc_widths);
        Supernet::build(&dims, &self.activations, 1, Activation::Sigmoid, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    /// Alternating architecture/weight steps per oracle call.
    pub steps: usize,
    pub batch: usize,
    pub top_k: usize,
    /// Size of the fixed batch used to rank top-k candidates.
    pub select_batch: usize,
    pub lr_alpha: f64,
    pub lr_weight: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            steps: 200,
            batch: 64,
            top_k: 4,
            select_batch: 256,
            lr_alpha: 3e-3,
            lr_weight: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinetuneMode {
    None,
    HarmonicMean,
    Nash,
}

impl std::str::FromStr for FinetuneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FinetuneMode::None),
            "hm" => Ok(FinetuneMode::HarmonicMean),
            "nash" => Ok(FinetuneMode::Nash),
            other => Err(Error::Input(format!("unknown finetune mode '{other}' (expected none, hm or nash)"))),
        }
    }
}

impl std::fmt::Display for FinetuneMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FinetuneMode::None => "none",
            FinetuneMode::HarmonicMean => "hm",
            FinetuneMode::Nash => "nash",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneConfig {
    pub mode: FinetuneMode,
    pub rounds: usize,
    pub batch: usize,
    pub lr: f64,
    /// Nash mode re-solves the meta-game every this many rounds (and after
    /// the last one).
    pub resolve_every: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            mode: FinetuneMode::Nash,
            rounds: 20,
            batch: 64,
            lr: 1e-3,
            resolve_every: 1,
        }
    }
}

/// Fixed real samples and latent draws on which payoffs are evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct GanEval {
    pub real: Matrix,
    pub latent: Matrix,
}

impl GanEval {
    /// `n` real rows drawn with replacement from `data` and `n` latents.
    pub fn sample(data: &Matrix, n: usize, latent_dim: usize, rng: &mut Rng) -> Self {
        GanEval {
            real: sample_rows(data, n, rng),
            latent: sample_latent(n, latent_dim, rng),
        }
    }
}

pub fn sample_latent(n: usize, dim: usize, rng: &mut Rng) -> Matrix {
    let data = (0..n * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(n, dim, data).expect("sized above")
}

/// `n` rows drawn uniformly with replacement.
pub fn sample_rows(data: &Matrix, n: usize, rng: &mut Rng) -> Matrix {
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..data.rows())).collect();
    data.select_rows(&idx)
}

/// `−(mean log D(x) + mean log(1 − D(G(z))))` on the fixed evaluation set.
pub fn gan_payoff(generator: &Network, discriminator: &Network, eval: &GanEval) -> Result<f64> {
    let real = discriminator.forward(&eval.real)?;
    let fake = discriminator.forward(&generator.forward(&eval.latent)?)?;
    Ok(disc_loss_on(&real, &fake))
}

fn disc_loss_on(d_real: &Matrix, d_fake: &Matrix) -> f64 {
    -(mean_log(d_real, false) + mean_log(d_fake, true))
}

/// `mean log D` or, with `complement`, `mean log(1 − D)` (clamped).
fn mean_log(m: &Matrix, complement: bool) -> f64 {
    let f = |d: f64| if complement { 1.0 - d } else { d };
    m.data().iter().map(|&d| diffnet::clamp_prob(f(d)).0.ln()).sum::<f64>() / m.rows() as f64
}

/// `mean_i wᵢ·oᵢ` over a single output column.
pub struct WeightedOutput<'a> {
    pub weights: &'a [f64],
}

impl Objective for WeightedOutput<'_> {
    fn evaluate(&self, outputs: &Matrix) -> Result<(f64, Matrix)> {
        ensure_dims("weighted output width", 1, outputs.cols())?;
        ensure_dims("per-sample weights", outputs.rows(), self.weights.len())?;
        let n = outputs.rows() as f64;
        let loss = outputs.data().iter().zip(self.weights).map(|(o, w)| o * w).sum::<f64>() / n;
        let grad = Matrix::from_vec(outputs.rows(), 1, self.weights.iter().map(|w| w / n).collect())?;
        Ok((loss, grad))
    }
}

fn check_pool<T>(what: &str, pool: &[T], sigma: &MixedStrategy) -> Result<()> {
    if pool.is_empty() {
        return Err(Error::contract(format!("empty {what} pool")));
    }
    ensure_dims(&format!("{what} mixture"), pool.len(), sigma.len())
}

/// Generator search objective `Σⱼ σⱼ · mean log(1 − Dⱼ(G(z)))` (to be
/// descended) and its gradient. Discriminators with `σ = 0` are skipped.
pub fn generator_objective_grad(
    g: &Supernet,
    z: &Matrix,
    discs: &[Network],
    sigma: &MixedStrategy,
) -> Result<(f64, SupernetGrad)> {
    check_pool("discriminator", discs, sigma)?;
    let trace = g.forward_trace(z)?;
    let out = trace.output();
    let mut loss = 0.0;
    let mut g_out = Matrix::zeros(out.rows(), out.cols());
    for (d, &w) in discs.iter().zip(sigma.probs()) {
        if w == 0.0 {
            continue;
        }
        // Bce(Fake) is −mean log(1 − D).
        let (l, gx) = diffnet::grad_input(d, out, &Bce { target: BceTarget::Fake })?;
        loss -= w * l;
        g_out.axpy(-w, &gx);
    }
    let (grad, _) = g.backward(&trace, &g_out)?;
    Ok((loss, grad))
}

/// Discriminator search objective
/// `mean log D(x) + Σⱼ σⱼ · mean log(1 − D(Gⱼ(z)))` (to be ascended) and its gradient.
pub fn discriminator_objective_grad(
    d: &Supernet,
    real: &Matrix,
    z: &Matrix,
    gens: &[Network],
    sigma: &MixedStrategy,
) -> Result<(f64, SupernetGrad)> {
    check_pool("generator", gens, sigma)?;
    let (lr, gr, _) = d.grad(real, &Bce { target: BceTarget::Real })?;
    let mut value = -lr;
    let mut grad = SupernetGrad::zeros(d);
    grad.add_scaled(-1.0, &gr);
    for (g, &w) in gens.iter().zip(sigma.probs()) {
        if w == 0.0 {
            continue;
        }
        let fake = g.forward(z)?;
        let (lf, gf, _) = d.grad(&fake, &Bce { target: BceTarget::Fake })?;
        value -= w * lf;
        grad.add_scaled(-w, &gf);
    }
    Ok((value, grad))
}

/// Trains a fresh generator supernet against the discriminator mixture and
/// returns the best of its top-k discretizations.
pub fn generator_oracle(
    space: &GanSpace,
    cfg: &OracleConfig,
    discs: &[Network],
    sigma_d: &MixedStrategy,
    seed: u64,
) -> Result<Network> {
    generator_oracle_observed(space, cfg, discs, sigma_d, seed, &mut |_, _| {})
}

/// [`generator_oracle`] with a callback after every weight step.
pub fn generator_oracle_observed(
    space: &GanSpace,
    cfg: &OracleConfig,
    discs: &[Network],
    sigma_d: &MixedStrategy,
    seed: u64,
    observe: &mut dyn FnMut(usize, &Supernet),
) -> Result<Network> {
    check_pool("discriminator", discs, sigma_d)?;
    let mut init = rng::stream(seed, rng::INIT, 0);
    let mut sn = space.generator_supernet(&mut init)?;
    let mut opt = SearchOptim::adam(&sn, cfg.lr_alpha, cfg.lr_weight);
    let mut r = rng::stream(seed, rng::ORACLE_ROW, 0);
    for t in 0..cfg.steps {
        let z = sample_latent(2 * cfg.batch, space.latent_dim, &mut r);
        let (z_arch, z_weight) = split_halves(&z);
        let (_, g) = generator_objective_grad(&sn, &z_arch, discs, sigma_d)?;
        opt.arch_step(&mut sn, &g.alpha, Direction::Descent)?;
        let (_, g) = generator_objective_grad(&sn, &z_weight, discs, sigma_d)?;
        opt.weight_step(&mut sn, &g.weights, Direction::Descent)?;
        observe(t, &sn);
    }
    let z_sel = sample_latent(cfg.select_batch, space.latent_dim, &mut r);
    let candidates = top_k_networks(&sn, cfg.top_k)?;
    let (_, net, _) = select_by_adv_loss(candidates, |g| {
        let out = g.forward(&z_sel)?;
        let mut loss = 0.0;
        for (d, &w) in discs.iter().zip(sigma_d.probs()) {
            if w != 0.0 {
                loss -= w * diffnet::loss(d, &out, &Bce { target: BceTarget::Fake })?;
            }
        }
        Ok(loss)
    })?;
    Ok(net)
}

/// Trains a fresh discriminator supernet against the generator mixture.
pub fn discriminator_oracle(
    space: &GanSpace,
    cfg: &OracleConfig,
    gens: &[Network],
    sigma_g: &MixedStrategy,
    data: &Matrix,
    seed: u64,
) -> Result<Network> {
    check_pool("generator", gens, sigma_g)?;
    let mut init = rng::stream(seed, rng::INIT, 0);
    let mut sn = space.discriminator_supernet(&mut init)?;
    let mut opt = SearchOptim::adam(&sn, cfg.lr_alpha, cfg.lr_weight);
    let mut r = rng::stream(seed, rng::ORACLE_COL, 0);
    for _ in 0..cfg.steps {
        let z = sample_latent(2 * cfg.batch, space.latent_dim, &mut r);
        let x = sample_rows(data, 2 * cfg.batch, &mut r);
        let (z_arch, z_weight) = split_halves(&z);
        let (x_arch, x_weight) = split_halves(&x);
        let (_, g) = discriminator_objective_grad(&sn, &x_arch, &z_arch, gens, sigma_g)?;
        opt.arch_step(&mut sn, &g.alpha, Direction::Ascent)?;
        let (_, g) = discriminator_objective_grad(&sn, &x_weight, &z_weight, gens, sigma_g)?;
        opt.weight_step(&mut sn, &g.weights, Direction::Ascent)?;
    }
    let eval = GanEval::sample(data, cfg.select_batch, space.latent_dim, &mut r);
    let candidates = top_k_networks(&sn, cfg.top_k)?;
    let (_, net, _) = select_by_adv_loss(candidates, |d| {
        let mut loss = 0.0;
        for (g, &w) in gens.iter().zip(sigma_g.probs()) {
            if w != 0.0 {
                loss += w * gan_payoff(g, d, &eval)?;
            }
        }
        Ok(loss)
    })?;
    Ok(net)
}

fn top_k_networks(sn: &Supernet, k: usize) -> Result<Vec<Network>> {
    sn.sample_top_k(k)?.iter().map(|c| sn.extract(c)).collect()
}

fn split_halves(m: &Matrix) -> (Matrix, Matrix) {
    let h = m.rows() / 2;
    let first: Vec<usize> = (0..h).collect();
    let second: Vec<usize> = (h..m.rows()).collect();
    (m.select_rows(&first), m.select_rows(&second))
}

/// `n / Σ 1/vᵢ` with inputs floored at [`HM_FLOOR`]; the empty mean is 1.
pub fn harmonic_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    let inv: f64 = values.iter().map(|v| 1.0 / v.max(HM_FLOOR)).sum();
    values.len() as f64 / inv
}

/// Per-sample harmonic mean of `1 − D(Gⱼ(z))` over the given generators.
pub fn hm_weights(prev: &[Network], d: &Network, z: &Matrix) -> Result<Vec<f64>> {
    let outs = prev
        .iter()
        .map(|g| d.forward(&g.forward(z)?))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..z.rows())
        .map(|i| {
            let v: Vec<f64> = outs.iter().map(|o| 1.0 - o.get(i, 0)).collect();
            harmonic_mean(&v)
        })
        .collect())
}

/// Per-sample `Θ` for one discriminator: the product over earlier generators
/// with non-zero weight of `σₖ · (1 − D(Gₖ(z)))`. Empty products are 1.
pub fn theta_weights(prev: &[Network], sigma_prev: &[f64], d: &Network, z: &Matrix) -> Result<Vec<f64>> {
    ensure_dims("earlier generator weights", prev.len(), sigma_prev.len())?;
    let mut theta = vec![1.0; z.rows()];
    for (g, &s) in prev.iter().zip(sigma_prev) {
        if s == 0.0 {
            continue;
        }
        let out = d.forward(&g.forward(z)?)?;
        for (t, o) in theta.iter_mut().zip(out.data()) {
            *t *= s * (1.0 - o);
        }
    }
    Ok(theta)
}

/// `mean_z Σⱼ cⱼ(z) · Dⱼ(G(z))` and its parameter gradient, with the
/// per-sample coefficients held constant.
pub fn weighted_disc_output_grad(g: &Network, z: &Matrix, terms: &[(&Network, Vec<f64>)]) -> Result<(f64, Gradient)> {
    let trace = g.forward_trace(z)?;
    let out = trace.output();
    let mut value = 0.0;
    let mut g_out = Matrix::zeros(out.rows(), out.cols());
    for (d, c) in terms {
        let (v, gx) = diffnet::grad_input(d, out, &WeightedOutput { weights: c })?;
        value += v;
        g_out.add_assign(&gx);
    }
    let (grad, _) = g.backward(&trace, &g_out)?;
    Ok((value, grad))
}

/// Harmonic-mean generator objective `mean_z D(Gᵢ(z)) · Φ(z)` and gradient.
pub fn hm_generator_grad(g: &Network, prev: &[Network], d: &Network, z: &Matrix) -> Result<(f64, Gradient)> {
    let phi = hm_weights(prev, d, z)?;
    weighted_disc_output_grad(g, z, &[(d, phi)])
}

/// Nash generator objective `mean_z Σⱼ σ_dⱼ Θⱼ(z) Dⱼ(Gᵢ(z))` and gradient.
pub fn nash_generator_grad(
    g: &Network,
    prev: &[Network],
    sigma_prev: &[f64],
    discs: &[Network],
    sigma_d: &[f64],
    z: &Matrix,
) -> Result<(f64, Gradient)> {
    let mut terms = Vec::new();
    for (d, &w) in discs.iter().zip(sigma_d) {
        if w == 0.0 {
            continue;
        }
        let mut c = theta_weights(prev, sigma_prev, d, z)?;
        c.iter_mut().for_each(|v| *v *= w);
        terms.push((d, c));
    }
    if terms.is_empty() {
        return Ok((0.0, Gradient::zeros(g.param_count())));
    }
    weighted_disc_output_grad(g, z, &terms)
}

/// `mean log D(x) + Σₖ mean log(1 − D(Gₖ(z)))` and its gradient.
pub fn finetune_disc_grad(d: &Network, real: &Matrix, z: &Matrix, gens: &[Network]) -> Result<(f64, Gradient)> {
    let (lr, mut grad) = diffnet::grad_params(d, real, &Bce { target: BceTarget::Real })?;
    let mut value = -lr;
    grad.scale(-1.0);
    for g in gens {
        let fake = g.forward(z)?;
        let (lf, gf) = diffnet::grad_params(d, &fake, &Bce { target: BceTarget::Fake })?;
        value -= lf;
        grad.add_scaled(-1.0, &gf);
    }
    Ok((value, grad))
}

/// Sequential harmonic-mean finetuning of all generators against one
/// discriminator. Returns the number of generator gradient steps taken.
pub fn finetune_hm(gens: &mut [Network], d: &mut Network, cfg: &FinetuneConfig, data: &Matrix, seed: u64) -> Result<u64> {
    if gens.is_empty() {
        return Err(Error::contract("empty generator pool"));
    }
    let latent_dim = gens[0].input_dim();
    let mut r = rng::stream(seed, rng::FINETUNE, 0);
    let mut g_opts: Vec<OptimState> = gens.iter().map(|g| OptimState::adam(cfg.lr, g.param_count())).collect();
    let mut d_opt = OptimState::adam(cfg.lr, d.param_count());
    let mut steps = 0;
    for _ in 0..cfg.rounds {
        let z = sample_latent(cfg.batch, latent_dim, &mut r);
        for i in 0..gens.len() {
            let (prev, rest) = gens.split_at_mut(i);
            let (_, grad) = hm_generator_grad(&rest[0], prev, d, &z)?;
            diffnet::step(&mut rest[0], &grad, &mut g_opts[i], Direction::Ascent)?;
            steps += 1;
        }
        let x = sample_rows(data, cfg.batch, &mut r);
        let z = sample_latent(cfg.batch, latent_dim, &mut r);
        let (_, grad) = finetune_disc_grad(d, &x, &z, gens)?;
        diffnet::step(d, &grad, &mut d_opt, Direction::Ascent)?;
    }
    Ok(steps)
}

/// Result of [`finetune_nash`].
#[derive(Debug, Clone)]
pub struct NashFinetune {
    pub sigma_g: MixedStrategy,
    pub sigma_d: MixedStrategy,
    pub matrix: PayoffMatrix,
    pub generator_steps: u64,
}

/// Sequential Nash-weighted finetuning; re-solves the meta-game on `eval`
/// after every round.
#[allow(clippy::too_many_arguments)]
pub fn finetune_nash(
    gens: &mut [Network],
    discs: &mut [Network],
    sigma_g: &MixedStrategy,
    sigma_d: &MixedStrategy,
    cfg: &FinetuneConfig,
    data: &Matrix,
    eval: &GanEval,
    seed: u64,
) -> Result<NashFinetune> {
    check_pool("generator", gens, sigma_g)?;
    check_pool("discriminator", discs, sigma_d)?;
    let latent_dim = gens[0].input_dim();
    let mut r = rng::stream(seed, rng::FINETUNE, 0);
    let mut g_opts: Vec<OptimState> = gens.iter().map(|g| OptimState::adam(cfg.lr, g.param_count())).collect();
    let mut d_opts: Vec<OptimState> = discs.iter().map(|d| OptimState::adam(cfg.lr, d.param_count())).collect();
    let mut sg = sigma_g.clone();
    let mut sd = sigma_d.clone();
    let mut matrix = None;
    let mut steps = 0;
    let every = cfg.resolve_every.max(1);
    for round in 0..cfg.rounds {
        let z = sample_latent(cfg.batch, latent_dim, &mut r);
        for i in 0..gens.len() {
            let (prev, rest) = gens.split_at_mut(i);
            let (_, grad) = nash_generator_grad(&rest[0], prev, &sg.probs()[..i], discs, sd.probs(), &z)?;
            diffnet::step(&mut rest[0], &grad, &mut g_opts[i], Direction::Ascent)?;
            steps += 1;
        }
        let x = sample_rows(data, cfg.batch, &mut r);
        let z = sample_latent(cfg.batch, latent_dim, &mut r);
        for (d, opt) in discs.iter_mut().zip(&mut d_opts) {
            let (_, grad) = finetune_disc_grad(d, &x, &z, gens)?;
            diffnet::step(d, &grad, opt, Direction::Ascent)?;
        }
        if (round + 1) % every != 0 && round + 1 != cfg.rounds {
            matrix = None;
            continue;
        }
        let u = payoff_matrix(gens, discs, eval)?;
        let sol = solve_zero_sum(&u)?;
        sg = sol.row_strategy;
        sd = sol.col_strategy;
        matrix = Some(u);
    }
    let matrix = match matrix {
        Some(m) => m,
        None => payoff_matrix(gens, discs, eval)?,
    };
    Ok(NashFinetune {
        sigma_g: sg,
        sigma_d: sd,
        matrix,
        generator_steps: steps,
    })
}

/// Full generator × discriminator payoff matrix on `eval`; entries equal
/// [`gan_payoff`] bit for bit.
pub fn payoff_matrix(gens: &[Network], discs: &[Network], eval: &GanEval) -> Result<PayoffMatrix> {
    let fakes = gens
        .par_iter()
        .map(|g| g.forward(&eval.latent))
        .collect::<Result<Vec<_>>>()?;
    let real_terms = discs
        .par_iter()
        .map(|d| Ok(mean_log(&d.forward(&eval.real)?, false)))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, usize)> = (0..gens.len())
        .flat_map(|i| (0..discs.len()).map(move |j| (i, j)))
        .collect();
    let values = cells
        .par_iter()
        .map(|&(i, j)| Ok(-(real_terms[j] + mean_log(&discs[j].forward(&fakes[i])?, true))))
        .collect::<Result<Vec<_>>>()?;
    PayoffMatrix::new(gens.len(), discs.len(), values)
}

/// `n` samples from the generator mixture, with the generator index of each.
pub fn sample_mixture(gens: &[Network], sigma: &MixedStrategy, n: usize, rng: &mut Rng) -> Result<(Matrix, Vec<usize>)> {
    check_pool("generator", gens, sigma)?;
    let pick = WeightedIndex::new(sigma.probs()).map_err(|e| Error::contract(format!("mixture weights: {e}")))?;
    let latent_dim = gens[0].input_dim();
    let idx: Vec<usize> = (0..n).map(|_| pick.sample(rng)).collect();
    let z = sample_latent(n, latent_dim, rng);
    let mut out = Matrix::zeros(n, gens[0].output_dim());
    for (g_i, g) in gens.iter().enumerate() {
        let rows: Vec<usize> = (0..n).filter(|&i| idx[i] == g_i).collect();
        if rows.is_empty() {
            continue;
        }
        let y = g.forward(&z.select_rows(&rows))?;
        for (k, &i) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(y.row(k));
        }
    }
    Ok((out, idx))
}

/// Alternating discriminator ascent and saturating generator descent, one
/// step each per iteration.
fn train_gan_pair(g: &mut Network, d: &mut Network, lr: f64, batch: usize, steps: u64, data: &Matrix, r: &mut Rng) -> Result<()> {
    let mut g_opt = OptimState::adam(lr, g.param_count());
    let mut d_opt = OptimState::adam(lr, d.param_count());
    for _ in 0..steps {
        let x = sample_rows(data, batch, r);
        let z = sample_latent(batch, g.input_dim(), r);
        let (_, grad) = finetune_disc_grad(d, &x, &z, std::slice::from_ref(g))?;
        diffnet::step(d, &grad, &mut d_opt, Direction::Ascent)?;
        let z = sample_latent(batch, g.input_dim(), r);
        let trace = g.forward_trace(&z)?;
        let (_, gi) = diffnet::grad_input(d, trace.output(), &Bce { target: BceTarget::Fake })?;
        let (gp, _) = g.backward(&trace, &gi)?;
        // Ascending Bce(Fake) descends mean log(1 − D(G(z))).
        diffnet::step(g, &gp, &mut g_opt, Direction::Ascent)?;
    }
    Ok(())
}

/// A plain generator/discriminator pair trained by alternating updates with
/// the same losses as the oracles; the single-generator baseline.
pub fn train_single_gan(space: &GanSpace, lr: f64, batch: usize, steps: u64, data: &Matrix, seed: u64) -> Result<(Network, Network)> {
    let mut init = rng::stream(seed, rng::INIT, 0);
    let mut gdims = vec![space.latent_dim];
    gdims.extend(&space.gen_widths);
    gdims.push(space.data_dim);
    let mut ddims = vec![space.data_dim];
    ddims.extend(&space.disc_widths);
    ddims.push(1);
    let mut g = Network::mlp(&gdims, Activation::Tanh, Activation::Identity, &mut init);
    let mut d = Network::mlp(&ddims, Activation::Tanh, Activation::Sigmoid, &mut init);
    let mut r = rng::stream(seed, rng::ORACLE_ROW, 0);
    train_gan_pair(&mut g, &mut d, lr, batch, steps, data, &mut r)?;
    Ok((g, d))
}

/// The GAN meta-game: generators are rows, discriminators columns.
pub struct GanGame {
    pub space: GanSpace,
    pub oracle: OracleConfig,
    pub finetune: FinetuneConfig,
    pub data: Matrix,
    pub eval: GanEval,
    /// Generator gradient steps taken so far (oracles and finetuning).
    pub generator_steps: u64,
}

impl GanGame {
    /// Initial generator and discriminator: the first-affine architecture
    /// of each search space, trained together for `init_rounds` alternating
    /// GAN steps.
    pub fn initial_strategies(&self, init_rounds: usize, lr: f64, seed: u64) -> Result<(Network, Network)> {
        let mut r = rng::stream(seed, rng::INIT, 0);
        let gs = self.space.generator_supernet(&mut r)?;
        let ds = self.space.discriminator_supernet(&mut r)?;
        let mut g = gs.extract(&gs.first_affine_choice())?;
        let mut d = ds.extract(&ds.first_affine_choice())?;
        let mut tr = rng::stream(seed, rng::INIT, 1);
        train_gan_pair(&mut g, &mut d, lr, self.finetune.batch, init_rounds as u64, &self.data, &mut tr)?;
        Ok((g, d))
    }
}

impl OracleGame for GanGame {
    type Row = Network;
    type Col = Network;

    fn row_oracle(&mut self, req: OracleRequest<'_, Network>) -> Result<Network> {
        self.generator_steps += 2 * self.oracle.steps as u64;
        generator_oracle(&self.space, &self.oracle, req.opponents, req.opponent_mix, req.seed)
    }

    fn col_oracle(&mut self, req: OracleRequest<'_, Network>) -> Result<Network> {
        discriminator_oracle(&self.space, &self.oracle, req.opponents, req.opponent_mix, &self.data, req.seed)
    }

    fn payoff(&self, row: &Network, col: &Network) -> Result<f64> {
        gan_payoff(row, col, &self.eval)
    }

    fn finetune(&mut self, rows: &mut [Network], cols: &mut [Network], req: FinetuneRequest<'_>) -> Result<FinetuneOutcome> {
        match self.finetune.mode {
            FinetuneMode::None => Ok(FinetuneOutcome::Unchanged),
            FinetuneMode::HarmonicMean => {
                let sd = req.sigma_col.padded(cols.len());
                let mut best = 0;
                for (j, &p) in sd.probs().iter().enumerate() {
                    if p > sd.probs()[best] {
                        best = j;
                    }
                }
                self.generator_steps += finetune_hm(rows, &mut cols[best], &self.finetune, &self.data, req.seed)?;
                Ok(FinetuneOutcome::Modified)
            }
            FinetuneMode::Nash => {
                let sol = solve_zero_sum(&payoff_matrix(rows, cols, &self.eval)?)?;
                let out = finetune_nash(
                    rows,
                    cols,
                    &sol.row_strategy,
                    &sol.col_strategy,
                    &self.finetune,
                    &self.data,
                    &self.eval,
                    req.seed,
                )?;
                self.generator_steps += out.generator_steps;
                Ok(FinetuneOutcome::Modified)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::Dense;

    fn const_disc(p: f64) -> Network {
        let logit = (p / (1.0 - p)).ln();
        Network::new(vec![Dense::new(Matrix::zeros(1, 2), vec![logit], Activation::Sigmoid).unwrap()]).unwrap()
    }

    fn shift_gen(b: [f64; 2]) -> Network {
        Network::new(vec![Dense::new(Matrix::identity(2), b.to_vec(), Activation::Identity).unwrap()]).unwrap()
    }

    fn eval_set() -> GanEval {
        let mut r = rng::from_seed(1);
        GanEval {
            real: sample_latent(16, 2, &mut r),
            latent: sample_latent(16, 2, &mut r),
        }
    }

    #[test]
    fn half_discriminator_payoff_is_two_log_two() {
        let u = gan_payoff(&shift_gen([0.0, 0.0]), &const_disc(0.5), &eval_set()).unwrap();
        assert!((u - 2.0 * 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_payoff() {
        // D(x) = sigmoid(x₀); reals at x₀ ∈ {0, ln 3}, fakes at x₀ ∈ {0, −ln 3}.
        let d = Network::new(vec![Dense::new(Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(), vec![0.0], Activation::Sigmoid).unwrap()])
            .unwrap();
        let l3 = 3.0f64.ln();
        let eval = GanEval {
            real: Matrix::from_rows(&[vec![0.0, 0.0], vec![l3, 0.0]]).unwrap(),
            latent: Matrix::from_rows(&[vec![0.0, 0.0], vec![-l3, 0.0]]).unwrap(),
        };
        // D values: reals 1/2, 3/4; fakes 1/2, 1/4.
        let expected = -(0.5 * (0.5f64.ln() + 0.75f64.ln()) + 0.5 * (0.5f64.ln() + 0.75f64.ln()));
        let u = gan_payoff(&shift_gen([0.0, 0.0]), &d, &eval).unwrap();
        assert!((u - expected).abs() < 1e-12);
    }

    #[test]
    fn harmonic_mean_examples() {
        assert_eq!(harmonic_mean(&[1.0, 1.0]), 1.0);
        assert_eq!(harmonic_mean(&[0.5]), 0.5);
        assert!((harmonic_mean(&[1.0, 0.25]) - 0.4).abs() < 1e-15);
        assert_eq!(harmonic_mean(&[]), 1.0);
        assert!(harmonic_mean(&[0.0, 1.0]) > 0.0);
    }

    #[test]
    fn theta_is_hand_computable() {
        // Two earlier generators, D ≡ 0.25 → each factor σₖ · 0.75.
        let d = const_disc(0.25);
        let prev = vec![shift_gen([0.0, 0.0]), shift_gen([1.0, 1.0])];
        let z = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let t = theta_weights(&prev, &[0.6, 0.4], &d, &z).unwrap();
        assert!((t[0] - 0.6 * 0.75 * 0.4 * 0.75).abs() < 1e-12);
        let t = theta_weights(&prev, &[0.0, 0.4], &d, &z).unwrap();
        assert!((t[0] - 0.4 * 0.75).abs() < 1e-12);
        assert_eq!(theta_weights(&[], &[], &d, &z).unwrap(), vec![1.0]);
    }

    #[test]
    fn empty_pools_are_contract_errors() {
        let space = GanSpace::default();
        let cfg = OracleConfig::default();
        let e = generator_oracle(&space, &cfg, &[], &MixedStrategy::uniform(1), 0).unwrap_err();
        assert!(matches!(e, Error::Contract(_)));
        let e = discriminator_oracle(&space, &cfg, &[], &MixedStrategy::uniform(1), &Matrix::zeros(4, 2), 0).unwrap_err();
        assert!(matches!(e, Error::Contract(_)));
    }

    #[test]
    fn pure_mixture_draws_one_generator() {
        let gens = vec![shift_gen([0.0, 0.0]), shift_gen([5.0, 5.0])];
        let (_, idx) = sample_mixture(&gens, &MixedStrategy::pure(2, 0), 100, &mut rng::from_seed(3)).unwrap();
        assert!(idx.iter().all(|&i| i == 0));
    }
}
