//! Experiment runners for the three modes.

use std::path::{Path, PathBuf};

use crate::at::{self, Attack, AttackConfig, AtGame, Labeled};
use crate::diffnet::Network;
use crate::double_oracle::{self, DoConfig, DoState, MatrixGame, OracleGame};
use crate::error::{Error, Result};
use crate::gan::{self, GanEval, GanGame};
use crate::harness::checkpoint::{Checkpoint, Persist};
use crate::harness::config::{ExperimentConfig, Mode};
use crate::harness::data;
use crate::harness::report::{self, MetricRow};
use crate::metagame::{self, MixedStrategy, Side};
use crate::metrics;
use crate::rng;
use crate::tensor::Matrix;

/// What a completed run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub epochs: usize,
    pub terminated: bool,
    pub game_value: f64,
    pub metrics: Vec<MetricRow>,
}

impl RunSummary {
    /// The first metric matching `subject`, `metric` and `attack`.
    pub fn metric(&self, subject: &str, metric: &str, attack: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|m| m.subject == subject && m.metric == metric && m.attack == attack)
            .map(|m| m.value)
    }
}

pub fn checkpoint_path(out: &Path, epoch: usize) -> PathBuf {
    out.join("checkpoints").join(format!("epoch_{epoch:03}.ckpt"))
}

/// Runs the configured experiment, writing every artifact except the manifest
/// into `cfg.out`. With `resume`, continues from that checkpoint.
pub fn run_experiment(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    if cfg.checkpoint_every > 0 {
        let dir = cfg.out.join("checkpoints");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    match cfg.mode {
        Mode::MatrixDemo => run_matrix(cfg, resume),
        Mode::Gan => run_gan(cfg, resume),
        Mode::At => run_at(cfg, resume),
    }
}

fn load_resume<R: Persist, C: Persist>(cfg: &ExperimentConfig, path: &Path) -> Result<Checkpoint<R, C>> {
    let ck = Checkpoint::<R, C>::load(path)?;
    if ck.mode != cfg.mode.to_string() || ck.seed != cfg.seed {
        return Err(Error::Checkpoint(format!(
            "{} was written by a {} run with seed {}, not {} with seed {}",
            path.display(),
            ck.mode,
            ck.seed,
            cfg.mode,
            cfg.seed
        )));
    }
    Ok(ck)
}

/// Drives the double-oracle loop, writing the trace and checkpoints after
/// every epoch.
fn drive<G>(
    cfg: &ExperimentConfig,
    game: &mut G,
    state: DoState<G::Row, G::Col>,
    counter: impl Fn(&G) -> u64,
) -> Result<DoState<G::Row, G::Col>>
where
    G: OracleGame,
    G::Row: Persist,
    G::Col: Persist,
{
    let do_cfg: DoConfig = cfg.do_config();
    let trace_path = cfg.out.join("trace.csv");
    report::write_trace(&trace_path, &state.trace)?;
    double_oracle::run_from(game, state, &do_cfg, |g, s| {
        report::write_trace(&trace_path, &s.trace)?;
        let last = s.terminated || s.epoch >= do_cfg.max_epochs;
        if cfg.checkpoint_every > 0 && (s.epoch % cfg.checkpoint_every == 0 || last) {
            Checkpoint {
                mode: cfg.mode.to_string(),
                seed: cfg.seed,
                counter: counter(g),
                state: s.clone(),
            }
            .save(&checkpoint_path(&cfg.out, s.epoch))?;
        }
        Ok(())
    })
}

fn do_metrics(state_value: f64, epochs: usize, terminated: bool) -> Vec<MetricRow> {
    vec![
        MetricRow::plain("donas", "game_value", state_value),
        MetricRow::plain("donas", "epochs", epochs as f64),
        MetricRow::plain("donas", "terminated", f64::from(u8::from(terminated))),
    ]
}

fn finish<R, C>(cfg: &ExperimentConfig, state: &DoState<R, C>, mut metrics: Vec<MetricRow>) -> Result<RunSummary> {
    let mut all = do_metrics(state.game_value(), state.epoch, state.terminated);
    all.append(&mut metrics);
    report::write_metrics(&cfg.out.join("metrics.csv"), &all)?;
    Ok(RunSummary {
        epochs: state.epoch,
        terminated: state.terminated,
        game_value: state.game_value(),
        metrics: all,
    })
}

/// Full-game best-response gains of the restricted equilibrium.
pub fn matrix_exploitability(full: &metagame::PayoffMatrix, rows: &[usize], cols: &[usize], sr: &MixedStrategy, sc: &MixedStrategy) -> Result<(f64, f64, f64)> {
    let lift = |n: usize, idx: &[usize], s: &MixedStrategy| {
        let mut p = vec![0.0; n];
        for (&i, &q) in idx.iter().zip(s.probs()) {
            p[i] += q;
        }
        MixedStrategy::new(p)
    };
    let p = lift(full.n_rows(), rows, sr)?;
    let q = lift(full.n_cols(), cols, sc)?;
    let v = metagame::expected_utility(full, &p, &q)?;
    let (_, row_best) = metagame::best_response(full, &q, Side::Row)?;
    let (_, col_best) = metagame::best_response(full, &p, Side::Col)?;
    Ok((v, row_best - v, v - col_best))
}

fn run_matrix(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<RunSummary> {
    let mut game = MatrixGame { full: cfg.matrix.clone() };
    let state = match resume {
        Some(p) => load_resume::<usize, usize>(cfg, p)?.state,
        None => double_oracle::initialize(&game, 0, 0)?,
    };
    let state = drive(cfg, &mut game, state, |_| 0)?;
    let full_value = metagame::solve_zero_sum(&cfg.matrix)?.game_value;
    let (_, row_gain, col_gain) =
        matrix_exploitability(&cfg.matrix, &state.rows, &state.cols, &state.sigma_row, &state.sigma_col)?;
    finish(
        cfg,
        &state,
        vec![
            MetricRow::plain("full_game", "game_value", full_value),
            MetricRow::plain("donas", "row_best_response_gain", row_gain),
            MetricRow::plain("donas", "col_best_response_gain", col_gain),
        ],
    )
}

fn write_cka(cfg: &ExperimentConfig, nets: &[Network], probe: &Matrix, subject: &str, metrics: &mut Vec<MetricRow>) -> Result<()> {
    let h = metrics::cka_heatmap(nets, probe)?;
    report::write_cka(&cfg.out, &h)?;
    for (l, v) in h.cross_mean.iter().enumerate() {
        metrics.push(MetricRow::plain(subject, &format!("cka_cross_mean_layer_{l}"), *v));
    }
    Ok(())
}

/// Datasets and evaluation draws shared by fresh and resumed GAN runs.
pub struct GanSetup {
    pub data: Matrix,
    pub eval: GanEval,
    /// Independent real sample for the Fréchet distance.
    pub reference: Matrix,
}

pub fn gan_setup(cfg: &ExperimentConfig) -> Result<GanSetup> {
    let g = &cfg.gan;
    let mut r = rng::stream(cfg.seed, rng::DATASET, 0);
    let (data, _) = data::gen_ring(g.data_size, g.modes, g.radius, g.sigma_mode, &mut r)?;
    let eval = GanEval::sample(&data, g.eval_size, g.space.latent_dim, &mut rng::stream(cfg.seed, rng::EVAL, 0));
    let mut r = rng::stream(cfg.seed, rng::DATASET, 1);
    let (reference, _) = data::gen_ring(g.sample_count, g.modes, g.radius, g.sigma_mode, &mut r)?;
    Ok(GanSetup { data, eval, reference })
}

fn run_gan(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<RunSummary> {
    let g = &cfg.gan;
    let setup = gan_setup(cfg)?;
    let mut game = GanGame {
        space: g.space.clone(),
        oracle: g.oracle.clone(),
        finetune: g.finetune.clone(),
        data: setup.data.clone(),
        eval: setup.eval.clone(),
        generator_steps: 0,
    };
    let state = match resume {
        Some(p) => {
            let ck = load_resume::<Network, Network>(cfg, p)?;
            game.generator_steps = ck.counter;
            ck.state
        }
        None => {
            let (g0, d0) = game.initial_strategies(g.init_rounds, g.init_lr, cfg.seed)?;
            game.generator_steps = g.init_rounds as u64;
            double_oracle::initialize(&game, g0, d0)?
        }
    };
    let state = drive(cfg, &mut game, state, |g| g.generator_steps)?;

    let centers = data::ring_centers(g.modes, g.radius);
    let mut r = rng::stream(cfg.seed, rng::EVAL, 1);
    let (samples, source) = gan::sample_mixture(&state.rows, &state.sigma_row, g.sample_count, &mut r)?;
    report::write_samples(&cfg.out.join("samples.csv"), &samples, &source)?;
    let mut rows = vec![
        MetricRow::plain("donas", "generator_steps", game.generator_steps as f64),
        MetricRow::plain(
            "donas",
            "mode_coverage",
            metrics::mode_coverage(&samples, &centers, g.sigma_mode, g.coverage_min_frac)? as f64,
        ),
        MetricRow::plain("donas", "frechet_2d", metrics::frechet_2d(&samples, &setup.reference)?),
    ];

    if g.baseline {
        let seed = rng::derive_seed(cfg.seed, "baseline", 0);
        let (bg, _) = gan::train_single_gan(&g.space, g.baseline_lr, g.oracle.batch, game.generator_steps, &setup.data, seed)?;
        let (bs, _) = gan::sample_mixture(std::slice::from_ref(&bg), &MixedStrategy::pure(1, 0), g.sample_count, &mut r)?;
        rows.push(MetricRow::plain("baseline", "generator_steps", game.generator_steps as f64));
        rows.push(MetricRow::plain(
            "baseline",
            "mode_coverage",
            metrics::mode_coverage(&bs, &centers, g.sigma_mode, g.coverage_min_frac)? as f64,
        ));
        rows.push(MetricRow::plain("baseline", "frechet_2d", metrics::frechet_2d(&bs, &setup.reference)?));
    }

    let probe = gan::sample_latent(cfg.cka_probe_size, g.space.latent_dim, &mut rng::stream(cfg.seed, rng::EVAL, 2));
    write_cka(cfg, &state.rows, &probe, "donas", &mut rows)?;
    finish(cfg, &state, rows)
}

/// Training and test sets shared by fresh and resumed AT runs.
pub fn at_setup(cfg: &ExperimentConfig) -> Result<(Labeled, Labeled)> {
    let a = &cfg.at;
    let train = data::gen_two_moons(a.data_size, a.noise, &mut rng::stream(cfg.seed, rng::DATASET, 0))?;
    let test = data::gen_two_moons(a.test_size, a.noise, &mut rng::stream(cfg.seed, rng::DATASET, 1))?;
    Ok((train, test))
}

/// The attacks reported for every classifier: clean, FGSM and each PGD length.
pub fn at_attacks(cfg: &ExperimentConfig) -> Vec<Attack> {
    let eps = cfg.at.attacker.eps;
    let mut v = vec![Attack::Clean, Attack::Fgsm { eps }];
    v.extend(cfg.at.pgd_iters.iter().map(|&k| Attack::Pgd(AttackConfig::pgd(eps, k))));
    v
}

fn robust_rows(subject: &str, nets: &[Network], sigma: &MixedStrategy, test: &Labeled, attacks: &[Attack], seed: u64) -> Result<Vec<MetricRow>> {
    attacks
        .iter()
        .map(|atk| {
            Ok(MetricRow {
                subject: subject.into(),
                metric: "accuracy".into(),
                attack: atk.name(),
                eps_atk: atk.eps(),
                iters: atk.iters(),
                value: at::evaluate_robust(nets, sigma, test, atk, seed)?,
            })
        })
        .collect()
}

fn run_at(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<RunSummary> {
    let a = &cfg.at;
    let (train, test) = at_setup(cfg)?;
    let mut game = AtGame {
        data: train.clone(),
        eval_idx: (0..a.eval_size).collect(),
        attacker: a.attacker.clone(),
        search: a.search.clone(),
        finetune: a.finetune.clone(),
        classifier_steps: 0,
        attacker_hops: 0,
        max_abs_delta: 0.0,
    };
    let state = match resume {
        Some(p) => {
            let ck = load_resume::<at::Perturbation, Network>(cfg, p)?;
            game.classifier_steps = ck.counter;
            ck.state
        }
        None => {
            let (p0, c0) = game.initial_strategies(cfg.seed)?;
            double_oracle::initialize(&game, p0, c0)?
        }
    };
    let state = drive(cfg, &mut game, state, |g| g.classifier_steps)?;

    let attacks = at_attacks(cfg);
    let eval_seed = rng::derive_seed(cfg.seed, rng::ATTACK, 1);
    let mut rows = vec![
        MetricRow::plain("donas", "classifier_steps", game.classifier_steps as f64),
        MetricRow::plain("donas", "attacker_hops", game.attacker_hops as f64),
        MetricRow::plain("donas", "attacker_max_abs_delta", game.max_abs_delta),
    ];
    rows.extend(robust_rows("donas", &state.cols, &state.sigma_col, &test, &attacks, eval_seed)?);
    if a.baseline {
        let seed = rng::derive_seed(cfg.seed, "baseline", 0);
        let net = at::train_standard(&train, &a.search.widths, a.baseline_lr, a.search.batch, game.classifier_steps, seed)?;
        rows.push(MetricRow::plain("baseline", "classifier_steps", game.classifier_steps as f64));
        rows.extend(robust_rows("baseline", &[net], &MixedStrategy::pure(1, 0), &test, &attacks, eval_seed)?);
    }
    let n = cfg.cka_probe_size.min(test.len());
    let probe = test.x.select_rows(&(0..n).collect::<Vec<_>>());
    write_cka(cfg, &state.cols, &probe, "donas", &mut rows)?;
    finish(cfg, &state, rows)
}
