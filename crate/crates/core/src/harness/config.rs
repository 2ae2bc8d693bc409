//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is optional
//! and falls back to its default; unknown and repeated keys are errors.
//! [`ExperimentConfig::to_text`] writes every key in a fixed order, and parsing
//! that text reproduces the same configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::at::{AttackerConfig, ClassifierFinetuneConfig, ClassifierSearchConfig};
use crate::diffnet::Activation;
use crate::double_oracle::DoConfig;
use crate::error::{Error, Result};
use crate::gan::{FinetuneConfig, FinetuneMode, GanSpace, OracleConfig};
use crate::metagame::PayoffMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Gan,
    At,
    MatrixDemo,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gan" => Ok(Mode::Gan),
            "at" => Ok(Mode::At),
            "matrix-demo" => Ok(Mode::MatrixDemo),
            other => Err(format!("unknown mode '{other}' (expected gan, at or matrix-demo)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Gan => "gan",
            Mode::At => "at",
            Mode::MatrixDemo => "matrix-demo",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanExperiment {
    pub data_size: usize,
    pub modes: usize,
    pub radius: f64,
    pub sigma_mode: f64,
    pub space: GanSpace,
    pub oracle: OracleConfig,
    pub finetune: FinetuneConfig,
    /// Rounds of single-generator training for the initial pair.
    pub init_rounds: usize,
    pub init_lr: f64,
    /// Size of the fixed payoff evaluation set.
    pub eval_size: usize,
    /// Samples drawn from the final mixture for metrics and `samples.csv`.
    pub sample_count: usize,
    pub coverage_min_frac: f64,
    /// Also train a single GAN with the same number of generator steps.
    pub baseline: bool,
    pub baseline_lr: f64,
}

impl Default for GanExperiment {
    fn default() -> Self {
        GanExperiment {
            data_size: 4000,
            modes: 8,
            radius: 2.0,
            sigma_mode: 0.05,
            space: GanSpace::default(),
            oracle: OracleConfig::default(),
            finetune: FinetuneConfig::default(),
            init_rounds: 500,
            init_lr: 1e-3,
            eval_size: 512,
            sample_count: 2000,
            coverage_min_frac: 0.02,
            baseline: true,
            baseline_lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtExperiment {
    pub data_size: usize,
    pub noise: f64,
    pub test_size: usize,
    pub attacker: AttackerConfig,
    pub search: ClassifierSearchConfig,
    pub finetune: ClassifierFinetuneConfig,
    /// Training rows on which payoffs are evaluated.
    pub eval_size: usize,
    /// PGD iteration counts reported in `metrics.csv`.
    pub pgd_iters: Vec<usize>,
    pub baseline: bool,
    pub baseline_lr: f64,
}

impl Default for AtExperiment {
    fn default() -> Self {
        AtExperiment {
            data_size: 2000,
            noise: 0.1,
            test_size: 1000,
            attacker: AttackerConfig::default(),
            search: ClassifierSearchConfig::default(),
            finetune: ClassifierFinetuneConfig::default(),
            eval_size: 512,
            pgd_iters: vec![20, 100],
            baseline: true,
            baseline_lr: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub out: PathBuf,
    pub epsilon_term: f64,
    pub support_limit: usize,
    pub max_epochs: usize,
    /// Write a checkpoint every this many epochs; 0 disables checkpoints.
    pub checkpoint_every: usize,
    /// Full game for `matrix-demo`.
    pub matrix: PayoffMatrix,
    pub cka_probe_size: usize,
    pub gan: GanExperiment,
    pub at: AtExperiment,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let d = DoConfig::default();
        ExperimentConfig {
            mode: Mode::MatrixDemo,
            seed: 0,
            out: PathBuf::from("runs/default"),
            epsilon_term: d.epsilon_term,
            support_limit: d.support_limit,
            max_epochs: d.max_epochs,
            checkpoint_every: 1,
            matrix: PayoffMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).expect("finite"),
            cka_probe_size: 512,
            gan: GanExperiment::default(),
            at: AtExperiment::default(),
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "mode",
    "seed",
    "out",
    "epsilon_term",
    "support_limit",
    "max_epochs",
    "checkpoint_every",
    "matrix",
    "cka.probe_size",
    "gan.data_size",
    "gan.modes",
    "gan.radius",
    "gan.sigma_mode",
    "gan.latent_dim",
    "gan.gen_widths",
    "gan.disc_widths",
    "gan.activations",
    "gan.oracle_steps",
    "gan.batch",
    "gan.top_k",
    "gan.select_batch",
    "gan.lr_alpha",
    "gan.lr_weight",
    "gan.finetune",
    "gan.finetune_rounds",
    "gan.finetune_batch",
    "gan.finetune_lr",
    "gan.finetune_resolve_every",
    "gan.init_rounds",
    "gan.init_lr",
    "gan.eval_size",
    "gan.sample_count",
    "gan.coverage_min_frac",
    "gan.baseline",
    "gan.baseline_lr",
    "at.data_size",
    "at.noise",
    "at.test_size",
    "at.eps_atk",
    "at.hops",
    "at.attacker_epochs",
    "at.attacker_batch",
    "at.widths",
    "at.activations",
    "at.search_iterations",
    "at.batch",
    "at.lr_alpha",
    "at.lr_weight",
    "at.phi",
    "at.gamma_reg",
    "at.reg_h",
    "at.reg_fd_step",
    "at.finetune_hops",
    "at.finetune_epochs",
    "at.finetune_lr",
    "at.finetune_batch",
    "at.eval_size",
    "at.pgd_iters",
    "at.baseline",
    "at.baseline_lr",
];

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("cannot parse '{v}': {e}"))
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    v.split(',').map(|s| parse(s.trim())).collect()
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_matrix(v: &str) -> Result<PayoffMatrix, String> {
    let rows = v
        .split(';')
        .map(parse_list::<f64>)
        .collect::<Result<Vec<_>, _>>()?;
    PayoffMatrix::from_rows(&rows).map_err(|e| e.to_string())
}

fn format_matrix(m: &PayoffMatrix) -> String {
    m.to_rows().iter().map(|r| join(r)).collect::<Vec<_>>().join(";")
}

impl ExperimentConfig {
    /// Double-oracle settings for this run.
    pub fn do_config(&self) -> DoConfig {
        DoConfig {
            epsilon_term: self.epsilon_term,
            support_limit: self.support_limit,
            max_epochs: self.max_epochs,
            seed: self.seed,
        }
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let g = &mut self.gan;
        let a = &mut self.at;
        match key {
            "mode" => self.mode = parse(v)?,
            "seed" => self.seed = parse(v)?,
            "out" => self.out = PathBuf::from(v),
            "epsilon_term" => self.epsilon_term = parse(v)?,
            "support_limit" => self.support_limit = parse(v)?,
            "max_epochs" => self.max_epochs = parse(v)?,
            "checkpoint_every" => self.checkpoint_every = parse(v)?,
            "matrix" => self.matrix = parse_matrix(v)?,
            "cka.probe_size" => self.cka_probe_size = parse(v)?,
            "gan.data_size" => g.data_size = parse(v)?,
            "gan.modes" => g.modes = parse(v)?,
            "gan.radius" => g.radius = parse(v)?,
            "gan.sigma_mode" => g.sigma_mode = parse(v)?,
            "gan.latent_dim" => g.space.latent_dim = parse(v)?,
            "gan.gen_widths" => g.space.gen_widths = parse_list(v)?,
            "gan.disc_widths" => g.space.disc_widths = parse_list(v)?,
            "gan.activations" => g.space.activations = parse_list::<Activation>(v)?,
            "gan.oracle_steps" => g.oracle.steps = parse(v)?,
            "gan.batch" => g.oracle.batch = parse(v)?,
            "gan.top_k" => g.oracle.top_k = parse(v)?,
            "gan.select_batch" => g.oracle.select_batch = parse(v)?,
            "gan.lr_alpha" => g.oracle.lr_alpha = parse(v)?,
            "gan.lr_weight" => g.oracle.lr_weight = parse(v)?,
            "gan.finetune" => g.finetune.mode = parse::<FinetuneMode>(v)?,
            "gan.finetune_rounds" => g.finetune.rounds = parse(v)?,
            "gan.finetune_batch" => g.finetune.batch = parse(v)?,
            "gan.finetune_lr" => g.finetune.lr = parse(v)?,
            "gan.finetune_resolve_every" => g.finetune.resolve_every = parse(v)?,
            "gan.init_rounds" => g.init_rounds = parse(v)?,
            "gan.init_lr" => g.init_lr = parse(v)?,
            "gan.eval_size" => g.eval_size = parse(v)?,
            "gan.sample_count" => g.sample_count = parse(v)?,
            "gan.coverage_min_frac" => g.coverage_min_frac = parse(v)?,
            "gan.baseline" => g.baseline = parse(v)?,
            "gan.baseline_lr" => g.baseline_lr = parse(v)?,
            "at.data_size" => a.data_size = parse(v)?,
            "at.noise" => a.noise = parse(v)?,
            "at.test_size" => a.test_size = parse(v)?,
            "at.eps_atk" => a.attacker.eps = parse(v)?,
            "at.hops" => a.attacker.hops = parse(v)?,
            "at.attacker_epochs" => a.attacker.epochs = parse(v)?,
            "at.attacker_batch" => a.attacker.batch = parse(v)?,
            "at.widths" => a.search.widths = parse_list(v)?,
            "at.activations" => a.search.activations = parse_list::<Activation>(v)?,
            "at.search_iterations" => a.search.iterations = parse(v)?,
            "at.batch" => a.search.batch = parse(v)?,
            "at.lr_alpha" => a.search.lr_alpha = parse(v)?,
            "at.lr_weight" => a.search.lr_weight = parse(v)?,
            "at.phi" => {
                a.search.warmup = if v == "inf" { usize::MAX } else { parse(v)? };
            }
            "at.gamma_reg" => a.search.gamma_reg = parse(v)?,
            "at.reg_h" => a.search.reg_h = parse(v)?,
            "at.reg_fd_step" => a.search.reg_fd_step = parse(v)?,
            "at.finetune_hops" => a.finetune.hops = parse(v)?,
            "at.finetune_epochs" => a.finetune.epochs = parse(v)?,
            "at.finetune_lr" => a.finetune.lr = parse(v)?,
            "at.finetune_batch" => a.finetune.batch = parse(v)?,
            "at.eval_size" => a.eval_size = parse(v)?,
            "at.pgd_iters" => a.pgd_iters = parse_list(v)?,
            "at.baseline" => a.baseline = parse(v)?,
            "at.baseline_lr" => a.baseline_lr = parse(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let g = &self.gan;
        let a = &self.at;
        match key {
            "mode" => self.mode.to_string(),
            "seed" => self.seed.to_string(),
            "out" => self.out.display().to_string(),
            "epsilon_term" => self.epsilon_term.to_string(),
            "support_limit" => self.support_limit.to_string(),
            "max_epochs" => self.max_epochs.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "matrix" => format_matrix(&self.matrix),
            "cka.probe_size" => self.cka_probe_size.to_string(),
            "gan.data_size" => g.data_size.to_string(),
            "gan.modes" => g.modes.to_string(),
            "gan.radius" => g.radius.to_string(),
            "gan.sigma_mode" => g.sigma_mode.to_string(),
            "gan.latent_dim" => g.space.latent_dim.to_string(),
            "gan.gen_widths" => join(&g.space.gen_widths),
            "gan.disc_widths" => join(&g.space.disc_widths),
            "gan.activations" => join(&g.space.activations),
            "gan.oracle_steps" => g.oracle.steps.to_string(),
            "gan.batch" => g.oracle.batch.to_string(),
            "gan.top_k" => g.oracle.top_k.to_string(),
            "gan.select_batch" => g.oracle.select_batch.to_string(),
            "gan.lr_alpha" => g.oracle.lr_alpha.to_string(),
            "gan.lr_weight" => g.oracle.lr_weight.to_string(),
            "gan.finetune" => g.finetune.mode.to_string(),
            "gan.finetune_rounds" => g.finetune.rounds.to_string(),
            "gan.finetune_batch" => g.finetune.batch.to_string(),
            "gan.finetune_lr" => g.finetune.lr.to_string(),
            "gan.finetune_resolve_every" => g.finetune.resolve_every.to_string(),
            "gan.init_rounds" => g.init_rounds.to_string(),
            "gan.init_lr" => g.init_lr.to_string(),
            "gan.eval_size" => g.eval_size.to_string(),
            "gan.sample_count" => g.sample_count.to_string(),
            "gan.coverage_min_frac" => g.coverage_min_frac.to_string(),
            "gan.baseline" => g.baseline.to_string(),
            "gan.baseline_lr" => g.baseline_lr.to_string(),
            "at.data_size" => a.data_size.to_string(),
            "at.noise" => a.noise.to_string(),
            "at.test_size" => a.test_size.to_string(),
            "at.eps_atk" => a.attacker.eps.to_string(),
            "at.hops" => a.attacker.hops.to_string(),
            "at.attacker_epochs" => a.attacker.epochs.to_string(),
            "at.attacker_batch" => a.attacker.batch.to_string(),
            "at.widths" => join(&a.search.widths),
            "at.activations" => join(&a.search.activations),
            "at.search_iterations" => a.search.iterations.to_string(),
            "at.batch" => a.search.batch.to_string(),
            "at.lr_alpha" => a.search.lr_alpha.to_string(),
            "at.lr_weight" => a.search.lr_weight.to_string(),
            "at.phi" => {
                if a.search.warmup == usize::MAX {
                    "inf".into()
                } else {
                    a.search.warmup.to_string()
                }
            }
            "at.gamma_reg" => a.search.gamma_reg.to_string(),
            "at.reg_h" => a.search.reg_h.to_string(),
            "at.reg_fd_step" => a.search.reg_fd_step.to_string(),
            "at.finetune_hops" => a.finetune.hops.to_string(),
            "at.finetune_epochs" => a.finetune.epochs.to_string(),
            "at.finetune_lr" => a.finetune.lr.to_string(),
            "at.finetune_batch" => a.finetune.batch.to_string(),
            "at.eval_size" => a.eval_size.to_string(),
            "at.pgd_iters" => join(&a.pgd_iters),
            "at.baseline" => a.baseline.to_string(),
            "at.baseline_lr" => a.baseline_lr.to_string(),
            other => unreachable!("key '{other}' listed in KEYS without a getter"),
        }
    }

    /// Parses config text; `source` names the input in diagnostics.
    pub fn parse_str(text: &str, source: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |key: &str| format!("{source}:{line_no} (key '{key}')");
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config {
                    location: format!("{source}:{line_no}"),
                    message: format!("expected 'key = value', got '{line}'"),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config {
                    location: at(k),
                    message: "unknown key".into(),
                });
            }
            if let Some(prev) = seen.insert(k.to_string(), line_no) {
                return Err(Error::Config {
                    location: at(k),
                    message: format!("duplicate key, first set on line {prev}"),
                });
            }
            cfg.set(k, v).map_err(|message| Error::Config {
                location: at(k),
                message,
            })?;
        }
        cfg.validate().map_err(|e| match e {
            Error::Config { location, message } => Error::Config {
                location: format!("{source} (key '{location}')"),
                message,
            },
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, &path.display().to_string())
    }

    /// Range checks; errors name the offending key as the location.
    pub fn validate(&self) -> Result<()> {
        fn bad(key: &str, message: String) -> Result<()> {
            Err(Error::Config {
                location: key.into(),
                message,
            })
        }
        fn positive(key: &str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                bad(key, format!("must be positive and finite, got {v}"))
            }
        }
        fn at_least(key: &str, v: usize, min: usize) -> Result<()> {
            if v >= min {
                Ok(())
            } else {
                bad(key, format!("must be at least {min}, got {v}"))
            }
        }
        fn nonempty<T>(key: &str, v: &[T]) -> Result<()> {
            if v.is_empty() {
                bad(key, "must not be empty".into())
            } else {
                Ok(())
            }
        }

        positive("epsilon_term", self.epsilon_term)?;
        at_least("support_limit", self.support_limit, 2)?;
        at_least("cka.probe_size", self.cka_probe_size, 2)?;

        let g = &self.gan;
        at_least("gan.data_size", g.data_size, 1)?;
        at_least("gan.modes", g.modes, 1)?;
        positive("gan.radius", g.radius)?;
        if !(g.sigma_mode >= 0.0 && g.sigma_mode.is_finite()) {
            return bad("gan.sigma_mode", format!("must be non-negative, got {}", g.sigma_mode));
        }
        at_least("gan.latent_dim", g.space.latent_dim, 1)?;
        nonempty("gan.activations", &g.space.activations)?;
        at_least("gan.batch", g.oracle.batch, 1)?;
        at_least("gan.top_k", g.oracle.top_k, 1)?;
        at_least("gan.select_batch", g.oracle.select_batch, 1)?;
        positive("gan.lr_alpha", g.oracle.lr_alpha)?;
        positive("gan.lr_weight", g.oracle.lr_weight)?;
        at_least("gan.finetune_batch", g.finetune.batch, 1)?;
        positive("gan.finetune_lr", g.finetune.lr)?;
        positive("gan.init_lr", g.init_lr)?;
        at_least("gan.finetune_resolve_every", g.finetune.resolve_every, 1)?;
        at_least("gan.eval_size", g.eval_size, 1)?;
        at_least("gan.sample_count", g.sample_count, 3)?;
        if !(0.0..=1.0).contains(&g.coverage_min_frac) {
            return bad("gan.coverage_min_frac", format!("must lie in [0, 1], got {}", g.coverage_min_frac));
        }
        positive("gan.baseline_lr", g.baseline_lr)?;
        if g.space.gen_widths.contains(&0) || g.space.disc_widths.contains(&0) {
            return bad("gan.gen_widths", "layer widths must be positive".into());
        }

        let a = &self.at;
        at_least("at.data_size", a.data_size, 4)?;
        if !(a.noise >= 0.0 && a.noise.is_finite()) {
            return bad("at.noise", format!("must be non-negative, got {}", a.noise));
        }
        at_least("at.test_size", a.test_size, 1)?;
        positive("at.eps_atk", a.attacker.eps)?;
        at_least("at.hops", a.attacker.hops, 1)?;
        at_least("at.attacker_batch", a.attacker.batch, 1)?;
        nonempty("at.widths", &a.search.widths)?;
        if a.search.widths.contains(&0) {
            return bad("at.widths", "layer widths must be positive".into());
        }
        nonempty("at.activations", &a.search.activations)?;
        at_least("at.batch", a.search.batch, 1)?;
        positive("at.lr_alpha", a.search.lr_alpha)?;
        positive("at.lr_weight", a.search.lr_weight)?;
        if !(a.search.gamma_reg >= 0.0 && a.search.gamma_reg.is_finite()) {
            return bad("at.gamma_reg", format!("must be non-negative, got {}", a.search.gamma_reg));
        }
        positive("at.reg_h", a.search.reg_h)?;
        positive("at.reg_fd_step", a.search.reg_fd_step)?;
        at_least("at.finetune_hops", a.finetune.hops, 1)?;
        at_least("at.finetune_batch", a.finetune.batch, 1)?;
        if !(a.finetune.lr >= 0.0 && a.finetune.lr.is_finite()) {
            return bad("at.finetune_lr", format!("must be non-negative, got {}", a.finetune.lr));
        }
        at_least("at.eval_size", a.eval_size, 1)?;
        if a.eval_size > a.data_size {
            return bad("at.eval_size", format!("exceeds at.data_size = {}", a.data_size));
        }
        if a.pgd_iters.contains(&0) {
            return bad("at.pgd_iters", "iteration counts must be positive".into());
        }
        positive("at.baseline_lr", a.baseline_lr)?;
        Ok(())
    }

    /// Canonical text listing every key.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k))).collect()
    }
}
