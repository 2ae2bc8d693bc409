//! The double-oracle outer loop.
//!
//! Each epoch asks both best-response oracles for a new pure strategy against
//! the opponent's current equilibrium mixture, grows the restricted game,
//! checks whether the new strategies improved on the old equilibrium, solves
//! the grown game and prunes both pools back to the support limit.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metagame::{self, expected_utility, MixedStrategy, PayoffMatrix};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct DoConfig {
    /// Termination tolerance in payoff units.
    pub epsilon_term: f64,
    /// Maximum pool size kept after pruning.
    pub support_limit: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for DoConfig {
    fn default() -> Self {
        DoConfig {
            epsilon_term: 5e-3,
            support_limit: 10,
            max_epochs: 20,
            seed: 0,
        }
    }
}

impl DoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_term > 0.0) || !self.epsilon_term.is_finite() {
            return Err(Error::contract(format!(
                "epsilon_term must be positive, got {}",
                self.epsilon_term
            )));
        }
        if self.support_limit < 2 {
            return Err(Error::contract(format!(
                "support limit must be at least 2, got {}",
                self.support_limit
            )));
        }
        Ok(())
    }
}

/// What an oracle is asked to respond to.
pub struct OracleRequest<'a, S> {
    pub epoch: usize,
    pub opponents: &'a [S],
    pub opponent_mix: &'a MixedStrategy,
    pub seed: u64,
}

/// Context handed to the finetuning hook.
pub struct FinetuneRequest<'a> {
    pub epoch: usize,
    /// Equilibrium of the previous restricted game; shorter than the pools by
    /// the strategies added this epoch.
    pub sigma_row: &'a MixedStrategy,
    pub sigma_col: &'a MixedStrategy,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinetuneOutcome {
    Unchanged,
    /// Existing strategies were modified; every payoff entry is re-evaluated.
    Modified,
}

/// A two-player zero-sum game with best-response oracles.
///
/// The row player maximizes `payoff`, the column player minimizes it.
pub trait OracleGame: Sync {
    type Row: Clone + Send + Sync;
    type Col: Clone + Send + Sync;

    fn row_oracle(&mut self, req: OracleRequest<'_, Self::Col>) -> Result<Self::Row>;

    fn col_oracle(&mut self, req: OracleRequest<'_, Self::Row>) -> Result<Self::Col>;

    /// Must be safe to call concurrently on distinct pairs.
    fn payoff(&self, row: &Self::Row, col: &Self::Col) -> Result<f64>;

    fn finetune(
        &mut self,
        _rows: &mut [Self::Row],
        _cols: &mut [Self::Col],
        _req: FinetuneRequest<'_>,
    ) -> Result<FinetuneOutcome> {
        Ok(FinetuneOutcome::Unchanged)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub game_value: f64,
    pub gen_gain: f64,
    pub dis_gain: f64,
    pub row_pool: usize,
    pub col_pool: usize,
    pub terminated: bool,
}

/// Restricted-game state between epochs.
#[derive(Debug, Clone)]
pub struct DoState<R, C> {
    pub rows: Vec<R>,
    pub cols: Vec<C>,
    pub matrix: PayoffMatrix,
    pub sigma_row: MixedStrategy,
    pub sigma_col: MixedStrategy,
    pub epoch: usize,
    pub trace: Vec<EpochRecord>,
    pub terminated: bool,
}

pub type DoResult<R, C> = DoState<R, C>;

impl<R, C> DoState<R, C> {
    pub fn game_value(&self) -> f64 {
        expected_utility(&self.matrix, &self.sigma_row, &self.sigma_col)
            .expect("state dimensions are kept consistent")
    }
}

/// Single-entry game and `σ = [1], [1]` for both players.
pub fn initialize<G: OracleGame>(
    game: &G,
    init_row: G::Row,
    init_col: G::Col,
) -> Result<DoState<G::Row, G::Col>> {
    let v = game.payoff(&init_row, &init_col).map_err(|e| Error::Oracle {
        epoch: 0,
        message: format!("payoff (0, 0): {e}"),
    })?;
    let matrix = PayoffMatrix::singleton(v).map_err(|e| Error::Oracle {
        epoch: 0,
        message: format!("non-finite payoff at (0, 0): {e}"),
    })?;
    Ok(DoState {
        rows: vec![init_row],
        cols: vec![init_col],
        matrix,
        sigma_row: MixedStrategy::pure(1, 0),
        sigma_col: MixedStrategy::pure(1, 0),
        epoch: 0,
        trace: Vec::new(),
        terminated: false,
    })
}

pub fn run<G: OracleGame>(
    game: &mut G,
    init_row: G::Row,
    init_col: G::Col,
    cfg: &DoConfig,
) -> Result<DoResult<G::Row, G::Col>> {
    let state = initialize(game, init_row, init_col)?;
    run_from(game, state, cfg, |_, _| Ok(()))
}

/// Continues a run until termination or `cfg.max_epochs`, calling `on_epoch`
/// after every completed epoch (used for checkpointing).
pub fn run_from<G: OracleGame>(
    game: &mut G,
    mut state: DoState<G::Row, G::Col>,
    cfg: &DoConfig,
    mut on_epoch: impl FnMut(&G, &DoState<G::Row, G::Col>) -> Result<()>,
) -> Result<DoResult<G::Row, G::Col>> {
    cfg.validate()?;
    while !state.terminated && state.epoch < cfg.max_epochs {
        step(game, &mut state, cfg)?;
        on_epoch(game, &state)?;
    }
    Ok(state)
}

/// One epoch: oracles, finetune hook, augmentation, termination check,
/// equilibrium, pruning.
pub fn step<G: OracleGame>(
    game: &mut G,
    state: &mut DoState<G::Row, G::Col>,
    cfg: &DoConfig,
) -> Result<EpochRecord> {
    let epoch = state.epoch + 1;
    let wrap = |what: &str, e: Error| Error::Oracle {
        epoch,
        message: format!("{what}: {e}"),
    };

    let new_row = game
        .row_oracle(OracleRequest {
            epoch,
            opponents: &state.cols,
            opponent_mix: &state.sigma_col,
            seed: rng::derive_seed(cfg.seed, rng::ORACLE_ROW, epoch as u64),
        })
        .map_err(|e| wrap("row oracle", e))?;
    let new_col = game
        .col_oracle(OracleRequest {
            epoch,
            opponents: &state.rows,
            opponent_mix: &state.sigma_row,
            seed: rng::derive_seed(cfg.seed, rng::ORACLE_COL, epoch as u64),
        })
        .map_err(|e| wrap("column oracle", e))?;
    state.rows.push(new_row);
    state.cols.push(new_col);

    let outcome = game
        .finetune(
            &mut state.rows,
            &mut state.cols,
            FinetuneRequest {
                epoch,
                sigma_row: &state.sigma_row,
                sigma_col: &state.sigma_col,
                seed: rng::derive_seed(cfg.seed, rng::FINETUNE, epoch as u64),
            },
        )
        .map_err(|e| wrap("finetune", e))?;

    let matrix = match outcome {
        FinetuneOutcome::Modified => full_matrix(&*game, &state.rows, &state.cols, epoch)?,
        FinetuneOutcome::Unchanged => augment_with_new(&*game, state, epoch)?,
    };

    let prev_row = state.sigma_row.padded(matrix.n_rows());
    let prev_col = state.sigma_col.padded(matrix.n_cols());
    let (gen_gain, dis_gain) = gains(&matrix, &prev_row, &prev_col)?;
    let terminated = gen_gain < cfg.epsilon_term && dis_gain < cfg.epsilon_term;

    let sol = metagame::solve_zero_sum(&matrix).map_err(|e| wrap("meta-game solve", e))?;
    let game_value = sol.game_value;

    let pruned = prune(
        std::mem::take(&mut state.rows),
        std::mem::take(&mut state.cols),
        &matrix,
        &sol.row_strategy,
        &sol.col_strategy,
        cfg.support_limit,
    )?;
    state.rows = pruned.rows;
    state.cols = pruned.cols;
    if pruned.removed_rows.is_empty() && pruned.removed_cols.is_empty() {
        state.sigma_row = sol.row_strategy;
        state.sigma_col = sol.col_strategy;
    } else {
        let resolved = metagame::solve_zero_sum(&pruned.matrix)
            .map_err(|e| wrap("meta-game solve after pruning", e))?;
        state.sigma_row = resolved.row_strategy;
        state.sigma_col = resolved.col_strategy;
    }
    state.matrix = pruned.matrix;
    state.epoch = epoch;
    state.terminated = terminated;

    let record = EpochRecord {
        epoch,
        game_value,
        gen_gain,
        dis_gain,
        row_pool: state.rows.len(),
        col_pool: state.cols.len(),
        terminated,
    };
    state.trace.push(record.clone());
    Ok(record)
}

fn eval_entries<G: OracleGame>(
    game: &G,
    rows: &[G::Row],
    cols: &[G::Col],
    cells: &[(usize, usize)],
    epoch: usize,
) -> Result<Vec<f64>> {
    cells
        .par_iter()
        .map(|&(i, j)| {
            let v = game.payoff(&rows[i], &cols[j]).map_err(|e| Error::Oracle {
                epoch,
                message: format!("payoff ({i}, {j}): {e}"),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Oracle {
                    epoch,
                    message: format!("non-finite payoff {v} at ({i}, {j})"),
                })
            }
        })
        .collect()
}

fn full_matrix<G: OracleGame>(
    game: &G,
    rows: &[G::Row],
    cols: &[G::Col],
    epoch: usize,
) -> Result<PayoffMatrix> {
    let cells: Vec<(usize, usize)> = (0..rows.len())
        .flat_map(|i| (0..cols.len()).map(move |j| (i, j)))
        .collect();
    let values = eval_entries(game, rows, cols, &cells, epoch)?;
    PayoffMatrix::new(rows.len(), cols.len(), values)
}

fn augment_with_new<G: OracleGame>(
    game: &G,
    state: &DoState<G::Row, G::Col>,
    epoch: usize,
) -> Result<PayoffMatrix> {
    let r = state.rows.len() - 1;
    let c = state.cols.len() - 1;
    let mut cells: Vec<(usize, usize)> = (0..=c).map(|j| (r, j)).collect();
    cells.extend((0..r).map(|i| (i, c)));
    let values = eval_entries(game, &state.rows, &state.cols, &cells, epoch)?;
    let new_row = &values[..c];
    let corner = values[c];
    let new_col = &values[c + 1..];
    metagame::augment(&state.matrix, new_row, new_col, corner)
}

/// `(genGain, disGain)` of the newest row and column against `(σ_row, σ_col)`.
///
/// Both are improvements for the respective player: the row player gains by
/// raising the payoff, the column player by lowering it. Strategies may be one
/// entry shorter than the matrix (the previous equilibrium, before the newest
/// strategies existed); missing entries are treated as zero.
pub fn gains(u: &PayoffMatrix, sigma_row: &MixedStrategy, sigma_col: &MixedStrategy) -> Result<(f64, f64)> {
    let check = |n: usize, len: usize, what: &str| {
        if len == n || len + 1 == n {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "{what} has {len} entries for a game with {n} strategies"
            )))
        }
    };
    check(u.n_rows(), sigma_row.len(), "row strategy")?;
    check(u.n_cols(), sigma_col.len(), "column strategy")?;
    let sr = sigma_row.padded(u.n_rows());
    let sc = sigma_col.padded(u.n_cols());
    let eq = expected_utility(u, &sr, &sc)?;
    let last_row = u.row_values(&sc)?[u.n_rows() - 1];
    let last_col = u.col_values(&sr)?[u.n_cols() - 1];
    Ok((last_row - eq, eq - last_col))
}

/// True iff neither newest strategy improves its player's utility by `epsilon` or more.
pub fn termination_check(
    u: &PayoffMatrix,
    sigma_row: &MixedStrategy,
    sigma_col: &MixedStrategy,
    epsilon: f64,
) -> Result<bool> {
    let (g, d) = gains(u, sigma_row, sigma_col)?;
    Ok(g < epsilon && d < epsilon)
}

#[derive(Debug, Clone)]
pub struct Pruned<R, C> {
    pub rows: Vec<R>,
    pub cols: Vec<C>,
    pub matrix: PayoffMatrix,
    pub sigma_row: MixedStrategy,
    pub sigma_col: MixedStrategy,
    /// Original indices of removed strategies, in removal order.
    pub removed_rows: Vec<usize>,
    pub removed_cols: Vec<usize>,
}

/// Removes minimum-probability strategies one at a time until each pool has
/// at most `limit` members. Ties go to the lowest index.
pub fn prune<R, C>(
    rows: Vec<R>,
    cols: Vec<C>,
    u: &PayoffMatrix,
    sigma_row: &MixedStrategy,
    sigma_col: &MixedStrategy,
    limit: usize,
) -> Result<Pruned<R, C>> {
    if limit < 1 {
        return Err(Error::contract("support limit must be at least 1"));
    }
    crate::error::ensure_dims("row pool", u.n_rows(), rows.len())?;
    crate::error::ensure_dims("column pool", u.n_cols(), cols.len())?;
    crate::error::ensure_dims("row strategy", u.n_rows(), sigma_row.len())?;
    crate::error::ensure_dims("column strategy", u.n_cols(), sigma_col.len())?;

    let (rows, sigma_row, row_keep, removed_rows) = prune_pool(rows, sigma_row, limit)?;
    let (cols, sigma_col, col_keep, removed_cols) = prune_pool(cols, sigma_col, limit)?;

    let entries = row_keep
        .iter()
        .flat_map(|&i| col_keep.iter().map(move |&j| (i, j)))
        .map(|(i, j)| u.get(i, j))
        .collect();
    let matrix = PayoffMatrix::new(row_keep.len(), col_keep.len(), entries)?;
    Ok(Pruned {
        rows,
        cols,
        matrix,
        sigma_row,
        sigma_col,
        removed_rows,
        removed_cols,
    })
}

type PoolPrune<S> = (Vec<S>, MixedStrategy, Vec<usize>, Vec<usize>);

fn prune_pool<S>(pool: Vec<S>, sigma: &MixedStrategy, limit: usize) -> Result<PoolPrune<S>> {
    let mut keep: Vec<usize> = (0..pool.len()).collect();
    let mut sigma = sigma.clone();
    let mut removed = Vec::new();
    while keep.len() > limit {
        let probs = sigma.probs();
        let mut min_at = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p < probs[min_at] {
                min_at = i;
            }
        }
        removed.push(keep.remove(min_at));
        sigma = sigma.without(min_at)?;
    }
    let mut slots: Vec<Option<S>> = pool.into_iter().map(Some).collect();
    let kept = keep
        .iter()
        .map(|&i| slots[i].take().expect("indices are unique"))
        .collect();
    Ok((kept, sigma, keep, removed))
}

/// A fully known matrix game whose pure strategies are row and column
/// indices, with exact best-response oracles over the whole matrix.
#[derive(Debug, Clone)]
pub struct MatrixGame {
    pub full: PayoffMatrix,
}

impl MatrixGame {
    fn lift(n: usize, indices: &[usize], mix: &MixedStrategy) -> Result<MixedStrategy> {
        crate::error::ensure_dims("opponent mixture", indices.len(), mix.len())?;
        let mut probs = vec![0.0; n];
        for (&i, &p) in indices.iter().zip(mix.probs()) {
            probs[i] += p;
        }
        MixedStrategy::new(probs)
    }
}

impl OracleGame for MatrixGame {
    type Row = usize;
    type Col = usize;

    fn row_oracle(&mut self, req: OracleRequest<'_, usize>) -> Result<usize> {
        let q = Self::lift(self.full.n_cols(), req.opponents, req.opponent_mix)?;
        Ok(metagame::best_response(&self.full, &q, metagame::Side::Row)?.0)
    }

    fn col_oracle(&mut self, req: OracleRequest<'_, usize>) -> Result<usize> {
        let p = Self::lift(self.full.n_rows(), req.opponents, req.opponent_mix)?;
        Ok(metagame::best_response(&self.full, &p, metagame::Side::Col)?.0)
    }

    fn payoff(&self, row: &usize, col: &usize) -> Result<f64> {
        if *row >= self.full.n_rows() || *col >= self.full.n_cols() {
            return Err(Error::contract(format!("strategy ({row}, {col}) outside the matrix")));
        }
        Ok(self.full.get(*row, *col))
    }
}
