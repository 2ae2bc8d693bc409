mod common;

use donas::double_oracle::{self, prune, DoConfig, MatrixGame, OracleGame, OracleRequest};
use donas::metagame::{self, solve_zero_sum, MixedStrategy, PayoffMatrix, Side};
use donas::rng;
use proptest::prelude::*;

fn lift(n: usize, indices: &[usize], mix: &MixedStrategy) -> MixedStrategy {
    let mut p = vec![0.0; n];
    for (&i, &w) in indices.iter().zip(mix.probs()) {
        p[i] += w;
    }
    MixedStrategy::new(p).unwrap()
}

/// Full-game payoff guaranteed by each side's restricted equilibrium strategy.
fn full_bounds(full: &PayoffMatrix, state: &double_oracle::DoState<usize, usize>) -> (f64, f64) {
    let p = lift(full.n_rows(), &state.rows, &state.sigma_row);
    let q = lift(full.n_cols(), &state.cols, &state.sigma_col);
    let lower = metagame::best_response(full, &p, Side::Col).unwrap().1;
    let upper = metagame::best_response(full, &q, Side::Row).unwrap().1;
    (lower, upper)
}

fn cfg(eps: f64, s: usize, max_epochs: usize) -> DoConfig {
    DoConfig {
        epsilon_term: eps,
        support_limit: s,
        max_epochs,
        seed: 3,
    }
}

#[test]
fn matching_pennies_reaches_known_value() {
    let full = PayoffMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
    let mut game = MatrixGame { full };
    let out = double_oracle::run(&mut game, 0, 0, &cfg(1e-9, 4, 10)).unwrap();
    assert!(out.terminated);
    assert!(out.game_value().abs() < 1e-12);
    let mut rows = out.rows.clone();
    rows.sort_unstable();
    rows.dedup();
    assert_eq!(rows, vec![0, 1]);
}

#[test]
fn zero_epoch_budget_returns_initial_state() {
    let mut game = MatrixGame {
        full: PayoffMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0]]).unwrap(),
    };
    let out = double_oracle::run(&mut game, 1, 0, &cfg(1e-3, 4, 0)).unwrap();
    assert_eq!((out.rows, out.cols), (vec![1], vec![0]));
    assert_eq!(out.sigma_row.probs(), &[1.0]);
    assert_eq!(out.sigma_col.probs(), &[1.0]);
    assert!(out.trace.is_empty());
}

/// Oracles that only ever return a copy of their player's initial strategy.
struct Copycat {
    row: f64,
    col: f64,
}

impl OracleGame for Copycat {
    type Row = f64;
    type Col = f64;

    fn row_oracle(&mut self, _req: OracleRequest<'_, f64>) -> donas::Result<f64> {
        Ok(self.row)
    }

    fn col_oracle(&mut self, _req: OracleRequest<'_, f64>) -> donas::Result<f64> {
        Ok(self.col)
    }

    fn payoff(&self, row: &f64, col: &f64) -> donas::Result<f64> {
        Ok(row * col)
    }
}

#[test]
fn copying_oracles_terminate_in_first_epoch() {
    let out = double_oracle::run(&mut Copycat { row: 0.5, col: 0.25 }, 0.5, 0.25, &cfg(5e-3, 4, 10)).unwrap();
    assert!(out.terminated);
    assert_eq!(out.trace.len(), 1);
    assert_eq!((out.trace[0].gen_gain, out.trace[0].dis_gain), (0.0, 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_oracles_bracket_and_converge(seed in 0u64..10_000, n in 3usize..=10, m in 3usize..=10) {
        let full = common::random_matrix(n, m, &mut rng::from_seed(seed));
        let v_star = solve_zero_sum(&full).unwrap().game_value;
        let mut game = MatrixGame { full: full.clone() };
        let init = double_oracle::initialize(&game, 0, 0).unwrap();
        let c = cfg(1e-9, 64, 100);
        let mut brackets = Vec::new();
        let out = double_oracle::run_from(&mut game, init, &c, |g, s| {
            brackets.push(full_bounds(&g.full, s));
            Ok(())
        }).unwrap();
        for (lo, hi) in brackets {
            prop_assert!(lo <= v_star + 1e-9 && v_star <= hi + 1e-9);
        }
        prop_assert!(out.terminated);
        let (lo, hi) = full_bounds(&full, &out);
        prop_assert!(v_star - lo < 1e-6 && hi - v_star < 1e-6);
        prop_assert!((out.game_value() - v_star).abs() < 1e-6);
    }

    #[test]
    fn pools_stay_within_support_limit(seed in 0u64..10_000, s in 2usize..=4) {
        let full = common::random_matrix(10, 10, &mut rng::from_seed(seed));
        let mut game = MatrixGame { full };
        let init = double_oracle::initialize(&game, 0, 0).unwrap();
        let out = double_oracle::run_from(&mut game, init, &cfg(1e-6, s, 30), |_, st| {
            assert!(st.rows.len() <= s && st.cols.len() <= s);
            Ok(())
        }).unwrap();
        for r in &out.trace {
            prop_assert!(r.row_pool <= s && r.col_pool <= s);
        }
    }

    #[test]
    fn pruning_moves_value_by_at_most_removed_mass(seed in 0u64..10_000, n in 3usize..=7, m in 3usize..=7, s in 1usize..=3) {
        let u = common::random_matrix(n, m, &mut rng::from_seed(seed));
        let sol = solve_zero_sum(&u).unwrap();
        let rows: Vec<usize> = (0..n).collect();
        let cols: Vec<usize> = (0..m).collect();
        let p = prune(rows, cols, &u, &sol.row_strategy, &sol.col_strategy, s).unwrap();
        let removed: f64 = p.removed_rows.iter().map(|&i| sol.row_strategy.probs()[i]).sum::<f64>()
            + p.removed_cols.iter().map(|&j| sol.col_strategy.probs()[j]).sum::<f64>();
        let after = solve_zero_sum(&p.matrix).unwrap().game_value;
        let range = u.max_entry() - u.min_entry();
        prop_assert!((after - sol.game_value).abs() <= removed * range + 1e-9);
        prop_assert!(p.rows.len() <= s && p.cols.len() <= s);
    }

    #[test]
    fn runs_are_deterministic(seed in 0u64..10_000) {
        let full = common::random_matrix(8, 8, &mut rng::from_seed(seed));
        let a = double_oracle::run(&mut MatrixGame { full: full.clone() }, 0, 0, &cfg(1e-6, 3, 20)).unwrap();
        let b = double_oracle::run(&mut MatrixGame { full }, 0, 0, &cfg(1e-6, 3, 20)).unwrap();
        prop_assert_eq!(a.trace, b.trace);
    }
}
