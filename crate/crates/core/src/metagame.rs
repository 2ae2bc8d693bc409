//! Restricted zero-sum meta-games.
//!
//! The row player maximizes the entries of a [`PayoffMatrix`], the column
//! player minimizes them. [`solve_zero_sum`] computes an exact mixed Nash
//! equilibrium by running a dense simplex on the maximin linear program.

use std::fmt::Write as _;

use crate::error::{ensure_dims, Error, Result};

/// Pivot elements smaller than this are treated as zero by the simplex.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Tolerance used when validating that a probability vector sums to one.
pub const SIMPLEX_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Row,
    Col,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Row => Side::Col,
            Side::Col => Side::Row,
        }
    }
}

/// Dense row-major payoff table; entry `(i, j)` is the row player's utility.
#[derive(Debug, Clone, PartialEq)]
pub struct PayoffMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl PayoffMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::contract("payoff matrix must be at least 1x1"));
        }
        ensure_dims("payoff entries", rows * cols, entries.len())?;
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite payoff at ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(PayoffMatrix {
            rows,
            cols,
            entries,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::contract("ragged payoff rows"));
        }
        PayoffMatrix::new(rows.len(), n_cols, rows.concat())
    }

    pub fn singleton(value: f64) -> Result<Self> {
        PayoffMatrix::new(1, 1, vec![value])
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// The same game seen from the column player: `-Uᵀ`.
    pub fn negated_transpose(&self) -> PayoffMatrix {
        let mut entries = Vec::with_capacity(self.entries.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                entries.push(-self.get(i, j));
            }
        }
        PayoffMatrix {
            rows: self.cols,
            cols: self.rows,
            entries,
        }
    }

    pub fn min_entry(&self) -> f64 {
        self.entries.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Payoff of every row against a column mixture.
    pub fn row_values(&self, col: &MixedStrategy) -> Result<Vec<f64>> {
        ensure_dims("column strategy", self.cols, col.len())?;
        Ok((0..self.rows)
            .map(|i| dot(self.row(i), col.probs()))
            .collect())
    }

    /// Payoff of every column against a row mixture.
    pub fn col_values(&self, row: &MixedStrategy) -> Result<Vec<f64>> {
        ensure_dims("row strategy", self.rows, row.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, &p) in row.probs().iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (o, &u) in out.iter_mut().zip(self.row(i)) {
                *o += p * u;
            }
        }
        Ok(out)
    }

    pub fn remove_row(&self, index: usize) -> Result<PayoffMatrix> {
        if index >= self.rows || self.rows == 1 {
            return Err(Error::contract(format!(
                "cannot remove row {index} from a {}-row matrix",
                self.rows
            )));
        }
        let entries = (0..self.rows)
            .filter(|&i| i != index)
            .flat_map(|i| self.row(i).iter().copied())
            .collect();
        Ok(PayoffMatrix {
            rows: self.rows - 1,
            cols: self.cols,
            entries,
        })
    }

    pub fn remove_col(&self, index: usize) -> Result<PayoffMatrix> {
        if index >= self.cols || self.cols == 1 {
            return Err(Error::contract(format!(
                "cannot remove column {index} from a {}-column matrix",
                self.cols
            )));
        }
        let entries = (0..self.rows)
            .flat_map(|i| {
                self.row(i)
                    .iter()
                    .enumerate()
                    .filter(move |(j, _)| *j != index)
                    .map(|(_, &v)| v)
            })
            .collect();
        Ok(PayoffMatrix {
            rows: self.rows,
            cols: self.cols - 1,
            entries,
        })
    }

    /// Row-major text block: a `rows cols` header followed by one line per row.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.rows, self.cols);
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|v| format_f64(*v)).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Input("empty matrix block".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::Input(format!("bad matrix header {header:?}: {e}")))?;
        if dims.len() != 2 {
            return Err(Error::Input(format!("bad matrix header {header:?}")));
        }
        let mut entries = Vec::with_capacity(dims[0] * dims[1]);
        for (i, line) in lines.enumerate() {
            let row = parse_floats(line)
                .map_err(|e| Error::Input(format!("matrix row {i}: {e}")))?;
            ensure_dims("matrix row", dims[1], row.len())?;
            entries.extend(row);
        }
        PayoffMatrix::new(dims[0], dims[1], entries)
    }
}

/// A probability vector over a strategy pool.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedStrategy {
    probs: Vec<f64>,
}

impl MixedStrategy {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::contract("mixed strategy over an empty pool"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Input(format!(
                "probabilities must be finite and nonnegative: {probs:?}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_SUM_TOLERANCE {
            return Err(Error::Input(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(MixedStrategy { probs })
    }

    pub fn pure(n: usize, index: usize) -> Self {
        assert!(index < n, "pure strategy index {index} out of range {n}");
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        MixedStrategy { probs }
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0);
        MixedStrategy {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Normalizes nonnegative weights; tiny negative round-off is clamped to zero.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let clamped: Vec<f64> = weights.iter().map(|w| w.max(0.0)).collect();
        let total: f64 = clamped.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Numeric(format!(
                "cannot normalize weights {weights:?}"
            )));
        }
        MixedStrategy::new(clamped.iter().map(|w| w / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Appends zero-probability entries until the strategy covers `n` strategies.
    pub fn padded(&self, n: usize) -> MixedStrategy {
        let mut probs = self.probs.clone();
        probs.resize(n.max(probs.len()), 0.0);
        MixedStrategy { probs }
    }

    /// Drops entry `index` and renormalizes the rest.
    pub fn without(&self, index: usize) -> Result<MixedStrategy> {
        let rest: Vec<f64> = self
            .probs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != index)
            .map(|(_, &p)| p)
            .collect();
        if rest.iter().all(|&p| p == 0.0) {
            return Ok(MixedStrategy::uniform(rest.len()));
        }
        MixedStrategy::from_weights(&rest)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub row_strategy: MixedStrategy,
    pub col_strategy: MixedStrategy,
    pub game_value: f64,
}

/// `Σᵢ Σⱼ row[i]·col[j]·U[i][j]`.
pub fn expected_utility(u: &PayoffMatrix, row: &MixedStrategy, col: &MixedStrategy) -> Result<f64> {
    ensure_dims("row strategy", u.n_rows(), row.len())?;
    ensure_dims("column strategy", u.n_cols(), col.len())?;
    let mut total = 0.0;
    for (i, &p) in row.probs().iter().enumerate() {
        total += p * dot(u.row(i), col.probs());
    }
    Ok(total)
}

/// Pure best response against an opponent mixture.
///
/// The row player maximizes and the column player minimizes; ties go to the
/// lowest index.
pub fn best_response(u: &PayoffMatrix, opponent: &MixedStrategy, side: Side) -> Result<(usize, f64)> {
    let (values, better): (Vec<f64>, fn(f64, f64) -> bool) = match side {
        Side::Row => (u.row_values(opponent)?, |a, b| a > b),
        Side::Col => (u.col_values(opponent)?, |a, b| a < b),
    };
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if better(v, best.1) {
            best = (i, v);
        }
    }
    Ok(best)
}

/// Grows the game by one row and one column. The old block is copied verbatim.
pub fn augment(u: &PayoffMatrix, new_row: &[f64], new_col: &[f64], corner: f64) -> Result<PayoffMatrix> {
    ensure_dims("new row", u.n_cols(), new_row.len())?;
    ensure_dims("new column", u.n_rows(), new_col.len())?;
    let cols = u.n_cols() + 1;
    let mut entries = Vec::with_capacity((u.n_rows() + 1) * cols);
    for i in 0..u.n_rows() {
        entries.extend_from_slice(u.row(i));
        entries.push(new_col[i]);
    }
    entries.extend_from_slice(new_row);
    entries.push(corner);
    PayoffMatrix::new(u.n_rows() + 1, cols, entries)
}

/// Exact mixed equilibrium of a zero-sum matrix game.
///
/// Payoffs are shifted so every entry is at least one, which makes the game
/// value positive. The column player's program `max Σy s.t. A'y ≤ 1, y ≥ 0`
/// is then solved with a Bland-rule simplex; the row player's strategy is
/// read off the duals of the same tableau.
pub fn solve_zero_sum(u: &PayoffMatrix) -> Result<SolveResult> {
    if let Some(v) = u.entries().iter().find(|v| !v.is_finite()) {
        return Err(Error::Input(format!("non-finite payoff {v}")));
    }
    let shift = u.min_entry() - 1.0;
    let m = u.n_rows();
    let n = u.n_cols();

    let mut tab = Tableau::new(m, n, |i, j| u.get(i, j) - shift);
    tab.optimize()?;

    let y = tab.primal();
    let x = tab.dual();
    let z = tab.objective();
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Numeric(format!("degenerate LP objective {z}")));
    }
    let row_strategy = MixedStrategy::from_weights(&x)?;
    let col_strategy = MixedStrategy::from_weights(&y)?;
    let game_value = 1.0 / z + shift;

    let result = SolveResult {
        row_strategy,
        col_strategy,
        game_value,
    };
    verify_equilibrium(u, &result)?;
    Ok(result)
}

fn verify_equilibrium(u: &PayoffMatrix, sol: &SolveResult) -> Result<()> {
    let scale = 1.0 + u.max_entry().abs().max(u.min_entry().abs());
    let tol = 1e-7 * scale;
    let worst_col = u
        .col_values(&sol.row_strategy)?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let best_row = u
        .row_values(&sol.col_strategy)?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    if worst_col < sol.game_value - tol || best_row > sol.game_value + tol {
        return Err(Error::Numeric(format!(
            "simplex returned a non-equilibrium: value {}, row guarantees {worst_col}, col concedes {best_row}",
            sol.game_value
        )));
    }
    Ok(())
}

/// Dense simplex tableau for `max 1ᵀy s.t. Ay ≤ 1, y ≥ 0` with `A > 0`.
struct Tableau {
    m: usize,
    n: usize,
    // m constraint rows plus one objective row; n + m variable columns plus rhs.
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn new(m: usize, n: usize, a: impl Fn(usize, usize) -> f64) -> Self {
        let width = n + m + 1;
        let mut data = vec![0.0; (m + 1) * width];
        for i in 0..m {
            for j in 0..n {
                data[i * width + j] = a(i, j);
            }
            data[i * width + n + i] = 1.0;
            data[i * width + n + m] = 1.0;
        }
        for j in 0..n {
            data[m * width + j] = -1.0;
        }
        Tableau {
            m,
            n,
            data,
            basis: (n..n + m).collect(),
        }
    }

    fn width(&self) -> usize {
        self.n + self.m + 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width() + c]
    }

    fn optimize(&mut self) -> Result<()> {
        let vars = self.n + self.m;
        let rhs = vars;
        // Bland's rule terminates; the cap only guards against a logic error.
        let max_pivots = 50 * (vars + 1) * (self.m + 1);
        for _ in 0..max_pivots {
            let entering = (0..vars).find(|&c| self.at(self.m, c) < -PIVOT_TOLERANCE);
            let Some(entering) = entering else {
                return Ok(());
            };
            let mut leaving: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let coef = self.at(r, entering);
                if coef <= PIVOT_TOLERANCE {
                    continue;
                }
                let ratio = self.at(r, rhs) / coef;
                leaving = match leaving {
                    None => Some((r, ratio)),
                    Some((best, best_ratio)) => {
                        let tie = (ratio - best_ratio).abs() <= PIVOT_TOLERANCE * (1.0 + best_ratio.abs());
                        if ratio < best_ratio && !tie
                            || tie && self.basis[r] < self.basis[best]
                        {
                            Some((r, ratio))
                        } else {
                            Some((best, best_ratio))
                        }
                    }
                };
            }
            let Some((pivot_row, _)) = leaving else {
                return Err(Error::Numeric("unbounded maximin LP".into()));
            };
            self.pivot(pivot_row, entering);
        }
        Err(Error::Numeric("simplex pivot limit reached".into()))
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width();
        let p = self.data[r * w + c];
        for k in 0..w {
            self.data[r * w + k] /= p;
        }
        self.data[r * w + c] = 1.0;
        for other in 0..=self.m {
            if other == r {
                continue;
            }
            let factor = self.data[other * w + c];
            if factor == 0.0 {
                continue;
            }
            for k in 0..w {
                self.data[other * w + k] -= factor * self.data[r * w + k];
            }
            self.data[other * w + c] = 0.0;
        }
        self.basis[r] = c;
    }

    fn primal(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (r, &b) in self.basis.iter().enumerate() {
            if b < self.n {
                y[b] = self.at(r, self.n + self.m).max(0.0);
            }
        }
        y
    }

    fn dual(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.at(self.m, self.n + i).max(0.0)).collect()
    }

    fn objective(&self) -> f64 {
        self.at(self.m, self.n + self.m)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Seventeen significant digits; parses back to the identical `f64`.
pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn parse_floats(line: &str) -> std::result::Result<Vec<f64>, std::num::ParseFloatError> {
    line.split_whitespace().map(str::parse::<f64>).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> PayoffMatrix {
        PayoffMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn ms(p: &[f64]) -> MixedStrategy {
        MixedStrategy::new(p.to_vec()).unwrap()
    }

    #[test]
    fn expected_utility_examples() {
        let pennies = m(&[&[1.0, -1.0], &[-1.0, 1.0]]);
        assert_eq!(expected_utility(&pennies, &ms(&[0.5, 0.5]), &ms(&[0.5, 0.5])).unwrap(), 0.0);
        let g = m(&[&[3.0, -1.0], &[-2.0, 4.0]]);
        assert_eq!(expected_utility(&g, &ms(&[1.0, 0.0]), &ms(&[0.0, 1.0])).unwrap(), -1.0);
        // 0.6*(1.5-0.5) + 0.4*(-1+2) = 1
        let v = expected_utility(&g, &ms(&[0.6, 0.4]), &ms(&[0.5, 0.5])).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expected_utility_rejects_mismatch() {
        let g = m(&[&[3.0, -1.0], &[-2.0, 4.0]]);
        let err = expected_utility(&g, &ms(&[1.0]), &ms(&[0.5, 0.5])).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn solves_worked_games() {
        let s = solve_zero_sum(&m(&[&[1.0, -1.0], &[-1.0, 1.0]])).unwrap();
        assert!(s.game_value.abs() < 1e-12);
        for p in s.row_strategy.probs().iter().chain(s.col_strategy.probs()) {
            assert!((p - 0.5).abs() < 1e-12);
        }

        let s = solve_zero_sum(&m(&[&[2.0, 1.0], &[0.0, -1.0]])).unwrap();
        assert!((s.game_value - 1.0).abs() < 1e-12);
        assert_eq!(s.row_strategy.probs(), &[1.0, 0.0]);
        assert_eq!(s.col_strategy.probs(), &[0.0, 1.0]);

        let s = solve_zero_sum(&m(&[&[3.0, -1.0], &[-2.0, 4.0]])).unwrap();
        assert!((s.game_value - 1.0).abs() < 1e-12);
        assert!((s.row_strategy.probs()[0] - 0.6).abs() < 1e-12);
        assert!((s.col_strategy.probs()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn value_matches_expected_utility_of_solution() {
        let g = m(&[&[0.3, -0.2, 0.9], &[-0.7, 0.4, 0.1], &[0.2, 0.2, -0.5]]);
        let s = solve_zero_sum(&g).unwrap();
        let eu = expected_utility(&g, &s.row_strategy, &s.col_strategy).unwrap();
        assert!((eu - s.game_value).abs() < 1e-9);
    }

    #[test]
    fn singleton_and_constant_games() {
        let s = solve_zero_sum(&m(&[&[5.0]])).unwrap();
        assert_eq!(s.game_value, 5.0);
        let s = solve_zero_sum(&m(&[&[2.0, 2.0], &[2.0, 2.0]])).unwrap();
        assert!((s.game_value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            PayoffMatrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn best_response_examples() {
        let g = m(&[&[3.0, -1.0], &[-2.0, 4.0]]);
        assert_eq!(best_response(&g, &ms(&[0.5, 0.5]), Side::Row).unwrap(), (0, 1.0));
        let d = m(&[&[2.0, 1.0], &[0.0, -1.0]]);
        assert_eq!(best_response(&d, &ms(&[1.0, 0.0]), Side::Col).unwrap(), (1, 1.0));
        assert_eq!(best_response(&m(&[&[5.0]]), &ms(&[1.0]), Side::Row).unwrap(), (0, 5.0));
        assert!(best_response(&g, &ms(&[1.0]), Side::Row).is_err());
    }

    #[test]
    fn augment_examples() {
        let a = augment(&m(&[&[0.0]]), &[1.0], &[-1.0], 2.0).unwrap();
        assert_eq!(a, m(&[&[0.0, -1.0], &[1.0, 2.0]]));
        let back = a.remove_row(1).unwrap().remove_col(1).unwrap();
        assert_eq!(back, m(&[&[0.0]]));

        let g = m(&[&[0.1, 0.2], &[0.3, 0.4]]);
        let big = augment(&g, &[7.0, 8.0], &[5.0, 6.0], 9.0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(big.get(i, j).to_bits(), g.get(i, j).to_bits());
            }
        }
        assert!(augment(&g, &[1.0], &[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn text_block_round_trip() {
        let g = m(&[&[0.1, -1.0 / 3.0], &[1e-300, 2.5e10]]);
        let back = PayoffMatrix::from_text(&g.to_text()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn mixed_strategy_validation() {
        assert!(MixedStrategy::new(vec![0.5, 0.6]).is_err());
        assert!(MixedStrategy::new(vec![-0.1, 1.1]).is_err());
        assert!(MixedStrategy::new(vec![]).is_err());
        assert_eq!(ms(&[0.25, 0.75]).padded(3).probs(), &[0.25, 0.75, 0.0]);
        assert_eq!(ms(&[0.5, 0.25, 0.25]).without(0).unwrap().probs(), &[0.5, 0.5]);
    }
}
