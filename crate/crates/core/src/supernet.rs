//! A miniature differentiable architecture-search space.
//!
//! A [`Supernet`] is a chain of search cells followed by an optional fixed
//! head layer. Each cell evaluates every candidate operation on its input and
//! mixes the results with `softmax(α_cell)`, so the output is differentiable
//! in both the architecture logits `α` and the operation weights `W`.

use rayon::prelude::*;

use crate::diffnet::{Activation, Dense, DenseCache, Direction, Network, Objective, OptimState};
use crate::error::{ensure_dims, Error, Result};
use crate::rng::Rng;
use crate::tensor::Matrix;

/// Upper bound on enumerated architectures in [`Supernet::sample_top_k`].
pub const MAX_ENUMERATED: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub enum CandidateOp {
    Identity,
    Dense(Dense),
}

impl CandidateOp {
    fn param_count(&self) -> usize {
        match self {
            CandidateOp::Identity => 0,
            CandidateOp::Dense(d) => d.param_count(),
        }
    }

    fn to_layer(&self, dim: usize) -> Dense {
        match self {
            CandidateOp::Identity => Dense::identity(dim),
            CandidateOp::Dense(d) => d.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub ops: Vec<CandidateOp>,
    pub alpha: Vec<f64>,
    input_dim: usize,
    output_dim: usize,
}

impl Cell {
    pub fn new(input_dim: usize, output_dim: usize, ops: Vec<CandidateOp>, alpha: Vec<f64>) -> Result<Self> {
        if ops.len() < 2 {
            return Err(Error::contract("a search cell needs at least two candidates"));
        }
        ensure_dims("cell alpha", ops.len(), alpha.len())?;
        for op in &ops {
            match op {
                CandidateOp::Identity if input_dim != output_dim => {
                    return Err(Error::contract("identity candidate needs equal input and output dims"));
                }
                CandidateOp::Dense(d) if d.input_dim() != input_dim || d.output_dim() != output_dim => {
                    return Err(Error::contract("candidate dims do not match the cell"));
                }
                _ => {}
            }
        }
        Ok(Cell {
            ops,
            alpha,
            input_dim,
            output_dim,
        })
    }

    /// The standard candidate set: identity when the dims allow it, then one
    /// freshly initialized affine block per activation. Logits start at zero.
    pub fn standard(input_dim: usize, output_dim: usize, activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        let mut ops = Vec::new();
        if input_dim == output_dim {
            ops.push(CandidateOp::Identity);
        }
        for &a in activations {
            ops.push(CandidateOp::Dense(Dense::init(input_dim, output_dim, a, rng)));
        }
        let n = ops.len();
        Cell::new(input_dim, output_dim, ops, vec![0.0; n])
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn probs(&self) -> Vec<f64> {
        crate::diffnet::softmax(&self.alpha)
    }

    /// Highest logit; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &a) in self.alpha.iter().enumerate() {
            if a > self.alpha[best] {
                best = i;
            }
        }
        best
    }
}

/// One candidate index per cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchChoice(pub Vec<usize>);

#[derive(Debug, Clone, PartialEq)]
pub struct Supernet {
    cells: Vec<Cell>,
    head: Option<Dense>,
}

/// Gradients of a supernet objective.
#[derive(Debug, Clone, PartialEq)]
pub struct SupernetGrad {
    pub alpha: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SupernetGrad {
    pub fn zeros(s: &Supernet) -> Self {
        SupernetGrad {
            alpha: vec![0.0; s.alpha_count()],
            weights: vec![0.0; s.weight_count()],
        }
    }

    /// `self += c · other`.
    pub fn add_scaled(&mut self, c: f64, other: &SupernetGrad) {
        for (a, b) in self.alpha.iter_mut().zip(&other.alpha) {
            *a += c * b;
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += c * b;
        }
    }
}

struct CellTrace {
    input: Matrix,
    probs: Vec<f64>,
    op_outputs: Vec<OpTrace>,
}

enum OpTrace {
    Identity,
    Dense(DenseCache),
}

impl OpTrace {
    fn output<'a>(&'a self, input: &'a Matrix) -> &'a Matrix {
        match self {
            OpTrace::Identity => input,
            OpTrace::Dense(c) => &c.output,
        }
    }
}

/// Forward intermediates of a supernet.
pub struct SupernetTrace {
    cells: Vec<CellTrace>,
    head: Option<DenseCache>,
    output: Matrix,
}

impl SupernetTrace {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

impl Supernet {
    pub fn new(cells: Vec<Cell>, head: Option<Dense>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::contract("supernet needs at least one cell"));
        }
        for (i, pair) in cells.windows(2).enumerate() {
            if pair[0].output_dim != pair[1].input_dim {
                return Err(Error::contract(format!("cell {i} does not chain into cell {}", i + 1)));
            }
        }
        if let Some(h) = &head {
            ensure_dims("head input", cells.last().expect("non-empty").output_dim, h.input_dim())?;
        }
        Ok(Supernet { cells, head })
    }

    /// Cells through `dims` (each using `activations` as candidates) and a
    /// fixed head layer to `out_dim` with `head_activation`.
    pub fn build(
        dims: &[usize],
        activations: &[Activation],
        out_dim: usize,
        head_activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::contract("supernet needs input and at least one cell width"));
        }
        let cells = dims
            .windows(2)
            .map(|w| Cell::standard(w[0], w[1], activations, rng))
            .collect::<Result<Vec<_>>>()?;
        let head = Dense::init(*dims.last().expect("len >= 2"), out_dim, head_activation, rng);
        Supernet::new(cells, Some(head))
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [Cell] {
        &mut self.cells
    }

    pub fn head(&self) -> Option<&Dense> {
        self.head.as_ref()
    }

    pub fn input_dim(&self) -> usize {
        self.cells[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        match &self.head {
            Some(h) => h.output_dim(),
            None => self.cells.last().expect("non-empty").output_dim,
        }
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.cells.iter().flat_map(|c| c.alpha.iter().copied()).collect()
    }

    pub fn alpha_count(&self) -> usize {
        self.cells.iter().map(|c| c.alpha.len()).sum()
    }

    pub fn set_alpha(&mut self, flat: &[f64]) -> Result<()> {
        ensure_dims("alpha vector", self.alpha_count(), flat.len())?;
        let mut off = 0;
        for c in &mut self.cells {
            let n = c.alpha.len();
            c.alpha.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn weight_count(&self) -> usize {
        let cells: usize = self
            .cells
            .iter()
            .flat_map(|c| c.ops.iter().map(CandidateOp::param_count))
            .sum();
        cells + self.head.as_ref().map_or(0, Dense::param_count)
    }

    /// Operation weights, cell by cell and op by op, then the head.
    pub fn weights(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.weight_count());
        for c in &self.cells {
            for op in &c.ops {
                if let CandidateOp::Dense(d) = op {
                    out.extend(d.params());
                }
            }
        }
        if let Some(h) = &self.head {
            out.extend(h.params());
        }
        out
    }

    pub fn set_weights(&mut self, flat: &[f64]) -> Result<()> {
        ensure_dims("weight vector", self.weight_count(), flat.len())?;
        let mut off = 0;
        for c in &mut self.cells {
            for op in &mut c.ops {
                if let CandidateOp::Dense(d) = op {
                    let n = d.param_count();
                    d.load_params(&flat[off..off + n]);
                    off += n;
                }
            }
        }
        if let Some(h) = &mut self.head {
            h.load_params(&flat[off..]);
        }
        Ok(())
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        ensure_dims("supernet input", self.input_dim(), x.cols())?;
        if !x.is_finite() {
            return Err(Error::Input("non-finite supernet input".into()));
        }
        for (i, c) in self.cells.iter().enumerate() {
            if c.alpha.iter().any(|a| !a.is_finite()) {
                return Err(Error::Numeric(format!("non-finite architecture logits in cell {i}")));
            }
        }
        Ok(())
    }

    pub fn mixed_forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_trace(x)?.output)
    }

    pub fn forward_trace(&self, x: &Matrix) -> Result<SupernetTrace> {
        self.check(x)?;
        let mut h = x.clone();
        let mut cells = Vec::with_capacity(self.cells.len());
        for (ci, cell) in self.cells.iter().enumerate() {
            let probs = cell.probs();
            let mut out = Matrix::zeros(h.rows(), cell.output_dim);
            let mut op_outputs = Vec::with_capacity(cell.ops.len());
            for (op, &p) in cell.ops.iter().zip(&probs) {
                let t = match op {
                    CandidateOp::Identity => OpTrace::Identity,
                    CandidateOp::Dense(d) => OpTrace::Dense(d.forward_cached(&h)),
                };
                out.axpy(p, t.output(&h));
                op_outputs.push(t);
            }
            if !out.is_finite() {
                return Err(Error::Numeric(format!("non-finite activation in cell {ci}")));
            }
            cells.push(CellTrace {
                input: h,
                probs,
                op_outputs,
            });
            h = out;
        }
        let head = self.head.as_ref().map(|d| d.forward_cached(&h));
        let output = match &head {
            Some(c) => c.output.clone(),
            None => h,
        };
        if !output.is_finite() {
            return Err(Error::Numeric("non-finite activation in head".into()));
        }
        Ok(SupernetTrace { cells, head, output })
    }

    /// Back-propagates `grad_out`; returns parameter gradients and the input gradient.
    pub fn backward(&self, trace: &SupernetTrace, grad_out: &Matrix) -> Result<(SupernetGrad, Matrix)> {
        let mut g = grad_out.clone();
        let mut head_grad = Vec::new();
        if let (Some(h), Some(cache)) = (&self.head, &trace.head) {
            let (pg, dx) = h.backward(cache, &g);
            head_grad = pg;
            g = dx;
        }
        let mut alpha_parts: Vec<Vec<f64>> = Vec::with_capacity(self.cells.len());
        let mut weight_parts: Vec<Vec<f64>> = Vec::with_capacity(self.cells.len());
        for (ci, (cell, ct)) in self.cells.iter().zip(&trace.cells).enumerate().rev() {
            // d out / d p_o = op_o(h); softmax Jacobian maps dp to dα.
            let dp: Vec<f64> = ct
                .op_outputs
                .iter()
                .map(|t| dot(g.data(), t.output(&ct.input).data()))
                .collect();
            let mean_dp: f64 = ct.probs.iter().zip(&dp).map(|(p, d)| p * d).sum();
            let dalpha: Vec<f64> = ct.probs.iter().zip(&dp).map(|(p, d)| p * (d - mean_dp)).collect();

            let mut dx = Matrix::zeros(ct.input.rows(), cell.input_dim);
            let mut wgrad = Vec::new();
            for ((op, t), &p) in cell.ops.iter().zip(&ct.op_outputs).zip(&ct.probs) {
                let g_op = g.scaled(p);
                match (op, t) {
                    (CandidateOp::Identity, _) => dx.add_assign(&g_op),
                    (CandidateOp::Dense(d), OpTrace::Dense(cache)) => {
                        let (pg, dxi) = d.backward(cache, &g_op);
                        wgrad.extend(pg);
                        dx.add_assign(&dxi);
                    }
                    _ => unreachable!("trace built from the same cell"),
                }
            }
            if !dx.is_finite() || dalpha.iter().chain(&wgrad).any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in cell {ci}")));
            }
            alpha_parts.push(dalpha);
            weight_parts.push(wgrad);
            g = dx;
        }
        alpha_parts.reverse();
        weight_parts.reverse();
        let mut weights = weight_parts.concat();
        weights.extend(head_grad);
        Ok((
            SupernetGrad {
                alpha: alpha_parts.concat(),
                weights,
            },
            g,
        ))
    }

    /// Loss, parameter gradients and input gradient of `obj` at `x`.
    pub fn grad(&self, x: &Matrix, obj: &dyn Objective) -> Result<(f64, SupernetGrad, Matrix)> {
        let trace = self.forward_trace(x)?;
        let (loss, g_out) = obj.evaluate(trace.output())?;
        if !loss.is_finite() || !g_out.is_finite() {
            return Err(Error::Numeric(format!("non-finite objective value {loss}")));
        }
        let (g, gx) = self.backward(&trace, &g_out)?;
        Ok((loss, g, gx))
    }

    pub fn arch_grad(&self, x: &Matrix, obj: &dyn Objective) -> Result<(f64, Vec<f64>)> {
        let (l, g, _) = self.grad(x, obj)?;
        Ok((l, g.alpha))
    }

    pub fn weight_grad(&self, x: &Matrix, obj: &dyn Objective) -> Result<(f64, Vec<f64>)> {
        let (l, g, _) = self.grad(x, obj)?;
        Ok((l, g.weights))
    }

    /// The argmax architecture.
    pub fn argmax_choice(&self) -> ArchChoice {
        ArchChoice(self.cells.iter().map(Cell::argmax).collect())
    }

    /// Each cell's first affine candidate: a plain MLP using the first
    /// listed activation throughout.
    pub fn first_affine_choice(&self) -> ArchChoice {
        ArchChoice(
            self.cells
                .iter()
                .map(|c| c.ops.iter().position(|op| matches!(op, CandidateOp::Dense(_))).unwrap_or(0))
                .collect(),
        )
    }

    /// Concrete network of the argmax architecture, carrying the trained weights.
    pub fn discretize(&self) -> Network {
        self.extract(&self.argmax_choice())
            .expect("argmax choice is always in range")
    }

    pub fn extract(&self, choice: &ArchChoice) -> Result<Network> {
        ensure_dims("architecture choice", self.cells.len(), choice.0.len())?;
        let mut layers = Vec::with_capacity(self.cells.len() + 1);
        for (cell, &i) in self.cells.iter().zip(&choice.0) {
            let op = cell
                .ops
                .get(i)
                .ok_or_else(|| Error::contract(format!("candidate {i} out of range")))?;
            layers.push(op.to_layer(cell.input_dim));
        }
        if let Some(h) = &self.head {
            layers.push(h.clone());
        }
        Network::new(layers)
    }

    /// Product of per-cell softmax probabilities of `choice`.
    pub fn choice_probability(&self, choice: &ArchChoice) -> f64 {
        self.cells
            .iter()
            .zip(&choice.0)
            .map(|(c, &i)| c.probs()[i])
            .product()
    }

    pub fn architecture_count(&self) -> usize {
        self.cells.iter().map(|c| c.ops.len()).product()
    }

    /// The `k` most probable architectures by exact enumeration, most probable
    /// first; equal probabilities keep lexicographic enumeration order.
    pub fn sample_top_k(&self, k: usize) -> Result<Vec<ArchChoice>> {
        if k == 0 {
            return Err(Error::contract("top-k sampling needs k >= 1"));
        }
        let total = self.architecture_count();
        if total > MAX_ENUMERATED {
            return Err(Error::contract(format!(
                "{total} architectures exceed the enumeration limit {MAX_ENUMERATED}"
            )));
        }
        let probs: Vec<Vec<f64>> = self.cells.iter().map(Cell::probs).collect();
        let mut all: Vec<(ArchChoice, f64)> = Vec::with_capacity(total);
        let mut idx = vec![0usize; self.cells.len()];
        loop {
            let p = idx.iter().zip(&probs).map(|(&i, ps)| ps[i]).product();
            all.push((ArchChoice(idx.clone()), p));
            // Odometer increment, last cell fastest.
            let mut c = self.cells.len();
            loop {
                if c == 0 {
                    all.sort_by(|a, b| b.1.total_cmp(&a.1));
                    all.truncate(k);
                    return Ok(all.into_iter().map(|(a, _)| a).collect());
                }
                c -= 1;
                idx[c] += 1;
                if idx[c] < probs[c].len() {
                    break;
                }
                idx[c] = 0;
            }
        }
    }
}

/// Separate optimizers for architecture logits and operation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptim {
    pub alpha: OptimState,
    pub weights: OptimState,
}

impl SearchOptim {
    /// Adam for both parameter groups.
    pub fn adam(s: &Supernet, lr_alpha: f64, lr_weight: f64) -> Self {
        SearchOptim {
            alpha: OptimState::adam(lr_alpha, s.alpha_count()),
            weights: OptimState::adam(lr_weight, s.weight_count()),
        }
    }

    pub fn arch_step(&mut self, s: &mut Supernet, grad: &[f64], dir: Direction) -> Result<()> {
        let mut a = s.alpha();
        self.alpha.apply(&mut a, grad, dir)?;
        s.set_alpha(&a)
    }

    pub fn weight_step(&mut self, s: &mut Supernet, grad: &[f64], dir: Direction) -> Result<()> {
        let mut w = s.weights();
        self.weights.apply(&mut w, grad, dir)?;
        s.set_weights(&w)
    }
}

/// Index and network of the candidate with the smallest adversarial loss;
/// ties go to the first candidate.
pub fn select_by_adv_loss<F>(candidates: Vec<Network>, adv_loss: F) -> Result<(usize, Network, f64)>
where
    F: Fn(&Network) -> Result<f64> + Sync,
{
    if candidates.is_empty() {
        return Err(Error::contract("no candidates to select from"));
    }
    let losses = candidates
        .par_iter()
        .map(&adv_loss)
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, &l) in losses.iter().enumerate() {
        if l < losses[best] {
            best = i;
        }
    }
    let loss = losses[best];
    let net = candidates.into_iter().nth(best).expect("index in range");
    Ok((best, net, loss))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::MeanSquared;
    use crate::rng;

    fn negation(dim: usize) -> CandidateOp {
        CandidateOp::Dense(Dense::new(Matrix::identity(dim).scaled(-1.0), vec![0.0; dim], Activation::Identity).unwrap())
    }

    fn id_neg(alpha: Vec<f64>) -> Supernet {
        Supernet::new(vec![Cell::new(2, 2, vec![CandidateOp::Identity, negation(2)], alpha).unwrap()], None).unwrap()
    }

    #[test]
    fn uniform_identity_negation_averages_to_zero() {
        let x = Matrix::from_rows(&[vec![1.5, -2.0], vec![0.3, 7.0]]).unwrap();
        let y = id_neg(vec![0.0, 0.0]).mixed_forward(&x).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn saturated_logits_select_identity() {
        let x = Matrix::from_rows(&[vec![1.5, -2.0]]).unwrap();
        let y = id_neg(vec![20.0, -20.0]).mixed_forward(&x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()) * 10.0);
        }
    }

    #[test]
    fn hand_evaluated_two_cell_forward() {
        // Cell 1: {identity, 2x+1 (tanh)}, α = (0, ln 3) → p = (1/4, 3/4).
        // Cell 2: {identity, negation}, α = (ln 2, 0) → p = (2/3, 1/3).
        let c1 = Cell::new(
            1,
            1,
            vec![
                CandidateOp::Identity,
                CandidateOp::Dense(Dense::new(Matrix::from_rows(&[vec![2.0]]).unwrap(), vec![1.0], Activation::Tanh).unwrap()),
            ],
            vec![0.0, 3.0f64.ln()],
        )
        .unwrap();
        let c2 = Cell::new(1, 1, vec![CandidateOp::Identity, negation(1)], vec![2.0f64.ln(), 0.0]).unwrap();
        let s = Supernet::new(vec![c1, c2], None).unwrap();
        let x = 0.4;
        let h = 0.25 * x + 0.75 * (2.0 * x + 1.0f64).tanh();
        let expected = (2.0 / 3.0) * h - (1.0 / 3.0) * h;
        let y = s.mixed_forward(&Matrix::row_vector(&[x])).unwrap().get(0, 0);
        assert!((y - expected).abs() < 1e-14);
    }

    #[test]
    fn non_finite_alpha_is_rejected() {
        let s = id_neg(vec![f64::NAN, 0.0]);
        assert!(matches!(s.mixed_forward(&Matrix::row_vector(&[1.0, 1.0])), Err(Error::Numeric(_))));
    }

    #[test]
    fn dead_cell_has_zero_alpha_gradient() {
        let mut r = rng::from_seed(5);
        let mut s = Supernet::build(&[2, 3, 3], &[Activation::Tanh, Activation::Relu], 1, Activation::Identity, &mut r).unwrap();
        // Zero every weight downstream of cell 0 so its output cannot matter.
        let cell1 = &mut s.cells_mut()[1];
        for op in &mut cell1.ops {
            if let CandidateOp::Dense(d) = op {
                d.weight = Matrix::zeros(d.weight.rows(), d.weight.cols());
            }
        }
        cell1.ops.retain(|op| !matches!(op, CandidateOp::Identity));
        cell1.alpha.truncate(cell1.ops.len());
        let x = Matrix::from_rows(&[vec![0.2, -0.4], vec![1.0, 0.1]]).unwrap();
        let t = Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let (_, ga) = s.arch_grad(&x, &MeanSquared { targets: &t }).unwrap();
        let n0 = s.cells()[0].alpha.len();
        assert!(ga[..n0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn alpha_gradients_sum_to_zero_per_cell() {
        let mut r = rng::from_seed(9);
        let s = Supernet::build(&[2, 4, 4], &[Activation::Tanh, Activation::Relu, Activation::Sigmoid], 2, Activation::Identity, &mut r)
            .unwrap();
        let x = Matrix::from_rows(&[vec![0.5, -1.0], vec![0.1, 0.9], vec![-0.3, 0.2]]).unwrap();
        let t = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let (_, ga) = s.arch_grad(&x, &MeanSquared { targets: &t }).unwrap();
        let mut off = 0;
        for c in s.cells() {
            let sum: f64 = ga[off..off + c.alpha.len()].iter().sum();
            assert!(sum.abs() < 1e-14);
            off += c.alpha.len();
        }
    }

    #[test]
    fn discretize_examples() {
        let s = id_neg(vec![0.9, 0.1]);
        assert_eq!(s.argmax_choice(), ArchChoice(vec![0]));
        let s = id_neg(vec![0.3, 0.3]);
        assert_eq!(s.argmax_choice(), ArchChoice(vec![0]));
        let net = s.discretize();
        assert_eq!(net, s.discretize());
        assert_eq!(net.layers()[0], Dense::identity(2));
    }

    #[test]
    fn saturated_discretization_matches_mixture() {
        let mut r = rng::from_seed(11);
        let mut s = Supernet::build(&[2, 5, 5], &[Activation::Tanh, Activation::Relu, Activation::Sigmoid], 1, Activation::Sigmoid, &mut r)
            .unwrap();
        for (ci, c) in s.cells_mut().iter_mut().enumerate() {
            for (i, a) in c.alpha.iter_mut().enumerate() {
                *a = if i == (ci + 1) % 3 { 20.0 } else { -20.0 };
            }
        }
        let x = Matrix::from_rows(&[vec![0.3, -0.7], vec![1.2, 0.4]]).unwrap();
        let mixed = s.mixed_forward(&x).unwrap();
        let disc = s.discretize().forward(&x).unwrap();
        for (a, b) in mixed.data().iter().zip(disc.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn top_k_examples() {
        let mut r = rng::from_seed(2);
        let mut s = Supernet::build(&[2, 2, 2], &[Activation::Tanh], 1, Activation::Identity, &mut r).unwrap();
        // Two cells, each {identity, tanh}, uniform logits.
        let all = s.sample_top_k(4).unwrap();
        let expect: Vec<ArchChoice> = vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]
            .into_iter()
            .map(ArchChoice)
            .collect();
        assert_eq!(all, expect);
        assert_eq!(s.sample_top_k(10).unwrap().len(), 4);
        assert!(s.sample_top_k(0).is_err());

        s.cells_mut()[0].alpha = vec![0.2, 1.0];
        s.cells_mut()[1].alpha = vec![0.7, -0.1];
        let top = s.sample_top_k(1).unwrap();
        assert_eq!(top[0], s.argmax_choice());
        let ranked = s.sample_top_k(4).unwrap();
        let p: Vec<f64> = ranked.iter().map(|c| s.choice_probability(c)).collect();
        assert!(p.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn selection_prefers_lower_loss_and_first_on_ties() {
        let a = Network::new(vec![Dense::identity(1)]).unwrap();
        let b = Network::new(vec![Dense::new(Matrix::zeros(1, 1), vec![0.0], Activation::Identity).unwrap()]).unwrap();
        let x = Matrix::row_vector(&[2.0]);
        let (i, _, l) = select_by_adv_loss(vec![b.clone(), a.clone()], |n| Ok((n.forward(&x)?.get(0, 0) - 2.0).abs())).unwrap();
        assert_eq!((i, l), (1, 0.0));
        let (i, _, _) = select_by_adv_loss(vec![a.clone(), a], |_| Ok(1.0)).unwrap();
        assert_eq!(i, 0);
    }

    #[test]
    fn flat_parameter_round_trip() {
        let mut r = rng::from_seed(4);
        let mut s = Supernet::build(&[2, 3], &[Activation::Tanh, Activation::Relu], 2, Activation::Identity, &mut r).unwrap();
        let w: Vec<f64> = (0..s.weight_count()).map(|i| i as f64 * 0.01).collect();
        s.set_weights(&w).unwrap();
        assert_eq!(s.weights(), w);
        let a = vec![0.5, -0.5];
        s.set_alpha(&a).unwrap();
        assert_eq!(s.alpha(), a);
    }
}
