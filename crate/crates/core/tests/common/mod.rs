//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng as _;

use donas::at::Labeled;
use donas::diffnet::{self, Activation, Bce, BceTarget, CrossEntropy, Dense, MeanSquared, Network, Objective};
use donas::metagame::PayoffMatrix;
use donas::rng::Rng;
use donas::supernet::Supernet;
use donas::tensor::Matrix;

pub fn random_matrix(rows: usize, cols: usize, r: &mut Rng) -> PayoffMatrix {
    let entries = (0..rows * cols).map(|_| r.random_range(-1.0..=1.0)).collect();
    PayoffMatrix::new(rows, cols, entries).unwrap()
}

/// Gaussian elimination with partial pivoting; `None` when singular.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect()
}

/// Equalizing strategy on `support` making every opponent strategy in
/// `against` indifferent: solves `Σ pᵢ a(i, j) = v` for `j ∈ against`, `Σ pᵢ = 1`.
fn equalize(support: &[usize], against: &[usize], a: impl Fn(usize, usize) -> f64) -> Option<(Vec<f64>, f64)> {
    let k = support.len();
    let mut m = Vec::with_capacity(k + 1);
    let mut rhs = Vec::with_capacity(k + 1);
    for &j in against {
        let mut row: Vec<f64> = support.iter().map(|&i| a(i, j)).collect();
        row.push(-1.0);
        m.push(row);
        rhs.push(0.0);
    }
    let mut sum = vec![1.0; k];
    sum.push(0.0);
    m.push(sum);
    rhs.push(1.0);
    let x = solve_linear(m, rhs)?;
    Some((x[..k].to_vec(), x[k]))
}

/// Game value by exhaustive search over equal-size support pairs, checking
/// the equilibrium conditions against every pure strategy.
pub fn enumeration_value(u: &PayoffMatrix) -> f64 {
    let (n, m) = (u.n_rows(), u.n_cols());
    let tol = 1e-9;
    for k in 1..=n.min(m) {
        for rows in subsets(n, k) {
            for cols in subsets(m, k) {
                let Some((p, v)) = equalize(&rows, &cols, |i, j| u.get(i, j)) else { continue };
                let Some((q, w)) = equalize(&cols, &rows, |j, i| u.get(i, j)) else { continue };
                if p.iter().chain(&q).any(|&x| x < -tol) || (v - w).abs() > 1e-7 {
                    continue;
                }
                let row_ok = (0..m).all(|j| rows.iter().zip(&p).map(|(&i, pi)| pi * u.get(i, j)).sum::<f64>() >= v - 1e-7);
                let col_ok = (0..n).all(|i| cols.iter().zip(&q).map(|(&j, qj)| qj * u.get(i, j)).sum::<f64>() <= v + 1e-7);
                if row_ok && col_ok {
                    return v;
                }
            }
        }
    }
    panic!("no equilibrium found by support enumeration");
}

/// Central differences of `f` at `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the plain distance when both are tiny.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-8 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

const ACTS: [Activation; 4] = [Activation::Identity, Activation::Tanh, Activation::Relu, Activation::Sigmoid];

/// Finite-difference step used by the gradient checks.
pub const FD_STEP: f64 = 1e-6;

pub fn random_input(n: usize, d: usize, r: &mut Rng) -> Matrix {
    Matrix::from_vec(n, d, (0..n * d).map(|_| r.random_range(-1.5..1.5)).collect()).unwrap()
}

/// One to three dense layers of up to 16 units with random hidden activations.
pub fn random_net(input: usize, output: usize, head: Activation, r: &mut Rng) -> Network {
    let depth = r.random_range(1..=3);
    let mut dims = vec![input];
    for _ in 1..depth {
        dims.push(r.random_range(1..=16));
    }
    dims.push(output);
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let act = if k + 2 == dims.len() { head } else { ACTS[r.random_range(0..ACTS.len())] };
            Dense::init(w[0], w[1], act, r)
        })
        .collect();
    let mut net = Network::new(layers).unwrap();
    // Biases start at zero, which can put a pre-activation exactly on the ReLU
    // kink when an earlier ReLU layer zeroes a whole row.
    let jittered: Vec<f64> = net.params().iter().map(|p| p + r.random_range(-0.1..0.1)).collect();
    net.set_params(&jittered).unwrap();
    net
}

/// Relative errors of the parameter and input gradients of a random network
/// under one of three objectives chosen by `case`.
pub fn network_fd_errors(case: usize, r: &mut Rng) -> (f64, f64) {
    let input = r.random_range(1..=4);
    let n = r.random_range(2..=8);
    let x = random_input(n, input, r);
    let classes = r.random_range(2..=4);
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
    let targets = random_input(n, classes, r);
    let (net, obj): (Network, Box<dyn Objective>) = match case % 3 {
        0 => (random_net(input, classes, Activation::Identity, r), Box::new(CrossEntropy { labels: &labels })),
        1 => (random_net(input, classes, Activation::Tanh, r), Box::new(MeanSquared { targets: &targets })),
        _ => (random_net(input, 1, Activation::Sigmoid, r), Box::new(Bce { target: BceTarget::Real })),
    };
    let (_, gp, gx) = diffnet::grad_both(&net, &x, obj.as_ref()).unwrap();
    let mut probe = net.clone();
    let fd = central_diff(&net.params(), FD_STEP, |p| {
        probe.set_params(p).unwrap();
        diffnet::loss(&probe, &x, obj.as_ref()).unwrap()
    });
    let fdx = central_diff(x.data(), FD_STEP, |v| {
        diffnet::loss(&net, &Matrix::from_vec(n, input, v.to_vec()).unwrap(), obj.as_ref()).unwrap()
    });
    (rel_err(&gp.0, &fd), rel_err(gx.data(), &fdx))
}

/// One or two cells with random logits; equal widths appear often enough to
/// include identity candidates.
pub fn random_supernet(r: &mut Rng) -> Supernet {
    let input = r.random_range(1..=3);
    let cells = r.random_range(1..=2);
    let mut dims = vec![input];
    for _ in 0..cells {
        let w = if r.random_bool(0.5) { *dims.last().unwrap() } else { r.random_range(1..=6) };
        dims.push(w);
    }
    let mut s = Supernet::build(&dims, &[Activation::Tanh, Activation::Relu, Activation::Sigmoid], 2, Activation::Identity, r).unwrap();
    let alpha: Vec<f64> = (0..s.alpha_count()).map(|_| r.random_range(-1.0..1.0)).collect();
    s.set_alpha(&alpha).unwrap();
    let jittered: Vec<f64> = s.weights().iter().map(|w| w + r.random_range(-0.1..0.1)).collect();
    s.set_weights(&jittered).unwrap();
    s
}

/// Relative errors of the weight and architecture gradients of a random supernet.
pub fn supernet_fd_errors(r: &mut Rng) -> (f64, f64) {
    let s = random_supernet(r);
    let n = r.random_range(2..=6);
    let x = random_input(n, s.input_dim(), r);
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..2)).collect();
    let obj = CrossEntropy { labels: &labels };
    let (_, g, _) = s.grad(&x, &obj).unwrap();
    let mut probe = s.clone();
    let fd_w = central_diff(&s.weights(), FD_STEP, |w| {
        probe.set_weights(w).unwrap();
        obj.evaluate(&probe.mixed_forward(&x).unwrap()).unwrap().0
    });
    let mut probe = s.clone();
    let fd_a = central_diff(&s.alpha(), FD_STEP, |a| {
        probe.set_alpha(a).unwrap();
        obj.evaluate(&probe.mixed_forward(&x).unwrap()).unwrap().0
    });
    (rel_err(&g.weights, &fd_w), rel_err(&g.alpha, &fd_a))
}

/// A single affine layer with two logits.
pub fn linear(w: [[f64; 2]; 2], b: [f64; 2]) -> Network {
    let m = Matrix::from_vec(2, 2, vec![w[0][0], w[0][1], w[1][0], w[1][1]]).unwrap();
    Network::new(vec![Dense::new(m, b.to_vec(), Activation::Identity).unwrap()]).unwrap()
}

pub fn random_linear(r: &mut Rng) -> ([[f64; 2]; 2], [f64; 2]) {
    let mut v = || r.random_range(-2.0..2.0);
    ([[v(), v()], [v(), v()]], [v(), v()])
}

pub fn labeled(n: usize, r: &mut Rng) -> Labeled {
    let x = Matrix::from_vec(n, 2, (0..2 * n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
    let y = (0..n).map(|_| r.random_range(0..2)).collect();
    Labeled::new(x, y).unwrap()
}

/// Mean of `log(1 + exp(−(m − ε‖w_y − w_o‖₁)))`, the binary worst case over the ∞-ball.
pub fn analytic_worst(w: &[[f64; 2]; 2], b: &[f64; 2], data: &Labeled, eps: f64) -> f64 {
    let total: f64 = (0..data.len())
        .map(|i| {
            let (y, o) = (data.y[i], 1 - data.y[i]);
            let x = data.x.row(i);
            let z = |k: usize| w[k][0] * x[0] + w[k][1] * x[1] + b[k];
            let l1 = (w[y][0] - w[o][0]).abs() + (w[y][1] - w[o][1]).abs();
            (1.0 + (-(z(y) - z(o) - eps * l1)).exp()).ln()
        })
        .sum();
    total / data.len() as f64
}
