//! Synthetic 2-D datasets.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::at::Labeled;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Matrix;

/// Centers of `n_modes` points equally spaced on a circle, starting at `(radius, 0)`.
pub fn ring_centers(n_modes: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..n_modes)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / n_modes as f64;
            [radius * t.cos(), radius * t.sin()]
        })
        .collect()
}

/// `n` points from a ring of Gaussian modes, with the mode index of each.
pub fn gen_ring(n: usize, n_modes: usize, radius: f64, sigma_mode: f64, rng: &mut Rng) -> Result<(Matrix, Vec<usize>)> {
    if n_modes == 0 {
        return Err(Error::contract("ring needs at least one mode"));
    }
    let centers = ring_centers(n_modes, radius);
    let mut data = Vec::with_capacity(2 * n);
    let mut modes = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.random_range(0..n_modes);
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        data.push(centers[k][0] + sigma_mode * ex);
        data.push(centers[k][1] + sigma_mode * ey);
        modes.push(k);
    }
    Ok((Matrix::from_vec(n, 2, data)?, modes))
}

/// Two interleaving half circles: class 0 on `(cos t, sin t)`, class 1 on
/// `(1 − cos t, 0.5 − sin t)`, `t ∈ [0, π]`, plus Gaussian noise. Rows are
/// shuffled; class sizes differ by at most one.
pub fn gen_two_moons(n: usize, noise: f64, rng: &mut Rng) -> Result<Labeled> {
    let n0 = n / 2;
    let n1 = n - n0;
    let mut rows: Vec<([f64; 2], usize)> = Vec::with_capacity(n);
    let t = |i: usize, m: usize| if m > 1 { PI * i as f64 / (m - 1) as f64 } else { 0.0 };
    for i in 0..n0 {
        let a = t(i, n0);
        rows.push(([a.cos(), a.sin()], 0));
    }
    for i in 0..n1 {
        let a = t(i, n1);
        rows.push(([1.0 - a.cos(), 0.5 - a.sin()], 1));
    }
    for (p, _) in &mut rows {
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        p[0] += noise * ex;
        p[1] += noise * ey;
    }
    rows.shuffle(rng);
    let x = Matrix::from_vec(n, 2, rows.iter().flat_map(|(p, _)| *p).collect())?;
    Labeled::new(x, rows.iter().map(|(_, y)| *y).collect())
}

/// Maps the two-moons bounding box `[−1, 2] × [−0.5, 1]` onto `[−1, 1]²`.
pub fn normalize_moons(data: &mut Labeled) {
    for i in 0..data.x.rows() {
        let r = data.x.row_mut(i);
        r[0] = (r[0] - 0.5) / 1.5;
        r[1] = (r[1] - 0.25) / 0.75;
    }
}
