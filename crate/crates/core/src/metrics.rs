//! Representation similarity (linear CKA), 2-D Fréchet distance between
//! Gaussian fits, and mode coverage.

use crate::diffnet::Network;
use crate::error::{ensure_dims, Error, Result};
use crate::tensor::Matrix;

/// Linear CKA value with a flag for zero-variance inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cka {
    pub value: f64,
    /// Set when either input has no variance; `value` is then 0.
    pub degenerate: bool,
}

/// `‖YᵀX‖²_F / (‖XᵀX‖_F ‖YᵀY‖_F)` on column-centered activations.
pub fn linear_cka(x: &Matrix, y: &Matrix) -> Result<Cka> {
    ensure_dims("CKA example count", x.rows(), y.rows())?;
    if x.rows() < 2 {
        return Err(Error::contract("CKA needs at least two examples"));
    }
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::Input("non-finite activations".into()));
    }
    let xc = x.centered();
    let yc = y.centered();
    let xx = xc.t_matmul(&xc).frobenius_sq().sqrt();
    let yy = yc.t_matmul(&yc).frobenius_sq().sqrt();
    if xx == 0.0 || yy == 0.0 {
        return Ok(Cka {
            value: 0.0,
            degenerate: true,
        });
    }
    let yx = yc.t_matmul(&xc).frobenius_sq();
    Ok(Cka {
        value: yx / (xx * yy),
        degenerate: false,
    })
}

/// CKA grids over a set of networks evaluated on one probe set.
#[derive(Debug, Clone, PartialEq)]
pub struct CkaHeatmap {
    /// `within[n][a][b]`: CKA between layers `a` and `b` of network `n`.
    pub within: Vec<Vec<Vec<f64>>>,
    /// `cross[p][q][l]`: CKA between layer `l` of networks `p` and `q`.
    pub cross: Vec<Vec<Vec<f64>>>,
    /// Per-layer CKA averaged over all unordered pairs of distinct networks.
    pub cross_mean: Vec<f64>,
    /// Number of degenerate pairs encountered.
    pub degenerate: usize,
}

/// Within-network and cross-network layer CKA. Cross-network values are only
/// defined for the leading layers every network has.
pub fn cka_heatmap(nets: &[Network], probe: &Matrix) -> Result<CkaHeatmap> {
    if probe.rows() == 0 {
        return Err(Error::contract("empty CKA probe set"));
    }
    let acts = nets
        .iter()
        .map(|n| n.activations(probe))
        .collect::<Result<Vec<_>>>()?;
    let mut degenerate = 0;
    let mut cka = |a: &Matrix, b: &Matrix| -> Result<f64> {
        let c = linear_cka(a, b)?;
        degenerate += usize::from(c.degenerate);
        Ok(c.value)
    };
    let mut within = Vec::with_capacity(nets.len());
    for layers in &acts {
        let mut grid = vec![vec![0.0; layers.len()]; layers.len()];
        for a in 0..layers.len() {
            for b in a..layers.len() {
                let v = cka(&layers[a], &layers[b])?;
                grid[a][b] = v;
                grid[b][a] = v;
            }
        }
        within.push(grid);
    }
    let depth = acts.iter().map(Vec::len).min().unwrap_or(0);
    let mut cross = vec![vec![vec![0.0; depth]; nets.len()]; nets.len()];
    let mut sums = vec![0.0; depth];
    let mut pairs = 0usize;
    for p in 0..nets.len() {
        for q in p..nets.len() {
            for l in 0..depth {
                let v = cka(&acts[p][l], &acts[q][l])?;
                cross[p][q][l] = v;
                cross[q][p][l] = v;
                if p != q {
                    sums[l] += v;
                }
            }
            if p != q {
                pairs += 1;
            }
        }
    }
    let cross_mean = if pairs == 0 {
        vec![1.0; depth]
    } else {
        sums.iter().map(|s| s / pairs as f64).collect()
    };
    Ok(CkaHeatmap {
        within,
        cross,
        cross_mean,
        degenerate,
    })
}

/// Mean and sample covariance of a 2-D point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments2 {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl Moments2 {
    pub fn fit(samples: &Matrix) -> Result<Self> {
        ensure_dims("sample dimension", 2, samples.cols())?;
        let n = samples.rows();
        if n < 3 {
            return Err(Error::contract(format!("Fréchet fit needs at least 3 samples, got {n}")));
        }
        let m = samples.column_means();
        let c = samples.centered();
        let cov = c.t_matmul(&c).scaled(1.0 / (n - 1) as f64);
        Ok(Moments2 {
            mean: [m[0], m[1]],
            cov: [[cov.get(0, 0), cov.get(0, 1)], [cov.get(1, 0), cov.get(1, 1)]],
        })
    }

    fn with_ridge_if_singular(mut self) -> Self {
        let det = self.cov[0][0] * self.cov[1][1] - self.cov[0][1] * self.cov[1][0];
        if det <= 0.0 {
            self.cov[0][0] += 1e-9;
            self.cov[1][1] += 1e-9;
        }
        self
    }
}

/// `‖μ_A − μ_B‖² + Tr(Σ_A + Σ_B − 2(Σ_A Σ_B)^{1/2})`.
pub fn frechet_from_moments(a: &Moments2, b: &Moments2) -> f64 {
    let a = a.with_ridge_if_singular();
    let b = b.with_ridge_if_singular();
    let dm = (a.mean[0] - b.mean[0]).powi(2) + (a.mean[1] - b.mean[1]).powi(2);
    let (p, q) = (a.cov, b.cov);
    let m = [
        [p[0][0] * q[0][0] + p[0][1] * q[1][0], p[0][0] * q[0][1] + p[0][1] * q[1][1]],
        [p[1][0] * q[0][0] + p[1][1] * q[1][0], p[1][0] * q[0][1] + p[1][1] * q[1][1]],
    ];
    // Σ_A Σ_B is similar to a PSD matrix, so its eigenvalues are real and
    // non-negative: Tr √M = √(tr M + 2√det M).
    let tr = m[0][0] + m[1][1];
    let det = (m[0][0] * m[1][1] - m[0][1] * m[1][0]).max(0.0);
    let tr_sqrt = (tr + 2.0 * det.sqrt()).max(0.0).sqrt();
    let d = dm + p[0][0] + p[1][1] + q[0][0] + q[1][1] - 2.0 * tr_sqrt;
    d.max(0.0)
}

pub fn frechet_2d(a: &Matrix, b: &Matrix) -> Result<f64> {
    Ok(frechet_from_moments(&Moments2::fit(a)?, &Moments2::fit(b)?))
}

/// Number of centers that receive at least `min_frac` of all samples within
/// `3·σ_mode`, assigning each sample to its nearest center.
pub fn mode_coverage(samples: &Matrix, centers: &[[f64; 2]], sigma_mode: f64, min_frac: f64) -> Result<usize> {
    if centers.is_empty() {
        return Err(Error::contract("mode coverage needs at least one center"));
    }
    ensure_dims("sample dimension", 2, samples.cols())?;
    let radius_sq = (3.0 * sigma_mode).powi(2);
    let mut hits = vec![0usize; centers.len()];
    for i in 0..samples.rows() {
        let p = samples.row(i);
        let dist = |c: &[f64; 2]| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
        let mut best = 0;
        for (k, c) in centers.iter().enumerate() {
            if dist(c) < dist(&centers[best]) {
                best = k;
            }
        }
        if dist(&centers[best]) <= radius_sq {
            hits[best] += 1;
        }
    }
    let need = min_frac * samples.rows() as f64;
    Ok(hits.iter().filter(|&&h| h > 0 && h as f64 >= need).count())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(mean: [f64; 2], var: f64) -> Moments2 {
        Moments2 {
            mean,
            cov: [[var, 0.0], [0.0, var]],
        }
    }

    #[test]
    fn frechet_closed_forms() {
        let d = frechet_from_moments(&moments([0.0, 0.0], 1.0), &moments([3.0, 0.0], 1.0));
        assert!((d - 9.0).abs() < 1e-12);
        let d = frechet_from_moments(&moments([0.0, 0.0], 1.0), &moments([0.0, 0.0], 4.0));
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn frechet_of_identical_sets_is_zero() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.3], vec![1.0, 1.0]]).unwrap();
        assert!(frechet_2d(&a, &a).unwrap() < 1e-9);
    }

    #[test]
    fn coverage_examples() {
        let centers: Vec<[f64; 2]> = (0..8)
            .map(|k| {
                let t = k as f64 * std::f64::consts::PI / 4.0;
                [2.0 * t.cos(), 2.0 * t.sin()]
            })
            .collect();
        let at_all = Matrix::from_rows(&centers.iter().map(|c| c.to_vec()).collect::<Vec<_>>()).unwrap();
        assert_eq!(mode_coverage(&at_all, &centers, 0.05, 0.02).unwrap(), 8);
        let collapsed = Matrix::from_rows(&vec![centers[3].to_vec(); 50]).unwrap();
        assert_eq!(mode_coverage(&collapsed, &centers, 0.05, 0.02).unwrap(), 1);
    }

    #[test]
    fn zero_variance_is_flagged() {
        let x = Matrix::from_rows(&[vec![1.0], vec![1.0], vec![1.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![4.0]]).unwrap();
        let c = linear_cka(&x, &y).unwrap();
        assert!(c.degenerate && c.value == 0.0);
    }
}
