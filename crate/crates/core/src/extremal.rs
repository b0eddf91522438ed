//! Pairwise extremal coefficients: F-madogram estimates, kernel smoothing with
//! cross-validated bandwidth, and the closed form of the positive-stable
//! low-rank model.

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::basis::BasisMatrix;
use crate::data::{FieldPanel, SiteSet};
use crate::stable::Alpha;
use crate::util::{average_ranks, fmt_f64, stream_rng};
use crate::{Error, Result};

/// Symmetric matrix of pairwise extremal coefficients, unit diagonal,
/// off-diagonal entries in `[1, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtCoeffMatrix {
    theta: Array2<f64>,
}

impl ExtCoeffMatrix {
    pub fn new(theta: Array2<f64>) -> Result<Self> {
        let n = theta.nrows();
        if theta.ncols() != n || n < 2 {
            return Err(Error::validation("extremal coefficient matrix must be square, n >= 2"));
        }
        for i in 0..n {
            if theta[[i, i]] != 1.0 {
                return Err(Error::validation(format!("diagonal entry {i} is not 1")));
            }
            for j in i + 1..n {
                let v = theta[[i, j]];
                if v != theta[[j, i]] {
                    return Err(Error::validation(format!("entries ({i},{j}) are not symmetric")));
                }
                if !(1.0..=2.0).contains(&v) {
                    return Err(Error::validation(format!("entry ({i},{j}) = {v} outside [1, 2]")));
                }
            }
        }
        Ok(Self { theta })
    }

    /// Builds from upper-triangle values, clamping them into `[1, 2]`.
    fn from_upper(n: usize, mut value: impl FnMut(usize, usize) -> f64) -> Self {
        let mut theta = Array2::ones((n, n));
        for i in 0..n {
            for j in i + 1..n {
                let v = value(i, j).clamp(1.0, 2.0);
                theta[[i, j]] = v;
                theta[[j, i]] = v;
            }
        }
        Self { theta }
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        if !(1.0..=2.0).contains(&value) {
            return Err(Error::validation("extremal coefficient outside [1, 2]"));
        }
        Ok(Self::from_upper(n, |_, _| value))
    }

    pub fn n(&self) -> usize {
        self.theta.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.theta[[i, j]]
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.theta
    }

    pub fn n_pairs(&self) -> usize {
        let n = self.n();
        n * (n - 1) / 2
    }

    /// Upper-triangle entries in row-major `(i < j)` order.
    pub fn upper(&self) -> Vec<f64> {
        let n = self.n();
        let mut out = Vec::with_capacity(self.n_pairs());
        for i in 0..n {
            for j in i + 1..n {
                out.push(self.theta[[i, j]]);
            }
        }
        out
    }

    /// Mean squared difference over pairs `i < j`.
    pub fn mse(&self, other: &ExtCoeffMatrix) -> f64 {
        let a = self.upper();
        let b = other.upper();
        a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
    }
}

/// Writes the upper triangle as `i,j,theta` with 1-based site indices.
pub fn save_theta(path: impl AsRef<Path>, theta: &ExtCoeffMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["i", "j", "theta"])?;
    let n = theta.n();
    for i in 0..n {
        for j in i + 1..n {
            w.write_record([(i + 1).to_string(), (j + 1).to_string(), fmt_f64(theta.get(i, j))])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_theta(path: impl AsRef<Path>, n: usize) -> Result<ExtCoeffMatrix> {
    let path = path.as_ref();
    let mut theta = Array2::from_elem((n, n), f64::NAN);
    for i in 0..n {
        theta[[i, i]] = 1.0;
    }
    let mut reader = csv::Reader::from_path(path)?;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let bad = || Error::parse(path, format!("row {}: malformed theta record", line + 1));
        let i: usize = record.get(0).unwrap_or("").trim().parse().map_err(|_| bad())?;
        let j: usize = record.get(1).unwrap_or("").trim().parse().map_err(|_| bad())?;
        let v: f64 = record.get(2).unwrap_or("").trim().parse().map_err(|_| bad())?;
        if i == 0 || j == 0 || i > n || j > n || i == j {
            return Err(bad());
        }
        theta[[i - 1, j - 1]] = v;
        theta[[j - 1, i - 1]] = v;
    }
    if theta.iter().any(|v| v.is_nan()) {
        return Err(Error::parse(path, "theta file does not cover every pair"));
    }
    ExtCoeffMatrix::new(theta)
}

/// `(1/(2m)) sum_t |r_it - r_jt| / (m + 1)` with ranks over the `m` times
/// where both sites are observed.
fn madogram_from_ranks(ri: &[f64], rj: &[f64]) -> f64 {
    let m = ri.len() as f64;
    let s: f64 = ri.iter().zip(rj).map(|(a, b)| (a - b).abs()).sum();
    s / (2.0 * m * (m + 1.0))
}

/// F-madogram of sites `i` and `j` over their pairwise-complete times.
pub fn fmadogram(panel: &FieldPanel, i: usize, j: usize) -> Result<f64> {
    if i == j {
        return Err(Error::validation("madogram needs two distinct sites"));
    }
    let (xi, xj): (Vec<f64>, Vec<f64>) = (0..panel.n_times())
        .filter_map(|t| Some((panel.get(i, t)?, panel.get(j, t)?)))
        .unzip();
    if xi.len() < 2 {
        return Err(Error::validation(format!(
            "sites {:?} and {:?} share fewer than 2 observed times",
            panel.site_ids()[i],
            panel.site_ids()[j]
        )));
    }
    Ok(madogram_from_ranks(&average_ranks(&xi), &average_ranks(&xj)))
}

/// `(1 + 2 nu) / (1 - 2 nu)`, unclamped.
pub fn theta_from_madogram(nu: f64) -> f64 {
    (1.0 + 2.0 * nu) / (1.0 - 2.0 * nu)
}

/// F-madogram extremal coefficients for every pair, clamped to `[1, 2]`.
pub fn empirical_theta(panel: &FieldPanel) -> Result<ExtCoeffMatrix> {
    let n = panel.n_sites();
    if n < 2 {
        return Err(Error::validation("need at least 2 sites"));
    }
    let complete: Vec<bool> = (0..n)
        .map(|i| panel.mask().row(i).iter().all(|&m| m))
        .collect();
    let full_ranks: Vec<Option<Vec<f64>>> = (0..n)
        .map(|i| complete[i].then(|| average_ranks(&panel.observed_row(i))))
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| {
                    let nu = match (&full_ranks[i], &full_ranks[j]) {
                        (Some(ri), Some(rj)) => madogram_from_ranks(ri, rj),
                        _ => fmadogram(panel, i, j)?,
                    };
                    Ok(theta_from_madogram(nu))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(ExtCoeffMatrix::from_upper(n, |i, j| rows[i][j - i - 1]))
}

/// Gaussian kernel weights `exp(-(d/delta)^2)` with a zero diagonal.
fn kernel_weights(sites: &SiteSet, delta: f64) -> Array2<f64> {
    let n = sites.len();
    Array2::from_shape_fn((n, n), |(i, u)| {
        if i == u {
            0.0
        } else {
            (-(sites.distance(i, u) / delta).powi(2)).exp()
        }
    })
}

/// Numerator and denominator of the two-sided kernel average restricted to
/// the pairs where `pair_weight` is nonzero (the diagonal is always zero).
fn smooth_parts(w: &Array2<f64>, theta: &Array2<f64>, pair_weight: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let num = w.dot(&(theta * pair_weight)).dot(&w.t());
    let den = w.dot(pair_weight).dot(&w.t());
    (num, den)
}

fn off_diagonal_ones(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { 1.0 })
}

/// Kernel-smoothed coefficients
/// `sum_{u != v} w_iu w_jv theta_uv / sum_{u != v} w_iu w_jv` with `w_ii = 0`.
pub fn smooth_theta(theta_hat: &ExtCoeffMatrix, sites: &SiteSet, delta: f64) -> Result<ExtCoeffMatrix> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::validation(format!("bandwidth must be positive, got {delta}")));
    }
    let n = theta_hat.n();
    if sites.len() != n {
        return Err(Error::validation("site count does not match theta matrix"));
    }
    let w = kernel_weights(sites, delta);
    let (num, den) = smooth_parts(&w, &theta_hat.theta, &off_diagonal_ones(n));
    for i in 0..n {
        for j in i + 1..n {
            if !(den[[i, j]] > f64::MIN_POSITIVE) {
                return Err(Error::Numerical(format!(
                    "bandwidth {delta} leaves pair ({i},{j}) with no kernel weight"
                )));
            }
        }
    }
    Ok(ExtCoeffMatrix::from_upper(n, |i, j| num[[i, j]] / den[[i, j]]))
}

/// Geometric grid of 16 bandwidths spanning `[0.05, 4]` times the median
/// inter-site distance.
pub fn default_bandwidth_grid(sites: &SiteSet) -> Vec<f64> {
    let m = sites.median_distance();
    geometric_grid(0.05 * m, 4.0 * m, 16)
}

pub(crate) fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Cross-validated squared prediction error of each candidate bandwidth.
/// Unordered pairs are split into `k` folds; each held-out coefficient is
/// predicted by the kernel average over training pairs only. A candidate that
/// leaves a held-out pair without weight scores `+inf`.
pub fn bandwidth_cv_errors(
    theta_hat: &ExtCoeffMatrix,
    sites: &SiteSet,
    candidates: &[f64],
    k: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::validation("no bandwidth candidates"));
    }
    if k < 2 {
        return Err(Error::validation("bandwidth cross-validation needs k >= 2"));
    }
    if let Some(d) = candidates.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
        return Err(Error::validation(format!("bandwidth must be positive, got {d}")));
    }
    let n = theta_hat.n();
    if sites.len() != n {
        return Err(Error::validation("site count does not match theta matrix"));
    }
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    pairs.shuffle(&mut stream_rng(seed, 0));
    let folds: Vec<Vec<(usize, usize)>> = (0..k)
        .map(|f| pairs.iter().skip(f).step_by(k).copied().collect())
        .collect();
    let training: Vec<Array2<f64>> = folds
        .iter()
        .map(|held| {
            let mut m = off_diagonal_ones(n);
            for &(i, j) in held {
                m[[i, j]] = 0.0;
                m[[j, i]] = 0.0;
            }
            m
        })
        .collect();
    Ok(candidates
        .par_iter()
        .map(|&delta| {
            let w = kernel_weights(sites, delta);
            let mut err = 0.0;
            for (held, mask) in folds.iter().zip(&training) {
                let (num, den) = smooth_parts(&w, &theta_hat.theta, mask);
                for &(i, j) in held {
                    let d = den[[i, j]];
                    if !(d > f64::MIN_POSITIVE) {
                        return f64::INFINITY;
                    }
                    err += (num[[i, j]] / d - theta_hat.get(i, j)).powi(2);
                }
            }
            err
        })
        .collect())
}

/// Candidate with the smallest cross-validation error; near-ties (relative
/// 1e-9, absolute 1e-20) go to the smallest bandwidth.
pub fn select_bandwidth(
    theta_hat: &ExtCoeffMatrix,
    sites: &SiteSet,
    candidates: &[f64],
    k: usize,
    seed: u64,
) -> Result<f64> {
    let errors = bandwidth_cv_errors(theta_hat, sites, candidates, k, seed)?;
    pick_bandwidth(candidates, &errors)
}

/// Applies the selection rule of [`select_bandwidth`] to precomputed errors.
pub fn pick_bandwidth(candidates: &[f64], errors: &[f64]) -> Result<f64> {
    if candidates.is_empty() || candidates.len() != errors.len() {
        return Err(Error::validation("bandwidth candidates and errors differ in length"));
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| candidates[a].total_cmp(&candidates[b]));
    let mut best = order[0];
    for &c in &order[1..] {
        if errors[c] < errors[best] - 1e-9 * errors[best].abs() - 1e-20 {
            best = c;
        }
    }
    if !errors[best].is_finite() {
        return Err(Error::Numerical("every bandwidth candidate is degenerate".into()));
    }
    Ok(candidates[best])
}

/// `sum_l (a_l^(1/alpha) + b_l^(1/alpha))^alpha`, evaluated as
/// `max * (1 + (min/max)^(1/alpha))^alpha` per term to stay finite for small
/// `alpha`.
pub fn pair_theta(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, alpha: Alpha) -> f64 {
    let inv = 1.0 / alpha.get();
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
            if hi <= 0.0 {
                0.0
            } else {
                hi * (1.0 + (lo / hi).powf(inv)).powf(alpha.get())
            }
        })
        .sum()
}

/// Model extremal coefficients of the positive-stable low-rank process.
pub fn model_theta(basis: &BasisMatrix, alpha: Alpha) -> ExtCoeffMatrix {
    let n = basis.n_rows();
    ExtCoeffMatrix::from_upper(n, |i, j| pair_theta(basis.row(i), basis.row(j), alpha))
}

/// `theta(s_ref, s)` for every row of `grid`.
pub fn theta_map(grid: &BasisMatrix, reference: ArrayView1<'_, f64>, alpha: Alpha) -> Result<Vec<f64>> {
    if reference.len() != grid.n_basis() {
        return Err(Error::validation("reference row length does not match basis"));
    }
    let s: f64 = reference.sum();
    if (s - 1.0).abs() > crate::basis::ROW_SUM_TOL || reference.iter().any(|&v| v < 0.0) {
        return Err(Error::validation("reference row is not on the simplex"));
    }
    Ok((0..grid.n_rows())
        .map(|g| pair_theta(reference, grid.row(g), alpha))
        .collect())
}
