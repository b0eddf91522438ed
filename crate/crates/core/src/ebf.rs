//! Empirical basis functions.
//!
//! Given smoothed extremal coefficients `theta~` and the nugget `alpha`, the
//! basis `B` (rows on the simplex) minimizes
//!
//! ```text
//! sum_{i<j} (theta~_ij - sum_l (B_il^(1/alpha) + B_jl^(1/alpha))^alpha)^2
//! ```
//!
//! The simplex constraint is removed by writing each row as a softmax of free
//! logits, `B_il = exp(g_il) / sum_m exp(g_im)`, and the objective is
//! minimized by L-BFGS descent with Armijo backtracking from several
//! starting points.

use ndarray::Array2;
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{contribution_order, contributions, BasisMatrix};
use crate::data::SiteSet;
use crate::extremal::ExtCoeffMatrix;
use crate::gkf::{gkf_basis, spacefilling_knots};
use crate::stable::Alpha;
use crate::util::{dist, stream_rng};
use crate::{Error, Result};

/// `alpha` is kept inside this interval.
pub const ALPHA_RANGE: (f64, f64) = (0.01, 0.99);

/// Nugget estimate from the closest pairs: the `ceil(fraction * n_pairs)`
/// pairs with the smallest separation are averaged and
/// `alpha = log2(mean theta~)`, clamped to [`ALPHA_RANGE`].
pub fn estimate_alpha(theta_tilde: &ExtCoeffMatrix, sites: &SiteSet, neighbor_fraction: f64) -> Result<Alpha> {
    if !(neighbor_fraction > 0.0 && neighbor_fraction <= 1.0) {
        return Err(Error::validation(format!(
            "neighbor fraction must lie in (0, 1], got {neighbor_fraction}"
        )));
    }
    if sites.len() != theta_tilde.n() {
        return Err(Error::validation("site count does not match theta matrix"));
    }
    let mut pairs = sites.pair_distances();
    let count = (neighbor_fraction * pairs.len() as f64).ceil() as usize;
    if count == 0 {
        return Err(Error::validation("neighbor set is empty"));
    }
    pairs.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mean = pairs[..count]
        .iter()
        .map(|&(i, j, _)| theta_tilde.get(i, j))
        .sum::<f64>()
        / count as f64;
    Alpha::new(mean.log2().clamp(ALPHA_RANGE.0, ALPHA_RANGE.1))
}

/// Sum of squared differences between `theta~` and the model coefficients.
pub fn ebf_loss(basis: &BasisMatrix, alpha: Alpha, theta_tilde: &ExtCoeffMatrix) -> f64 {
    let model = crate::extremal::model_theta(basis, alpha);
    theta_tilde
        .upper()
        .iter()
        .zip(model.upper())
        .map(|(t, m)| (t - m).powi(2))
        .sum()
}

/// Loss and gradient with respect to the softmax logits of the basis rows.
pub struct EbfObjective {
    n: usize,
    l: usize,
    alpha: f64,
    target: Vec<f64>,
}

impl EbfObjective {
    pub fn new(theta_tilde: &ExtCoeffMatrix, alpha: Alpha, n_basis: usize) -> Self {
        Self {
            n: theta_tilde.n(),
            l: n_basis,
            alpha: alpha.get(),
            target: theta_tilde.upper(),
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.target.len()
    }

    /// Loss at `logits`; when `grad` is given it receives the gradient.
    pub fn eval(&self, logits: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let (n, l, a) = (self.n, self.l, self.alpha);
        debug_assert_eq!(logits.len(), n * l);
        let mut ln_b = vec![0.0; n * l];
        for i in 0..n {
            let row = &logits[i * l..(i + 1) * l];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|g| (g - max).exp()).sum::<f64>().ln();
            for k in 0..l {
                ln_b[i * l + k] = row[k] - lse;
            }
        }
        let p: Vec<f64> = ln_b.iter().map(|v| (v / a).exp()).collect();
        let want_grad = grad.is_some();
        let mut h = if want_grad { vec![0.0; n * l] } else { Vec::new() };
        let mut d = vec![0.0; l];
        let mut loss = 0.0;
        let mut pair = 0;
        for i in 0..n {
            let pi = &p[i * l..(i + 1) * l];
            for j in i + 1..n {
                let pj = &p[j * l..(j + 1) * l];
                let mut model = 0.0;
                for k in 0..l {
                    let s = pi[k] + pj[k];
                    if s > 0.0 {
                        let sa = (a * s.ln()).exp();
                        model += sa;
                        d[k] = sa / s;
                    } else {
                        d[k] = 0.0;
                    }
                }
                let r = self.target[pair] - model;
                pair += 1;
                loss += r * r;
                if want_grad {
                    let c = -2.0 * r;
                    for k in 0..l {
                        h[i * l + k] += c * d[k];
                        h[j * l + k] += c * d[k];
                    }
                }
            }
        }
        if let Some(grad) = grad {
            // dL/dB_il = h_il B_il^((1-a)/a), then through the softmax
            let e = 1.0 / a - 1.0;
            for i in 0..n {
                let mut dot = 0.0;
                for k in 0..l {
                    let idx = i * l + k;
                    let b = ln_b[idx].exp();
                    let gb = h[idx] * (e * ln_b[idx]).exp();
                    grad[idx] = gb;
                    dot += b * gb;
                }
                for k in 0..l {
                    let idx = i * l + k;
                    grad[idx] = ln_b[idx].exp() * (grad[idx] - dot);
                }
            }
        }
        loss
    }
}

/// Exact gradient of [`ebf_loss`] composed with the row-wise softmax.
pub fn ebf_loss_grad(logits: &Array2<f64>, alpha: Alpha, theta_tilde: &ExtCoeffMatrix) -> (f64, Array2<f64>) {
    let obj = EbfObjective::new(theta_tilde, alpha, logits.ncols());
    let flat: Vec<f64> = logits.iter().copied().collect();
    let mut grad = vec![0.0; flat.len()];
    let loss = obj.eval(&flat, Some(&mut grad));
    (loss, Array2::from_shape_vec(logits.dim(), grad).expect("shape preserved"))
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut b = logits.clone();
    for mut row in b.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|g| (g - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    b
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EbfFitConfig {
    pub n_basis: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub seed: u64,
}

impl Default for EbfFitConfig {
    fn default() -> Self {
        Self {
            n_basis: 1,
            restarts: 4,
            max_iter: 5000,
            grad_tol: 1e-8,
            seed: 0,
        }
    }
}

impl EbfFitConfig {
    pub fn with_basis(n_basis: usize) -> Self {
        Self {
            n_basis,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_basis == 0 || self.restarts == 0 {
            return Err(Error::validation("need at least one basis function and one restart"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::validation("gradient tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EbfFitResult {
    /// Columns sorted by decreasing contribution.
    pub basis: BasisMatrix,
    pub contributions: Vec<f64>,
    pub loss: f64,
    pub alpha: Alpha,
    pub iterations: usize,
    /// Gradient norm fell below the tolerance before `max_iter`.
    pub converged: bool,
    /// False when `theta~` is constant at `2^alpha`, where any common row
    /// fits exactly and the returned basis is one of many minimizers.
    pub identifiable: bool,
    pub seed: u64,
}

struct Descent {
    logits: Vec<f64>,
    loss: f64,
    iterations: usize,
    converged: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

const HISTORY: usize = 10;

/// Descent on the logits with Armijo backtracking (shrink 0.5, slope 1e-4).
/// Directions come from a limited-memory BFGS estimate of the inverse
/// Hessian; the first step, and any step after the estimate fails to give a
/// descent direction, follows the negative gradient.
fn descend(obj: &EbfObjective, mut x: Vec<f64>, max_iter: usize, grad_tol: f64) -> Descent {
    const SHRINK: f64 = 0.5;
    const SLOPE: f64 = 1e-4;
    let m = x.len();
    let mut g = vec![0.0; m];
    let mut f = obj.eval(&x, Some(&mut g));
    let mut x_new = vec![0.0; m];
    let mut g_new = vec![0.0; m];
    let mut dir = vec![0.0; m];
    let mut history: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = std::collections::VecDeque::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        if inf_norm(&g) < grad_tol {
            converged = true;
            break;
        }
        lbfgs_direction(&g, &history, &mut dir);
        let mut slope: f64 = dir.iter().zip(&g).map(|(d, g)| d * g).sum();
        let mut t = 1.0;
        if history.is_empty() || !(slope < 0.0) {
            history.clear();
            for k in 0..m {
                dir[k] = -g[k];
            }
            slope = -g.iter().map(|v| v * v).sum::<f64>();
            t = 1.0 / inf_norm(&g).max(1.0);
        }
        let accepted = loop {
            for k in 0..m {
                x_new[k] = x[k] + t * dir[k];
            }
            let f_new = obj.eval(&x_new, Some(&mut g_new));
            if f_new.is_finite() && f_new <= f + SLOPE * t * slope {
                break Some(f_new);
            }
            t *= SHRINK;
            if t < 1e-20 {
                break None;
            }
        };
        iterations += 1;
        let Some(f_new) = accepted else { break };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-12 * yy.sqrt() * s.iter().map(|v| v * v).sum::<f64>().sqrt() && sy > 0.0 {
            if history.len() == HISTORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
    }
    if !converged && inf_norm(&g) < grad_tol {
        converged = true;
    }
    Descent {
        logits: x,
        loss: f,
        iterations,
        converged,
    }
}

/// Two-loop recursion: `dir = -H g`.
fn lbfgs_direction(g: &[f64], history: &std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>, dir: &mut [f64]) {
    dir.copy_from_slice(g);
    let mut coef = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * s.iter().zip(dir.iter()).map(|(s, d)| s * d).sum::<f64>();
        for (d, yk) in dir.iter_mut().zip(y) {
            *d -= a * yk;
        }
        coef.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let sy: f64 = s.iter().zip(y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let gamma = sy / yy;
        for d in dir.iter_mut() {
            *d *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(coef.iter().rev()) {
        let b = rho * y.iter().zip(dir.iter()).map(|(y, d)| y * d).sum::<f64>();
        for (d, sk) in dir.iter_mut().zip(s) {
            *d += (a - b) * sk;
        }
    }
    for d in dir.iter_mut() {
        *d = -*d;
    }
}

/// Logits reproducing `b`, with zeros mapped to a very small weight.
fn logits_of(b: &Array2<f64>) -> Vec<f64> {
    b.iter().map(|&v| v.max(1e-12).ln()).collect()
}

/// Kernel basis on space-filling knots, bandwidth half the median
/// nearest-knot spacing.
fn structured_start(sites: &SiteSet, l: usize, seed: u64) -> Result<Array2<f64>> {
    let knots = spacefilling_knots(sites, l, seed)?;
    let c = knots.coords();
    let mut nn: Vec<f64> = (0..l)
        .map(|a| {
            (0..l)
                .filter(|&b| b != a)
                .map(|b| dist(c[a], c[b]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    let spacing = nn[l / 2];
    let rho = if spacing.is_finite() && spacing > 0.0 { 0.5 * spacing } else { 1.0 };
    Ok(gkf_basis(sites.coords(), &knots, rho)?.into_inner())
}

/// Fits the basis: restart 0 starts from a Gaussian kernel basis on
/// space-filling knots, the others from independent Dirichlet(1) rows, and
/// `extra_start` (if any) is tried as one more start. The lowest final loss
/// wins, ties to the earliest start.
pub fn fit_ebf_with_start(
    theta_tilde: &ExtCoeffMatrix,
    sites: &SiteSet,
    alpha: Alpha,
    cfg: &EbfFitConfig,
    extra_start: Option<&Array2<f64>>,
) -> Result<EbfFitResult> {
    cfg.validate()?;
    let n = theta_tilde.n();
    let l = cfg.n_basis;
    if sites.len() != n {
        return Err(Error::validation("site count does not match theta matrix"));
    }
    if let Some(s) = extra_start {
        if s.dim() != (n, l) {
            return Err(Error::validation("warm start has the wrong shape"));
        }
    }
    let obj = EbfObjective::new(theta_tilde, alpha, l);
    let nugget = 2f64.powf(alpha.get());
    let identifiable = theta_tilde.upper().iter().any(|t| (t - nugget).abs() > 1e-12);
    if l == 1 || !identifiable {
        let mut b = Array2::zeros((n, l));
        b.column_mut(0).fill(1.0);
        let basis = BasisMatrix::new(b)?;
        let loss = ebf_loss(&basis, alpha, theta_tilde);
        return Ok(EbfFitResult {
            contributions: contributions(&basis),
            basis,
            loss,
            alpha,
            iterations: 0,
            converged: true,
            identifiable: l == 1 || identifiable,
            seed: cfg.seed,
        });
    }

    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(cfg.restarts + 1);
    starts.push(logits_of(&structured_start(sites, l, cfg.seed)?));
    for r in 1..cfg.restarts {
        let mut rng = stream_rng(cfg.seed, r as u64);
        starts.push((0..n * l).map(|_| rng.sample::<f64, _>(Exp1).max(1e-300).ln()).collect());
    }
    if let Some(s) = extra_start {
        starts.push(logits_of(s));
    }
    let runs: Vec<Descent> = starts
        .into_par_iter()
        .map(|x0| descend(&obj, x0, cfg.max_iter, cfg.grad_tol))
        .collect();
    let mut best = 0;
    for (k, run) in runs.iter().enumerate() {
        if run.loss < runs[best].loss {
            best = k;
        }
    }
    let run = &runs[best];
    let b = softmax_rows(&Array2::from_shape_vec((n, l), run.logits.clone()).expect("shape"));
    let raw = BasisMatrix::new(b)?;
    let basis = raw.permute_columns(&contribution_order(&raw));
    Ok(EbfFitResult {
        contributions: contributions(&basis),
        loss: run.loss,
        basis,
        alpha,
        iterations: run.iterations,
        converged: run.converged,
        identifiable: true,
        seed: cfg.seed,
    })
}

pub fn fit_ebf(theta_tilde: &ExtCoeffMatrix, sites: &SiteSet, alpha: Alpha, cfg: &EbfFitConfig) -> Result<EbfFitResult> {
    fit_ebf_with_start(theta_tilde, sites, alpha, cfg, None)
}

/// Loss per pair for each number of basis functions. Sizes are fitted in
/// increasing order and each fit also starts from the previous solution
/// padded with near-empty columns, so the curve cannot increase beyond
/// optimizer round-off.
pub fn elbow_curve(
    theta_tilde: &ExtCoeffMatrix,
    sites: &SiteSet,
    alpha: Alpha,
    sizes: &[usize],
    cfg: &EbfFitConfig,
) -> Result<Vec<(usize, f64)>> {
    if sizes.is_empty() {
        return Err(Error::validation("no basis sizes given"));
    }
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let pairs = theta_tilde.n_pairs() as f64;
    let mut prev: Option<Array2<f64>> = None;
    let mut out = Vec::with_capacity(sorted.len());
    for &l in &sorted {
        let warm = prev.as_ref().map(|b| {
            let n = b.nrows();
            let mut padded = Array2::from_elem((n, l), 1e-9);
            for i in 0..n {
                for k in 0..b.ncols() {
                    padded[[i, k]] = b[[i, k]];
                }
            }
            padded
        });
        let fit = fit_ebf_with_start(
            theta_tilde,
            sites,
            alpha,
            &EbfFitConfig { n_basis: l, ..cfg.clone() },
            warm.as_ref(),
        )?;
        out.push((l, fit.loss / pairs));
        prev = Some(fit.basis.into_inner());
    }
    Ok(out)
}

/// Kernel-weighted average of basis rows at new locations,
/// `w_i(s) = exp(-(|s - s_i| / delta)^2)`, renormalized onto the simplex.
/// Weights are scaled by the nearest site's so a point far from every site
/// takes the nearest rows rather than underflowing.
pub fn interpolate_basis(
    basis: &BasisMatrix,
    sites: &SiteSet,
    new_points: &[[f64; 2]],
    delta: f64,
) -> Result<BasisMatrix> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::validation(format!("bandwidth must be positive, got {delta}")));
    }
    if basis.n_rows() != sites.len() {
        return Err(Error::validation("basis rows do not match sites"));
    }
    let l = basis.n_basis();
    let mut out = Array2::zeros((new_points.len(), l));
    for (g, p) in new_points.iter().enumerate() {
        let d2: Vec<f64> = sites.coords().iter().map(|s| (dist(*p, *s) / delta).powi(2)).collect();
        let nearest = d2.iter().cloned().fold(f64::INFINITY, f64::min);
        if !nearest.is_finite() {
            return Err(Error::Numerical(format!(
                "every kernel weight underflowed at ({}, {})",
                p[0], p[1]
            )));
        }
        for (i, d) in d2.iter().enumerate() {
            let w = (nearest - d).exp();
            if w > 0.0 {
                out.row_mut(g).scaled_add(w, &basis.row(i));
            }
        }
    }
    BasisMatrix::from_weights(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extremal::model_theta;
    use ndarray::array;

    fn alpha(a: f64) -> Alpha {
        Alpha::new(a).unwrap()
    }

    fn random_sites(n: usize, seed: u64) -> SiteSet {
        let mut rng = stream_rng(seed, 0);
        SiteSet::from_coords((0..n).map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)]).collect())
            .unwrap()
    }

    fn random_logits(n: usize, l: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream_rng(seed, 7);
        Array2::from_shape_fn((n, l), |_| rng.random_range(-1.5..1.5))
    }

    #[test]
    fn alpha_from_neighbours() {
        let sites = random_sites(20, 1);
        let t = ExtCoeffMatrix::constant(20, 2f64.powf(0.3)).unwrap();
        assert!((estimate_alpha(&t, &sites, 0.05).unwrap().get() - 0.3).abs() < 1e-12);
        let t = ExtCoeffMatrix::constant(20, 2.0).unwrap();
        assert_eq!(estimate_alpha(&t, &sites, 0.05).unwrap().get(), 0.99);
        let t = ExtCoeffMatrix::constant(20, 1.0).unwrap();
        assert_eq!(estimate_alpha(&t, &sites, 0.05).unwrap().get(), 0.01);
        assert!(estimate_alpha(&t, &sites, 0.0).is_err());
    }

    #[test]
    fn alpha_uses_only_closest_pairs() {
        let sites = SiteSet::from_coords(vec![[0.0, 0.0], [0.1, 0.0], [5.0, 0.0], [9.0, 0.0]]).unwrap();
        let mut m = Array2::from_elem((4, 4), 2.0);
        for i in 0..4 {
            m[[i, i]] = 1.0;
        }
        m[[0, 1]] = 2f64.powf(0.4);
        m[[1, 0]] = m[[0, 1]];
        let t = ExtCoeffMatrix::new(m).unwrap();
        // 6 pairs, fraction 1/6 keeps exactly the closest one
        assert!((estimate_alpha(&t, &sites, 1.0 / 6.0).unwrap().get() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn loss_zero_at_truth() {
        let b = BasisMatrix::from_weights(array![[1.0, 2.0, 0.5], [0.3, 0.3, 3.0], [2.0, 0.1, 0.1], [1.0, 1.0, 1.0]])
            .unwrap();
        let a = alpha(0.45);
        let t = model_theta(&b, a);
        assert!(ebf_loss(&b, a, &t) < 1e-28);
        let one = BasisMatrix::constant(4);
        let t = ExtCoeffMatrix::constant(4, 2f64.powf(0.45)).unwrap();
        assert!(ebf_loss(&one, a, &t) < 1e-28);
    }

    #[test]
    fn objective_matches_direct_loss() {
        let a = alpha(0.35);
        let logits = random_logits(7, 3, 2);
        let b = BasisMatrix::new(softmax_rows(&logits)).unwrap();
        let t = model_theta(&BasisMatrix::from_weights(random_logits(7, 2, 3).mapv(f64::exp)).unwrap(), a);
        let (loss, _) = ebf_loss_grad(&logits, a, &t);
        assert!((loss - ebf_loss(&b, a, &t)).abs() < 1e-12);
    }

    /// Central differences with step 1e-6.
    fn fd_grad(logits: &Array2<f64>, a: Alpha, t: &ExtCoeffMatrix) -> Array2<f64> {
        let h = 1e-6;
        let mut out = Array2::zeros(logits.dim());
        for idx in 0..logits.len() {
            let (i, k) = (idx / logits.ncols(), idx % logits.ncols());
            let mut up = logits.clone();
            up[[i, k]] += h;
            let mut dn = logits.clone();
            dn[[i, k]] -= h;
            out[[i, k]] = (ebf_loss_grad(&up, a, t).0 - ebf_loss_grad(&dn, a, t).0) / (2.0 * h);
        }
        out
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sites = 6;
        let t = ExtCoeffMatrix::new(Array2::from_shape_fn((sites, sites), |(i, j)| {
            if i == j { 1.0 } else { 1.0 + 0.5 * (((i + j) as f64).sin() + 1.0) }
        }))
        .unwrap();
        for (s, a) in [0.3, 0.5, 0.7].into_iter().enumerate() {
            let a = alpha(a);
            for p in 0..20 {
                let logits = random_logits(sites, 3, 100 * s as u64 + p);
                let (_, g) = ebf_loss_grad(&logits, a, &t);
                let fd = fd_grad(&logits, a, &t);
                for (x, y) in g.iter().zip(fd.iter()) {
                    assert!((x - y).abs() <= 1e-5 * x.abs().max(y.abs()) + 1e-9, "analytic {x} fd {y}");
                }
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_perfect_fit() {
        let a = alpha(0.5);
        let logits = random_logits(6, 3, 4);
        let t = model_theta(&BasisMatrix::new(softmax_rows(&logits)).unwrap(), a);
        let (loss, g) = ebf_loss_grad(&logits, a, &t);
        assert!(loss < 1e-25);
        assert!(g.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn gradient_orthogonal_to_row_shift() {
        let a = alpha(0.6);
        let logits = random_logits(5, 4, 5);
        let t = ExtCoeffMatrix::constant(5, 1.6).unwrap();
        let (loss, g) = ebf_loss_grad(&logits, a, &t);
        for row in g.rows() {
            assert!(row.sum().abs() < 1e-12);
        }
        let shifted = &logits + 3.0;
        let (loss2, _) = ebf_loss_grad(&shifted, a, &t);
        assert!((loss - loss2).abs() < 1e-12);
    }

    #[test]
    fn single_basis_is_constant() {
        let sites = random_sites(8, 2);
        let t = ExtCoeffMatrix::constant(8, 1.7).unwrap();
        let fit = fit_ebf(&t, &sites, alpha(0.5), &EbfFitConfig::with_basis(1)).unwrap();
        assert!(fit.basis.matrix().iter().all(|&v| v == 1.0));
        let expect = 28.0 * (1.7 - 2f64.sqrt()).powi(2);
        assert!((fit.loss - expect).abs() < 1e-12);
    }

    #[test]
    fn non_identifiable_input_is_flagged() {
        let sites = random_sites(8, 2);
        let t = ExtCoeffMatrix::constant(8, 2f64.powf(0.5)).unwrap();
        let fit = fit_ebf(&t, &sites, alpha(0.5), &EbfFitConfig::with_basis(3)).unwrap();
        assert!(!fit.identifiable);
        assert_eq!(fit.contributions, vec![1.0, 0.0, 0.0]);
        assert!(fit.loss < 1e-20);
    }

    #[test]
    fn recovers_noiseless_coefficients() {
        let sites = random_sites(30, 3);
        let a = alpha(0.5);
        let knots = crate::gkf::KnotSet::from_coords(vec![[2.0, 2.0], [8.0, 3.0], [5.0, 8.0]]);
        let truth = gkf_basis(sites.coords(), &knots, 2.5).unwrap();
        let t = model_theta(&truth, a);
        let cfg = EbfFitConfig { n_basis: 3, restarts: 3, seed: 5, ..Default::default() };
        let fit = fit_ebf(&t, &sites, a, &cfg).unwrap();
        let mse100 = 100.0 * model_theta(&fit.basis, a).mse(&t);
        assert!(mse100 <= 0.1, "{mse100}");
        // ordering and simplex invariants
        assert!(fit.contributions.windows(2).all(|w| w[0] >= w[1]));
        assert!((fit.contributions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // local optimality: nudging one row increases the loss
        let mut nudged = fit.basis.matrix().clone();
        nudged[[0, 0]] += 0.05;
        let nudged = BasisMatrix::from_weights(nudged).unwrap();
        assert!(ebf_loss(&nudged, a, &t) > fit.loss);
    }

    #[test]
    fn fits_are_reproducible() {
        let sites = random_sites(15, 4);
        let a = alpha(0.4);
        let t = model_theta(&BasisMatrix::from_weights(random_logits(15, 2, 8).mapv(f64::exp)).unwrap(), a);
        let cfg = EbfFitConfig { n_basis: 2, restarts: 2, max_iter: 300, seed: 9, ..Default::default() };
        let f1 = fit_ebf(&t, &sites, a, &cfg).unwrap();
        let f2 = fit_ebf(&t, &sites, a, &cfg).unwrap();
        assert_eq!(f1.basis, f2.basis);
        assert_eq!(f1.loss.to_bits(), f2.loss.to_bits());
    }

    #[test]
    fn elbow_is_monotone_and_shows_true_rank() {
        let sites = random_sites(30, 6);
        let a = alpha(0.4);
        let knots = crate::gkf::KnotSet::from_coords(vec![[1.0, 1.0], [9.0, 1.0], [1.0, 9.0], [9.0, 9.0]]);
        let truth = gkf_basis(sites.coords(), &knots, 2.0).unwrap();
        let t = model_theta(&truth, a);
        let cfg = EbfFitConfig { restarts: 2, max_iter: 2000, seed: 1, ..Default::default() };
        let curve = elbow_curve(&t, &sites, a, &[1, 2, 3, 4, 5], &cfg).unwrap();
        for w in curve.windows(2) {
            assert!(w[1].1 <= w[0].1 * (1.0 + 1e-6) + 1e-12, "{curve:?}");
        }
        let at = |l: usize| curve.iter().find(|c| c.0 == l).unwrap().1;
        assert!(at(4) <= 0.1 * at(2), "{curve:?}");
        let pairs = t.n_pairs() as f64;
        let l1: f64 = t.upper().iter().map(|v| (v - 2f64.powf(0.4)).powi(2)).sum::<f64>() / pairs;
        assert!((at(1) - l1).abs() < 1e-12);
    }

    #[test]
    fn interpolation_examples() {
        let sites = random_sites(10, 7);
        let b = BasisMatrix::from_weights(random_logits(10, 3, 1).mapv(f64::exp)).unwrap();
        let at_site = interpolate_basis(&b, &sites, &[sites.coords()[4]], 1e-3).unwrap();
        for k in 0..3 {
            assert!((at_site.row(0)[k] - b.row(4)[k]).abs() < 1e-12);
        }
        let constant = BasisMatrix::from_weights(Array2::from_shape_fn((10, 3), |(_, k)| (k + 1) as f64)).unwrap();
        let pts = [[0.0, 0.0], [3.3, 7.1], [10.0, 2.0]];
        let out = interpolate_basis(&constant, &sites, &pts, 2.0).unwrap();
        for g in 0..3 {
            for k in 0..3 {
                assert!((out.row(g)[k] - constant.row(0)[k]).abs() < 1e-12);
            }
            assert!((out.row(g).sum() - 1.0).abs() < 1e-10);
        }
        let far = interpolate_basis(&b, &sites, &[[1e6, 1e6]], 1.0).unwrap();
        assert!((far.row(0).sum() - 1.0).abs() < 1e-10);
        assert!(matches!(
            interpolate_basis(&b, &sites, &[[f64::INFINITY, 0.0]], 1.0),
            Err(Error::Numerical(_))
        ));
    }
}
