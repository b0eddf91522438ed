//! Metropolis-Hastings sampling of the latent positive-stable variables with
//! the basis and `alpha` held fixed, and posterior prediction.
//!
//! Given `A`, observations are independent with
//! `Z_t(s_i) ~ GEV(theta, alpha theta, alpha)`, `theta = S^alpha` and
//! `S = sum_l B_il^(1/alpha) A_lt`, so each time column is an independent
//! posterior and is sampled by its own chain.

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisMatrix;
use crate::data::FieldPanel;
use crate::gev::GevParams;
use crate::stable::{ps_sample, Alpha, PositiveStable, DEFAULT_GRID};
use crate::util::{fmt_f64, log_sum_exp, median, stream_rng};
use crate::{Error, Result};

/// `(sum_l B_l^(1/alpha) A_l)^alpha`, evaluated in log space.
pub fn theta_at(b_row: ArrayView1<'_, f64>, a_col: ArrayView1<'_, f64>, alpha: Alpha) -> f64 {
    let a = alpha.get();
    let terms = b_row
        .iter()
        .zip(a_col.iter())
        .filter(|(&b, &x)| b > 0.0 && x > 0.0)
        .map(|(&b, &x)| b.ln() / a + x.ln());
    (a * log_sum_exp(terms)).exp()
}

/// Log density of `GEV(theta, alpha theta, alpha)` at `z`.
pub fn conditional_loglik(z: f64, theta: f64, alpha: Alpha) -> f64 {
    if !(z > 0.0) {
        return f64::NEG_INFINITY;
    }
    let a = alpha.get();
    let ln_s = theta.ln() / a;
    -a.ln() - (1.0 / a + 1.0) * z.ln() + ln_s - (ln_s - z.ln() / a).exp()
}

/// Latent variables `A`, one row per basis function and one column per time.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub a: Array2<f64>,
    pub alpha: Alpha,
}

impl LatentState {
    pub fn ones(n_basis: usize, n_t: usize, alpha: Alpha) -> Self {
        Self {
            a: Array2::ones((n_basis, n_t)),
            alpha,
        }
    }

    /// Independent `PS(alpha)` draws.
    pub fn from_prior<R: Rng + ?Sized>(n_basis: usize, n_t: usize, alpha: Alpha, rng: &mut R) -> Self {
        Self {
            a: Array2::from_shape_simple_fn((n_basis, n_t), || ps_sample(alpha, rng)),
            alpha,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    /// Total sweeps including burn-in.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Initial standard deviation of the log-scale random walk.
    pub initial_step: f64,
    pub adapt_target: f64,
    pub seed: u64,
    /// Nodes of the prior density approximation.
    pub n_grid: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 2000,
            thin: 10,
            initial_step: 1.0,
            adapt_target: 0.4,
            seed: 0,
            n_grid: DEFAULT_GRID,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::validation("burn-in must be shorter than the run"));
        }
        if self.thin == 0 {
            return Err(Error::validation("thinning interval must be at least 1"));
        }
        if !(self.initial_step > 0.0) || !self.initial_step.is_finite() {
            return Err(Error::validation("initial step must be positive"));
        }
        if !(self.adapt_target > 0.0 && self.adapt_target < 1.0) {
            return Err(Error::validation("target acceptance must lie in (0, 1)"));
        }
        if self.n_grid == 0 {
            return Err(Error::validation("density grid needs at least one node"));
        }
        Ok(())
    }

    /// Number of retained draws.
    pub fn n_kept(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Observations of one time column: `P_i = B_i^(1/alpha)` and
/// `w_i = z_i^(-1/alpha)` for each observed site.
struct Column {
    p: Vec<f64>,
    w: Vec<f64>,
    n_obs: usize,
}

/// Posterior of the latent variables for a fixed panel, basis and `alpha`.
pub struct McmcModel {
    columns: Vec<Column>,
    n_basis: usize,
    alpha: Alpha,
    prior: PositiveStable,
    /// Sum of `-ln alpha - (1/alpha + 1) ln z` over observed cells.
    ll_const: f64,
}

impl McmcModel {
    pub fn new(panel: &FieldPanel, basis: &BasisMatrix, alpha: Alpha, n_grid: usize) -> Result<Self> {
        if panel.n_sites() != basis.n_rows() {
            return Err(Error::validation(format!(
                "panel has {} sites but the basis has {} rows",
                panel.n_sites(),
                basis.n_rows()
            )));
        }
        let a = alpha.get();
        let l = basis.n_basis();
        let p = basis.matrix().mapv(|b| b.powf(1.0 / a));
        let mut ll_const = 0.0;
        let mut columns = Vec::with_capacity(panel.n_times());
        for t in 0..panel.n_times() {
            let mut col = Column {
                p: Vec::new(),
                w: Vec::new(),
                n_obs: 0,
            };
            for i in 0..panel.n_sites() {
                if let Some(z) = panel.get(i, t) {
                    if !(z > 0.0) {
                        return Err(Error::validation(format!(
                            "observation at site {:?}, time {} is not positive",
                            panel.site_ids()[i],
                            t + 1
                        )));
                    }
                    col.p.extend(p.row(i).iter());
                    col.w.push((-z.ln() / a).exp());
                    col.n_obs += 1;
                    ll_const += -a.ln() - (1.0 / a + 1.0) * z.ln();
                }
            }
            debug_assert_eq!(col.p.len(), col.n_obs * l);
            columns.push(col);
        }
        Ok(Self {
            columns,
            n_basis: l,
            alpha,
            prior: PositiveStable::with_grid(alpha, n_grid)?,
            ll_const,
        })
    }

    pub fn n_times(&self) -> usize {
        self.columns.len()
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn alpha(&self) -> Alpha {
        self.alpha
    }

    pub fn is_observed(&self, t: usize) -> bool {
        self.columns[t].n_obs > 0
    }

    /// Column log-likelihood without the terms that do not depend on `A`.
    fn column_kernel(&self, t: usize, a_col: &[f64]) -> f64 {
        let col = &self.columns[t];
        let l = self.n_basis;
        let mut ll = 0.0;
        for i in 0..col.n_obs {
            let p = &col.p[i * l..(i + 1) * l];
            let s: f64 = p.iter().zip(a_col).map(|(p, a)| p * a).sum();
            ll += s.ln() - s * col.w[i];
        }
        ll
    }

    /// Log-likelihood of every observed cell given `A`.
    pub fn log_likelihood(&self, state: &LatentState) -> f64 {
        self.ll_const
            + (0..self.n_times())
                .map(|t| self.column_kernel(t, &state.a.column(t).to_vec()))
                .sum::<f64>()
    }

    /// Log posterior density of `A` up to a constant.
    pub fn log_posterior(&self, state: &LatentState) -> f64 {
        self.log_likelihood(state) + state.a.iter().map(|&x| self.prior.ln_density(x)).sum::<f64>()
    }

    /// Log acceptance ratio for replacing `A_lt` in `a_col` by `proposed`
    /// under a log-scale random walk, Jacobian included.
    pub fn log_accept_ratio(&self, t: usize, a_col: &[f64], l: usize, proposed: f64) -> f64 {
        let mut prop = a_col.to_vec();
        prop[l] = proposed;
        let current = a_col[l];
        self.column_kernel(t, &prop) - self.column_kernel(t, a_col) + self.prior.ln_density(proposed)
            - self.prior.ln_density(current)
            + proposed.ln()
            - current.ln()
    }

    /// One systematic scan over column `t`; returns acceptance flags.
    fn scan_column<R: Rng + ?Sized>(&self, t: usize, a_col: &mut [f64], cache: &mut ColumnCache, steps: &[f64], rng: &mut R, accepted: &mut [bool]) {
        for l in 0..self.n_basis {
            let z: f64 = rng.sample(StandardNormal);
            let current = a_col[l];
            let proposed = current * (steps[l] * z).exp();
            let mut ok = false;
            if proposed > 0.0 && proposed.is_finite() {
                a_col[l] = proposed;
                let ll = self.column_kernel(t, a_col);
                let lp = self.prior.ln_density(proposed);
                let log_ratio = ll - cache.ll + lp - cache.lp[l] + proposed.ln() - current.ln();
                let u: f64 = rng.random();
                if log_ratio >= 0.0 || u.ln() < log_ratio {
                    cache.ll = ll;
                    cache.lp[l] = lp;
                    ok = true;
                } else {
                    a_col[l] = current;
                }
            }
            accepted[l] = ok;
        }
    }

    fn cache(&self, t: usize, a_col: &[f64]) -> ColumnCache {
        ColumnCache {
            ll: self.column_kernel(t, a_col),
            lp: a_col.iter().map(|&x| self.prior.ln_density(x)).collect(),
        }
    }

    /// One Metropolis-Hastings sweep over every `(l, t)`, columns in order,
    /// with log-scale steps `steps[[l, t]]`. Returns acceptance flags.
    pub fn sweep<R: Rng + ?Sized>(&self, state: &mut LatentState, steps: &Array2<f64>, rng: &mut R) -> Array2<bool> {
        let l = self.n_basis;
        let mut accepted = Array2::from_elem((l, self.n_times()), false);
        let mut flags = vec![false; l];
        for t in 0..self.n_times() {
            let mut a_col = state.a.column(t).to_vec();
            let mut cache = self.cache(t, &a_col);
            let step_col = steps.column(t).to_vec();
            self.scan_column(t, &mut a_col, &mut cache, &step_col, rng, &mut flags);
            state.a.column_mut(t).assign(&ndarray::ArrayView1::from(&a_col));
            accepted.column_mut(t).assign(&ndarray::ArrayView1::from(&flags));
        }
        accepted
    }

    /// Full adaptive chain for column `t` with its own random stream.
    fn run_column(&self, t: usize, cfg: &McmcConfig) -> ColumnRun {
        let l = self.n_basis;
        let mut rng = stream_rng(cfg.seed, t as u64);
        let n_kept = cfg.n_kept();
        let mut draws = Vec::with_capacity(n_kept * l);
        if !self.is_observed(t) {
            for _ in 0..n_kept * l {
                draws.push(ps_sample(self.alpha, &mut rng));
            }
            return ColumnRun {
                draws,
                accept_rate: vec![1.0; l],
                steps: vec![cfg.initial_step; l],
            };
        }
        let mut a_col = vec![1.0; l];
        let mut cache = self.cache(t, &a_col);
        let mut ln_steps = vec![cfg.initial_step.ln(); l];
        let mut steps = vec![cfg.initial_step; l];
        let mut flags = vec![false; l];
        let mut accepts = vec![0usize; l];
        for it in 0..cfg.iterations {
            self.scan_column(t, &mut a_col, &mut cache, &steps, &mut rng, &mut flags);
            if it < cfg.burn_in {
                let gain = ((it + 1) as f64).powf(-0.6);
                for k in 0..l {
                    let hit = if flags[k] { 1.0 } else { 0.0 };
                    ln_steps[k] = (ln_steps[k] + gain * (hit - cfg.adapt_target)).clamp(-10.0, 5.0);
                    steps[k] = ln_steps[k].exp();
                }
            } else {
                for k in 0..l {
                    accepts[k] += flags[k] as usize;
                }
                if (it + 1 - cfg.burn_in) % cfg.thin == 0 {
                    draws.extend_from_slice(&a_col);
                }
            }
        }
        let post = (cfg.iterations - cfg.burn_in) as f64;
        ColumnRun {
            draws,
            accept_rate: accepts.iter().map(|&c| c as f64 / post).collect(),
            steps,
        }
    }
}

struct ColumnCache {
    ll: f64,
    lp: Vec<f64>,
}

struct ColumnRun {
    /// Retained draws, draw-major.
    draws: Vec<f64>,
    accept_rate: Vec<f64>,
    steps: Vec<f64>,
}

/// One sweep of [`McmcModel::sweep`] on a freshly built model.
pub fn mh_sweep<R: Rng + ?Sized>(
    state: &mut LatentState,
    panel: &FieldPanel,
    basis: &BasisMatrix,
    steps: &Array2<f64>,
    n_grid: usize,
    rng: &mut R,
) -> Result<Array2<bool>> {
    let model = McmcModel::new(panel, basis, state.alpha, n_grid)?;
    if steps.dim() != state.a.dim() || state.a.dim() != (model.n_basis(), model.n_times()) {
        return Err(Error::validation("state, steps and panel dimensions disagree"));
    }
    Ok(model.sweep(state, steps, rng))
}

/// Retained posterior draws of `A`.
#[derive(Debug, Clone)]
pub struct Posterior {
    /// 1-based sweep number of each retained draw.
    pub iterations: Vec<usize>,
    /// One `L x n_t` matrix per retained draw.
    pub draws: Vec<Array2<f64>>,
    /// Post-burn-in acceptance rate per variable.
    pub acceptance: Array2<f64>,
    /// Adapted random-walk steps.
    pub steps: Array2<f64>,
    pub alpha: Alpha,
}

impl Posterior {
    pub fn column_draws(&self, t: usize) -> impl Iterator<Item = ArrayView1<'_, f64>> + '_ {
        self.draws.iter().map(move |d| d.column(t))
    }

    pub fn mean(&self) -> Array2<f64> {
        let mut m = Array2::zeros(self.draws[0].dim());
        for d in &self.draws {
            m += d;
        }
        m / self.draws.len() as f64
    }
}

/// Runs one adaptive chain per time column, each on its own random stream,
/// starting from `A = 1`. Step sizes adapt toward `cfg.adapt_target` during
/// burn-in and are then frozen. Columns without observations are drawn
/// directly from the prior.
pub fn run_mcmc(panel: &FieldPanel, basis: &BasisMatrix, alpha: Alpha, cfg: &McmcConfig) -> Result<Posterior> {
    cfg.validate()?;
    let model = McmcModel::new(panel, basis, alpha, cfg.n_grid)?;
    let runs: Vec<ColumnRun> = (0..model.n_times())
        .into_par_iter()
        .map(|t| model.run_column(t, cfg))
        .collect();
    let (l, n_t) = (model.n_basis(), model.n_times());
    let n_kept = cfg.n_kept();
    let draws = (0..n_kept)
        .map(|d| Array2::from_shape_fn((l, n_t), |(k, t)| runs[t].draws[d * l + k]))
        .collect();
    Ok(Posterior {
        iterations: (1..=n_kept).map(|d| cfg.burn_in + d * cfg.thin).collect(),
        draws,
        acceptance: Array2::from_shape_fn((l, n_t), |(k, t)| runs[t].accept_rate[k]),
        steps: Array2::from_shape_fn((l, n_t), |(k, t)| runs[t].steps[k]),
        alpha,
    })
}

/// One predictive draw `theta_at(b_row, A) * eps`, `eps ~ GEV(1, alpha,
/// alpha)`, per posterior draw of the column.
pub fn posterior_predict<'a, R: Rng + ?Sized>(
    a_draws: impl Iterator<Item = ArrayView1<'a, f64>>,
    b_row: ArrayView1<'_, f64>,
    alpha: Alpha,
    rng: &mut R,
) -> Vec<f64> {
    let eps = GevParams::nugget(alpha.get()).expect("alpha in (0, 1)");
    a_draws.map(|a| theta_at(b_row, a, alpha) * eps.sample(rng)).collect()
}

pub fn predictive_median(draws: &[f64]) -> f64 {
    median(draws)
}

/// Mean absolute deviation between predictions and observations.
pub fn mad_score(predicted: &[f64], observed: &[f64]) -> Result<f64> {
    if predicted.len() != observed.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} observations",
            predicted.len(),
            observed.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::validation("nothing to score"));
    }
    Ok(predicted.iter().zip(observed).map(|(p, o)| (p - o).abs()).sum::<f64>() / predicted.len() as f64)
}

/// Writes `iter,l,t,A` with 1-based `l` and `t`.
pub fn save_posterior(path: impl AsRef<Path>, posterior: &Posterior) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "l", "t", "A"])?;
    for (it, d) in posterior.iterations.iter().zip(&posterior.draws) {
        for ((k, t), v) in d.indexed_iter() {
            w.write_record([it.to_string(), (k + 1).to_string(), (t + 1).to_string(), fmt_f64(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}
