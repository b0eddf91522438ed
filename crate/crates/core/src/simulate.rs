//! Forward simulation of the positive-stable and max-linear models, and the
//! simulation-study harness.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisMatrix;
use crate::data::{FieldPanel, SiteSet};
use crate::ebf::{fit_ebf, EbfFitConfig};
use crate::extremal::model_theta;
use crate::gkf::{gkf_basis, KnotSet};
use crate::pipeline::{estimate_dependence, DependenceConfig};
use crate::stable::{ps_sample_ln, Alpha};
use crate::util::{fmt_f64, log_sum_exp, mean_sd, stream_rng};
use crate::{Error, Result};

fn default_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("s{i}")).collect()
}

/// `n_t` replicates of `Z_t(s_i) = theta_t(s_i) eps_it` with
/// `theta_t(s_i) = (sum_l B_il^(1/alpha) A_lt)^alpha`, `A_lt ~ PS(alpha)` and
/// `eps_it ~ GEV(1, alpha, alpha)`, all independent. Rows are labelled
/// `s1..sn`.
pub fn simulate_rs<R: Rng + ?Sized>(basis: &BasisMatrix, alpha: Alpha, n_t: usize, rng: &mut R) -> Result<FieldPanel> {
    let (n, l) = (basis.n_rows(), basis.n_basis());
    let a = alpha.get();
    let ln_p = basis.matrix().mapv(|b| if b > 0.0 { b.ln() / a } else { f64::NEG_INFINITY });
    let mut z = Array2::zeros((n, n_t));
    let mut ln_a = vec![0.0; l];
    for t in 0..n_t {
        for v in ln_a.iter_mut() {
            *v = ps_sample_ln(alpha, rng);
        }
        for i in 0..n {
            let ln_theta = a * log_sum_exp((0..l).map(|k| ln_p[[i, k]] + ln_a[k]));
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            // GEV(1, a, a) quantile is (-ln u)^(-a)
            z[[i, t]] = (ln_theta - a * (-u.ln()).ln()).exp();
        }
    }
    FieldPanel::fully_observed(default_ids(n), z)
}

/// `n_t` replicates of `Z_t(s_i) = max_l B_il Z_lt` with unit Frechet `Z_lt`.
pub fn simulate_maxlinear<R: Rng + ?Sized>(basis: &BasisMatrix, n_t: usize, rng: &mut R) -> Result<FieldPanel> {
    let (n, l) = (basis.n_rows(), basis.n_basis());
    let b = basis.matrix();
    let mut z = Array2::zeros((n, n_t));
    let mut factors = vec![0.0; l];
    for t in 0..n_t {
        for f in factors.iter_mut() {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            *f = -1.0 / u.ln();
        }
        for i in 0..n {
            z[[i, t]] = (0..l).map(|k| b[[i, k]] * factors[k]).fold(0.0, f64::max);
        }
    }
    FieldPanel::fully_observed(default_ids(n), z)
}

/// One row of a simulation study: a data-generating design and how many
/// datasets to draw from it. Missing JSON fields take the defaults of
/// [`SimScenario::default`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimScenario {
    #[serde(rename = "L_true", alias = "l_true")]
    pub l_true: usize,
    pub alpha: Alpha,
    pub n_t: usize,
    pub n_s: usize,
    pub rho: f64,
    /// `[x_min, x_max, y_min, y_max]`.
    pub domain: [f64; 4],
    pub n_datasets: usize,
    pub seed: u64,
}

/// Nine kernel basis functions, `alpha = 0.3`, 50 replicates at 100 sites.
impl Default for SimScenario {
    fn default() -> Self {
        Self::new(9, Alpha::new(0.3).expect("in range"), 50)
    }
}

impl SimScenario {
    pub fn new(l_true: usize, alpha: Alpha, n_t: usize) -> Self {
        Self {
            l_true,
            alpha,
            n_t,
            n_s: 100,
            rho: 2.5,
            domain: [1.0, 10.0, 1.0, 10.0],
            n_datasets: 20,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let side = self.grid_side();
        if self.l_true == 0 || side * side != self.l_true {
            return Err(Error::validation(format!(
                "number of true basis functions must be a perfect square, got {}",
                self.l_true
            )));
        }
        if self.n_datasets == 0 {
            return Err(Error::validation("need at least one dataset"));
        }
        if self.n_s < 2 || self.n_t < 2 {
            return Err(Error::validation("need at least 2 sites and 2 replicates"));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::validation("kernel bandwidth must be positive"));
        }
        let [x0, x1, y0, y1] = self.domain;
        if !(x0 < x1 && y0 < y1) || self.domain.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("domain bounds must be finite with min < max"));
        }
        Ok(())
    }

    fn grid_side(&self) -> usize {
        (self.l_true as f64).sqrt().round() as usize
    }

    /// Knots on a regular grid whose outer rows and columns lie on the
    /// domain boundary (a single knot sits at the center).
    pub fn knots(&self) -> KnotSet {
        let side = self.grid_side();
        let [x0, x1, y0, y1] = self.domain;
        let pos = |lo: f64, hi: f64, k: usize| {
            if side == 1 {
                0.5 * (lo + hi)
            } else {
                lo + (hi - lo) * k as f64 / (side - 1) as f64
            }
        };
        let mut coords = Vec::with_capacity(self.l_true);
        for gy in 0..side {
            for gx in 0..side {
                coords.push([pos(x0, x1, gx), pos(y0, y1, gy)]);
            }
        }
        KnotSet::from_coords(coords)
    }

    /// Sites, true basis and panel for dataset `index`.
    pub fn generate(&self, index: usize) -> Result<SimulatedData> {
        self.validate()?;
        let mut rng = stream_rng(self.seed, index as u64);
        let [x0, x1, y0, y1] = self.domain;
        let coords = (0..self.n_s)
            .map(|_| [rng.random_range(x0..x1), rng.random_range(y0..y1)])
            .collect();
        let sites = SiteSet::from_coords(coords)?;
        let basis = gkf_basis(sites.coords(), &self.knots(), self.rho)?;
        let panel = simulate_rs(&basis, self.alpha, self.n_t, &mut rng)?;
        let fit_seed = rng.random();
        Ok(SimulatedData {
            sites,
            basis,
            panel,
            fit_seed,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub sites: SiteSet,
    pub basis: BasisMatrix,
    pub panel: FieldPanel,
    /// Seed for the randomized steps of fitting this dataset.
    pub fit_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyOptions {
    pub fit_ls: Vec<usize>,
    pub dependence: DependenceConfig,
    pub fit: EbfFitConfig,
}

impl StudyOptions {
    /// Two restarts and at most 1000 descent steps per fit.
    pub fn new(fit_ls: Vec<usize>) -> Self {
        Self {
            fit_ls,
            dependence: DependenceConfig::default(),
            fit: EbfFitConfig {
                restarts: 2,
                max_iter: 1000,
                ..EbfFitConfig::default()
            },
        }
    }
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self::new(Vec::new())
    }
}

/// Per-dataset outcome. MSE values are multiplied by 100 and measured
/// against the true model coefficients.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetRecord {
    pub dataset: usize,
    pub alpha_hat: f64,
    pub delta: f64,
    pub mse_initial: f64,
    pub mse_smoothed: f64,
    /// `(L, mse)` per fitted basis size.
    pub mse_ebf: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub l_true: usize,
    pub alpha: f64,
    pub n_t: usize,
    pub n_s: usize,
    pub estimator: String,
    pub mean: f64,
    pub sd: f64,
    pub n_datasets: usize,
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub records: Vec<DatasetRecord>,
    pub summary: Vec<SummaryRow>,
}

impl StudyResult {
    pub fn ebf_mse(&self, l: usize) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| r.mse_ebf.iter().find(|(k, _)| *k == l).map_or(f64::NAN, |(_, m)| *m))
            .collect()
    }

    pub fn row(&self, estimator: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.estimator == estimator)
    }
}

/// Fits one simulated dataset.
pub fn study_dataset(scenario: &SimScenario, index: usize, opts: &StudyOptions) -> Result<DatasetRecord> {
    let data = scenario.generate(index)?;
    let truth = model_theta(&data.basis, scenario.alpha);
    let dep_cfg = DependenceConfig {
        seed: data.fit_seed,
        ..opts.dependence.clone()
    };
    let dep = estimate_dependence(&data.panel, &data.sites, &dep_cfg)?;
    let mut mse_ebf = Vec::with_capacity(opts.fit_ls.len());
    for &l in &opts.fit_ls {
        let cfg = EbfFitConfig {
            n_basis: l,
            seed: data.fit_seed,
            ..opts.fit.clone()
        };
        let fit = fit_ebf(&dep.theta_tilde, &data.sites, dep.alpha, &cfg)?;
        mse_ebf.push((l, 100.0 * model_theta(&fit.basis, dep.alpha).mse(&truth)));
    }
    Ok(DatasetRecord {
        dataset: index,
        alpha_hat: dep.alpha.get(),
        delta: dep.delta,
        mse_initial: 100.0 * dep.theta_hat.mse(&truth),
        mse_smoothed: 100.0 * dep.theta_tilde.mse(&truth),
        mse_ebf,
    })
}

/// Runs every dataset of the scenario (in parallel) and summarizes each
/// estimator by its mean and standard deviation across datasets.
pub fn run_simulation_study(scenario: &SimScenario, opts: &StudyOptions) -> Result<StudyResult> {
    scenario.validate()?;
    if opts.fit_ls.is_empty() {
        return Err(Error::validation("no basis sizes to fit"));
    }
    let records: Vec<DatasetRecord> = (0..scenario.n_datasets)
        .into_par_iter()
        .map(|d| study_dataset(scenario, d, opts))
        .collect::<Result<_>>()?;
    let row = |name: String, values: Vec<f64>| {
        let (mean, sd) = mean_sd(&values);
        SummaryRow {
            l_true: scenario.l_true,
            alpha: scenario.alpha.get(),
            n_t: scenario.n_t,
            n_s: scenario.n_s,
            estimator: name,
            mean,
            sd,
            n_datasets: values.len(),
        }
    };
    let mut summary = vec![
        row("alpha_hat".into(), records.iter().map(|r| r.alpha_hat).collect()),
        row("initial".into(), records.iter().map(|r| r.mse_initial).collect()),
        row("smoothed".into(), records.iter().map(|r| r.mse_smoothed).collect()),
    ];
    for (k, &l) in opts.fit_ls.iter().enumerate() {
        summary.push(row(format!("ebf_L{l}"), records.iter().map(|r| r.mse_ebf[k].1).collect()));
    }
    Ok(StudyResult { records, summary })
}

/// Writes `l_true,alpha,n_t,n_s,estimator,mean,sd,n_datasets`.
pub fn save_summary(path: impl AsRef<Path>, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["L_true", "alpha", "n_t", "n_s", "estimator", "mean", "sd", "n_datasets"])?;
    for r in rows {
        w.write_record([
            r.l_true.to_string(),
            fmt_f64(r.alpha),
            r.n_t.to_string(),
            r.n_s.to_string(),
            r.estimator.clone(),
            fmt_f64(r.mean),
            fmt_f64(r.sd),
            r.n_datasets.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
