//! K-fold cross-validation of the latent variable model with either fitted
//! (EBF) or Gaussian kernel (GKF) basis functions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisMatrix;
use crate::data::{kfold_split, rank_transform_frechet, FieldPanel, FoldAssignment, SiteSet};
use crate::ebf::{fit_ebf, EbfFitConfig};
use crate::gkf::{default_rho_grid, estimate_rho, gkf_basis, spacefilling_knots};
use crate::mcmc::{mad_score, posterior_predict, predictive_median, run_mcmc, McmcConfig};
use crate::pipeline::{estimate_dependence, DependenceConfig, DependenceEstimate};
use crate::util::stream_rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisMethod {
    Ebf,
    Gkf,
}

impl BasisMethod {
    pub fn name(self) -> &'static str {
        match self {
            BasisMethod::Ebf => "ebf",
            BasisMethod::Gkf => "gkf",
        }
    }
}

impl std::str::FromStr for BasisMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ebf" => Ok(BasisMethod::Ebf),
            "gkf" => Ok(BasisMethod::Gkf),
            _ => Err(Error::validation(format!("unknown method {s:?}, expected ebf or gkf"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub k: usize,
    pub dependence: DependenceConfig,
    pub fit: EbfFitConfig,
    pub mcmc: McmcConfig,
    /// Candidate kernel bandwidths for the GKF basis; defaults to
    /// [`default_rho_grid`].
    pub rho_grid: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 5,
            dependence: DependenceConfig::default(),
            fit: EbfFitConfig::default(),
            mcmc: McmcConfig::default(),
            rho_grid: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub method: BasisMethod,
    #[serde(rename = "L")]
    pub l: usize,
    pub fold_scores: Vec<f64>,
    pub mean_mad: f64,
}

/// Basis of `l` functions for `method` from one fold's dependence estimate.
pub fn fold_basis(
    method: BasisMethod,
    l: usize,
    dep: &DependenceEstimate,
    sites: &SiteSet,
    cfg: &CvConfig,
    seed: u64,
) -> Result<BasisMatrix> {
    match method {
        BasisMethod::Ebf => {
            let fit_cfg = EbfFitConfig {
                n_basis: l,
                seed,
                ..cfg.fit.clone()
            };
            Ok(fit_ebf(&dep.theta_tilde, sites, dep.alpha, &fit_cfg)?.basis)
        }
        BasisMethod::Gkf => {
            let knots = spacefilling_knots(sites, l, seed)?;
            let grid = cfg.rho_grid.clone().unwrap_or_else(|| default_rho_grid(sites));
            let rho = estimate_rho(&dep.theta_tilde, sites, &knots, dep.alpha, &grid)?;
            gkf_basis(sites.coords(), &knots, rho)
        }
    }
}

/// MAD of predictive medians at the held-out cells of `fold`, with the model
/// trained on the remaining cells.
fn score_fold(
    panel: &FieldPanel,
    basis: &BasisMatrix,
    dep: &DependenceEstimate,
    folds: &FoldAssignment,
    fold: usize,
    cfg: &CvConfig,
) -> Result<f64> {
    let training = panel.with_mask(folds.training_mask(fold))?;
    let seed = cfg.seed.wrapping_add(fold as u64);
    let mcmc_cfg = McmcConfig {
        seed,
        ..cfg.mcmc.clone()
    };
    let posterior = run_mcmc(&training, basis, dep.alpha, &mcmc_cfg)?;
    let cells = folds.test_cells(fold);
    let first_stream = panel.n_times() as u64;
    let (pred, obs): (Vec<f64>, Vec<f64>) = cells
        .iter()
        .enumerate()
        .map(|(c, &(i, t))| {
            let mut rng = stream_rng(seed, first_stream + c as u64);
            let draws = posterior_predict(posterior.column_draws(t), basis.row(i), dep.alpha, &mut rng);
            let z = panel.get(i, t).expect("test cells are observed");
            (predictive_median(&draws), z)
        })
        .unzip();
    mad_score(&pred, &obs)
}

/// Scores every `(method, L)` combination with the given folds. The panel is
/// transformed to unit Frechet margins once; each fold's dependence estimate
/// (and so `alpha`) is shared by all methods and basis sizes.
pub fn crossvalidate_with_folds(
    panel: &FieldPanel,
    sites: &SiteSet,
    folds: &FoldAssignment,
    methods: &[BasisMethod],
    ls: &[usize],
    cfg: &CvConfig,
) -> Result<Vec<CvReport>> {
    if methods.is_empty() || ls.is_empty() {
        return Err(Error::validation("need at least one method and one basis size"));
    }
    if let Some(l) = ls.iter().find(|&&l| l == 0) {
        return Err(Error::validation(format!("invalid basis size {l}")));
    }
    if sites.len() != panel.n_sites() {
        return Err(Error::validation("site count does not match panel rows"));
    }
    let frechet = rank_transform_frechet(panel)?;
    let k = folds.k();
    let combos: Vec<(BasisMethod, usize)> = methods.iter().flat_map(|&m| ls.iter().map(move |&l| (m, l))).collect();
    let per_fold: Vec<Vec<f64>> = (1..=k)
        .into_par_iter()
        .map(|fold| {
            let training = frechet.with_mask(folds.training_mask(fold))?;
            let dep_cfg = DependenceConfig {
                seed: cfg.seed.wrapping_add(fold as u64),
                ..cfg.dependence.clone()
            };
            let dep = estimate_dependence(&training, sites, &dep_cfg)?;
            combos
                .par_iter()
                .map(|&(method, l)| {
                    let basis = fold_basis(method, l, &dep, sites, cfg, cfg.seed.wrapping_add(fold as u64))?;
                    score_fold(&frechet, &basis, &dep, folds, fold, cfg)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(combos
        .iter()
        .enumerate()
        .map(|(c, &(method, l))| {
            let fold_scores: Vec<f64> = per_fold.iter().map(|s| s[c]).collect();
            let mean_mad = fold_scores.iter().sum::<f64>() / k as f64;
            CvReport {
                method,
                l,
                fold_scores,
                mean_mad,
            }
        })
        .collect())
}

/// [`crossvalidate_with_folds`] on a fresh `cfg.k`-fold split of the observed
/// cells.
pub fn crossvalidate(
    panel: &FieldPanel,
    sites: &SiteSet,
    methods: &[BasisMethod],
    ls: &[usize],
    cfg: &CvConfig,
) -> Result<Vec<CvReport>> {
    if cfg.k < 2 {
        return Err(Error::validation("cross-validation needs k >= 2"));
    }
    let folds = kfold_split(panel, cfg.k, cfg.seed)?;
    crossvalidate_with_folds(panel, sites, &folds, methods, ls, cfg)
}
