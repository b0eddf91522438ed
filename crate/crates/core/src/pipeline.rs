//! Dependence estimation shared by fitting, simulation studies and
//! cross-validation: empirical coefficients, bandwidth, smoothing and `alpha`.

use serde::{Deserialize, Serialize};

use crate::data::{FieldPanel, SiteSet};
use crate::ebf::estimate_alpha;
use crate::extremal::{bandwidth_cv_errors, default_bandwidth_grid, empirical_theta, pick_bandwidth, smooth_theta};
use crate::stable::Alpha;
use crate::{ExtCoeffMatrix, Result};

/// Which coefficients the closest-pair estimate of `alpha` reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaSource {
    /// Unsmoothed F-madogram coefficients.
    Initial,
    Smoothed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DependenceConfig {
    /// Fixed smoothing bandwidth; chosen by cross-validation when `None`.
    pub delta: Option<f64>,
    /// Candidate bandwidths; defaults to [`default_bandwidth_grid`].
    pub delta_grid: Option<Vec<f64>>,
    pub bandwidth_folds: usize,
    pub neighbor_fraction: f64,
    pub alpha_source: AlphaSource,
    pub seed: u64,
}

impl Default for DependenceConfig {
    fn default() -> Self {
        Self {
            delta: None,
            delta_grid: None,
            bandwidth_folds: 10,
            neighbor_fraction: 0.01,
            alpha_source: AlphaSource::Initial,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DependenceEstimate {
    pub theta_hat: ExtCoeffMatrix,
    pub delta: f64,
    pub theta_tilde: ExtCoeffMatrix,
    pub alpha: Alpha,
    /// `(candidate, cv error)` when the bandwidth was selected.
    pub delta_errors: Vec<(f64, f64)>,
}

pub fn estimate_dependence(panel: &FieldPanel, sites: &SiteSet, cfg: &DependenceConfig) -> Result<DependenceEstimate> {
    let theta_hat = empirical_theta(panel)?;
    let (delta, delta_errors) = match cfg.delta {
        Some(d) => (d, Vec::new()),
        None => {
            let grid = cfg.delta_grid.clone().unwrap_or_else(|| default_bandwidth_grid(sites));
            let errors = bandwidth_cv_errors(&theta_hat, sites, &grid, cfg.bandwidth_folds, cfg.seed)?;
            let d = pick_bandwidth(&grid, &errors)?;
            (d, grid.into_iter().zip(errors).collect())
        }
    };
    let theta_tilde = smooth_theta(&theta_hat, sites, delta)?;
    let source = match cfg.alpha_source {
        AlphaSource::Initial => &theta_hat,
        AlphaSource::Smoothed => &theta_tilde,
    };
    let alpha = estimate_alpha(source, sites, cfg.neighbor_fraction)?;
    Ok(DependenceEstimate {
        theta_hat,
        delta,
        theta_tilde,
        alpha,
        delta_errors,
    })
}
