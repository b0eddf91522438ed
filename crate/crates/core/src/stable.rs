//! Positive stable law `PS(alpha)` with Laplace transform `exp(-t^alpha)`.
//!
//! The density has no closed form. It is written as a one-dimensional
//! integral over `y in (0, 1)` of
//!
//! ```text
//! h(x, y) = alpha/(1-alpha) x^(-1/(1-alpha)) c(pi y) exp(-c(pi y) x^(-alpha/(1-alpha)))
//! c(psi)  = {sin(alpha psi)/sin(psi)}^(1/(1-alpha)) sin((1-alpha) psi)/sin(alpha psi)
//! ```
//!
//! and evaluated with a midpoint rule whose nodes are evenly spaced quantiles
//! of a Beta(1/2, 1/2) law, which piles nodes up near the endpoints where
//! `c` varies fastest. Conditional on `y`, `x^(-alpha/(1-alpha))` is
//! exponential with rate `c(pi y)`, which gives an exact sampler.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::Exp1;

use crate::util::log_sum_exp;
use crate::{Error, Result};

pub const DEFAULT_GRID: usize = 50;

/// Dependence parameter in the open interval `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Alpha(f64);

impl Alpha {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self(alpha))
        } else {
            Err(Error::validation(format!("alpha must lie in (0, 1), got {alpha}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Alpha {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Alpha> for f64 {
    fn from(a: Alpha) -> f64 {
        a.0
    }
}

/// `ln c(psi)`, unchecked.
fn ln_c(psi: f64, alpha: f64) -> f64 {
    let s_a = (alpha * psi).sin().ln();
    (s_a - psi.sin().ln()) / (1.0 - alpha) + ((1.0 - alpha) * psi).sin().ln() - s_a
}

pub fn ps_c(psi: f64, alpha: Alpha) -> Result<f64> {
    if !(psi > 0.0 && psi < PI) {
        return Err(Error::validation(format!("psi must lie in (0, pi), got {psi}")));
    }
    Ok(ln_c(psi, alpha.get()).exp())
}

/// Beta(1/2, 1/2) quantile function.
fn arcsine_quantile(p: f64) -> f64 {
    (0.5 * PI * p).sin().powi(2)
}

#[derive(Debug, Clone, Copy)]
struct Node {
    ln_c: f64,
    c: f64,
    ln_width: f64,
}

/// Grid-approximated `PS(alpha)` density together with its exact sampler.
#[derive(Debug, Clone)]
pub struct PositiveStable {
    alpha: Alpha,
    nodes: Vec<Node>,
    ln_scale: f64,
}

impl PositiveStable {
    pub fn new(alpha: Alpha) -> Self {
        Self::with_grid(alpha, DEFAULT_GRID).expect("default grid is nonempty")
    }

    pub fn with_grid(alpha: Alpha, n_grid: usize) -> Result<Self> {
        if n_grid == 0 {
            return Err(Error::validation("density grid needs at least one node"));
        }
        let a = alpha.get();
        let n = n_grid as f64;
        let nodes = (1..=n_grid)
            .map(|k| {
                let k = k as f64;
                let y = arcsine_quantile((k - 0.5) / n);
                let width = arcsine_quantile(k / n) - arcsine_quantile((k - 1.0) / n);
                let lc = ln_c(PI * y, a);
                Node {
                    ln_c: lc,
                    c: lc.exp(),
                    ln_width: width.ln(),
                }
            })
            .collect();
        Ok(Self {
            alpha,
            nodes,
            ln_scale: (a / (1.0 - a)).ln(),
        })
    }

    pub fn alpha(&self) -> Alpha {
        self.alpha
    }

    pub fn n_grid(&self) -> usize {
        self.nodes.len()
    }

    /// Log density; `-inf` for `x <= 0`.
    pub fn ln_density(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        let a = self.alpha.get();
        let ln_x = x.ln();
        let v = (-a / (1.0 - a) * ln_x).exp();
        let base = self.ln_scale - ln_x / (1.0 - a);
        base + log_sum_exp(self.nodes.iter().map(|nd| nd.ln_width + nd.ln_c - nd.c * v))
    }

    pub fn density(&self, x: f64) -> f64 {
        self.ln_density(x).exp()
    }

    /// `A = (c(pi U) / W)^((1-alpha)/alpha)` with `U` uniform and `W` standard
    /// exponential.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        ps_sample(self.alpha, rng)
    }
}

/// Density of `PS(alpha)` at `x` from an `n_grid`-node midpoint rule.
pub fn ps_density(x: f64, alpha: Alpha, n_grid: usize) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::validation(format!("density argument must be positive, got {x}")));
    }
    Ok(PositiveStable::with_grid(alpha, n_grid)?.density(x))
}

pub fn ps_sample<R: Rng + ?Sized>(alpha: Alpha, rng: &mut R) -> f64 {
    ps_sample_ln(alpha, rng).exp()
}

/// Logarithm of a `PS(alpha)` draw; stays finite where the draw itself would
/// overflow for small `alpha`.
pub fn ps_sample_ln<R: Rng + ?Sized>(alpha: Alpha, rng: &mut R) -> f64 {
    let a = alpha.get();
    let u: f64 = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
    let w: f64 = rng.sample(Exp1);
    (1.0 - a) / a * (ln_c(PI * u, a) - w.max(f64::MIN_POSITIVE).ln())
}
