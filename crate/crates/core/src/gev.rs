//! Generalized extreme value distribution.
//!
//! `F(y) = exp(-[1 + xi (y - mu) / sigma]_+^(-1/xi))`, with the Gumbel limit
//! `exp(-exp(-(y - mu) / sigma))` at `xi = 0`. Unit Fréchet is `GEV(1, 1, 1)`.

use rand::Rng;

use crate::{Error, Result};

/// Shapes this close to zero use the Gumbel formulas.
const GUMBEL_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GevParams {
    mu: f64,
    sigma: f64,
    xi: f64,
}

impl GevParams {
    pub fn new(mu: f64, sigma: f64, xi: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::validation(format!("GEV scale must be positive, got {sigma}")));
        }
        if !mu.is_finite() || !xi.is_finite() {
            return Err(Error::validation("GEV location and shape must be finite"));
        }
        Ok(Self { mu, sigma, xi })
    }

    pub fn unit_frechet() -> Self {
        Self {
            mu: 1.0,
            sigma: 1.0,
            xi: 1.0,
        }
    }

    /// Noise law `GEV(1, alpha, alpha)` of the positive-stable model.
    pub fn nugget(alpha: f64) -> Result<Self> {
        Self::new(1.0, alpha, alpha)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    fn is_gumbel(&self) -> bool {
        self.xi.abs() < GUMBEL_EPS
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let s = (y - self.mu) / self.sigma;
        if self.is_gumbel() {
            return (-(-s).exp()).exp();
        }
        let t = 1.0 + self.xi * s;
        if t <= 0.0 {
            return if self.xi > 0.0 { 0.0 } else { 1.0 };
        }
        (-t.powf(-1.0 / self.xi)).exp()
    }

    /// Log density, `-inf` outside the support.
    pub fn ln_pdf(&self, y: f64) -> f64 {
        let s = (y - self.mu) / self.sigma;
        if self.is_gumbel() {
            return -self.sigma.ln() - s - (-s).exp();
        }
        let t = 1.0 + self.xi * s;
        if t <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let ln_t = t.ln();
        -self.sigma.ln() - (1.0 / self.xi + 1.0) * ln_t - (-ln_t / self.xi).exp()
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::validation(format!("quantile level {u} outside (0, 1)")));
        }
        Ok(self.quantile_unchecked(u))
    }

    fn quantile_unchecked(&self, u: f64) -> f64 {
        let e = -u.ln();
        if self.is_gumbel() {
            self.mu - self.sigma * e.ln()
        } else {
            self.mu + self.sigma * (e.powf(-self.xi) - 1.0) / self.xi
        }
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // open interval: `random` yields [0, 1)
        let u = loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break u;
            }
        };
        self.quantile_unchecked(u)
    }
}
