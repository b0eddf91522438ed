//! Low-rank max-stable modeling of spatial extremes with empirical basis
//! functions.
//!
//! The pipeline runs in three stages. Pairwise extremal coefficients are
//! estimated with the F-madogram ([`extremal::empirical_theta`]) and smoothed
//! with a Gaussian kernel ([`extremal::smooth_theta`]). The nugget parameter
//! `alpha` is read off the closest pairs ([`ebf::estimate_alpha`]) and a
//! nonnegative basis with unit row sums is fitted by matching the model
//! coefficients to the smoothed ones ([`ebf::fit_ebf`]). The fitted basis then
//! drives the positive-stable latent variable model, which can be simulated
//! ([`simulate`]) or sampled with Metropolis-Hastings ([`mcmc`]) and scored by
//! cross-validation ([`cv`]).

pub mod basis;
pub mod cv;
pub mod data;
pub mod ebf;
pub mod error;
pub mod extremal;
pub mod gev;
pub mod gkf;
pub mod mcmc;
pub mod pipeline;
pub mod simulate;
pub mod stable;

mod util;

pub use util::{fmt_f64, mean_sd, median, stream_rng};
pub use basis::BasisMatrix;
pub use data::{FieldPanel, FoldAssignment, SiteSet};
pub use error::{Error, Result};
pub use extremal::ExtCoeffMatrix;
pub use gev::GevParams;
pub use stable::Alpha;
