//! Gaussian kernel basis functions on space-filling knots, the parametric
//! baseline for the empirical basis.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::basis::BasisMatrix;
use crate::data::SiteSet;
use crate::ebf::ebf_loss;
use crate::extremal::{geometric_grid, ExtCoeffMatrix};
use crate::stable::Alpha;
use crate::util::{dist, fmt_f64, stream_rng};
use crate::{Error, Result};

/// Knot locations, each one of the observation sites.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotSet {
    site_index: Vec<usize>,
    coords: Vec<[f64; 2]>,
}

impl KnotSet {
    pub fn from_coords(coords: Vec<[f64; 2]>) -> Self {
        Self {
            site_index: Vec::new(),
            coords,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    /// Indices of the sites chosen as knots, in selection order (empty for
    /// knots built from raw coordinates).
    pub fn site_indices(&self) -> &[usize] {
        &self.site_index
    }
}

/// Greedy farthest-point design over the site locations. The first knot is
/// the site nearest the centroid; each further knot maximizes its distance to
/// the closest knot already chosen. Exact ties are broken by a seeded random
/// priority over sites.
pub fn spacefilling_knots(sites: &SiteSet, l: usize, seed: u64) -> Result<KnotSet> {
    let n = sites.len();
    if l == 0 || l > n {
        return Err(Error::validation(format!("cannot choose {l} knots among {n} sites")));
    }
    let mut priority: Vec<usize> = (0..n).collect();
    priority.shuffle(&mut stream_rng(seed, 0));
    let mut rank = vec![0; n];
    for (r, &i) in priority.iter().enumerate() {
        rank[i] = r;
    }
    let c = sites.coords();
    let centroid = [
        c.iter().map(|p| p[0]).sum::<f64>() / n as f64,
        c.iter().map(|p| p[1]).sum::<f64>() / n as f64,
    ];
    // pick the maximizer of `score`, ties to the lowest priority rank
    let argmax = |score: &dyn Fn(usize) -> f64, skip: &[bool]| -> usize {
        let mut best: Option<(f64, usize)> = None;
        for i in (0..n).filter(|&i| !skip[i]) {
            let s = score(i);
            best = match best {
                Some((bs, bi)) if bs > s || (bs == s && rank[bi] < rank[i]) => Some((bs, bi)),
                _ => Some((s, i)),
            };
        }
        best.expect("at least one candidate").1
    };
    let mut chosen = vec![false; n];
    let first = argmax(&|i| -dist(c[i], centroid), &chosen);
    chosen[first] = true;
    let mut order = vec![first];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist(c[i], c[first])).collect();
    while order.len() < l {
        let next = argmax(&|i| nearest[i], &chosen);
        chosen[next] = true;
        order.push(next);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist(c[i], c[next]));
        }
    }
    Ok(KnotSet {
        coords: order.iter().map(|&i| c[i]).collect(),
        site_index: order,
    })
}

/// Standardized Gaussian kernels
/// `B_il = exp(-(|s_i - k_l| / rho)^2) / sum_j exp(-(|s_i - k_j| / rho)^2)`,
/// normalized in log space so that far-away points never underflow.
pub fn gkf_basis(points: &[[f64; 2]], knots: &KnotSet, rho: f64) -> Result<BasisMatrix> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::validation(format!("kernel bandwidth must be positive, got {rho}")));
    }
    if knots.is_empty() {
        return Err(Error::validation("no knots"));
    }
    let l = knots.len();
    let mut b = Array2::zeros((points.len(), l));
    for (i, p) in points.iter().enumerate() {
        let logw: Vec<f64> = knots.coords.iter().map(|k| -(dist(*p, *k) / rho).powi(2)).collect();
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = w.iter().sum();
        for (k, wk) in w.iter().enumerate() {
            b[[i, k]] = wk / s;
        }
    }
    BasisMatrix::new(b)
}

/// Twelve logarithmically spaced bandwidths over `[0.1, 2]` times the domain
/// diameter.
pub fn default_rho_grid(sites: &SiteSet) -> Vec<f64> {
    let d = sites.diameter();
    geometric_grid(0.1 * d, 2.0 * d, 12)
}

/// Bandwidth minimizing the extremal-coefficient mismatch of the kernel basis:
/// grid search (ties to the smallest value), then golden-section refinement
/// in `ln rho` between the neighbours of the best grid point. The refined
/// value is kept only if it strictly improves on the grid.
pub fn estimate_rho(
    theta_tilde: &ExtCoeffMatrix,
    sites: &SiteSet,
    knots: &KnotSet,
    alpha: Alpha,
    rho_grid: &[f64],
) -> Result<f64> {
    if rho_grid.is_empty() {
        return Err(Error::validation("empty bandwidth grid"));
    }
    let loss = |rho: f64| -> Result<f64> {
        Ok(ebf_loss(&gkf_basis(sites.coords(), knots, rho)?, alpha, theta_tilde))
    };
    let mut grid = rho_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let losses: Vec<f64> = grid.par_iter().map(|&r| loss(r)).collect::<Result<_>>()?;
    let mut best = 0;
    for k in 1..grid.len() {
        if losses[k] < losses[best] - 1e-12 * losses[best].abs() {
            best = k;
        }
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let lo = grid[best.saturating_sub(1)].ln();
    let hi = grid[(best + 1).min(grid.len() - 1)].ln();
    let (x, fx) = golden_section(|u| loss(u.exp()), lo, hi, 1e-6)?;
    if fx < losses[best] - 1e-12 * losses[best].abs() {
        Ok(x.exp())
    } else {
        Ok(grid[best])
    }
}

fn golden_section(f: impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)> {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}

/// Writes knots as `id,x,y` with ids `k1..kL`.
pub fn save_knots(path: impl AsRef<Path>, knots: &KnotSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "x", "y"])?;
    for (l, c) in knots.coords.iter().enumerate() {
        w.write_record([format!("k{}", l + 1), fmt_f64(c[0]), fmt_f64(c[1])])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extremal::model_theta;
    use rand::Rng;

    fn line_sites(n: usize) -> SiteSet {
        SiteSet::from_coords((0..n).map(|i| [i as f64 * 0.7, 1.0]).collect()).unwrap()
    }

    fn random_sites(n: usize, seed: u64) -> SiteSet {
        let mut rng = stream_rng(seed, 0);
        SiteSet::from_coords((0..n).map(|_| [rng.random_range(1.0..10.0), rng.random_range(1.0..10.0)]).collect())
            .unwrap()
    }

    #[test]
    fn knot_exhaustion_and_centroid() {
        let sites = random_sites(12, 1);
        let all = spacefilling_knots(&sites, 12, 3).unwrap();
        let mut idx = all.site_indices().to_vec();
        idx.sort();
        assert_eq!(idx, (0..12).collect::<Vec<_>>());

        let one = spacefilling_knots(&sites, 1, 3).unwrap();
        let c = sites.coords();
        let centroid = [c.iter().map(|p| p[0]).sum::<f64>() / 12.0, c.iter().map(|p| p[1]).sum::<f64>() / 12.0];
        let nearest = (0..12)
            .min_by(|&a, &b| dist(c[a], centroid).total_cmp(&dist(c[b], centroid)))
            .unwrap();
        assert_eq!(one.site_indices(), &[nearest]);
        assert!(spacefilling_knots(&sites, 13, 3).is_err());
        assert!(spacefilling_knots(&sites, 0, 3).is_err());
    }

    #[test]
    fn second_knot_is_farthest_endpoint() {
        let sites = line_sites(9);
        let knots = spacefilling_knots(&sites, 2, 0).unwrap();
        let first = knots.site_indices()[0];
        assert_eq!(first, 4);
        // brute force: the best partner of the first knot over all sites
        let best = (0..9)
            .map(|j| sites.distance(first, j))
            .fold(0.0, f64::max);
        let second = knots.site_indices()[1];
        assert_eq!(sites.distance(first, second), best);
        assert!(second == 0 || second == 8);
    }

    #[test]
    fn knots_invariant_to_site_order() {
        let sites = random_sites(30, 2);
        let k = spacefilling_knots(&sites, 6, 1).unwrap();
        let mut coords = sites.coords().to_vec();
        coords.reverse();
        let rev = SiteSet::from_coords(coords).unwrap();
        let kr = spacefilling_knots(&rev, 6, 1).unwrap();
        assert_eq!(k.coords(), kr.coords());
    }

    #[test]
    fn basis_examples() {
        let sites = random_sites(10, 3);
        let one = KnotSet::from_coords(vec![[5.0, 5.0]]);
        let b = gkf_basis(sites.coords(), &one, 2.0).unwrap();
        assert!(b.matrix().iter().all(|&v| v == 1.0));

        let knots = KnotSet::from_coords(vec![[0.0, 0.0], [2.0, 0.0]]);
        let b = gkf_basis(&[[1.0, 3.0]], &knots, 1.3).unwrap();
        assert!((b.row(0)[0] - 0.5).abs() < 1e-15);

        let knots = spacefilling_knots(&sites, 4, 0).unwrap();
        let flat = gkf_basis(sites.coords(), &knots, 1e6 * sites.diameter()).unwrap();
        assert!(flat.matrix().iter().all(|v| (v - 0.25).abs() < 1e-9));
        assert!(gkf_basis(sites.coords(), &knots, 0.0).is_err());
    }

    #[test]
    fn dense_knots_small_bandwidth_is_identity() {
        let sites = random_sites(15, 4);
        let knots = spacefilling_knots(&sites, 15, 0).unwrap();
        let min_d = sites.pair_distances().iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
        let b = gkf_basis(sites.coords(), &knots, 0.01 * min_d).unwrap();
        for (l, &i) in knots.site_indices().iter().enumerate() {
            assert!((b.row(i)[l] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_is_continuous() {
        let knots = KnotSet::from_coords(vec![[1.0, 1.0], [4.0, 2.0], [2.0, 5.0]]);
        let eps = 1e-6;
        let a = gkf_basis(&[[2.5, 2.5]], &knots, 1.5).unwrap();
        let b = gkf_basis(&[[2.5 + eps, 2.5]], &knots, 1.5).unwrap();
        for l in 0..3 {
            assert!((a.row(0)[l] - b.row(0)[l]).abs() < 10.0 * eps);
        }
    }

    #[test]
    fn recovers_bandwidth_from_noiseless_coefficients() {
        let sites = random_sites(40, 5);
        let knots = spacefilling_knots(&sites, 9, 0).unwrap();
        let alpha = Alpha::new(0.4).unwrap();
        let truth = gkf_basis(sites.coords(), &knots, 2.5).unwrap();
        let theta = model_theta(&truth, alpha);
        let grid = default_rho_grid(&sites);
        let rho = estimate_rho(&theta, &sites, &knots, alpha, &grid).unwrap();
        assert!((rho - 2.5).abs() < 0.05 * 2.5, "{rho}");
        let at = |r: f64| ebf_loss(&gkf_basis(sites.coords(), &knots, r).unwrap(), alpha, &theta);
        assert!(grid.iter().all(|&g| at(rho) <= at(g)));
    }

    #[test]
    fn flat_loss_returns_smallest_grid_value() {
        let sites = random_sites(10, 6);
        let knots = KnotSet::from_coords(vec![[3.0, 3.0], [3.0, 3.0]]);
        let alpha = Alpha::new(0.5).unwrap();
        let theta = ExtCoeffMatrix::constant(10, 2f64.powf(0.5)).unwrap();
        let grid = [0.5, 1.0, 2.0, 4.0];
        assert_eq!(estimate_rho(&theta, &sites, &knots, alpha, &grid).unwrap(), 0.5);
    }
}
