//! Monte Carlo and quadrature oracles for the distributional building blocks.

mod common;

use common::{ks_one_sample, random_basis, simpson};
use maxstable_core::extremal::{empirical_theta, model_theta};
use maxstable_core::simulate::{simulate_maxlinear, simulate_rs};
use maxstable_core::stable::{ps_sample, PositiveStable};
use maxstable_core::{stream_rng, Alpha, FieldPanel};
use ndarray::Array2;
use rand::Rng;

fn alpha(a: f64) -> Alpha {
    Alpha::new(a).unwrap()
}

#[test]
fn stable_density_integrates_to_one() {
    for a in [0.3, 0.5, 0.7] {
        let ps = PositiveStable::new(alpha(a));
        // x = e^u
        let total = simpson(|u| ps.density(u.exp()) * u.exp(), -40.0, 120.0, 400_000);
        assert!((total - 1.0).abs() < 5e-3, "alpha {a}: integral {total}");
    }
}

/// CDF of the grid density by cumulative Simpson integration in `ln x`.
struct GridCdf {
    lo: f64,
    h: f64,
    cum: Vec<f64>,
}

impl GridCdf {
    fn new(ps: &PositiveStable, lo: f64, hi: f64, h: f64) -> Self {
        let n = ((hi - lo) / h).ceil() as usize;
        let g = |u: f64| ps.density(u.exp()) * u.exp();
        let mut cum = vec![0.0; n + 1];
        for k in 0..n {
            let u = lo + k as f64 * h;
            cum[k + 1] = cum[k] + h / 6.0 * (g(u) + 4.0 * g(u + 0.5 * h) + g(u + h));
        }
        Self { lo, h, cum }
    }

    fn at(&self, x: f64) -> f64 {
        let pos = (x.ln() - self.lo) / self.h;
        if pos <= 0.0 {
            return 0.0;
        }
        let k = pos.floor() as usize;
        if k + 1 >= self.cum.len() {
            return *self.cum.last().unwrap();
        }
        let f = pos - k as f64;
        self.cum[k] * (1.0 - f) + self.cum[k + 1] * f
    }
}

#[test]
fn sampler_agrees_with_integrated_density() {
    for (s, a) in [0.2, 0.5, 0.8].into_iter().enumerate() {
        let al = alpha(a);
        let mut rng = stream_rng(40 + s as u64, 0);
        let draws: Vec<f64> = (0..10_000).map(|_| ps_sample(al, &mut rng)).collect();
        let hi = draws.iter().cloned().fold(0.0, f64::max).ln() + 1.0;
        let cdf = GridCdf::new(&PositiveStable::new(al), -40.0, hi, 2e-3);
        let d = ks_one_sample(&draws, |x| cdf.at(x));
        assert!(d < 0.02, "alpha {a}: KS distance {d}");
    }
}

#[test]
fn empirical_coefficients_match_model() {
    for rep in 0..10u64 {
        let mut rng = stream_rng(500 + rep, 0);
        let n = rng.random_range(3..=10);
        let l = rng.random_range(2..=4);
        let a = alpha(rng.random_range(0.2..0.8));
        let b = random_basis(n, l, 500 + rep);
        let panel = simulate_rs(&b, a, 10_000, &mut rng).unwrap();
        let emp = empirical_theta(&panel).unwrap();
        let model = model_theta(&b, a);
        for i in 0..n {
            for j in i + 1..n {
                let diff = (emp.get(i, j) - model.get(i, j)).abs();
                assert!(diff < 0.05, "rep {rep} pair ({i},{j}): {} vs {}", emp.get(i, j), model.get(i, j));
            }
        }
    }
}

#[test]
fn independent_sites_have_coefficient_two() {
    let mut rng = stream_rng(7, 0);
    let z = Array2::from_shape_simple_fn((2, 10_000), || -1.0 / rng.random::<f64>().ln());
    let panel = FieldPanel::fully_observed(vec!["a".into(), "b".into()], z).unwrap();
    let t = empirical_theta(&panel).unwrap().get(0, 1);
    assert!((t - 2.0).abs() < 0.05, "{t}");
}

#[test]
fn simulated_margins_are_unit_frechet() {
    let b = random_basis(5, 3, 8);
    let panel = simulate_rs(&b, alpha(0.4), 10_000, &mut stream_rng(8, 1)).unwrap();
    for i in 0..5 {
        let d = ks_one_sample(&panel.observed_row(i), |z| (-1.0 / z).exp());
        assert!(d < 0.02, "site {i}: KS distance {d}");
    }
}

fn max_linear_theta(b: &maxstable_core::BasisMatrix, i: usize, j: usize) -> f64 {
    b.row(i).iter().zip(b.row(j).iter()).map(|(x, y)| x.max(*y)).sum()
}

#[test]
fn max_linear_coefficients() {
    let b = random_basis(6, 3, 9);
    let panel = simulate_maxlinear(&b, 10_000, &mut stream_rng(9, 1)).unwrap();
    let emp = empirical_theta(&panel).unwrap();
    for i in 0..6 {
        for j in i + 1..6 {
            assert!((emp.get(i, j) - max_linear_theta(&b, i, j)).abs() < 0.05);
        }
    }
}

#[test]
fn small_alpha_approaches_max_linear() {
    for rep in 0..3u64 {
        let b = random_basis(6, 3, 60 + rep);
        let panel = simulate_rs(&b, alpha(0.05), 10_000, &mut stream_rng(60 + rep, 1)).unwrap();
        let emp = empirical_theta(&panel).unwrap();
        for i in 0..6 {
            for j in i + 1..6 {
                let want = max_linear_theta(&b, i, j);
                assert!((emp.get(i, j) - want).abs() < 0.05, "{} vs {want}", emp.get(i, j));
            }
        }
    }
}
