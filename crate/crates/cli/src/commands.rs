use std::fs;
use std::path::{Path, PathBuf};

use maxstable_core::basis::{contributions, load_basis, save_basis};
use maxstable_core::cv::crossvalidate_with_folds;
use maxstable_core::data::{kfold_split, load_panel, load_sites, rank_transform_frechet, save_folds, save_panel, save_sites};
use maxstable_core::ebf::{ebf_loss, elbow_curve, fit_ebf, interpolate_basis};
use maxstable_core::extremal::{model_theta, save_theta, theta_map};
use maxstable_core::gkf::{default_rho_grid, estimate_rho, gkf_basis, save_knots, spacefilling_knots};
use maxstable_core::mcmc::{run_mcmc, save_posterior};
use maxstable_core::pipeline::{estimate_dependence, DependenceEstimate};
use maxstable_core::simulate::{run_simulation_study, save_summary};
use maxstable_core::{fmt_f64, Alpha, FieldPanel, SiteSet};
use serde::Serialize;
use serde_json::Value;

use crate::config::{
    required, resolve_seed, CvCmdConfig, FitEbfConfig, FitGkfConfig, MapConfig, McmcCmdConfig, SimulateConfig,
    StudyConfig, TransformConfig,
};
use crate::error::CliError;
use crate::output::{grid_points, write_grid_csv, write_json, write_pgm, write_resolved};

fn out_dir(dir: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = required(dir, "out-dir")?;
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn load_inputs(sites: &Option<PathBuf>, panel: &Option<PathBuf>) -> Result<(SiteSet, FieldPanel), CliError> {
    let sites = load_sites(required(sites, "sites")?)?;
    let panel = load_panel(required(panel, "panel")?, &sites)?;
    Ok((sites, panel))
}

fn write_theta_files(dir: &Path, dep: &DependenceEstimate) -> Result<(), CliError> {
    save_theta(dir.join("theta_hat.csv"), &dep.theta_hat)?;
    save_theta(dir.join("theta_tilde.csv"), &dep.theta_tilde)?;
    if !dep.delta_errors.is_empty() {
        let mut text = String::from("delta,cv_error\n");
        for (d, e) in &dep.delta_errors {
            text.push_str(&format!("{},{}\n", fmt_f64(*d), fmt_f64(*e)));
        }
        fs::write(dir.join("delta_cv.csv"), text)?;
    }
    Ok(())
}

fn report_number(path: &Path, key: &str) -> Result<f64, CliError> {
    let text = fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("report {} is not valid JSON: {e}", path.display())))?;
    value
        .get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| CliError::Usage(format!("report {} has no numeric {key:?}", path.display())))
}

/// Direct value, else the named field of the report, else a usage error.
fn from_value_or_report(value: Option<f64>, report: &Option<PathBuf>, key: &str) -> Result<f64, CliError> {
    match (value, report) {
        (Some(v), _) => Ok(v),
        (None, Some(path)) => report_number(path, key),
        (None, None) => Err(CliError::Usage(format!("give --{key} or --report"))),
    }
}

pub fn transform(cfg: TransformConfig, threads: Option<usize>) -> Result<(), CliError> {
    let (_, panel) = load_inputs(&cfg.sites, &cfg.panel)?;
    let out = required(&cfg.out, "out")?;
    let dir = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    save_panel(&out, &rank_transform_frechet(&panel)?)?;
    write_resolved(&dir, "transform", threads, &cfg)
}

#[derive(Serialize)]
struct FitReport {
    alpha: f64,
    delta: f64,
    #[serde(rename = "L")]
    l: usize,
    loss: f64,
    v: Vec<f64>,
    iterations: usize,
    converged: bool,
    identifiable: bool,
    seed: u64,
}

pub fn fit_ebf_cmd(mut cfg: FitEbfConfig, threads: Option<usize>) -> Result<(), CliError> {
    let seed = resolve_seed(cfg.seed)?;
    cfg.seed = Some(seed);
    cfg.dependence.seed = seed;
    cfg.fit.seed = seed;
    let (sites, panel) = load_inputs(&cfg.sites, &cfg.panel)?;
    let dir = out_dir(&cfg.out_dir)?;
    let dep = estimate_dependence(&panel, &sites, &cfg.dependence)?;
    let fit = fit_ebf(&dep.theta_tilde, &sites, dep.alpha, &cfg.fit)?;
    write_theta_files(&dir, &dep)?;
    save_basis(dir.join("basis.csv"), &fit.basis, sites.ids())?;
    write_json(
        &dir.join("report.json"),
        &FitReport {
            alpha: fit.alpha.get(),
            delta: dep.delta,
            l: fit.basis.n_basis(),
            loss: fit.loss,
            v: fit.contributions,
            iterations: fit.iterations,
            converged: fit.converged,
            identifiable: fit.identifiable,
            seed,
        },
    )?;
    if !cfg.elbow.is_empty() {
        let curve = elbow_curve(&dep.theta_tilde, &sites, dep.alpha, &cfg.elbow, &cfg.fit)?;
        let mut text = String::from("L,loss\n");
        for (l, loss) in curve {
            text.push_str(&format!("{l},{}\n", fmt_f64(loss)));
        }
        fs::write(dir.join("elbow.csv"), text)?;
    }
    write_resolved(&dir, "fit-ebf", threads, &cfg)
}

#[derive(Serialize)]
struct GkfReport {
    alpha: f64,
    delta: f64,
    #[serde(rename = "L")]
    l: usize,
    rho: f64,
    loss: f64,
    v: Vec<f64>,
    seed: u64,
}

pub fn fit_gkf_cmd(mut cfg: FitGkfConfig, threads: Option<usize>) -> Result<(), CliError> {
    let seed = resolve_seed(cfg.seed)?;
    cfg.seed = Some(seed);
    cfg.dependence.seed = seed;
    let (sites, panel) = load_inputs(&cfg.sites, &cfg.panel)?;
    let dir = out_dir(&cfg.out_dir)?;
    let dep = estimate_dependence(&panel, &sites, &cfg.dependence)?;
    let knots = spacefilling_knots(&sites, cfg.n_basis, seed)?;
    let rho = match cfg.rho {
        Some(r) => r,
        None => {
            let grid = cfg.rho_grid.clone().unwrap_or_else(|| default_rho_grid(&sites));
            estimate_rho(&dep.theta_tilde, &sites, &knots, dep.alpha, &grid)?
        }
    };
    let basis = gkf_basis(sites.coords(), &knots, rho)?;
    write_theta_files(&dir, &dep)?;
    save_knots(dir.join("knots.csv"), &knots)?;
    save_basis(dir.join("basis.csv"), &basis, sites.ids())?;
    write_json(
        &dir.join("report.json"),
        &GkfReport {
            alpha: dep.alpha.get(),
            delta: dep.delta,
            l: basis.n_basis(),
            rho,
            loss: ebf_loss(&basis, dep.alpha, &dep.theta_tilde),
            v: contributions(&basis),
            seed,
        },
    )?;
    write_resolved(&dir, "fit-gkf", threads, &cfg)
}

pub fn simulate_cmd(mut cfg: SimulateConfig, threads: Option<usize>) -> Result<(), CliError> {
    let seed = resolve_seed(cfg.seed)?;
    cfg.seed = Some(seed);
    cfg.scenario.seed = seed;
    cfg.scenario.validate()?;
    let dir = out_dir(&cfg.out_dir)?;
    save_knots(dir.join("knots.csv"), &cfg.scenario.knots())?;
    for d in 0..cfg.scenario.n_datasets {
        let data = cfg.scenario.generate(d)?;
        let sub = dir.join(format!("dataset_{}", d + 1));
        fs::create_dir_all(&sub)?;
        save_sites(sub.join("sites.csv"), &data.sites)?;
        save_panel(sub.join("panel.csv"), &data.panel)?;
        save_basis(sub.join("basis_true.csv"), &data.basis, data.sites.ids())?;
        save_theta(sub.join("theta_true.csv"), &model_theta(&data.basis, cfg.scenario.alpha))?;
    }
    write_resolved(&dir, "simulate", threads, &cfg)
}

pub fn study_cmd(mut cfg: StudyConfig, threads: Option<usize>) -> Result<(), CliError> {
    let seed = resolve_seed(cfg.seed)?;
    cfg.seed = Some(seed);
    cfg.scenario.seed = seed;
    if cfg.study.fit_ls.is_empty() {
        cfg.study.fit_ls = vec![cfg.scenario.l_true];
    }
    cfg.scenario.validate()?;
    let dir = out_dir(&cfg.out_dir)?;
    let result = run_simulation_study(&cfg.scenario, &cfg.study)?;
    save_summary(dir.join("summary.csv"), &result.summary)?;
    let mut text = String::from("dataset,alpha_hat,delta,mse_initial,mse_smoothed");
    for l in &cfg.study.fit_ls {
        text.push_str(&format!(",mse_ebf_L{l}"));
    }
    text.push('\n');
    for r in &result.records {
        text.push_str(&format!(
            "{},{},{},{},{}",
            r.dataset + 1,
            fmt_f64(r.alpha_hat),
            fmt_f64(r.delta),
            fmt_f64(r.mse_initial),
            fmt_f64(r.mse_smoothed)
        ));
        for (_, m) in &r.mse_ebf {
            text.push_str(&format!(",{}", fmt_f64(*m)));
        }
        text.push('\n');
    }
    fs::write(dir.join("datasets.csv"), text)?;
    write_resolved(&dir, "study", threads, &cfg)
}

#[derive(Serialize)]
struct McmcReport {
    alpha: f64,
    #[serde(rename = "L")]
    l: usize,
    n_times: usize,
    n_draws: usize,
    acceptance_mean: f64,
    acceptance_min: f64,
    acceptance_max: f64,
    seed: u64,
}

pub fn mcmc_cmd(mut cfg: McmcCmdConfig, threads: Option<usize>) -> Result<(), CliError> {
    let seed = resolve_seed(cfg.seed)?;
    cfg.seed = Some(seed);
    cfg.mcmc.seed = seed;
    let alpha = from_value_or_report(cfg.alpha, &cfg.report, "alpha")?;
    cfg.alpha = Some(alpha);
    let alpha = Alpha::new(alpha)?;
    let (sites, panel) = load_inputs(&cfg.sites, &cfg.panel)?;
    let panel = if cfg.transform { rank_transform_frechet(&panel)? } else { panel };
    let basis = load_basis(required(&cfg.basis, "basis")?, &sites)?;
    let dir = out_dir(&cfg.out_dir)?;
    let post = run_mcmc(&panel, &basis, alpha, &cfg.mcmc)?;
    save_posterior(dir.join("posterior.csv"), &post)?;
    let acc = &post.acceptance;
    write_json(
        &dir.join("mcmc_report.json"),
        &McmcReport {
            alpha: alpha.get(),
            l: basis.n_basis(),
            n_times: panel.n_times(),
            n_draws: post.draws.len(),
            acceptance_mean: acc.mean().unwrap_or(f64::NAN),
            acceptance_min: acc.iter().cloned().fold(f64::INFINITY, f64::min),
            acceptance_max: acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            seed,
        },
    )?;
    write_resolved(&dir, "mcmc", threads, &cfg)
}

pub fn cv_cmd(mut cfg: CvCmdConfig, threads: Option<usize>) -> Result<(), CliError> {
    let seed = resolve_seed(cfg.seed)?;
    cfg.seed = Some(seed);
    cfg.cv.seed = seed;
    if cfg.sizes.is_empty() {
        return Err(CliError::Usage("missing required argument --L".into()));
    }
    if cfg.cv.k < 2 {
        return Err(CliError::Usage("cross-validation needs --k of at least 2".into()));
    }
    let (sites, panel) = load_inputs(&cfg.sites, &cfg.panel)?;
    let dir = out_dir(&cfg.out_dir)?;
    let folds = kfold_split(&panel, cfg.cv.k, seed)?;
    let reports = crossvalidate_with_folds(&panel, &sites, &folds, &cfg.methods, &cfg.sizes, &cfg.cv)?;
    save_folds(dir.join("folds.csv"), &folds, &panel)?;
    write_json(&dir.join("cv_report.json"), &reports)?;
    write_resolved(&dir, "cv", threads, &cfg)
}

pub fn map_cmd(mut cfg: MapConfig, threads: Option<usize>) -> Result<(), CliError> {
    let alpha = from_value_or_report(cfg.alpha, &cfg.report, "alpha")?;
    let delta = from_value_or_report(cfg.delta, &cfg.report, "delta")?;
    cfg.alpha = Some(alpha);
    cfg.delta = Some(delta);
    let alpha = Alpha::new(alpha)?;
    let [nx, ny] = cfg.grid;
    if nx == 0 || ny == 0 {
        return Err(CliError::Usage("grid needs at least one point per axis".into()));
    }
    let sites = load_sites(required(&cfg.sites, "sites")?)?;
    let basis = load_basis(required(&cfg.basis, "basis")?, &sites)?;
    let reference = match &cfg.ref_site {
        Some(id) => Some(sites.position(id).ok_or_else(|| {
            maxstable_core::Error::Validation(format!("unknown reference site {id:?}"))
        })?),
        None => None,
    };
    let dir = out_dir(&cfg.out_dir)?;
    let points = grid_points(&sites, nx, ny);
    let grid_basis = interpolate_basis(&basis, &sites, &points, delta)?;
    for l in 0..grid_basis.n_basis() {
        let values = grid_basis.matrix().column(l).to_vec();
        write_grid_csv(&dir.join(format!("basis_{}.csv", l + 1)), &points, &values)?;
        if cfg.pgm {
            write_pgm(&dir.join(format!("basis_{}.pgm", l + 1)), nx, ny, &values)?;
        }
    }
    if let Some(i) = reference {
        let values = theta_map(&grid_basis, basis.row(i), alpha)?;
        write_grid_csv(&dir.join("theta_ref.csv"), &points, &values)?;
        if cfg.pgm {
            write_pgm(&dir.join("theta_ref.pgm"), nx, ny, &values)?;
        }
    }
    write_resolved(&dir, "map", threads, &cfg)
}
