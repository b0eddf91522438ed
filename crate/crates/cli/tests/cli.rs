use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn maxstable(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_maxstable"));
    cmd.args(args).env_remove("MAXSTABLE_SEED");
    if let Some(seed) = seed_env {
        cmd.env("MAXSTABLE_SEED", seed);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str]) {
    let out = maxstable(args, None);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Twenty sites and thirty times from a four-function model.
fn dataset() -> (TempDir, String, String) {
    let tmp = tempfile::tempdir().unwrap();
    let out = path(tmp.path(), "sim");
    ok(&[
        "simulate", "--L-true", "4", "--alpha", "0.5", "--n-t", "30", "--n-s", "20", "--datasets", "1", "--seed", "5",
        "--out-dir", &out,
    ]);
    let sites = path(tmp.path(), "sim/dataset_1/sites.csv");
    let panel = path(tmp.path(), "sim/dataset_1/panel.csv");
    (tmp, sites, panel)
}

fn pgm_pixels(path: impl AsRef<Path>) -> (usize, usize, Vec<u8>) {
    let bytes = fs::read(path).unwrap();
    let text = String::from_utf8_lossy(&bytes[..20.min(bytes.len())]).to_string();
    let mut fields = text.split_ascii_whitespace();
    assert_eq!(fields.next(), Some("P5"));
    let w: usize = fields.next().unwrap().parse().unwrap();
    let h: usize = fields.next().unwrap().parse().unwrap();
    assert_eq!(fields.next(), Some("255"));
    (w, h, bytes[bytes.len() - w * h..].to_vec())
}

fn grid_values(path: impl AsRef<Path>) -> Vec<[f64; 3]> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|line| {
            let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
            [v[0], v[1], v[2]]
        })
        .collect()
}

#[test]
fn missing_required_input_is_a_usage_error() {
    let (tmp, sites, _) = dataset();
    let out = maxstable(&["fit-ebf", "--sites", &sites, "--out-dir", &path(tmp.path(), "fit")], None);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--panel"));
    assert_eq!(code(&maxstable(&["fit-ebf", "--bogus"], None)), 2);
    assert_eq!(code(&maxstable(&[], None)), 2);
}

#[test]
fn invalid_values_are_validation_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = maxstable(&["simulate", "--L-true", "8", "--out-dir", &path(tmp.path(), "sim")], None);
    assert_eq!(code(&out), 3);

    let sites = tmp.path().join("sites.csv");
    let panel = tmp.path().join("panel.csv");
    fs::write(&sites, "id,x,y\na,0,0\nb,1,1\n").unwrap();
    fs::write(&panel, "id,t1,t2\na,1.0,oops\nb,2.0,3.0\n").unwrap();
    let args = ["transform", "--sites", sites.to_str().unwrap(), "--panel", panel.to_str().unwrap()];
    let out = maxstable(&[&args[..], &["--out", &path(tmp.path(), "f.csv")]].concat(), None);
    assert_eq!(code(&out), 3);
}

#[test]
fn seed_falls_back_to_environment() {
    let (tmp, sites, panel) = dataset();
    let dir = tmp.path().join("fit");
    let args = ["fit-ebf", "--sites", &sites, "--panel", &panel, "--L", "2", "--max-iter", "100"];
    let out_dir = dir.display().to_string();
    let out = maxstable(&[&args[..], &["--out-dir", &out_dir]].concat(), Some("17"));
    assert_eq!(code(&out), 0);
    assert_eq!(read_json(dir.join("report.json"))["seed"], 17);
    assert_eq!(read_json(dir.join("resolved_config.json"))["seed"], 17);

    let out = maxstable(&[&args[..], &["--out-dir", &out_dir, "--seed", "4"]].concat(), Some("17"));
    assert_eq!(code(&out), 0);
    assert_eq!(read_json(dir.join("report.json"))["seed"], 4);

    let out = maxstable(&[&args[..], &["--out-dir", &out_dir]].concat(), Some("minus one"));
    assert_eq!(code(&out), 2);
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let (tmp, sites, panel) = dataset();
    let config = tmp.path().join("config.json");
    fs::write(&config, r#"{"fit": {"n_basis": 3, "max_iter": 50}, "seed": 9}"#).unwrap();
    let config = config.display().to_string();
    let dir = tmp.path().join("fit");
    let out_dir = dir.display().to_string();
    let common = ["fit-ebf", "--config", &config, "--sites", &sites, "--panel", &panel, "--out-dir", &out_dir];
    ok(&common);
    let report = read_json(dir.join("report.json"));
    assert_eq!(report["L"], 3);
    assert_eq!(report["seed"], 9);
    assert_eq!(read_json(dir.join("resolved_config.json"))["fit"]["max_iter"], 50);

    ok(&[&common[..], &["--L", "2"]].concat());
    assert_eq!(read_json(dir.join("report.json"))["L"], 2);

    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "[1, 2]").unwrap();
    let out = maxstable(&["fit-ebf", "--config", bad.to_str().unwrap(), "--sites", &sites, "--panel", &panel], None);
    assert_eq!(code(&out), 2);
}

#[test]
fn automatic_bandwidth_is_the_cv_minimizer() {
    let (tmp, sites, panel) = dataset();
    let dir = tmp.path().join("fit");
    ok(&[
        "fit-ebf", "--sites", &sites, "--panel", &panel, "--L", "2", "--max-iter", "100", "--delta", "auto",
        "--out-dir", &dir.display().to_string(),
    ]);
    let (best, _) = fs::read_to_string(dir.join("delta_cv.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|line| {
            let (d, e) = line.split_once(',').unwrap();
            (d.parse::<f64>().unwrap(), e.parse::<f64>().unwrap())
        })
        .fold((f64::NAN, f64::INFINITY), |acc, (d, e)| if e < acc.1 { (d, e) } else { acc });
    assert_eq!(read_json(dir.join("report.json"))["delta"].as_f64().unwrap(), best);
}

#[test]
fn fixed_bandwidth_skips_selection() {
    let (tmp, sites, panel) = dataset();
    let dir = tmp.path().join("gkf");
    ok(&[
        "fit-gkf", "--sites", &sites, "--panel", &panel, "--L", "4", "--delta", "1.5", "--out-dir",
        &dir.display().to_string(),
    ]);
    assert!(!dir.join("delta_cv.csv").exists());
    let report = read_json(dir.join("report.json"));
    assert_eq!(report["delta"], 1.5);
    assert_eq!(report["L"], 4);
    assert_eq!(fs::read_to_string(dir.join("knots.csv")).unwrap().lines().count(), 5);
}

#[test]
fn constant_basis_maps_to_a_flat_image() {
    let tmp = tempfile::tempdir().unwrap();
    let sites = tmp.path().join("sites.csv");
    let basis = tmp.path().join("basis.csv");
    fs::write(&sites, "id,x,y\na,0,0\nb,3,1\nc,1,4\n").unwrap();
    fs::write(&basis, "id,b1\na,1\nb,1\nc,1\n").unwrap();
    let dir = tmp.path().join("map");
    ok(&[
        "map", "--sites", sites.to_str().unwrap(), "--basis", basis.to_str().unwrap(), "--alpha", "0.4",
        "--delta", "1", "--grid", "7,5", "--ref-site", "b", "--out-dir", &dir.display().to_string(),
    ]);
    let (w, h, pixels) = pgm_pixels(dir.join("basis_1.pgm"));
    assert_eq!((w, h), (7, 5));
    assert!(pixels.iter().all(|&p| p == 0));
    for [_, _, v] in grid_values(dir.join("theta_ref.csv")) {
        assert!((v - 2f64.powf(0.4)).abs() < 1e-12);
    }
}

#[test]
fn coefficient_map_spans_the_valid_range() {
    let tmp = tempfile::tempdir().unwrap();
    let sites = tmp.path().join("sites.csv");
    let basis = tmp.path().join("basis.csv");
    fs::write(&sites, "id,x,y\na,0,0\nb,4,0\nc,0,4\nd,4,4\n").unwrap();
    fs::write(&basis, "id,b1,b2\na,1,0\nb,0.7,0.3\nc,0.2,0.8\nd,0,1\n").unwrap();
    let dir = tmp.path().join("map");
    ok(&[
        "map", "--sites", sites.to_str().unwrap(), "--basis", basis.to_str().unwrap(), "--alpha", "0.5",
        "--delta", "0.1", "--grid", "9,9", "--ref-site", "a", "--out-dir", &dir.display().to_string(),
    ]);
    let values = grid_values(dir.join("theta_ref.csv"));
    assert_eq!(values.len(), 81);
    let low = 2f64.sqrt();
    for [_, _, v] in &values {
        assert!(*v >= low - 1e-12 && *v <= 2.0 + 1e-12);
    }
    let [x, y, at_ref] = values[0];
    assert_eq!((x, y), (0.0, 0.0));
    assert!((at_ref - low).abs() < 1e-9);
    let far = values.iter().find(|[x, y, _]| *x == 4.0 && *y == 4.0).unwrap();
    assert!((far[2] - 2.0).abs() < 1e-9);

    let (_, _, pixels) = pgm_pixels(dir.join("theta_ref.pgm"));
    assert_eq!(pixels.iter().min(), Some(&0));
    assert_eq!(pixels.iter().max(), Some(&255));
    // top-left pixel is the largest y, bottom-left the reference corner
    assert_eq!(pixels[72], 0);

    let out = maxstable(
        &[
            "map", "--sites", sites.to_str().unwrap(), "--basis", basis.to_str().unwrap(), "--alpha", "0.5",
            "--delta", "0.1", "--ref-site", "zz", "--out-dir", &dir.display().to_string(),
        ],
        None,
    );
    assert_eq!(code(&out), 3);
}

#[test]
fn sampler_handles_a_site_with_no_observations() {
    let tmp = tempfile::tempdir().unwrap();
    let sites = tmp.path().join("sites.csv");
    let panel = tmp.path().join("panel.csv");
    let basis = tmp.path().join("basis.csv");
    fs::write(&sites, "id,x,y\na,0,0\nb,1,0\n").unwrap();
    fs::write(&panel, "id,t1,t2,t3\na,1.5,0.7,4.0\nb,,,\n").unwrap();
    fs::write(&basis, "id,b1,b2\na,0.6,0.4\nb,0.5,0.5\n").unwrap();
    let dir = tmp.path().join("mcmc");
    ok(&[
        "mcmc", "--sites", sites.to_str().unwrap(), "--panel", panel.to_str().unwrap(), "--basis",
        basis.to_str().unwrap(), "--alpha", "0.5", "--iterations", "600", "--burn-in", "100", "--thin", "10",
        "--out-dir", &dir.display().to_string(),
    ]);
    let report = read_json(dir.join("mcmc_report.json"));
    assert_eq!(report["n_times"], 3);
    assert_eq!(report["L"], 2);
    assert_eq!(report["n_draws"], 50);
    let rows = fs::read_to_string(dir.join("posterior.csv")).unwrap();
    assert_eq!(rows.lines().next(), Some("iter,l,t,A"));
    assert_eq!(rows.lines().count(), 1 + 50 * 2 * 3);
    for line in rows.lines().skip(1) {
        let a: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(a > 0.0 && a.is_finite());
    }
}

#[test]
fn cross_validation_scores_each_size() {
    let (tmp, sites, panel) = dataset();
    let dir = tmp.path().join("cv");
    ok(&[
        "cv", "--sites", &sites, "--panel", &panel, "--L", "2,5,10", "--k", "3", "--iterations", "200", "--burn-in",
        "50", "--thin", "5", "--max-iter", "100", "--restarts", "1", "--out-dir", &dir.display().to_string(),
    ]);
    let report = read_json(dir.join("cv_report.json"));
    let rows = report.as_array().unwrap();
    assert_eq!(rows.len(), 6);
    for row in rows {
        assert_eq!(row["fold_scores"].as_array().unwrap().len(), 3);
        assert!(row["mean_mad"].as_f64().unwrap() > 0.0);
    }
    let folds = fs::read_to_string(dir.join("folds.csv")).unwrap();
    assert_eq!(folds.lines().next(), Some("site_id,time_index,fold"));
}

#[test]
fn study_writes_per_dataset_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("study");
    ok(&[
        "study", "--L-true", "4", "--alpha", "0.5", "--n-t", "20", "--n-s", "20", "--datasets", "2", "--fit-L",
        "2,4", "--max-iter", "100", "--out-dir", &dir.display().to_string(),
    ]);
    let datasets = fs::read_to_string(dir.join("datasets.csv")).unwrap();
    let header = datasets.lines().next().unwrap();
    assert!(header.starts_with("dataset,"));
    assert!(header.ends_with("mse_ebf_L2,mse_ebf_L4"));
    assert_eq!(datasets.lines().count(), 3);
    assert!(fs::read_to_string(dir.join("summary.csv")).unwrap().starts_with("L_true,"));
}
