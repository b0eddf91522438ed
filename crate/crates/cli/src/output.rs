use std::fs;
use std::io::Write;
use std::path::Path;

use maxstable_core::{fmt_f64, SiteSet};
use serde::Serialize;
use serde_json::Value;

use crate::config::RESOLVED_NAME;
use crate::error::CliError;

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("outputs serialize");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes the resolved config with the command name and thread setting
/// added alongside its own keys.
pub fn write_resolved(dir: &Path, command: &str, threads: Option<usize>, cfg: &impl Serialize) -> Result<(), CliError> {
    let mut value = serde_json::to_value(cfg).expect("configs serialize");
    if let Value::Object(map) = &mut value {
        map.insert("command".into(), Value::from(command));
        map.insert("threads".into(), serde_json::to_value(threads).expect("serializes"));
    }
    write_json(&dir.join(RESOLVED_NAME), &value)
}

/// Regular `nx x ny` grid over the bounding box of the sites, x varying
/// fastest, y increasing.
pub fn grid_points(sites: &SiteSet, nx: usize, ny: usize) -> Vec<[f64; 2]> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for c in sites.coords() {
        for d in 0..2 {
            lo[d] = lo[d].min(c[d]);
            hi[d] = hi[d].max(c[d]);
        }
    }
    let axis = |d: usize, n: usize, k: usize| {
        if n == 1 {
            0.5 * (lo[d] + hi[d])
        } else {
            lo[d] + (hi[d] - lo[d]) * k as f64 / (n - 1) as f64
        }
    };
    let mut pts = Vec::with_capacity(nx * ny);
    for gy in 0..ny {
        for gx in 0..nx {
            pts.push([axis(0, nx, gx), axis(1, ny, gy)]);
        }
    }
    pts
}

/// Long-form `x,y,value`.
pub fn write_grid_csv(path: &Path, points: &[[f64; 2]], values: &[f64]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(maxstable_core::Error::from)?;
    w.write_record(["x", "y", "value"]).map_err(maxstable_core::Error::from)?;
    for (p, v) in points.iter().zip(values) {
        w.write_record([fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(*v)])
            .map_err(maxstable_core::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

/// Binary 8-bit PGM with the minimum mapped to 0 and the maximum to 255;
/// the top image row is the largest y.
pub fn write_pgm(path: &Path, nx: usize, ny: usize, values: &[f64]) -> Result<(), CliError> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let level = |v: f64| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    };
    let mut bytes = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    for gy in (0..ny).rev() {
        bytes.extend(values[gy * nx..(gy + 1) * nx].iter().map(|&v| level(v)));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}
