//! Run configuration: defaults, overlaid by an optional JSON file, overlaid by
//! command-line flags.

use std::path::{Path, PathBuf};

use maxstable_core::cv::{BasisMethod, CvConfig};
use maxstable_core::ebf::EbfFitConfig;
use maxstable_core::mcmc::McmcConfig;
use maxstable_core::pipeline::DependenceConfig;
use maxstable_core::simulate::{SimScenario, StudyOptions};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

pub const SEED_VAR: &str = "MAXSTABLE_SEED";
pub const RESOLVED_NAME: &str = "resolved_config.json";

/// Flag values that were actually given, keyed by dotted config path.
#[derive(Debug, Default)]
pub struct Overrides(Map<String, Value>);

impl Overrides {
    pub fn set<T: Serialize>(&mut self, path: &str, value: Option<T>) {
        let Some(value) = value else { return };
        let value = serde_json::to_value(value).expect("flag values serialize");
        let mut keys = path.split('.').peekable();
        let mut node = &mut self.0;
        while let Some(key) = keys.next() {
            if keys.peek().is_none() {
                node.insert(key.to_string(), value);
                return;
            }
            node = node
                .entry(key.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("override paths do not collide");
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Defaults of `C`, then the JSON file, then the flags.
pub fn resolve<C: Serialize + DeserializeOwned + Default>(file: Option<&Path>, flags: Overrides) -> Result<C, CliError> {
    let mut value = serde_json::to_value(C::default()).expect("defaults serialize");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
        if !patch.is_object() {
            return Err(CliError::Usage(format!("config {} must be a JSON object", path.display())));
        }
        merge(&mut value, patch);
    }
    merge(&mut value, Value::Object(flags.0));
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
}

/// Flag, then config file, then `MAXSTABLE_SEED`, then 0.
pub fn resolve_seed(configured: Option<u64>) -> Result<u64, CliError> {
    if let Some(seed) = configured {
        return Ok(seed);
    }
    match std::env::var(SEED_VAR) {
        Ok(raw) => raw
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_VAR} must be a non-negative integer, got {raw:?}"))),
        Err(_) => Ok(0),
    }
}

pub fn required<T: Clone>(value: &Option<T>, flag: &str) -> Result<T, CliError> {
    value
        .clone()
        .ok_or_else(|| CliError::Usage(format!("missing required argument --{flag}")))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformConfig {
    pub sites: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FitEbfConfig {
    pub sites: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub dependence: DependenceConfig,
    pub fit: EbfFitConfig,
    /// Basis sizes for an elbow curve; skipped when empty.
    pub elbow: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitGkfConfig {
    pub sites: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    #[serde(rename = "L")]
    pub n_basis: usize,
    pub dependence: DependenceConfig,
    /// Fixed kernel bandwidth; estimated when `None`.
    pub rho: Option<f64>,
    pub rho_grid: Option<Vec<f64>>,
}

impl Default for FitGkfConfig {
    fn default() -> Self {
        Self {
            sites: None,
            panel: None,
            out_dir: None,
            seed: None,
            n_basis: 1,
            dependence: DependenceConfig::default(),
            rho: None,
            rho_grid: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub scenario: SimScenario,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub scenario: SimScenario,
    /// Fitted basis sizes; defaults to the true size.
    pub study: StudyOptions,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcCmdConfig {
    pub sites: Option<PathBuf>,
    /// Panel on the unit Frechet scale unless `transform` is set.
    pub panel: Option<PathBuf>,
    pub basis: Option<PathBuf>,
    /// Fit report supplying `alpha` when it is not given directly.
    pub report: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub transform: bool,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub mcmc: McmcConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CvCmdConfig {
    pub sites: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub methods: Vec<BasisMethod>,
    #[serde(rename = "L")]
    pub sizes: Vec<usize>,
    pub cv: CvConfig,
}

impl Default for CvCmdConfig {
    fn default() -> Self {
        Self {
            sites: None,
            panel: None,
            out_dir: None,
            seed: None,
            methods: vec![BasisMethod::Ebf, BasisMethod::Gkf],
            sizes: Vec::new(),
            cv: CvConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    pub sites: Option<PathBuf>,
    pub basis: Option<PathBuf>,
    /// Fit report supplying `alpha` and `delta` when they are not given.
    pub report: Option<PathBuf>,
    pub alpha: Option<f64>,
    /// Interpolation bandwidth.
    pub delta: Option<f64>,
    /// Grid points along x and y.
    pub grid: [usize; 2],
    pub ref_site: Option<String>,
    pub pgm: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            sites: None,
            basis: None,
            report: None,
            alpha: None,
            delta: None,
            grid: [50, 50],
            ref_site: None,
            pgm: true,
            out_dir: None,
        }
    }
}
