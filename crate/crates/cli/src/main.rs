//! `maxstable`: estimate, simulate and score low-rank max-stable models of
//! spatial extremes from the command line.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maxstable_core::cv::BasisMethod;
use maxstable_core::pipeline::AlphaSource;

use config::{resolve, Overrides};
use error::CliError;

#[derive(Parser)]
#[command(name = "maxstable", version, about = "Empirical basis functions for spatial extremes")]
struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random step; falls back to MAXSTABLE_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank-transform a panel to unit Frechet margins.
    Transform(TransformArgs),
    /// Fit empirical basis functions.
    FitEbf(FitEbfArgs),
    /// Fit a Gaussian kernel basis on space-filling knots.
    FitGkf(FitGkfArgs),
    /// Simulate datasets from a scenario.
    Simulate(SimulateArgs),
    /// Run a simulation study and summarize estimator errors.
    Study(StudyArgs),
    /// Sample the latent variables for a fixed basis.
    Mcmc(McmcArgs),
    /// Cross-validate basis methods and sizes.
    Cv(CvArgs),
    /// Evaluate basis functions and extremal coefficients on a grid.
    Map(MapArgs),
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    sites: Option<PathBuf>,
    #[arg(long)]
    panel: Option<PathBuf>,
}

impl InputArgs {
    fn apply(&self, o: &mut Overrides) {
        o.set("sites", self.sites.as_ref());
        o.set("panel", self.panel.as_ref());
    }
}

#[derive(Clone, Copy)]
enum DeltaArg {
    Auto,
    Fixed(f64),
}

fn parse_delta(s: &str) -> Result<DeltaArg, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(DeltaArg::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(DeltaArg::Fixed(v)),
        _ => Err(format!("expected `auto` or a positive number, got {s:?}")),
    }
}

fn parse_alpha_source(s: &str) -> Result<AlphaSource, String> {
    match s {
        "initial" => Ok(AlphaSource::Initial),
        "smoothed" => Ok(AlphaSource::Smoothed),
        _ => Err(format!("expected `initial` or `smoothed`, got {s:?}")),
    }
}

fn parse_method(s: &str) -> Result<BasisMethod, String> {
    s.parse().map_err(|e: maxstable_core::Error| e.to_string())
}

#[derive(Args)]
struct DependenceArgs {
    /// Smoothing bandwidth, or `auto` for cross-validation.
    #[arg(long, value_parser = parse_delta)]
    delta: Option<DeltaArg>,
    /// Candidate bandwidths for `--delta auto`.
    #[arg(long, value_delimiter = ',')]
    delta_grid: Option<Vec<f64>>,
    #[arg(long)]
    bandwidth_folds: Option<usize>,
    /// Fraction of closest pairs used to estimate alpha.
    #[arg(long)]
    neighbor_frac: Option<f64>,
    /// Coefficients read by the alpha estimate: `initial` or `smoothed`.
    #[arg(long, value_parser = parse_alpha_source)]
    alpha_source: Option<AlphaSource>,
}

impl DependenceArgs {
    fn apply(&self, o: &mut Overrides, prefix: &str) {
        let delta = self.delta.map(|d| match d {
            DeltaArg::Auto => None,
            DeltaArg::Fixed(v) => Some(v),
        });
        o.set(&format!("{prefix}.delta"), delta);
        o.set(&format!("{prefix}.delta_grid"), self.delta_grid.as_ref());
        o.set(&format!("{prefix}.bandwidth_folds"), self.bandwidth_folds);
        o.set(&format!("{prefix}.neighbor_fraction"), self.neighbor_frac);
        o.set(&format!("{prefix}.alpha_source"), self.alpha_source);
    }
}

#[derive(Args)]
struct OptimizerArgs {
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
}

impl OptimizerArgs {
    fn apply(&self, o: &mut Overrides, prefix: &str) {
        o.set(&format!("{prefix}.restarts"), self.restarts);
        o.set(&format!("{prefix}.max_iter"), self.max_iter);
        o.set(&format!("{prefix}.grad_tol"), self.grad_tol);
    }
}

#[derive(Args)]
struct SamplerArgs {
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    initial_step: Option<f64>,
    #[arg(long)]
    adapt_target: Option<f64>,
    /// Nodes of the positive stable density approximation.
    #[arg(long)]
    n_grid: Option<usize>,
}

impl SamplerArgs {
    fn apply(&self, o: &mut Overrides, prefix: &str) {
        o.set(&format!("{prefix}.iterations"), self.iterations);
        o.set(&format!("{prefix}.burn_in"), self.burn_in);
        o.set(&format!("{prefix}.thin"), self.thin);
        o.set(&format!("{prefix}.initial_step"), self.initial_step);
        o.set(&format!("{prefix}.adapt_target"), self.adapt_target);
        o.set(&format!("{prefix}.n_grid"), self.n_grid);
    }
}

#[derive(Args)]
struct ScenarioArgs {
    /// Number of true basis functions (a perfect square).
    #[arg(long = "L-true")]
    l_true: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    n_t: Option<usize>,
    #[arg(long)]
    n_s: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    datasets: Option<usize>,
}

impl ScenarioArgs {
    fn apply(&self, o: &mut Overrides) {
        o.set("scenario.L_true", self.l_true);
        o.set("scenario.alpha", self.alpha);
        o.set("scenario.n_t", self.n_t);
        o.set("scenario.n_s", self.n_s);
        o.set("scenario.rho", self.rho);
        o.set("scenario.n_datasets", self.datasets);
    }
}

#[derive(Args)]
struct TransformArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Output panel CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitEbfArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Number of basis functions.
    #[arg(long = "L")]
    l: Option<usize>,
    #[command(flatten)]
    dependence: DependenceArgs,
    #[command(flatten)]
    optimizer: OptimizerArgs,
    /// Basis sizes for an elbow curve.
    #[arg(long, value_delimiter = ',')]
    elbow: Option<Vec<usize>>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct FitGkfArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long = "L")]
    l: Option<usize>,
    #[command(flatten)]
    dependence: DependenceArgs,
    /// Kernel bandwidth; estimated when omitted.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    rho_grid: Option<Vec<f64>>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Basis sizes to fit; defaults to the true size.
    #[arg(long = "fit-L", value_delimiter = ',')]
    fit_l: Option<Vec<usize>>,
    #[command(flatten)]
    dependence: DependenceArgs,
    #[command(flatten)]
    optimizer: OptimizerArgs,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct McmcArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    basis: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Fit report to read alpha from.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Rank-transform the panel to unit Frechet margins first.
    #[arg(long)]
    transform: bool,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Basis methods to compare: ebf, gkf.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Option<Vec<BasisMethod>>,
    /// Basis sizes to compare.
    #[arg(long = "L", value_delimiter = ',')]
    l: Option<Vec<usize>>,
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    dependence: DependenceArgs,
    #[command(flatten)]
    optimizer: OptimizerArgs,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn parse_grid(s: &str) -> Result<[usize; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [x, y] => match (x.trim().parse(), y.trim().parse()) {
            (Ok(x), Ok(y)) => Ok([x, y]),
            _ => Err(format!("expected NX,NY, got {s:?}")),
        },
        _ => Err(format!("expected NX,NY, got {s:?}")),
    }
}

#[derive(Args)]
struct MapArgs {
    #[arg(long)]
    sites: Option<PathBuf>,
    #[arg(long)]
    basis: Option<PathBuf>,
    /// Fit report to read alpha and delta from.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Interpolation bandwidth.
    #[arg(long)]
    delta: Option<f64>,
    /// Grid size as NX,NY.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<[usize; 2]>,
    #[arg(long)]
    ref_site: Option<String>,
    /// Skip the PGM heatmaps.
    #[arg(long)]
    no_pgm: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))?;
    }
    let file = cli.config.as_deref();
    let threads = cli.threads;
    let mut o = Overrides::default();
    o.set("seed", cli.seed);
    match cli.command {
        Command::Transform(a) => {
            a.input.apply(&mut o);
            o.set("out", a.out.as_ref());
            commands::transform(resolve(file, o)?, threads)
        }
        Command::FitEbf(a) => {
            a.input.apply(&mut o);
            o.set("fit.n_basis", a.l);
            a.dependence.apply(&mut o, "dependence");
            a.optimizer.apply(&mut o, "fit");
            o.set("elbow", a.elbow.as_ref());
            o.set("out_dir", a.out_dir.as_ref());
            commands::fit_ebf_cmd(resolve(file, o)?, threads)
        }
        Command::FitGkf(a) => {
            a.input.apply(&mut o);
            o.set("L", a.l);
            a.dependence.apply(&mut o, "dependence");
            o.set("rho", a.rho);
            o.set("rho_grid", a.rho_grid.as_ref());
            o.set("out_dir", a.out_dir.as_ref());
            commands::fit_gkf_cmd(resolve(file, o)?, threads)
        }
        Command::Simulate(a) => {
            a.scenario.apply(&mut o);
            o.set("out_dir", a.out_dir.as_ref());
            commands::simulate_cmd(resolve(file, o)?, threads)
        }
        Command::Study(a) => {
            a.scenario.apply(&mut o);
            o.set("study.fit_ls", a.fit_l.as_ref());
            a.dependence.apply(&mut o, "study.dependence");
            a.optimizer.apply(&mut o, "study.fit");
            o.set("out_dir", a.out_dir.as_ref());
            commands::study_cmd(resolve(file, o)?, threads)
        }
        Command::Mcmc(a) => {
            a.input.apply(&mut o);
            o.set("basis", a.basis.as_ref());
            o.set("alpha", a.alpha);
            o.set("report", a.report.as_ref());
            o.set("transform", a.transform.then_some(true));
            a.sampler.apply(&mut o, "mcmc");
            o.set("out_dir", a.out_dir.as_ref());
            commands::mcmc_cmd(resolve(file, o)?, threads)
        }
        Command::Cv(a) => {
            a.input.apply(&mut o);
            o.set("methods", a.methods.as_ref());
            o.set("L", a.l.as_ref());
            o.set("cv.k", a.k);
            a.dependence.apply(&mut o, "cv.dependence");
            a.optimizer.apply(&mut o, "cv.fit");
            a.sampler.apply(&mut o, "cv.mcmc");
            o.set("out_dir", a.out_dir.as_ref());
            commands::cv_cmd(resolve(file, o)?, threads)
        }
        Command::Map(a) => {
            o.set("sites", a.sites.as_ref());
            o.set("basis", a.basis.as_ref());
            o.set("report", a.report.as_ref());
            o.set("alpha", a.alpha);
            o.set("delta", a.delta);
            o.set("grid", a.grid);
            o.set("ref_site", a.ref_site.as_ref());
            o.set("pgm", a.no_pgm.then_some(false));
            o.set("out_dir", a.out_dir.as_ref());
            commands::map_cmd(resolve(file, o)?, threads)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
