//! Command-line front end: `simulate`, `fit`, `path`, `cv` and `bench`.
//!
//! Settings resolve as defaults, then an optional JSON config file, then
//! flags. Every output file carries the resolved configuration (without
//! `--jobs` and `--out`, which do not affect results). Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | configuration or usage error |
//! | 3 | data validation or parse error |
//! | 4 | numerical failure |
//! | 5 | I/O error |

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data_model::{break_ties, validate_dataset, GroupStructure, SurvivalDataset};
use crate::error::{Error, Result};
use crate::io;
use crate::optimizer::{critical_lambda, log_grid, ArmijoConfig, FitConfig, FitResult, Prepared};
use crate::penalty::{PenaltyKind, PenaltySpec, DEFAULT_MCP_GAMMA, DEFAULT_SCAD_GAMMA};
use crate::simulate::{run_benchmark, simulate_dataset, BenchConfig, SimConfig};
use crate::tuning::{kfold_cv, make_lambda_grid, solution_path_prepared, DEFAULT_FOLDS, DEFAULT_GRID_POINTS, DEFAULT_GRID_RATIO};

pub const SEED_ENV: &str = "FRAILTY_GLASSO_SEED";

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_IO: i32 = 5;

/// Text stored next to benchmark R^2 values.
pub const R2_DEFINITION: &str = "Cox-Snell likelihood-ratio pseudo R^2: 1 - exp(2 (l_null - l_fit) / m), \
with l the frailty marginal log-likelihood at the fitted (beta, alpha, baseline hazard), m the total number \
of observations and the null model refitted with beta = 0";

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::DegenerateConfig(_) => EXIT_CONFIG,
        Error::Validation(_)
        | Error::NoEvents
        | Error::FoldWithoutEvents(_)
        | Error::DimensionMismatch { .. }
        | Error::Parse(_) => EXIT_DATA,
        Error::NonFiniteResult(_)
        | Error::ZeroDenominator(_)
        | Error::LineSearchFailed { .. }
        | Error::InvalidLoglikPair { .. } => EXIT_NUMERIC,
        Error::Io(_) => EXIT_IO,
    }
}

#[derive(Debug, Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
    exit_code: i32,
}

fn error_json(kind: &str, message: String, code: i32) -> String {
    serde_json::to_string(&ErrorReport { error: kind, message, exit_code: code })
        .unwrap_or_else(|_| format!("{{\"error\":\"{kind}\",\"exit_code\":{code}}}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TieBreak {
    /// Reject datasets with tied event times.
    #[default]
    Error,
    /// Separate tied times by tiny deterministic offsets.
    Jitter,
}

/// `N:RATIO`, as in `50:0.01`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaGridSpec {
    pub points: usize,
    pub ratio: f64,
}

impl FromStr for LambdaGridSpec {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (n, r) = s.split_once(':').ok_or_else(|| format!("expected N:RATIO, got {s:?}"))?;
        let points = n.trim().parse().map_err(|_| format!("bad grid size {n:?}"))?;
        let ratio = r.trim().parse().map_err(|_| format!("bad grid ratio {r:?}"))?;
        Ok(Self { points, ratio })
    }
}

/// `LO:HI:N`, as in `0.05:20:20`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaGridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl AlphaGridSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.lo > 0.0 && self.hi >= self.lo && self.hi.is_finite()) || self.points == 0 {
            return Err(Error::Config(format!(
                "alpha grid needs 0 < lo <= hi and at least one point, got {}:{}:{}",
                self.lo, self.hi, self.points
            )));
        }
        if self.points > 1 && self.lo == self.hi {
            return Err(Error::Config("alpha grid with several points needs lo < hi".into()));
        }
        Ok(log_grid(self.lo, self.hi, self.points))
    }
}

impl FromStr for AlphaGridSpec {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected LO:HI:N, got {s:?}"));
        }
        let num = |x: &str| x.trim().parse::<f64>().map_err(|_| format!("bad number {x:?}"));
        let points = parts[2].trim().parse().map_err(|_| format!("bad point count {:?}", parts[2]))?;
        Ok(Self { lo: num(parts[0])?, hi: num(parts[1])?, points })
    }
}

/// Fully resolved settings of one run; also the config-file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub groups: Option<PathBuf>,
    pub penalty: PenaltyKind,
    pub scad_gamma: f64,
    pub mcp_gamma: f64,
    pub lambda: Option<f64>,
    pub lambda_grid: LambdaGridSpec,
    pub alpha_grid: AlphaGridSpec,
    pub k: usize,
    pub replicates: usize,
    pub penalties: Vec<PenaltyKind>,
    pub seed: u64,
    pub tie_break: TieBreak,
    pub outer_tol: f64,
    pub max_outer: usize,
    pub max_bcgd: usize,
    pub armijo: ArmijoConfig,
    pub standardize: bool,
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fit = FitConfig::default();
        Self {
            data: None,
            groups: None,
            penalty: PenaltyKind::GroupLasso,
            scad_gamma: DEFAULT_SCAD_GAMMA,
            mcp_gamma: DEFAULT_MCP_GAMMA,
            lambda: None,
            lambda_grid: LambdaGridSpec { points: DEFAULT_GRID_POINTS, ratio: DEFAULT_GRID_RATIO },
            alpha_grid: AlphaGridSpec { lo: 0.05, hi: 20.0, points: 20 },
            k: DEFAULT_FOLDS,
            replicates: 100,
            penalties: PenaltyKind::ALL.to_vec(),
            seed: 0,
            tie_break: TieBreak::Error,
            outer_tol: fit.outer_tol,
            max_outer: fit.max_outer,
            max_bcgd: fit.max_bcgd,
            armijo: fit.armijo,
            standardize: fit.standardize,
            sim: SimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn fit_config(&self) -> Result<FitConfig> {
        let cfg = FitConfig {
            lambda: self.lambda.unwrap_or(0.0),
            alpha_grid: self.alpha_grid.values()?,
            outer_tol: self.outer_tol,
            max_outer: self.max_outer,
            max_bcgd: self.max_bcgd,
            armijo: self.armijo,
            standardize: self.standardize,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn penalty_spec(&self, kind: PenaltyKind, lambda: f64) -> Result<PenaltySpec> {
        PenaltySpec::with_shapes(kind, lambda, self.scad_gamma, self.mcp_gamma)
    }

    pub fn bench_config(&self) -> Result<BenchConfig> {
        Ok(BenchConfig {
            sim: SimConfig { seed: self.seed, ..self.sim.clone() },
            n_replicates: self.replicates,
            penalties: self.penalties.clone(),
            k: self.k,
            fit: self.fit_config()?,
            grid_points: self.lambda_grid.points,
            grid_ratio: self.lambda_grid.ratio,
            gamma_scad: self.scad_gamma,
            gamma_mcp: self.mcp_gamma,
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "frailty-glasso", version, about = "Group-penalized Cox regression with shared gamma frailty")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a clustered dataset; writes data.csv, groups.json and truth.json.
    Simulate(Flags),
    /// Fit at a single lambda; writes fit.json.
    Fit(Flags),
    /// Fit a warm-started lambda path; writes path.csv.
    Path(Flags),
    /// Cross-validate over a lambda grid; writes cv.csv and fit.json.
    Cv(Flags),
    /// Run the replicate benchmark; writes bench_rows.csv and bench_summary.json.
    Bench(Flags),
}

impl Command {
    fn flags(&self) -> &Flags {
        match self {
            Command::Simulate(f) | Command::Fit(f) | Command::Path(f) | Command::Cv(f) | Command::Bench(f) => f,
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset CSV (`cluster_id,time,status,x1,...,xp`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Covariate groups JSON (`{"groups": [[1,2],[3]]}`, one-based).
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// `glasso`, `gscad` or `gmcp`.
    #[arg(long, value_parser = parse_penalty)]
    pub penalty: Option<PenaltyKind>,
    /// SCAD shape parameter (> 2).
    #[arg(long)]
    pub scad_gamma: Option<f64>,
    /// MCP shape parameter (> 1).
    #[arg(long)]
    pub mcp_gamma: Option<f64>,
    /// Regularization strength for `fit`.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Grid size and lambda_min / lambda_max ratio, `N:RATIO`.
    #[arg(long)]
    pub lambda_grid: Option<LambdaGridSpec>,
    /// Log-spaced frailty grid, `LO:HI:N`.
    #[arg(long)]
    pub alpha_grid: Option<AlphaGridSpec>,
    /// Number of cross-validation folds.
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of simulated replicates for `bench`.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Comma-separated penalties for `bench`.
    #[arg(long, value_delimiter = ',', value_parser = parse_penalty)]
    pub penalties: Option<Vec<PenaltyKind>>,
    /// Master seed for simulation and fold assignment.
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    /// Worker threads for folds and replicates; does not change results.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory (or file for `fit`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Handling of tied event times.
    #[arg(long, value_enum)]
    pub tie_break: Option<TieBreak>,
}

fn parse_penalty(s: &str) -> std::result::Result<PenaltyKind, String> {
    s.parse::<PenaltyKind>().map_err(|e| e.to_string())
}

/// Applies the config file and flags on top of the defaults.
pub fn resolve(flags: &Flags) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(path) => io::read_json::<RunConfig>(path).map_err(|e| match e {
            Error::Parse(m) => Error::Config(format!("config file: {m}")),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = &flags.$field {
                cfg.$field = v.clone();
            }
        )*};
    }
    set!(penalty, scad_gamma, mcp_gamma, lambda_grid, alpha_grid, k, replicates, penalties, seed, tie_break);
    if flags.data.is_some() {
        cfg.data = flags.data.clone();
    }
    if flags.groups.is_some() {
        cfg.groups = flags.groups.clone();
    }
    if flags.lambda.is_some() {
        cfg.lambda = flags.lambda;
    }
    cfg.sim.seed = cfg.seed;
    Ok(cfg)
}

/// Loads and validates the dataset named in the config.
pub fn load_data(cfg: &RunConfig) -> Result<SurvivalDataset> {
    let path = cfg.data.as_ref().ok_or_else(|| Error::Config("--data is required".into()))?;
    let raw = io::read_dataset(path, None)?;
    let groups = match &cfg.groups {
        Some(g) => io::read_groups(g, raw.p)?,
        None => GroupStructure::new_unchecked((0..raw.p).map(|k| vec![k]).collect()),
    };
    let raw = SurvivalDataset { groups, ..raw };
    let raw = match cfg.tie_break {
        TieBreak::Error => raw,
        TieBreak::Jitter => break_ties(raw),
    };
    validate_dataset(raw)
}

/// Dense fit summary written to JSON.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub penalty: PenaltyKind,
    pub lambda: f64,
    pub beta_hat: Vec<f64>,
    /// One-based indices of covariate groups with a nonzero block.
    pub active_groups: Vec<usize>,
    pub alpha_hat: f64,
    pub event_times: Vec<f64>,
    pub rho_hat: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub n_outer: usize,
    pub converged: bool,
    pub loglik: f64,
}

impl FitReport {
    pub fn new(fit: &FitResult) -> Self {
        Self {
            penalty: fit.penalty.kind,
            lambda: fit.penalty.lambda,
            beta_hat: fit.beta_hat.clone(),
            active_groups: fit.active_groups.iter().map(|j| j + 1).collect(),
            alpha_hat: fit.alpha_hat,
            event_times: fit.hazard_hat.event_times.clone(),
            rho_hat: fit.hazard_hat.jumps.clone(),
            objective_trace: fit.objective_trace.clone(),
            n_outer: fit.n_outer,
            converged: fit.converged,
            loglik: fit.loglik,
        }
    }
}

#[derive(Serialize)]
struct WithConfig<'a, T: Serialize> {
    config: &'a RunConfig,
    #[serde(flatten)]
    body: T,
}

fn write_json<T: Serialize>(path: &Path, cfg: &RunConfig, body: T) -> Result<()> {
    io::write_json(path, &WithConfig { config: cfg, body })
}

/// CSV preceded by a `# config: {...}` comment line.
fn write_csv(path: &Path, cfg: &RunConfig, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let config = serde_json::to_string(cfg).map_err(|e| Error::Parse(e.to_string()))?;
    let text = format!("# config: {config}\n{}", io::format_csv(header, rows));
    io::write_atomic(path, text.as_bytes())
}

fn out_dir(flags: &Flags) -> PathBuf {
    flags.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn lambda_grid_for(cfg: &RunConfig, prepared: &Prepared) -> Result<Vec<f64>> {
    make_lambda_grid(critical_lambda(&prepared.design, &cfg.fit_config()?)?, cfg.lambda_grid.points, cfg.lambda_grid.ratio)
}

fn cmd_simulate(cfg: &RunConfig, flags: &Flags) -> Result<()> {
    let truth = simulate_dataset(&cfg.sim)?;
    let dir = out_dir(flags);
    io::write_dataset(&dir.join("data.csv"), &truth.dataset)?;
    io::write_groups(&dir.join("groups.json"), &truth.dataset.groups)?;
    #[derive(Serialize)]
    struct Truth<'a> {
        beta_true: &'a [f64],
        true_active_groups: Vec<usize>,
        frailties: &'a [f64],
        censoring_fraction: f64,
    }
    write_json(
        &dir.join("truth.json"),
        cfg,
        Truth {
            beta_true: &truth.beta_true,
            true_active_groups: truth.true_active_groups.iter().map(|j| j + 1).collect(),
            frailties: &truth.frailties,
            censoring_fraction: truth.censoring_fraction(),
        },
    )
}

fn cmd_fit(cfg: &RunConfig, flags: &Flags) -> Result<()> {
    let lambda = cfg.lambda.ok_or_else(|| Error::Config("fit needs --lambda".into()))?;
    let data = load_data(cfg)?;
    let fit_cfg = cfg.fit_config()?;
    let prepared = Prepared::new(&data, fit_cfg.standardize);
    let fit = prepared.fit(&cfg.penalty_spec(cfg.penalty, lambda)?, &fit_cfg, None)?;
    let path = flags.out.clone().unwrap_or_else(|| PathBuf::from("fit.json"));
    write_json(&path, cfg, FitReport::new(&fit))
}

fn cmd_path(cfg: &RunConfig, flags: &Flags) -> Result<()> {
    let data = load_data(cfg)?;
    let fit_cfg = cfg.fit_config()?;
    let prepared = Prepared::new(&data, fit_cfg.standardize);
    let grid = lambda_grid_for(cfg, &prepared)?;
    let path = solution_path_prepared(&prepared, &cfg.penalty_spec(cfg.penalty, grid[0])?, &fit_cfg, &grid)?;
    let mut rows = Vec::new();
    for (lam, fit) in path.lambdas.iter().zip(&path.fits) {
        for (j, g) in data.groups.groups().iter().enumerate() {
            let norm = match fit {
                Some(f) => g.iter().map(|&k| f.beta_hat[k] * f.beta_hat[k]).sum::<f64>().sqrt(),
                None => f64::NAN,
            };
            rows.push(vec![lam.to_string(), (j + 1).to_string(), norm.to_string(), u8::from(norm > 0.0).to_string()]);
        }
    }
    write_csv(&out_dir(flags).join("path.csv"), cfg, &["lambda", "group_id", "norm", "active"], &rows)
}

fn cmd_cv(cfg: &RunConfig, flags: &Flags) -> Result<()> {
    let data = load_data(cfg)?;
    let fit_cfg = cfg.fit_config()?;
    let prepared = Prepared::new(&data, fit_cfg.standardize);
    let grid = lambda_grid_for(cfg, &prepared)?;
    let spec = cfg.penalty_spec(cfg.penalty, grid[0])?;
    let cv = kfold_cv(&data, &spec, &fit_cfg, &grid, cfg.k, cfg.seed)?;
    let path = solution_path_prepared(&prepared, &spec, &fit_cfg, &grid[..=cv.opt_index])?;
    let fit = path
        .fits
        .last()
        .and_then(|f| f.clone())
        .ok_or(Error::NonFiniteResult("refit at the selected lambda"))?;
    let dir = out_dir(flags);
    let rows: Vec<Vec<String>> = cv.lambdas.iter().zip(&cv.cve).map(|(l, c)| vec![l.to_string(), c.to_string()]).collect();
    write_csv(&dir.join("cv.csv"), cfg, &["lambda", "cve"], &rows)?;
    #[derive(Serialize)]
    struct CvFit<'a> {
        lambda_opt: f64,
        opt_index: usize,
        cve_opt: f64,
        fold_assignment: &'a [(String, usize)],
        fit: FitReport,
    }
    write_json(
        &dir.join("fit.json"),
        cfg,
        CvFit {
            lambda_opt: cv.lambda_opt,
            opt_index: cv.opt_index,
            cve_opt: cv.cve[cv.opt_index],
            fold_assignment: &cv.fold_assignment,
            fit: FitReport::new(&fit),
        },
    )
}

fn cmd_bench(cfg: &RunConfig, flags: &Flags) -> Result<()> {
    let summary = run_benchmark(&cfg.bench_config()?)?;
    let dir = out_dir(flags);
    let rows: Vec<Vec<String>> = summary
        .rows
        .iter()
        .map(|r| {
            vec![
                r.replicate.to_string(),
                r.penalty.to_string(),
                r.lambda_opt.to_string(),
                r.cve.to_string(),
                r.r2.to_string(),
                r.tp_groups.to_string(),
                r.fp_groups.to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("bench_rows.csv"),
        cfg,
        &["replicate", "penalty", "lambda_opt", "cve", "r2", "tp_groups", "fp_groups"],
        &rows,
    )?;
    #[derive(Serialize)]
    struct Body<'a> {
        r2_definition: &'a str,
        per_penalty: &'a [crate::simulate::PenaltySummary],
        failed: &'a [crate::simulate::FailedReplicate],
        censoring_fractions: &'a [f64],
    }
    write_json(
        &dir.join("bench_summary.json"),
        cfg,
        Body {
            r2_definition: R2_DEFINITION,
            per_penalty: &summary.per_penalty,
            failed: &summary.failed,
            censoring_fractions: &summary.censoring_fractions,
        },
    )
}

fn dispatch(cli: &Cli) -> Result<()> {
    let flags = cli.command.flags();
    let cfg = resolve(flags)?;
    let work = || match &cli.command {
        Command::Simulate(_) => cmd_simulate(&cfg, flags),
        Command::Fit(_) => cmd_fit(&cfg, flags),
        Command::Path(_) => cmd_path(&cfg, flags),
        Command::Cv(_) => cmd_cv(&cfg, flags),
        Command::Bench(_) => cmd_bench(&cfg, flags),
    };
    match flags.jobs {
        Some(0) => Err(Error::Config("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work),
        None => work(),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors are reported as one JSON object on standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", error_json("usage", e.to_string().trim_end().to_string(), EXIT_CONFIG));
            return EXIT_CONFIG;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_json(e.kind(), e.to_string(), code));
            code
        }
    }
}
