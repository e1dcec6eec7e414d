//! Clustered survival data generator and the replicate benchmark that
//! compares the three group penalties.
//!
//! Covariates are Gaussian with AR(1) correlation `rho^|k - l|`, the
//! baseline hazard is Weibull `scale * shape * t^(shape - 1)`, each cluster
//! draws a gamma(alpha, alpha) frailty and censoring is exponential.

use std::collections::HashSet;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{validate_dataset, Cluster, GroupStructure, Observation, SurvivalDataset};
use crate::error::{Error, Result};
use crate::metrics::{pseudo_r2, selection_metrics};
use crate::optimizer::{fit_null_design, FitConfig, Prepared};
use crate::penalty::{lambda_max, PenaltyKind, PenaltySpec, DEFAULT_MCP_GAMMA, DEFAULT_SCAD_GAMMA};
use crate::tuning::{kfold_cv, make_lambda_grid, solution_path_prepared};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_clusters: usize,
    pub cluster_size: usize,
    pub p: usize,
    pub n_covariate_groups: usize,
    pub ar_rho: f64,
    pub weibull_scale: f64,
    pub weibull_shape: f64,
    pub alpha_true: f64,
    /// `None` selects [`default_beta_true`].
    pub beta_true: Option<Vec<f64>>,
    pub censor_rate: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_clusters: 10,
            cluster_size: 10,
            p: 100,
            n_covariate_groups: 10,
            ar_rho: 0.5,
            weibull_scale: 50.0,
            weibull_shape: 2.0,
            alpha_true: 2.0,
            beta_true: None,
            censor_rate: 3.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::DegenerateConfig(msg));
        if self.n_clusters == 0 || self.cluster_size == 0 {
            return bad("need at least one cluster with at least one observation".into());
        }
        if self.p == 0 || self.n_covariate_groups == 0 || self.n_covariate_groups > self.p {
            return bad(format!("cannot split p = {} into {} groups", self.p, self.n_covariate_groups));
        }
        if !(self.ar_rho > -1.0 && self.ar_rho < 1.0) {
            return bad(format!("AR correlation must lie in (-1, 1), got {}", self.ar_rho));
        }
        for (name, v) in [
            ("weibull scale", self.weibull_scale),
            ("weibull shape", self.weibull_shape),
            ("alpha", self.alpha_true),
            ("censoring rate", self.censor_rate),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if let Some(b) = &self.beta_true {
            if b.len() != self.p {
                return bad(format!("beta_true has length {} but p = {}", b.len(), self.p));
            }
        }
        Ok(())
    }

    pub fn groups(&self) -> Result<GroupStructure> {
        GroupStructure::contiguous(self.p, self.n_covariate_groups)
    }

    pub fn resolved_beta(&self) -> Result<Vec<f64>> {
        match &self.beta_true {
            Some(b) => Ok(b.clone()),
            None => Ok(default_beta_true(&self.groups()?, self.p)),
        }
    }
}

/// The first two covariate groups carry alternating `0.5, -0.5, ...`
/// effects; all other coefficients are zero.
pub fn default_beta_true(groups: &GroupStructure, p: usize) -> Vec<f64> {
    let mut beta = vec![0.0; p];
    for g in groups.groups().iter().take(2) {
        for (pos, &k) in g.iter().enumerate() {
            beta[k] = if pos % 2 == 0 { 0.5 } else { -0.5 };
        }
    }
    beta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub dataset: SurvivalDataset,
    pub frailties: Vec<f64>,
    /// Zero-based indices of groups with a nonzero true block.
    pub true_active_groups: Vec<usize>,
    pub beta_true: Vec<f64>,
}

impl SimTruth {
    pub fn censoring_fraction(&self) -> f64 {
        let m = self.dataset.n_obs() as f64;
        1.0 - self.dataset.n_events() as f64 / m
    }
}

/// Simulates one dataset from `cfg.seed`.
pub fn simulate_dataset(cfg: &SimConfig) -> Result<SimTruth> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    simulate_with_rng(cfg, &mut rng)
}

pub fn simulate_with_rng(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<SimTruth> {
    cfg.validate()?;
    let groups = cfg.groups()?;
    let beta = cfg.resolved_beta()?;
    let frailty = Gamma::new(cfg.alpha_true, 1.0 / cfg.alpha_true)
        .map_err(|e| Error::DegenerateConfig(format!("frailty distribution: {e}")))?;
    let censor = Exp::new(cfg.censor_rate).map_err(|e| Error::DegenerateConfig(format!("censoring: {e}")))?;
    let innovation_sd = (1.0 - cfg.ar_rho * cfg.ar_rho).sqrt();
    let inv_shape = 1.0 / cfg.weibull_shape;

    let mut event_times: HashSet<u64> = HashSet::new();
    let mut clusters = Vec::with_capacity(cfg.n_clusters);
    let mut frailties = Vec::with_capacity(cfg.n_clusters);
    for i in 0..cfg.n_clusters {
        let u: f64 = frailty.sample(rng);
        frailties.push(u);
        let mut observations = Vec::with_capacity(cfg.cluster_size);
        for _ in 0..cfg.cluster_size {
            let mut x = Vec::with_capacity(cfg.p);
            let mut prev: f64 = rng.sample(StandardNormal);
            x.push(prev);
            for _ in 1..cfg.p {
                let z: f64 = rng.sample(StandardNormal);
                prev = cfg.ar_rho * prev + innovation_sd * z;
                x.push(prev);
            }
            let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let rate = cfg.weibull_scale * u * eta.exp();
            let c: f64 = censor.sample(rng);
            let (time, event) = loop {
                // uniform on (0, 1]
                let unif: f64 = 1.0 - rng.random::<f64>();
                let t = (-unif.ln() / rate).powf(inv_shape);
                if t <= c {
                    if t > 0.0 && t.is_finite() && event_times.insert(t.to_bits()) {
                        break (t, true);
                    }
                } else {
                    break (c, false);
                }
            };
            observations.push(Observation { time, event, covariates: x });
        }
        clusters.push(Cluster { id: (i + 1).to_string(), observations });
    }

    let true_active_groups = groups
        .groups()
        .iter()
        .enumerate()
        .filter(|(_, g)| g.iter().any(|&k| beta[k] != 0.0))
        .map(|(j, _)| j)
        .collect();
    let dataset = validate_dataset(SurvivalDataset { clusters, p: cfg.p, groups })?;
    Ok(SimTruth { dataset, frailties, true_active_groups, beta_true: beta })
}

/// Independent reproducible stream for replicate `r` of a master seed.
pub fn replicate_rng(master_seed: u64, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(r as u64 + 1);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub sim: SimConfig,
    pub n_replicates: usize,
    pub penalties: Vec<PenaltyKind>,
    pub k: usize,
    pub fit: FitConfig,
    pub grid_points: usize,
    pub grid_ratio: f64,
    pub gamma_scad: f64,
    pub gamma_mcp: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            n_replicates: 100,
            penalties: PenaltyKind::ALL.to_vec(),
            k: 10,
            fit: FitConfig::default(),
            grid_points: crate::tuning::DEFAULT_GRID_POINTS,
            grid_ratio: crate::tuning::DEFAULT_GRID_RATIO,
            gamma_scad: DEFAULT_SCAD_GAMMA,
            gamma_mcp: DEFAULT_MCP_GAMMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub replicate: usize,
    pub penalty: PenaltyKind,
    pub lambda_opt: f64,
    pub cve: f64,
    pub r2: f64,
    pub tp_groups: usize,
    pub fp_groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Summary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        Some(Self { mean, median: quantile(&v, 0.5), q1: quantile(&v, 0.25), q3: quantile(&v, 0.75) })
    }
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySummary {
    pub penalty: PenaltyKind,
    pub n_rows: usize,
    pub lambda_opt: Option<Summary>,
    pub cve: Option<Summary>,
    pub r2: Option<Summary>,
    pub tp_groups: Option<Summary>,
    pub fp_groups: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplicate {
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub rows: Vec<BenchRow>,
    pub per_penalty: Vec<PenaltySummary>,
    pub failed: Vec<FailedReplicate>,
    pub censoring_fractions: Vec<f64>,
}

impl BenchmarkSummary {
    pub fn summary_for(&self, kind: PenaltyKind) -> Option<&PenaltySummary> {
        self.per_penalty.iter().find(|s| s.penalty == kind)
    }
}

/// Simulates, cross-validates and refits one replicate for every penalty.
pub fn run_replicate(cfg: &BenchConfig, r: usize) -> Result<(Vec<BenchRow>, f64)> {
    let mut rng = replicate_rng(cfg.sim.seed, r);
    let truth = simulate_with_rng(&cfg.sim, &mut rng)?;
    let fold_seed: u64 = rng.random();
    let data = &truth.dataset;
    let prepared = Prepared::new(data, cfg.fit.standardize);
    let null = fit_null_design(&prepared.design, &cfg.fit)?;
    let grid = make_lambda_grid(lambda_max(&prepared.design, null.alpha)?, cfg.grid_points, cfg.grid_ratio)?;

    let mut rows = Vec::with_capacity(cfg.penalties.len());
    for &kind in &cfg.penalties {
        let spec = PenaltySpec::with_shapes(kind, grid[0], cfg.gamma_scad, cfg.gamma_mcp)?;
        let cv = kfold_cv(data, &spec, &cfg.fit, &grid, cfg.k, fold_seed)?;
        let path = solution_path_prepared(&prepared, &spec, &cfg.fit, &grid[..=cv.opt_index])?;
        let fit = path
            .fits
            .last()
            .and_then(|f| f.clone())
            .ok_or(Error::NonFiniteResult("refit at the selected lambda"))?;
        let r2 = match pseudo_r2(fit.loglik, null.loglik, data.n_obs()) {
            Ok(v) => v,
            // solver tolerance can leave the penalized fit marginally below the null
            Err(Error::InvalidLoglikPair { fit: f, null: n0 }) if n0 - f <= 1e-6 * n0.abs() => {
                warn!("replicate {r}, {kind}: fitted log-likelihood {f} marginally below null {n0}");
                0.0
            }
            Err(e) => return Err(e),
        };
        let conf = selection_metrics(&fit.beta_hat, &truth.true_active_groups, &data.groups);
        rows.push(BenchRow {
            replicate: r,
            penalty: kind,
            lambda_opt: cv.lambda_opt,
            cve: cv.cve[cv.opt_index],
            r2,
            tp_groups: conf.tp,
            fp_groups: conf.fp,
        });
    }
    Ok((rows, truth.censoring_fraction()))
}

/// Runs `cfg.n_replicates` replicates (in parallel on the current rayon
/// pool) and aggregates per-penalty distributions in replicate order.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchmarkSummary> {
    if cfg.n_replicates == 0 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    if cfg.penalties.is_empty() {
        return Err(Error::Config("need at least one penalty".into()));
    }
    if cfg.k < 2 || cfg.k > cfg.sim.n_clusters {
        return Err(Error::Config(format!("k = {} must lie in 2..={} (the number of clusters)", cfg.k, cfg.sim.n_clusters)));
    }
    cfg.sim.validate()?;
    cfg.fit.validate()?;
    let outcomes: Vec<Result<(Vec<BenchRow>, f64)>> =
        (0..cfg.n_replicates).into_par_iter().map(|r| run_replicate(cfg, r)).collect();

    let mut rows = Vec::new();
    let mut failed = Vec::new();
    let mut censoring_fractions = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok((mut rr, cf)) => {
                rows.append(&mut rr);
                censoring_fractions.push(cf);
            }
            Err(e) => {
                warn!("replicate {r} failed: {e}");
                failed.push(FailedReplicate { replicate: r, error: e.to_string() });
            }
        }
    }
    let per_penalty = cfg
        .penalties
        .iter()
        .map(|&kind| {
            let sel: Vec<&BenchRow> = rows.iter().filter(|row| row.penalty == kind).collect();
            let col = |f: fn(&BenchRow) -> f64| Summary::from_values(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
            PenaltySummary {
                penalty: kind,
                n_rows: sel.len(),
                lambda_opt: col(|r| r.lambda_opt),
                cve: col(|r| r.cve),
                r2: col(|r| r.r2),
                tp_groups: col(|r| r.tp_groups as f64),
                fp_groups: col(|r| r.fp_groups as f64),
            }
        })
        .collect();
    Ok(BenchmarkSummary { rows, per_penalty, failed, censoring_fractions })
}
