//! Regularization grids, warm-started solution paths and cluster-level
//! k-fold cross-validation.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{BaselineHazard, Design, SurvivalDataset};
use crate::error::{Error, Result};
use crate::likelihood::{profile_hazard, LikelihoodContext};
use crate::optimizer::{critical_lambda, FitConfig, FitResult, Prepared, WarmStart};
use crate::penalty::PenaltySpec;

pub const DEFAULT_GRID_POINTS: usize = 50;
pub const DEFAULT_GRID_RATIO: f64 = 0.01;
pub const DEFAULT_FOLDS: usize = 10;
/// Fixed-point residual used when re-profiling the hazard on a test fold.
pub const TEST_PROFILE_TOL: f64 = 1e-8;
const TEST_PROFILE_MAX_SWEEPS: usize = 200_000;
const MAX_FOLD_RETRIES: usize = 20;

/// `n_points` log-spaced values from `lmax` down to `ratio * lmax`.
pub fn make_lambda_grid(lmax: f64, n_points: usize, ratio: f64) -> Result<Vec<f64>> {
    if n_points < 2 {
        return Err(Error::Config("a lambda grid needs at least two points".into()));
    }
    if !(lmax > 0.0) || !lmax.is_finite() {
        return Err(Error::Config(format!("lambda_max must be positive, got {lmax}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("grid ratio must lie in (0, 1), got {ratio}")));
    }
    let step = ratio.ln() / (n_points - 1) as f64;
    let mut grid: Vec<f64> = (0..n_points).map(|i| lmax * (step * i as f64).exp()).collect();
    grid[0] = lmax;
    grid[n_points - 1] = lmax * ratio;
    Ok(grid)
}

/// Default grid for `data`: `DEFAULT_GRID_POINTS` values from the group
/// LASSO critical lambda (at the null-fit alpha) down by `DEFAULT_GRID_RATIO`.
pub fn default_lambda_grid(data: &SurvivalDataset, cfg: &FitConfig) -> Result<Vec<f64>> {
    let prepared = Prepared::new(data, cfg.standardize);
    make_lambda_grid(critical_lambda(&prepared.design, cfg)?, DEFAULT_GRID_POINTS, DEFAULT_GRID_RATIO)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathResult {
    pub lambdas: Vec<f64>,
    /// `None` where the fit at that lambda failed.
    pub fits: Vec<Option<FitResult>>,
    pub errors: Vec<Option<String>>,
    pub active_counts: Vec<usize>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    if grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::Config("lambda values must be finite and non-negative".into()));
    }
    if grid.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::Config("lambda grid must be strictly decreasing".into()));
    }
    Ok(())
}

/// Fits along a decreasing grid, each fit warm-started from the previous one.
pub fn solution_path_prepared(
    prepared: &Prepared,
    spec: &PenaltySpec,
    cfg: &FitConfig,
    grid: &[f64],
) -> Result<PathResult> {
    check_grid(grid)?;
    let mut fits = Vec::with_capacity(grid.len());
    let mut errors = Vec::with_capacity(grid.len());
    let mut active_counts = Vec::with_capacity(grid.len());
    let mut warm: Option<WarmStart> = None;
    for &lam in grid {
        match prepared.fit(&spec.with_lambda(lam), cfg, warm.as_ref()) {
            Ok(f) => {
                warm = Some(f.internal.warm_start());
                active_counts.push(f.active_groups.len());
                fits.push(Some(f));
                errors.push(None);
            }
            Err(e @ (Error::NoEvents | Error::Config(_))) => return Err(e),
            Err(e) => {
                warn!("fit failed at lambda = {lam}: {e}");
                active_counts.push(0);
                fits.push(None);
                errors.push(Some(e.to_string()));
            }
        }
    }
    Ok(PathResult { lambdas: grid.to_vec(), fits, errors, active_counts })
}

pub fn solution_path(
    data: &SurvivalDataset,
    spec: &PenaltySpec,
    cfg: &FitConfig,
    grid: &[f64],
) -> Result<PathResult> {
    if data.n_events() == 0 {
        return Err(Error::NoEvents);
    }
    solution_path_prepared(&Prepared::new(data, cfg.standardize), spec, cfg, grid)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub lambdas: Vec<f64>,
    pub cve: Vec<f64>,
    pub lambda_opt: f64,
    pub opt_index: usize,
    /// `(cluster id, fold)` in dataset cluster order.
    pub fold_assignment: Vec<(String, usize)>,
    /// Per-fold negative test log-likelihoods, `[fold][lambda]`.
    pub fold_scores: Vec<Vec<f64>>,
}

/// Shuffles clusters into `k` near-equal folds, retrying until every fold
/// holds at least one event.
pub fn assign_folds(data: &SurvivalDataset, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = data.n_clusters();
    if k < 2 {
        return Err(Error::Config("cross-validation needs k >= 2".into()));
    }
    if k > n {
        return Err(Error::Config(format!("k = {k} exceeds the number of clusters ({n})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_empty = 0;
    for _ in 0..MAX_FOLD_RETRIES {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut fold = vec![0usize; n];
        for (pos, &c) in order.iter().enumerate() {
            fold[c] = pos % k;
        }
        let mut events = vec![0usize; k];
        for (c, &f) in fold.iter().enumerate() {
            events[f] += data.clusters[c].event_count();
        }
        match events.iter().position(|&e| e == 0) {
            None => return Ok(fold),
            Some(f) => last_empty = f,
        }
    }
    Err(Error::FoldWithoutEvents(last_empty))
}

/// Negative frailty log-likelihood of `test` at fixed original-scale
/// coefficients and frailty parameter, with the baseline hazard re-profiled
/// on the test data.
pub fn test_fold_score(test: &SurvivalDataset, beta: &[f64], alpha: f64) -> Result<f64> {
    let design = Design::new(test);
    if design.n_events() == 0 {
        return Err(Error::NoEvents);
    }
    // the likelihood is invariant to eta + c with rho * exp(-c); centering at
    // the maximum keeps the fixed-point right-hand sides bounded
    let mut eta = design.linear_predictor(beta);
    let top = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    eta.iter_mut().for_each(|e| *e -= top);
    let start = BaselineHazard::uniform(design.event_times.clone());
    let (hazard, residual) =
        profile_hazard(&eta, alpha, &design, &start, TEST_PROFILE_TOL, TEST_PROFILE_MAX_SWEEPS)?;
    if residual >= TEST_PROFILE_TOL {
        warn!("test-fold hazard profile stopped at residual {residual:.3e}");
    }
    let ctx = LikelihoodContext::new(&design, hazard)?;
    Ok(-ctx.marginal_loglik_eta(&eta, alpha)?)
}

/// Index of the smallest value, earliest on ties; on a decreasing grid the
/// earliest index is the larger lambda.
pub fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Cluster-level k-fold cross-validation over `grid`.
///
/// `CV(lambda) = sum over folds of the negative test log-likelihood, divided
/// by the total number of clusters`. Ties in the minimum go to the larger
/// lambda.
pub fn kfold_cv(
    data: &SurvivalDataset,
    spec: &PenaltySpec,
    cfg: &FitConfig,
    grid: &[f64],
    k: usize,
    seed: u64,
) -> Result<CvResult> {
    check_grid(grid)?;
    let fold = assign_folds(data, k, seed)?;
    let n = data.n_clusters() as f64;

    let fold_scores: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|f| -> Result<Vec<f64>> {
            let train_idx: Vec<usize> = (0..data.n_clusters()).filter(|&c| fold[c] != f).collect();
            let test_idx: Vec<usize> = (0..data.n_clusters()).filter(|&c| fold[c] == f).collect();
            let train = data.subset(&train_idx);
            let test = data.subset(&test_idx);
            let path = solution_path(&train, spec, cfg, grid)?;
            path.fits
                .iter()
                .zip(grid)
                .map(|(fit, lam)| match fit {
                    Some(fit) => match test_fold_score(&test, &fit.beta_hat, fit.alpha_hat) {
                        Ok(s) => Ok(s),
                        Err(Error::NonFiniteResult(_) | Error::ZeroDenominator(_)) => {
                            warn!("fold {f}, lambda {lam}: non-finite test score");
                            Ok(f64::INFINITY)
                        }
                        Err(e) => Err(e),
                    },
                    None => Ok(f64::INFINITY),
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let cve: Vec<f64> = (0..grid.len()).map(|l| fold_scores.iter().map(|s| s[l]).sum::<f64>() / n).collect();
    let opt_index = argmin_first(&cve);
    if !cve[opt_index].is_finite() {
        return Err(Error::NonFiniteResult("cross-validation error"));
    }
    let fold_assignment = data.clusters.iter().zip(&fold).map(|(c, &f)| (c.id.clone(), f)).collect();
    Ok(CvResult { lambdas: grid.to_vec(), cve, lambda_opt: grid[opt_index], opt_index, fold_assignment, fold_scores })
}
