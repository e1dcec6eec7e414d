//! Penalized estimation: proximal block coordinate gradient descent for the
//! coefficients, a grid search for the frailty parameter and one
//! Gauss-Seidel sweep of the baseline hazard per outer iteration.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::data_model::{
    BaselineHazard, Design, ModelParams, Standardization, SurvivalDataset,
};
use crate::error::{Error, Result};
use crate::likelihood::{rho_sweep_eta, LikelihoodContext};
use crate::penalty::{l2_norm, penalty_value, PenaltySpec};

/// Step reductions allowed per block before the line search gives up.
pub const MAX_HALVINGS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmijoConfig {
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
}

impl Default for ArmijoConfig {
    fn default() -> Self {
        Self { initial_step: 1.0, shrink: 0.5, sufficient_decrease: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub lambda: f64,
    pub alpha_grid: Vec<f64>,
    pub outer_tol: f64,
    pub max_outer: usize,
    pub max_bcgd: usize,
    pub armijo: ArmijoConfig,
    /// Center and scale covariates before fitting; estimates are reported
    /// on the original scale.
    pub standardize: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            alpha_grid: default_alpha_grid(),
            outer_tol: 1e-6,
            max_outer: 200,
            max_bcgd: 50,
            armijo: ArmijoConfig::default(),
            standardize: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_grid.is_empty() {
            return Err(Error::Config("alpha grid is empty".into()));
        }
        if self.alpha_grid.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::Config("alpha grid values must be positive and finite".into()));
        }
        if self.alpha_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("alpha grid must be strictly increasing".into()));
        }
        if !(self.outer_tol > 0.0) {
            return Err(Error::Config("outer tolerance must be positive".into()));
        }
        if self.max_outer == 0 || self.max_bcgd == 0 {
            return Err(Error::Config("iteration limits must be positive".into()));
        }
        let a = &self.armijo;
        if !(a.initial_step > 0.0) || !(a.shrink > 0.0 && a.shrink < 1.0) {
            return Err(Error::Config("Armijo step must be positive and shrink in (0, 1)".into()));
        }
        if !(a.sufficient_decrease > 0.0 && a.sufficient_decrease < 1.0) {
            return Err(Error::Config("Armijo sufficient decrease must lie in (0, 1)".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config("lambda must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// 20 log-spaced frailty parameters on `[0.05, 20]`.
pub fn default_alpha_grid() -> Vec<f64> {
    log_grid(0.05, 20.0, 20)
}

/// Estimates on the scale the solver works in (standardized covariates
/// when standardization is on).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStart {
    pub beta: Vec<f64>,
    pub alpha: f64,
    pub hazard: BaselineHazard,
}

/// Output of the alternating solver on a prepared design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFit {
    pub beta: Vec<f64>,
    pub alpha: f64,
    pub hazard: BaselineHazard,
    pub objective_trace: Vec<f64>,
    pub n_outer: usize,
    pub converged: bool,
    pub loglik: f64,
}

impl DesignFit {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart { beta: self.beta.clone(), alpha: self.alpha, hazard: self.hazard.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Coefficients on the original covariate scale.
    pub beta_hat: Vec<f64>,
    pub alpha_hat: f64,
    /// Baseline hazard relative to the original covariates.
    pub hazard_hat: BaselineHazard,
    pub objective_trace: Vec<f64>,
    pub n_outer: usize,
    pub converged: bool,
    /// Full marginal log-likelihood at the estimates.
    pub loglik: f64,
    pub penalty: PenaltySpec,
    /// Zero-based indices of covariate groups with a nonzero block.
    pub active_groups: Vec<usize>,
    pub standardization: Standardization,
    /// The solver-scale estimates, usable as a warm start.
    pub internal: DesignFit,
}

/// `-l_beta / n + penalty`.
pub fn objective(
    params: &ModelParams,
    ctx: &LikelihoodContext<'_>,
    spec: &PenaltySpec,
    n_clusters: usize,
) -> Result<f64> {
    let lb = crate::likelihood::beta_loglik(params, ctx)?;
    let v = -lb / n_clusters as f64 + penalty_value(spec, &params.beta, &ctx.design.groups);
    if v.is_finite() { Ok(v) } else { Err(Error::NonFiniteResult("penalized objective")) }
}

/// Full penalized objective `-l / n + penalty` with the marginal likelihood.
pub fn full_objective(
    params: &ModelParams,
    ctx: &LikelihoodContext<'_>,
    spec: &PenaltySpec,
) -> Result<f64> {
    let eta = ctx.design.linear_predictor(&params.beta);
    let ll = ctx.marginal_loglik_eta(&eta, params.alpha)?;
    Ok(-ll / ctx.design.n_clusters() as f64 + penalty_value(spec, &params.beta, &ctx.design.groups))
}

/// Smooth part `-l_beta / n` at a given linear predictor, with the pieces
/// needed for its gradient.
struct SmoothState {
    eta: Vec<f64>,
    /// `delta_ij - w_ij` with `w_ij = (A_i + a) H(Z_ij) exp(eta_ij) / (a + S_i)`.
    resid: Vec<f64>,
    value: f64,
}

impl SmoothState {
    fn empty(n_obs: usize) -> Self {
        Self { eta: vec![0.0; n_obs], resid: vec![0.0; n_obs], value: f64::INFINITY }
    }

    /// Recomputes residuals and value from `self.eta`; the value is infinite
    /// when the sums overflow.
    fn refresh(&mut self, ctx: &LikelihoodContext<'_>, alpha: f64) {
        let d = ctx.design;
        let h = ctx.cumhaz();
        let ln_alpha = alpha.ln();
        let mut linear = 0.0;
        let mut tail = 0.0;
        for i in 0..d.n_clusters() {
            let r = d.cluster_range(i);
            let shift = self.eta[r.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
            let mut s = 0.0;
            for o in r.clone() {
                let v = h[o] * (self.eta[o] - shift).exp();
                self.resid[o] = v;
                s += v;
                if d.event[o] {
                    linear += self.eta[o];
                }
            }
            // log(a + S_i) with S_i = exp(shift) * s
            let log_den = if shift == 0.0 {
                ln_alpha + (s / alpha).ln_1p()
            } else if s > 0.0 {
                let a = ln_alpha;
                let b = shift + s.ln();
                a.max(b) + (-(a - b).abs()).exp().ln_1p()
            } else {
                ln_alpha
            };
            let c = d.cluster_events[i] + alpha;
            let scale = c * (shift - log_den).exp();
            for o in r {
                self.resid[o] = f64::from(u8::from(d.event[o])) - self.resid[o] * scale;
            }
            tail += c * log_den;
        }
        let value = -(linear - tail) / d.n_clusters() as f64;
        self.value = if value.is_finite() { value } else { f64::INFINITY };
    }
}

/// Coefficient solver state carried across outer iterations.
struct BlockSolver {
    beta: Vec<f64>,
    eta: Vec<f64>,
}

impl BlockSolver {
    fn new(design: &Design, beta: Vec<f64>) -> Self {
        let eta = design.linear_predictor(&beta);
        Self { beta, eta }
    }

    /// Runs up to `max_cycles` cycles over the covariate groups. Returns the
    /// number of cycles done.
    fn run(
        &mut self,
        ctx: &LikelihoodContext<'_>,
        alpha: f64,
        spec: &PenaltySpec,
        armijo: &ArmijoConfig,
        tol: f64,
        max_cycles: usize,
    ) -> Result<usize> {
        let design = ctx.design;
        let n = design.n_clusters() as f64;
        let mut cur = SmoothState::empty(design.n_obs);
        cur.eta.copy_from_slice(&self.eta);
        cur.refresh(ctx, alpha);
        if !cur.value.is_finite() {
            return Err(Error::NonFiniteResult("beta log-likelihood"));
        }
        let mut trial = SmoothState::empty(design.n_obs);
        let width = design.groups.groups().iter().map(Vec::len).max().unwrap_or(0);
        let mut grad = vec![0.0; width];
        let mut current = vec![0.0; width];
        let mut z = vec![0.0; width];
        let mut d = vec![0.0; width];
        for cycle in 1..=max_cycles {
            let mut max_change: f64 = 0.0;
            for (j, group) in design.groups.groups().iter().enumerate() {
                let size = group.len();
                let (grad, current, z, d) = (&mut grad[..size], &mut current[..size], &mut z[..size], &mut d[..size]);
                // gradient of -l_beta / n restricted to the block
                for (g, &k) in grad.iter_mut().zip(group) {
                    let s: f64 = design.column(k).iter().zip(&cur.resid).map(|(x, r)| x * r).sum();
                    *g = -s / n;
                }
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFiniteResult("block gradient"));
                }
                for (c, &k) in current.iter_mut().zip(group) {
                    *c = self.beta[k];
                }
                let pen_current = spec.block_value(current, size);
                let cur_norm = l2_norm(current);

                let mut step = armijo.initial_step;
                let mut accepted = false;
                for _ in 0..=MAX_HALVINGS {
                    for ((zk, b), g) in z.iter_mut().zip(current.iter()).zip(grad.iter()) {
                        *zk = b - step * g;
                    }
                    let cand = spec.block_prox(z, step, size);
                    for ((dk, c), b) in d.iter_mut().zip(&cand).zip(current.iter()) {
                        *dk = c - b;
                    }
                    let d_norm = l2_norm(d);
                    if d_norm <= 1e-13 * (1.0 + cur_norm) {
                        // stationary block, or no resolvable move along it
                        accepted = true;
                        break;
                    }
                    trial.eta.copy_from_slice(&cur.eta);
                    for (&k, dk) in group.iter().zip(d.iter()) {
                        if *dk != 0.0 {
                            for (e, x) in trial.eta.iter_mut().zip(design.column(k)) {
                                *e += dk * x;
                            }
                        }
                    }
                    trial.refresh(ctx, alpha);
                    let pen_cand = spec.block_value(&cand, size);
                    let decrease_bound: f64 =
                        grad.iter().zip(d.iter()).map(|(g, dk)| g * dk).sum::<f64>() + pen_cand - pen_current;
                    if trial.value + pen_cand <= cur.value + pen_current + armijo.sufficient_decrease * decrease_bound {
                        for (&k, c) in group.iter().zip(&cand) {
                            self.beta[k] = *c;
                        }
                        std::mem::swap(&mut cur, &mut trial);
                        max_change = max_change.max(d_norm / cur_norm.max(1.0));
                        accepted = true;
                        break;
                    }
                    step *= armijo.shrink;
                }
                if !accepted {
                    return Err(Error::LineSearchFailed { group: j, halvings: MAX_HALVINGS });
                }
            }
            self.eta.copy_from_slice(&cur.eta);
            if max_change < tol {
                return Ok(cycle);
            }
        }
        Ok(max_cycles)
    }
}

/// Minimizes `-l_beta / n + penalty` over the coefficients with the hazard
/// and frailty parameter held fixed.
pub fn bcgd_minimize_beta(
    start: &ModelParams,
    ctx: &LikelihoodContext<'_>,
    spec: &PenaltySpec,
    cfg: &FitConfig,
) -> Result<Vec<f64>> {
    let mut solver = BlockSolver::new(ctx.design, start.beta.clone());
    solver.run(ctx, start.alpha, spec, &cfg.armijo, cfg.outer_tol, cfg.max_bcgd)?;
    Ok(solver.beta)
}

/// Grid element maximizing the frailty log-likelihood; ties go to the
/// smaller value.
pub fn alpha_grid_search(beta: &[f64], ctx: &LikelihoodContext<'_>, grid: &[f64]) -> Result<f64> {
    let eta = ctx.design.linear_predictor(beta);
    alpha_search_eta(ctx, &eta, grid)
}

fn alpha_search_eta(ctx: &LikelihoodContext<'_>, eta: &[f64], grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Config("alpha grid is empty".into()));
    }
    let values = ctx.alpha_loglik_grid(eta, grid);
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]));
    let mut best: Option<(f64, f64)> = None;
    for i in order {
        match values[i] {
            Some(v) => {
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((grid[i], v));
                }
            }
            None => warn!("skipping alpha = {} with non-finite frailty likelihood", grid[i]),
        }
    }
    best.map(|(a, _)| a).ok_or(Error::NonFiniteResult("frailty likelihood over the alpha grid"))
}

/// Runs the alternating solver on a prepared design. When `skip_beta` is
/// set the coefficients stay at their starting value (used for null fits).
fn solve(
    design: &Design,
    spec: &PenaltySpec,
    cfg: &FitConfig,
    start: Option<&WarmStart>,
    skip_beta: bool,
) -> Result<DesignFit> {
    cfg.validate()?;
    if design.n_events() == 0 {
        return Err(Error::NoEvents);
    }
    let n = design.n_clusters() as f64;
    let (beta0, mut alpha, hazard0) = match start {
        Some(ws) if ws.hazard.len() == design.n_events() && ws.beta.len() == design.p => {
            (ws.beta.clone(), ws.alpha, ws.hazard.clone())
        }
        Some(ws) => (
            if ws.beta.len() == design.p { ws.beta.clone() } else { vec![0.0; design.p] },
            ws.alpha,
            BaselineHazard::uniform(design.event_times.clone()),
        ),
        None => (vec![0.0; design.p], 1.0, BaselineHazard::uniform(design.event_times.clone())),
    };
    let mut ctx = LikelihoodContext::new(design, hazard0)?;
    let mut solver = BlockSolver::new(design, beta0);
    let groups = &design.groups;

    let eval = |ctx: &LikelihoodContext<'_>, solver: &BlockSolver, alpha: f64| -> Result<(f64, f64)> {
        let ll = ctx.marginal_loglik_eta(&solver.eta, alpha)?;
        Ok((ll, -ll / n + penalty_value(spec, &solver.beta, groups)))
    };

    let (_, mut q_prev) = eval(&ctx, &solver, alpha)?;
    let mut trace = vec![q_prev];
    let mut converged = false;
    let mut n_outer = 0;
    for it in 1..=cfg.max_outer {
        n_outer = it;
        let hazard = rho_sweep_eta(&solver.eta, alpha, design, ctx.hazard())?;
        ctx.set_hazard(hazard)?;
        if !skip_beta {
            solver.run(&ctx, alpha, spec, &cfg.armijo, cfg.outer_tol, cfg.max_bcgd)?;
        }
        alpha = alpha_search_eta(&ctx, &solver.eta, &cfg.alpha_grid)?;
        let (_, q) = eval(&ctx, &solver, alpha)?;
        trace.push(q);
        let rel = (q_prev - q).abs() / q_prev.abs().max(1e-12);
        debug!("outer {it}: objective {q:.10} (relative change {rel:.3e}), alpha {alpha}");
        q_prev = q;
        if rel < cfg.outer_tol {
            converged = true;
            break;
        }
    }
    if !skip_beta {
        // leave the coefficients stationary for the reported hazard and alpha
        let before = solver.beta.clone();
        solver.run(&ctx, alpha, spec, &cfg.armijo, cfg.outer_tol * 1e-2, cfg.max_bcgd * 4)?;
        if solver.beta != before {
            let (_, q) = eval(&ctx, &solver, alpha)?;
            trace.push(q);
        }
    }
    let (loglik, _) = eval(&ctx, &solver, alpha)?;
    Ok(DesignFit {
        beta: solver.beta,
        alpha,
        hazard: ctx.hazard().clone(),
        objective_trace: trace,
        n_outer,
        converged,
        loglik,
    })
}

/// Fits on an already prepared (and, if desired, standardized) design.
/// Without a warm start the fit starts from the null fit.
pub fn fit_design(
    design: &Design,
    spec: &PenaltySpec,
    cfg: &FitConfig,
    start: Option<&WarmStart>,
) -> Result<DesignFit> {
    match start {
        Some(ws) => solve(design, spec, cfg, Some(ws), false),
        None => {
            let null = fit_null_design(design, cfg)?;
            solve(design, spec, cfg, Some(&null.warm_start()), false)
        }
    }
}

/// Group LASSO critical lambda at the frailty parameter of the null fit,
/// the state cold fits start from.
pub fn critical_lambda(design: &Design, cfg: &FitConfig) -> Result<f64> {
    let null = fit_null_design(design, cfg)?;
    crate::penalty::lambda_max(design, null.alpha)
}

/// Fits the frailty parameter and baseline hazard with all coefficients
/// fixed at zero.
pub fn fit_null_design(design: &Design, cfg: &FitConfig) -> Result<DesignFit> {
    let ws = WarmStart {
        beta: vec![0.0; design.p],
        alpha: 1.0,
        hazard: BaselineHazard::uniform(design.event_times.clone()),
    };
    solve(design, &PenaltySpec::group_lasso(0.0), cfg, Some(&ws), true)
}

/// A dataset prepared for repeated fitting: standardization and the
/// flattened design.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub standardization: Standardization,
    pub design: Design,
}

impl Prepared {
    pub fn new(data: &SurvivalDataset, standardize: bool) -> Self {
        let standardization =
            if standardize { Standardization::from_data(data) } else { Standardization::identity(data.p) };
        let design = if standardize { Design::new(&standardization.apply(data)) } else { Design::new(data) };
        Self { standardization, design }
    }

    pub fn fit(&self, spec: &PenaltySpec, cfg: &FitConfig, start: Option<&WarmStart>) -> Result<FitResult> {
        let internal = fit_design(&self.design, spec, cfg, start)?;
        Ok(self.wrap(internal, *spec))
    }

    pub fn wrap(&self, internal: DesignFit, spec: PenaltySpec) -> FitResult {
        let beta_hat = self.standardization.beta_to_original(&internal.beta);
        let hazard_hat = self.standardization.hazard_to_original(&internal.hazard, &beta_hat);
        FitResult {
            active_groups: active_groups(&internal.beta, &self.design.groups),
            beta_hat,
            alpha_hat: internal.alpha,
            hazard_hat,
            objective_trace: internal.objective_trace.clone(),
            n_outer: internal.n_outer,
            converged: internal.converged,
            loglik: internal.loglik,
            penalty: spec,
            standardization: self.standardization.clone(),
            internal,
        }
    }
}

pub fn active_groups(beta: &[f64], groups: &crate::data_model::GroupStructure) -> Vec<usize> {
    groups
        .groups()
        .iter()
        .enumerate()
        .filter(|(_, g)| g.iter().any(|&k| beta[k] != 0.0))
        .map(|(j, _)| j)
        .collect()
}

/// Fits the penalized frailty model. `cfg.lambda` overrides `spec.lambda`.
pub fn fit(data: &SurvivalDataset, spec: &PenaltySpec, cfg: &FitConfig) -> Result<FitResult> {
    if data.n_events() == 0 {
        return Err(Error::NoEvents);
    }
    let spec = spec.with_lambda(cfg.lambda);
    Prepared::new(data, cfg.standardize).fit(&spec, cfg, None)
}

/// Stationarity diagnostics of one covariate group.
#[derive(Debug, Clone, PartialEq)]
pub struct KktGroup {
    pub group: usize,
    pub active: bool,
    /// Active: norm of gradient plus penalty subgradient.
    /// Inactive: gradient norm divided by `lambda * sqrt(p_j)` (at most 1
    /// at a stationary point).
    pub value: f64,
}

/// KKT diagnostics of `-l_beta / n + penalty` at `(beta, alpha, hazard)`.
pub fn kkt_diagnostics(
    design: &Design,
    beta: &[f64],
    alpha: f64,
    hazard: &BaselineHazard,
    spec: &PenaltySpec,
) -> Result<Vec<KktGroup>> {
    let ctx = LikelihoodContext::new(design, hazard.clone())?;
    let eta = design.linear_predictor(beta);
    let g = ctx.grad_beta_eta(&eta, alpha)?;
    let n = design.n_clusters() as f64;
    let mut out = Vec::with_capacity(design.groups.len());
    for (j, group) in design.groups.groups().iter().enumerate() {
        let sqrt_p = (group.len() as f64).sqrt();
        let block: Vec<f64> = group.iter().map(|&k| beta[k]).collect();
        let norm = l2_norm(&block);
        let grad: Vec<f64> = group.iter().map(|&k| -g[k] / n).collect();
        if norm > 0.0 {
            let slope = spec.scalar_derivative(sqrt_p * norm) * sqrt_p;
            let r: Vec<f64> = grad.iter().zip(&block).map(|(gk, bk)| gk + slope * bk / norm).collect();
            out.push(KktGroup { group: j, active: true, value: l2_norm(&r) });
        } else {
            let bound = spec.lambda * sqrt_p;
            let gn = l2_norm(&grad);
            let value = if bound > 0.0 { gn / bound } else if gn == 0.0 { 0.0 } else { f64::INFINITY };
            out.push(KktGroup { group: j, active: false, value });
        }
    }
    Ok(out)
}
