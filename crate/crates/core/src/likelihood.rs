//! Marginal gamma-frailty log-likelihood, its beta/alpha pieces, the beta
//! gradient and the fixed-point update of the baseline hazard jumps.
//!
//! With cluster sums `S_i = sum_j H(Z_ij) exp(eta_ij)` and event counts
//! `A_i`, integrating the frailty out of the conditional likelihood gives
//!
//! ```text
//! l = sum_i [ a log a + lgamma(A_i + a) - lgamma(a) - (A_i + a) log(a + S_i) ]
//!   + sum_ij d_ij (eta_ij + log h(Z_ij))
//! ```
//!
//! where `h(Z_ij)` is the jump of the step hazard at the observation's own
//! event time.

use statrs::function::gamma::ln_gamma;

use crate::data_model::{BaselineHazard, Design, ModelParams};
use crate::error::{Error, Result};

/// Linear predictors above this magnitude switch the cluster sums to a
/// shifted log-sum-exp evaluation.
const EXP_GUARD: f64 = 30.0;

/// `H(t) = sum of jumps at event times <= t`.
pub fn eval_cumhaz(hazard: &BaselineHazard, t: f64) -> f64 {
    let upto = hazard.event_times.partition_point(|&e| e <= t);
    hazard.jumps[..upto].iter().sum()
}

/// A design together with a fixed baseline hazard and the cached cumulative
/// hazard at every observation time.
#[derive(Debug, Clone)]
pub struct LikelihoodContext<'a> {
    pub design: &'a Design,
    hazard: BaselineHazard,
    cumhaz: Vec<f64>,
}

impl<'a> LikelihoodContext<'a> {
    pub fn new(design: &'a Design, hazard: BaselineHazard) -> Result<Self> {
        if hazard.event_times.len() != design.event_times.len() {
            return Err(Error::DimensionMismatch {
                expected: design.event_times.len(),
                found: hazard.event_times.len(),
            });
        }
        let cumhaz = cumhaz_at_observations(design, &hazard.jumps);
        Ok(Self { design, hazard, cumhaz })
    }

    pub fn hazard(&self) -> &BaselineHazard {
        &self.hazard
    }

    pub fn cumhaz(&self) -> &[f64] {
        &self.cumhaz
    }

    pub fn set_hazard(&mut self, hazard: BaselineHazard) -> Result<()> {
        if hazard.event_times.len() != self.design.event_times.len() {
            return Err(Error::DimensionMismatch {
                expected: self.design.event_times.len(),
                found: hazard.event_times.len(),
            });
        }
        self.cumhaz = cumhaz_at_observations(self.design, &hazard.jumps);
        self.hazard = hazard;
        Ok(())
    }

    /// `log(alpha + S_i)` for every cluster, given linear predictors.
    pub fn log_denominators(&self, eta: &[f64], alpha: f64) -> Result<Vec<f64>> {
        let d = self.design;
        let ln_alpha = alpha.ln();
        let mut out = Vec::with_capacity(d.n_clusters());
        for i in 0..d.n_clusters() {
            let r = d.cluster_range(i);
            let max_eta = eta[r.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let v = if max_eta <= EXP_GUARD {
                let s: f64 = r.map(|o| self.cumhaz[o] * eta[o].exp()).sum();
                ln_alpha + (s / alpha).ln_1p()
            } else {
                let shifted: f64 = r.map(|o| self.cumhaz[o] * (eta[o] - max_eta).exp()).sum();
                if shifted > 0.0 {
                    log_add_exp(ln_alpha, max_eta + shifted.ln())
                } else {
                    ln_alpha
                }
            };
            if !v.is_finite() {
                return Err(Error::NonFiniteResult("cluster hazard sum"));
            }
            out.push(v);
        }
        Ok(out)
    }

    /// Log-likelihood split into `(sum d*eta, sum d*log h, frailty terms)`;
    /// the frailty terms are everything depending on alpha.
    fn pieces(&self, eta: &[f64], alpha: f64) -> Result<(f64, f64, f64, Vec<f64>)> {
        let d = self.design;
        let log_den = self.log_denominators(eta, alpha)?;
        let mut linear = 0.0;
        let mut log_h = 0.0;
        for o in 0..d.n_obs {
            if let Some(k) = d.event_index[o] {
                linear += eta[o];
                log_h += self.hazard.jumps[k].ln();
            }
        }
        let frailty = alpha_terms(&d.cluster_events, &log_den, alpha);
        Ok((linear, log_h, frailty, log_den))
    }

    /// Full marginal log-likelihood at linear predictors `eta`.
    pub fn marginal_loglik_eta(&self, eta: &[f64], alpha: f64) -> Result<f64> {
        let (linear, log_h, frailty, _) = self.pieces(eta, alpha)?;
        finite(linear + log_h + frailty, "marginal log-likelihood")
    }

    /// Beta part of the log-likelihood at linear predictors `eta`.
    pub fn beta_loglik_eta(&self, eta: &[f64], alpha: f64) -> Result<f64> {
        let d = self.design;
        let log_den = self.log_denominators(eta, alpha)?;
        let linear: f64 = (0..d.n_obs).filter(|&o| d.event[o]).map(|o| eta[o]).sum();
        let tail: f64 = d.cluster_events.iter().zip(&log_den).map(|(a, l)| (a + alpha) * l).sum();
        finite(linear - tail, "beta log-likelihood")
    }

    /// Per-observation weights `(A_i + a) H(Z_ij) exp(eta_ij) / (a + S_i)`.
    pub fn risk_weights(&self, eta: &[f64], alpha: f64, log_den: &[f64]) -> Vec<f64> {
        let d = self.design;
        let mut w = vec![0.0; d.n_obs];
        for i in 0..d.n_clusters() {
            let c = d.cluster_events[i] + alpha;
            for o in d.cluster_range(i) {
                let h = self.cumhaz[o];
                if h > 0.0 {
                    w[o] = c * (h.ln() + eta[o] - log_den[i]).exp();
                }
            }
        }
        w
    }

    /// Gradient of the beta log-likelihood at linear predictors `eta`.
    pub fn grad_beta_eta(&self, eta: &[f64], alpha: f64) -> Result<Vec<f64>> {
        let d = self.design;
        let log_den = self.log_denominators(eta, alpha)?;
        let w = self.risk_weights(eta, alpha, &log_den);
        let resid: Vec<f64> = (0..d.n_obs).map(|o| f64::from(u8::from(d.event[o])) - w[o]).collect();
        let mut g = Vec::with_capacity(d.p);
        for k in 0..d.p {
            let v: f64 = d.column(k).iter().zip(&resid).map(|(x, r)| x * r).sum();
            g.push(finite(v, "beta gradient")?);
        }
        Ok(g)
    }

    /// Frailty log-likelihood pieces at linear predictors `eta` for each
    /// alpha in `grid`; non-finite entries are reported as `None`.
    pub fn alpha_loglik_grid(&self, eta: &[f64], grid: &[f64]) -> Vec<Option<f64>> {
        grid.iter()
            .map(|&a| {
                if !(a > 0.0) {
                    return None;
                }
                let log_den = self.log_denominators(eta, a).ok()?;
                let v = alpha_terms(&self.design.cluster_events, &log_den, a);
                v.is_finite().then_some(v)
            })
            .collect()
    }
}

fn cumhaz_at_observations(design: &Design, jumps: &[f64]) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(jumps.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for r in jumps {
        acc += r;
        prefix.push(acc);
    }
    design.rank.iter().map(|&r| prefix[r]).collect()
}

fn alpha_terms(events: &[f64], log_den: &[f64], alpha: f64) -> f64 {
    let base = alpha * alpha.ln() - ln_gamma(alpha);
    events.iter().zip(log_den).map(|(&a, &l)| base + ln_gamma(a + alpha) - (a + alpha) * l).sum()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

fn finite(v: f64, what: &'static str) -> Result<f64> {
    if v.is_finite() { Ok(v) } else { Err(Error::NonFiniteResult(what)) }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("frailty parameter alpha must be positive, got {alpha}")))
    }
}

/// Full marginal log-likelihood.
pub fn marginal_loglik(params: &ModelParams, ctx: &LikelihoodContext<'_>) -> Result<f64> {
    check_alpha(params.alpha)?;
    let eta = ctx.design.linear_predictor(&params.beta);
    ctx.marginal_loglik_eta(&eta, params.alpha)
}

/// `sum d*eta - sum_i (A_i + a) log(a + S_i)`.
pub fn beta_loglik(params: &ModelParams, ctx: &LikelihoodContext<'_>) -> Result<f64> {
    check_alpha(params.alpha)?;
    let eta = ctx.design.linear_predictor(&params.beta);
    ctx.beta_loglik_eta(&eta, params.alpha)
}

/// `sum_i [a log a + lgamma(A_i + a) - lgamma(a) - (A_i + a) log(a + S_i)]`.
pub fn alpha_loglik(params: &ModelParams, ctx: &LikelihoodContext<'_>) -> Result<f64> {
    check_alpha(params.alpha)?;
    let eta = ctx.design.linear_predictor(&params.beta);
    let (_, _, frailty, _) = ctx.pieces(&eta, params.alpha)?;
    finite(frailty, "alpha log-likelihood")
}

pub fn grad_beta(params: &ModelParams, ctx: &LikelihoodContext<'_>) -> Result<Vec<f64>> {
    check_alpha(params.alpha)?;
    let eta = ctx.design.linear_predictor(&params.beta);
    ctx.grad_beta_eta(&eta, params.alpha)
}

/// Right-hand side of the jump-size fixed point,
/// `sum_i (A_i + a) sum_j e_ij 1{T_k <= Z_ij} / (a + S_i)`, for every `k`,
/// evaluated at the current jumps.
pub fn rho_rhs(eta: &[f64], alpha: f64, design: &Design, hazard: &BaselineHazard) -> Result<Vec<f64>> {
    let exp_eta: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let cumhaz = cumhaz_at_observations(design, &hazard.jumps);
    let risk = AtRisk::new(design, &exp_eta);
    let coef: Vec<f64> = (0..design.n_clusters())
        .map(|i| {
            let s: f64 = design.cluster_range(i).map(|o| cumhaz[o] * exp_eta[o]).sum();
            (design.cluster_events[i] + alpha) / (alpha + s)
        })
        .collect();
    (0..design.n_events())
        .map(|k| {
            let v: f64 = risk.row(k).iter().map(|&(i, r)| coef[i] * r).sum();
            finite(v, "baseline hazard update")
        })
        .collect()
}

/// Per-cluster at-risk sums `R_i(k) = sum_j exp(eta_ij) 1{T_k <= Z_ij}`,
/// stored sparsely per event index. Built by accumulating backwards in time
/// so every entry is a sum of positive terms.
struct AtRisk {
    offsets: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl AtRisk {
    fn new(design: &Design, exp_eta: &[f64]) -> Self {
        let n_events = design.n_events();
        let n = design.n_clusters();
        let mut cluster_of = vec![0usize; design.n_obs];
        for i in 0..n {
            for o in design.cluster_range(i) {
                cluster_of[o] = i;
            }
        }
        let mut acc = vec![0.0; n];
        let mut active: Vec<usize> = Vec::new();
        let mut is_active = vec![false; n];
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_events];
        for k in (0..n_events).rev() {
            for &o in design.rank_bucket(k + 1) {
                let i = cluster_of[o];
                acc[i] += exp_eta[o];
                if !is_active[i] {
                    is_active[i] = true;
                    active.push(i);
                }
            }
            rows[k] = active.iter().map(|&i| (i, acc[i])).collect();
        }
        let mut offsets = Vec::with_capacity(n_events + 1);
        offsets.push(0);
        let mut entries = Vec::new();
        for row in rows {
            entries.extend(row);
            offsets.push(entries.len());
        }
        Self { offsets, entries }
    }

    fn row(&self, k: usize) -> &[(usize, f64)] {
        &self.entries[self.offsets[k]..self.offsets[k + 1]]
    }
}

/// `max_k |1/rho_k - RHS_k(rho)|`.
pub fn rho_residual(eta: &[f64], alpha: f64, design: &Design, hazard: &BaselineHazard) -> Result<f64> {
    let rhs = rho_rhs(eta, alpha, design, hazard)?;
    Ok(rhs.iter().zip(&hazard.jumps).map(|(r, rho)| (1.0 / rho - r).abs()).fold(0.0, f64::max))
}

/// One Gauss-Seidel sweep `k = 1..N` of the jump-size fixed point: each
/// `rho_k` is replaced by the reciprocal of the right-hand side evaluated
/// with the already-updated earlier jumps.
pub fn rho_sweep(params: &ModelParams, design: &Design, hazard: &BaselineHazard) -> Result<BaselineHazard> {
    check_alpha(params.alpha)?;
    let eta = design.linear_predictor(&params.beta);
    rho_sweep_eta(&eta, params.alpha, design, hazard)
}

pub fn rho_sweep_eta(eta: &[f64], alpha: f64, design: &Design, hazard: &BaselineHazard) -> Result<BaselineHazard> {
    let n_events = design.n_events();
    if n_events == 0 {
        return Err(Error::NoEvents);
    }
    if hazard.jumps.len() != n_events {
        return Err(Error::DimensionMismatch { expected: n_events, found: hazard.jumps.len() });
    }
    let exp_eta: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let cumhaz = cumhaz_at_observations(design, &hazard.jumps);
    let risk = AtRisk::new(design, &exp_eta);
    let mut s: Vec<f64> =
        (0..design.n_clusters()).map(|i| design.cluster_range(i).map(|o| cumhaz[o] * exp_eta[o]).sum()).collect();
    let events = &design.cluster_events;
    let mut jumps = hazard.jumps.clone();
    for k in 0..n_events {
        let row = risk.row(k);
        let rhs: f64 = row.iter().map(|&(i, r)| (events[i] + alpha) * r / (alpha + s[i])).sum();
        if !(rhs > 0.0) || !rhs.is_finite() {
            return Err(Error::ZeroDenominator(k));
        }
        let new = 1.0 / rhs;
        let delta = new - jumps[k];
        jumps[k] = new;
        for &(i, r) in row {
            s[i] += delta * r;
        }
    }
    Ok(BaselineHazard { event_times: design.event_times.clone(), jumps })
}

/// Sweeps until the fixed-point residual drops below `tol` or `max_sweeps`
/// is reached. Returns the hazard and the final residual.
pub fn profile_hazard(
    eta: &[f64],
    alpha: f64,
    design: &Design,
    start: &BaselineHazard,
    tol: f64,
    max_sweeps: usize,
) -> Result<(BaselineHazard, f64)> {
    let mut hazard = start.clone();
    let mut residual = rho_residual(eta, alpha, design, &hazard)?;
    let mut sweeps = 0;
    while residual >= tol && sweeps < max_sweeps {
        hazard = rho_sweep_eta(eta, alpha, design, &hazard)?;
        residual = rho_residual(eta, alpha, design, &hazard)?;
        sweeps += 1;
    }
    Ok((hazard, residual))
}
