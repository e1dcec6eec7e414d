//! Group penalties and their block proximal maps.
//!
//! All three penalties act on the size-scaled group norm
//! `theta_j = sqrt(p_j) * ||beta_(j)||_2`:
//!
//! - group LASSO: `lambda * theta`
//! - group SCAD (shape `a > 2`): linear up to `lambda`, quadratic spline up to
//!   `a * lambda`, constant afterwards
//! - group MCP (shape `g > 1`): `lambda * theta - theta^2 / (2g)` up to
//!   `g * lambda`, constant afterwards

use serde::{Deserialize, Serialize};

use crate::data_model::{Design, GroupStructure, ModelParams};
use crate::error::{Error, Result};
use crate::likelihood::LikelihoodContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PenaltyKind {
    #[serde(rename = "glasso")]
    GroupLasso,
    #[serde(rename = "gscad")]
    GroupScad,
    #[serde(rename = "gmcp")]
    GroupMcp,
}

impl PenaltyKind {
    pub const ALL: [PenaltyKind; 3] = [PenaltyKind::GroupLasso, PenaltyKind::GroupScad, PenaltyKind::GroupMcp];

    pub fn as_str(&self) -> &'static str {
        match self {
            PenaltyKind::GroupLasso => "glasso",
            PenaltyKind::GroupScad => "gscad",
            PenaltyKind::GroupMcp => "gmcp",
        }
    }
}

impl std::str::FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "glasso" | "grouplasso" | "group-lasso" => Ok(PenaltyKind::GroupLasso),
            "gscad" | "groupscad" | "group-scad" => Ok(PenaltyKind::GroupScad),
            "gmcp" | "groupmcp" | "group-mcp" => Ok(PenaltyKind::GroupMcp),
            other => Err(Error::Config(format!("unknown penalty '{other}' (expected glasso, gscad or gmcp)"))),
        }
    }
}

impl std::fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const DEFAULT_SCAD_GAMMA: f64 = 3.7;
pub const DEFAULT_MCP_GAMMA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub lambda: f64,
    pub gamma_scad: f64,
    pub gamma_mcp: f64,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, lambda: f64) -> Result<Self> {
        Self::with_shapes(kind, lambda, DEFAULT_SCAD_GAMMA, DEFAULT_MCP_GAMMA)
    }

    pub fn with_shapes(kind: PenaltyKind, lambda: f64, gamma_scad: f64, gamma_mcp: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be a finite non-negative number, got {lambda}")));
        }
        if !(gamma_scad > 2.0) {
            return Err(Error::Config(format!("SCAD shape must exceed 2, got {gamma_scad}")));
        }
        if !(gamma_mcp > 1.0) {
            return Err(Error::Config(format!("MCP shape must exceed 1, got {gamma_mcp}")));
        }
        Ok(Self { kind, lambda, gamma_scad, gamma_mcp })
    }

    pub fn group_lasso(lambda: f64) -> Self {
        Self { kind: PenaltyKind::GroupLasso, lambda, gamma_scad: DEFAULT_SCAD_GAMMA, gamma_mcp: DEFAULT_MCP_GAMMA }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..*self }
    }

    /// Scalar penalty at a non-negative scaled group norm.
    pub fn scalar(&self, theta: f64) -> f64 {
        let lam = self.lambda;
        match self.kind {
            PenaltyKind::GroupLasso => lam * theta,
            PenaltyKind::GroupScad => {
                let a = self.gamma_scad;
                if theta <= lam {
                    lam * theta
                } else if theta <= a * lam {
                    (2.0 * a * lam * theta - theta * theta - lam * lam) / (2.0 * (a - 1.0))
                } else {
                    lam * lam * (a + 1.0) / 2.0
                }
            }
            PenaltyKind::GroupMcp => {
                let g = self.gamma_mcp;
                if theta <= g * lam {
                    lam * theta - theta * theta / (2.0 * g)
                } else {
                    g * lam * lam / 2.0
                }
            }
        }
    }

    /// Derivative of the scalar penalty for `theta > 0`.
    pub fn scalar_derivative(&self, theta: f64) -> f64 {
        let lam = self.lambda;
        match self.kind {
            PenaltyKind::GroupLasso => lam,
            PenaltyKind::GroupScad => {
                let a = self.gamma_scad;
                if theta <= lam {
                    lam
                } else if theta <= a * lam {
                    (a * lam - theta) / (a - 1.0)
                } else {
                    0.0
                }
            }
            PenaltyKind::GroupMcp => {
                let g = self.gamma_mcp;
                if theta <= g * lam { lam - theta / g } else { 0.0 }
            }
        }
    }

    /// Penalty of one block of coefficients of the given group size.
    pub fn block_value(&self, block: &[f64], group_size: usize) -> f64 {
        self.scalar((group_size as f64).sqrt() * l2_norm(block))
    }

    /// Scalar proximal map: `argmin_{s >= 0} (s - v)^2 / (2 tau) + P(s)` for
    /// `v >= 0`. The objective is piecewise quadratic, so the minimizer is a
    /// clipped stationary point of one piece or a breakpoint.
    pub fn scalar_prox(&self, v: f64, tau: f64) -> f64 {
        let lam = self.lambda;
        if v <= 0.0 {
            return 0.0;
        }
        match self.kind {
            PenaltyKind::GroupLasso => (v - tau * lam).max(0.0),
            PenaltyKind::GroupScad => {
                let a = self.gamma_scad;
                let mut cands = [0.0, lam, a * lam, (v - tau * lam).clamp(0.0, lam), v.max(a * lam), 0.0];
                let denom = (a - 1.0) - tau;
                let len = if denom > 0.0 {
                    cands[5] = ((v * (a - 1.0) - tau * a * lam) / denom).clamp(lam, a * lam);
                    6
                } else {
                    5
                };
                self.best_candidate(v, tau, &cands[..len])
            }
            PenaltyKind::GroupMcp => {
                let g = self.gamma_mcp;
                let mut cands = [0.0, g * lam, v.max(g * lam), 0.0];
                let denom = 1.0 - tau / g;
                let len = if denom > 0.0 {
                    cands[3] = ((v - tau * lam) / denom).clamp(0.0, g * lam);
                    4
                } else {
                    3
                };
                self.best_candidate(v, tau, &cands[..len])
            }
        }
    }

    fn best_candidate(&self, v: f64, tau: f64, cands: &[f64]) -> f64 {
        let obj = |s: f64| (s - v) * (s - v) / (2.0 * tau) + self.scalar(s);
        let mut best = cands[0];
        let mut best_val = obj(best);
        for &s in &cands[1..] {
            let val = obj(s);
            if val < best_val {
                best = s;
                best_val = val;
            }
        }
        best
    }

    /// Block proximal map with step `step`:
    /// `argmin_b ||b - z||^2 / (2 step) + P(sqrt(p_j) ||b||)`.
    pub fn block_prox(&self, z: &[f64], step: f64, group_size: usize) -> Vec<f64> {
        let sqrt_p = (group_size as f64).sqrt();
        match self.kind {
            PenaltyKind::GroupLasso => prox_group(z, step * self.lambda * sqrt_p),
            _ => {
                let norm = l2_norm(z);
                if norm == 0.0 {
                    return vec![0.0; z.len()];
                }
                // substitute s = sqrt(p) t along the direction of z
                let s = self.scalar_prox(sqrt_p * norm, step * group_size as f64);
                let scale = s / sqrt_p / norm;
                z.iter().map(|x| x * scale).collect()
            }
        }
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Total penalty `sum_j P(sqrt(p_j) ||beta_(j)||)`.
pub fn penalty_value(spec: &PenaltySpec, beta: &[f64], groups: &GroupStructure) -> f64 {
    groups
        .groups()
        .iter()
        .map(|g| {
            let norm = g.iter().map(|&k| beta[k] * beta[k]).sum::<f64>().sqrt();
            spec.scalar((g.len() as f64).sqrt() * norm)
        })
        .sum()
}

/// Group soft-thresholding `(1 - threshold / ||z||)_+ z`.
pub fn prox_group(z: &[f64], threshold: f64) -> Vec<f64> {
    let norm = l2_norm(z);
    if norm <= threshold || norm == 0.0 {
        return vec![0.0; z.len()];
    }
    let scale = 1.0 - threshold / norm;
    z.iter().map(|x| x * scale).collect()
}

/// Smallest lambda at which `beta = 0` is stationary for the group LASSO:
/// `max_j ||g_(j)|| / (n sqrt(p_j))`, with the gradient taken at `beta = 0`,
/// `alpha = alpha0` and the baseline hazard profiled at those values.
pub fn lambda_max(design: &Design, alpha0: f64) -> Result<f64> {
    if design.n_events() == 0 {
        return Err(Error::NoEvents);
    }
    let eta = vec![0.0; design.n_obs];
    let start = crate::data_model::BaselineHazard::uniform(design.event_times.clone());
    let (hazard, _) = crate::likelihood::profile_hazard(&eta, alpha0, design, &start, 1e-10, 10_000)?;
    let ctx = LikelihoodContext::new(design, hazard)?;
    let grad = crate::likelihood::grad_beta(&ModelParams::zeros(design.p, alpha0), &ctx)?;
    let n = design.n_clusters() as f64;
    let lmax = design
        .groups
        .groups()
        .iter()
        .map(|g| {
            let norm = g.iter().map(|&k| grad[k] * grad[k]).sum::<f64>().sqrt();
            norm / (n * (g.len() as f64).sqrt())
        })
        .fold(0.0, f64::max);
    Ok(lmax)
}
