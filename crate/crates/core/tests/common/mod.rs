//! Test-side reference implementations, written independently of the
//! library's likelihood code.

#![allow(dead_code)]

use frailty_glasso::{BaselineHazard, Cluster, GroupStructure, Observation, SurvivalDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

/// Nodes and weights of the `n`-point generalized Gauss-Laguerre rule for
/// the weight `x^a exp(-x)` on `(0, inf)`, by Newton iteration on the
/// Laguerre recurrence.
pub fn gauss_laguerre(n: usize, a: f64) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..n {
        let fi = i as f64;
        z = match i {
            0 => (1.0 + a) * (3.0 + 0.92 * a) / (1.0 + 2.4 * nf + 1.8 * a),
            1 => z + (15.0 + 6.25 * a) / (1.0 + 0.9 * a + 2.5 * nf),
            _ => {
                let ai = fi - 1.0;
                z + ((1.0 + 2.55 * ai) / (1.9 * ai) + 1.26 * ai * a / (1.0 + 3.5 * ai)) * (z - x[i - 2])
                    / (1.0 + 0.3 * a)
            }
        };
        let mut dz = f64::INFINITY;
        for _ in 0..100 {
            let (p1, p2) = laguerre_pair(n, a, z);
            let pp = (nf * p1 - (nf + a) * p2) / z;
            let z1 = z;
            z = z1 - p1 / pp;
            dz = (z - z1).abs();
            if dz <= 1e-14 * z.abs() {
                break;
            }
        }
        assert!(dz <= 1e-10 * z.abs(), "Laguerre node {i} did not converge");
        let (p1, p2) = laguerre_pair(n, a, z);
        let pp = (nf * p1 - (nf + a) * p2) / z;
        x[i] = z;
        w[i] = -(ln_gamma(a + nf) - ln_gamma(nf)).exp() / (pp * nf * p2);
    }
    (x, w)
}

/// `(L_n^a(z), L_{n-1}^a(z))` by the three-term recurrence.
fn laguerre_pair(n: usize, a: f64, z: f64) -> (f64, f64) {
    let mut p1 = 1.0;
    let mut p2 = 0.0;
    for j in 0..n {
        let jf = j as f64;
        let p3 = p2;
        p2 = p1;
        p1 = ((2.0 * jf + 1.0 + a - z) * p2 - (jf + a) * p3) / (jf + 1.0);
    }
    (p1, p2)
}

/// Marginal log-likelihood of a dataset by per-cluster quadrature of the
/// conditional likelihood against the gamma(alpha, alpha) density.
pub fn quadrature_loglik(data: &SurvivalDataset, beta: &[f64], alpha: f64, hazard: &BaselineHazard) -> f64 {
    let (nodes, weights) = gauss_laguerre(64, alpha - 1.0);
    let mut total = 0.0;
    for c in &data.clusters {
        // conditional likelihood: prod_j (u rho e^eta)^delta exp(-u H e^eta)
        let mut log_const = 0.0;
        let mut a_i = 0.0;
        let mut s = 0.0;
        for o in &c.observations {
            let eta: f64 = o.covariates.iter().zip(beta).map(|(x, b)| x * b).sum();
            let cum: f64 = hazard.event_times.iter().zip(&hazard.jumps).filter(|(t, _)| **t <= o.time).map(|(_, r)| r).sum();
            s += cum * eta.exp();
            if o.event {
                let k = hazard.event_times.iter().position(|t| *t == o.time).expect("event time in hazard");
                log_const += hazard.jumps[k].ln() + eta;
                a_i += 1.0;
            }
        }
        // u = x / b leaves exp(-c x) with c < 1 in the integrand
        let b = alpha + s / 2.0;
        let c = (s / 2.0) / b;
        let sum: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x.powf(a_i) * (-c * x).exp()).sum();
        total += log_const + alpha * alpha.ln() - ln_gamma(alpha) - (alpha + a_i) * b.ln() + sum.ln();
    }
    total
}

/// Random desk-scale dataset: up to `max_clusters` clusters of up to
/// `max_size` observations, distinct times, at least one event.
pub fn random_dataset(rng: &mut ChaCha8Rng, max_clusters: usize, max_size: usize, p: usize) -> SurvivalDataset {
    loop {
        let n_clusters = rng.random_range(1..=max_clusters);
        let mut clusters = Vec::new();
        for i in 0..n_clusters {
            let size = rng.random_range(1..=max_size);
            let observations = (0..size)
                .map(|_| Observation {
                    time: rng.random_range(0.05..3.0),
                    event: rng.random_bool(0.6),
                    covariates: (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
                })
                .collect();
            clusters.push(Cluster { id: format!("c{i}"), observations });
        }
        let data = SurvivalDataset { clusters, p, groups: GroupStructure::contiguous(p, p.min(2)).unwrap() };
        if data.n_events() > 0 {
            return frailty_glasso::validate_dataset(data).expect("random dataset is valid");
        }
    }
}

pub fn random_hazard(rng: &mut ChaCha8Rng, data: &SurvivalDataset) -> BaselineHazard {
    let times = frailty_glasso::pooled_event_times(data).unwrap();
    let jumps = times.iter().map(|_| rng.random_range(0.05..0.8)).collect();
    BaselineHazard::new(times, jumps).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn eta_of(o: &Observation, beta: &[f64]) -> f64 {
    o.covariates.iter().zip(beta).map(|(x, b)| x * b).sum()
}

/// Classical Breslow jumps `1 / sum_{risk set} exp(eta)` for distinct
/// event times.
pub fn breslow_jumps(data: &SurvivalDataset, beta: &[f64]) -> Vec<f64> {
    let obs: Vec<&Observation> = data.observations().collect();
    let mut times: Vec<f64> = obs.iter().filter(|o| o.event).map(|o| o.time).collect();
    times.sort_by(f64::total_cmp);
    times
        .iter()
        .map(|&t| 1.0 / obs.iter().filter(|o| o.time >= t).map(|o| eta_of(o, beta).exp()).sum::<f64>())
        .collect()
}

/// Maximizer of the Cox partial likelihood (no ties) by Newton-Raphson.
pub fn cox_newton(data: &SurvivalDataset) -> Vec<f64> {
    let p = data.p;
    let obs: Vec<&Observation> = data.observations().collect();
    let mut beta = vec![0.0; p];
    for _ in 0..100 {
        let mut grad = vec![0.0; p];
        let mut hess = vec![vec![0.0; p]; p];
        for o in obs.iter().filter(|o| o.event) {
            let risk: Vec<&&Observation> = obs.iter().filter(|r| r.time >= o.time).collect();
            let w: Vec<f64> = risk.iter().map(|r| eta_of(r, &beta).exp()).collect();
            let s0: f64 = w.iter().sum();
            let mut s1 = vec![0.0; p];
            let mut s2 = vec![vec![0.0; p]; p];
            for (r, wr) in risk.iter().zip(&w) {
                for a in 0..p {
                    s1[a] += wr * r.covariates[a];
                    for b in 0..p {
                        s2[a][b] += wr * r.covariates[a] * r.covariates[b];
                    }
                }
            }
            for a in 0..p {
                grad[a] += o.covariates[a] - s1[a] / s0;
                for b in 0..p {
                    hess[a][b] -= s2[a][b] / s0 - s1[a] * s1[b] / (s0 * s0);
                }
            }
        }
        let step = solve(hess, grad.clone());
        for a in 0..p {
            beta[a] -= step[a];
        }
        if step.iter().map(|s| s.abs()).fold(0.0, f64::max) < 1e-13 {
            break;
        }
    }
    beta
}

/// Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Small clustered dataset with Gaussian covariates and exponential times.
pub fn cox_dataset(seed: u64, n_clusters: usize, size: usize, p: usize, beta: &[f64]) -> SurvivalDataset {
    let mut r = rng(seed);
    let mut clusters = Vec::new();
    for i in 0..n_clusters {
        let observations = (0..size)
            .map(|_| {
                let covariates: Vec<f64> = (0..p).map(|_| r.random_range(-1.5..1.5)).collect();
                let eta: f64 = covariates.iter().zip(beta).map(|(x, b)| x * b).sum();
                let t = -r.random_range(1e-12..1.0f64).ln() / eta.exp();
                let c = -r.random_range(1e-12..1.0f64).ln() / 0.3;
                Observation { time: t.min(c), event: t <= c, covariates }
            })
            .collect();
        clusters.push(Cluster { id: format!("c{i}"), observations });
    }
    let data = SurvivalDataset { clusters, p, groups: GroupStructure::contiguous(p, p).unwrap() };
    frailty_glasso::validate_dataset(data).unwrap()
}

/// Maximizer of the frailty beta log-likelihood
/// `sum_i [sum_j delta_ij eta_ij - (A_i + alpha) log(alpha + S_i)]` at a fixed
/// hazard, by damped Newton-Raphson.
pub fn frailty_newton(data: &SurvivalDataset, hazard: &BaselineHazard, alpha: f64) -> Vec<f64> {
    let p = data.p;
    let cum = |t: f64| -> f64 {
        hazard.event_times.iter().zip(&hazard.jumps).filter(|(s, _)| **s <= t).map(|(_, r)| r).sum()
    };
    let value = |beta: &[f64]| -> f64 {
        let mut v = 0.0;
        for c in &data.clusters {
            let a_i = c.observations.iter().filter(|o| o.event).count() as f64;
            let s: f64 = c.observations.iter().map(|o| cum(o.time) * eta_of(o, beta).exp()).sum();
            v += c.observations.iter().filter(|o| o.event).map(|o| eta_of(o, beta)).sum::<f64>();
            v -= (a_i + alpha) * (alpha + s).ln();
        }
        v
    };
    let mut beta = vec![0.0; p];
    for _ in 0..200 {
        let mut grad = vec![0.0; p];
        let mut hess = vec![vec![0.0; p]; p];
        for c in &data.clusters {
            let a_i = c.observations.iter().filter(|o| o.event).count() as f64;
            let mut s = 0.0;
            let mut s1 = vec![0.0; p];
            let mut s2 = vec![vec![0.0; p]; p];
            for o in &c.observations {
                let w = cum(o.time) * eta_of(o, &beta).exp();
                s += w;
                for a in 0..p {
                    if o.event {
                        grad[a] += o.covariates[a];
                    }
                    s1[a] += w * o.covariates[a];
                    for b in 0..p {
                        s2[a][b] += w * o.covariates[a] * o.covariates[b];
                    }
                }
            }
            let f = (a_i + alpha) / (alpha + s);
            for a in 0..p {
                grad[a] -= f * s1[a];
                for b in 0..p {
                    hess[a][b] -= f * s2[a][b] - f / (alpha + s) * s1[a] * s1[b];
                }
            }
        }
        let step = solve(hess, grad);
        let base = value(&beta);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b - t * s).collect();
            if value(&cand) >= base || t < 1e-10 {
                beta = cand;
                break;
            }
            t *= 0.5;
        }
        if step.iter().map(|s| s.abs()).fold(0.0, f64::max) < 1e-13 {
            break;
        }
    }
    beta
}
