mod common;

use common::*;
use frailty_glasso::likelihood::{profile_hazard, rho_residual};
use frailty_glasso::{
    alpha_loglik, beta_loglik, grad_beta, marginal_loglik, rho_sweep, BaselineHazard, Cluster, Design,
    GroupStructure, LikelihoodContext, ModelParams, Observation, SurvivalDataset,
};
use rand::Rng;
use statrs::function::gamma::ln_gamma;

#[test]
fn laguerre_rule_integrates_moments() {
    for a in [-0.5, 0.0, 1.3, 4.0] {
        let (x, w) = gauss_laguerre(64, a);
        for k in 0..6 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum();
            let exact = ln_gamma(a + k as f64 + 1.0).exp();
            assert!((q - exact).abs() < 1e-10 * exact, "a = {a}, k = {k}: {q} vs {exact}");
        }
    }
}

#[test]
fn closed_form_matches_quadrature() {
    let mut r = rng(11);
    for _ in 0..100 {
        let data = random_dataset(&mut r, 4, 4, 2);
        let hazard = random_hazard(&mut r, &data);
        let beta: Vec<f64> = (0..2).map(|_| r.random_range(-1.0..1.0)).collect();
        let alpha = r.random_range(0.3..5.0);
        let design = Design::new(&data);
        let ctx = LikelihoodContext::new(&design, hazard.clone()).unwrap();
        let closed = marginal_loglik(&ModelParams::new(beta.clone(), alpha).unwrap(), &ctx).unwrap();
        let quad = quadrature_loglik(&data, &beta, alpha, &hazard);
        assert!((closed - quad).abs() < 1e-8, "closed {closed} vs quadrature {quad}, alpha {alpha}, n {}", data.n_obs());
    }
}

#[test]
fn components_add_up_to_full_loglik() {
    let mut r = rng(12);
    for _ in 0..50 {
        let data = random_dataset(&mut r, 4, 4, 3);
        let hazard = random_hazard(&mut r, &data);
        let beta: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let alpha = r.random_range(0.1..10.0);
        let design = Design::new(&data);
        let ctx = LikelihoodContext::new(&design, hazard.clone()).unwrap();
        let params = ModelParams::new(beta.clone(), alpha).unwrap();
        let full = marginal_loglik(&params, &ctx).unwrap();
        let lb = beta_loglik(&params, &ctx).unwrap();
        let la = alpha_loglik(&params, &ctx).unwrap();
        // l = l_beta + l_alpha + sum delta log h + sum (A + a) log(a + S)
        let mut rest = 0.0;
        for c in &data.clusters {
            let mut s = 0.0;
            let mut a_i = 0.0;
            for o in &c.observations {
                let eta: f64 = o.covariates.iter().zip(&beta).map(|(x, b)| x * b).sum();
                s += frailty_glasso::eval_cumhaz(&hazard, o.time) * eta.exp();
                if o.event {
                    let k = hazard.event_times.iter().position(|t| *t == o.time).unwrap();
                    rest += hazard.jumps[k].ln();
                    a_i += 1.0;
                }
            }
            rest += (a_i + alpha) * (alpha + s).ln();
        }
        assert!((full - (lb + la + rest)).abs() < 1e-10, "{full} vs {}", lb + la + rest);
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut r = rng(13);
    for _ in 0..50 {
        let p = 3;
        let data = random_dataset(&mut r, 4, 4, p);
        let hazard = random_hazard(&mut r, &data);
        let beta: Vec<f64> = (0..p).map(|_| r.random_range(-1.0..1.0)).collect();
        let alpha = r.random_range(0.2..8.0);
        let design = Design::new(&data);
        let ctx = LikelihoodContext::new(&design, hazard).unwrap();
        let g = grad_beta(&ModelParams::new(beta.clone(), alpha).unwrap(), &ctx).unwrap();
        let h = 1e-5;
        let fd: Vec<f64> = (0..p)
            .map(|k| {
                let mut up = beta.clone();
                let mut dn = beta.clone();
                up[k] += h;
                dn[k] -= h;
                let fu = beta_loglik(&ModelParams::new(up, alpha).unwrap(), &ctx).unwrap();
                let fdn = beta_loglik(&ModelParams::new(dn, alpha).unwrap(), &ctx).unwrap();
                (fu - fdn) / (2.0 * h)
            })
            .collect();
        let err = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(1.0);
        assert!(err / scale < 1e-6, "relative error {}", err / scale);
    }
}

#[test]
fn iterated_sweeps_reach_fixed_point() {
    let mut r = rng(14);
    for _ in 0..20 {
        let data = random_dataset(&mut r, 4, 4, 2);
        let design = Design::new(&data);
        let beta: Vec<f64> = (0..2).map(|_| r.random_range(-1.0..1.0)).collect();
        let alpha = r.random_range(0.2..8.0);
        let eta = design.linear_predictor(&beta);
        let start = BaselineHazard::uniform(design.event_times.clone());
        let (h, res) = profile_hazard(&eta, alpha, &design, &start, 1e-10, 100_000).unwrap();
        assert!(res < 1e-8);
        assert!(rho_residual(&eta, alpha, &design, &h).unwrap() < 1e-8);
    }
}

#[test]
fn single_event_has_unit_jump() {
    let data = SurvivalDataset {
        clusters: vec![Cluster {
            id: "a".into(),
            observations: vec![Observation { time: 1.0, event: true, covariates: vec![0.0] }],
        }],
        p: 1,
        groups: GroupStructure::contiguous(1, 1).unwrap(),
    };
    let design = Design::new(&data);
    let mut h = BaselineHazard::uniform(vec![1.0]);
    h.jumps[0] = 0.3;
    let params = ModelParams::new(vec![0.0], 2.0).unwrap();
    for _ in 0..60 {
        h = rho_sweep(&params, &design, &h).unwrap();
    }
    assert!((h.jumps[0] - 1.0).abs() < 1e-10, "{}", h.jumps[0]);
}

#[test]
fn large_alpha_recovers_breslow() {
    let mut r = rng(15);
    for seed in 0..10 {
        let data = cox_dataset(100 + seed, 6, 5, 2, &[0.5, -0.3]);
        let design = Design::new(&data);
        let beta: Vec<f64> = (0..2).map(|_| r.random_range(-1.0..1.0)).collect();
        let eta = design.linear_predictor(&beta);
        let start = BaselineHazard::uniform(design.event_times.clone());
        let (h, _) = profile_hazard(&eta, 1e6, &design, &start, 1e-12, 100_000).unwrap();
        let oracle = breslow_jumps(&data, &beta);
        for (a, b) in h.jumps.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-4 * b, "{a} vs {b}");
        }
    }
}

#[test]
fn censored_only_clusters_contribute_frailty_terms_only() {
    // one event cluster plus one censored-only cluster: the censored cluster
    // adds alpha log alpha - alpha log(alpha + S)
    let mk = |t: f64, e: bool| Observation { time: t, event: e, covariates: vec![0.0] };
    let data = SurvivalDataset {
        clusters: vec![
            Cluster { id: "a".into(), observations: vec![mk(1.0, true)] },
            Cluster { id: "b".into(), observations: vec![mk(2.0, false)] },
        ],
        p: 1,
        groups: GroupStructure::contiguous(1, 1).unwrap(),
    };
    let design = Design::new(&data);
    let hazard = BaselineHazard::new(vec![1.0], vec![0.5]).unwrap();
    let ctx = LikelihoodContext::new(&design, hazard).unwrap();
    let alpha = 2.0;
    let ll = marginal_loglik(&ModelParams::new(vec![0.0], alpha).unwrap(), &ctx).unwrap();
    let first = alpha * alpha.ln() + ln_gamma(1.0 + alpha) - ln_gamma(alpha) - (1.0 + alpha) * (alpha + 0.5f64).ln()
        + 0.5f64.ln();
    let second = alpha * alpha.ln() - alpha * (alpha + 0.5f64).ln();
    assert!((ll - (first + second)).abs() < 1e-12);
}
