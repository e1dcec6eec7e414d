use frailty_glasso::tuning::{assign_folds, default_lambda_grid, test_fold_score};
use frailty_glasso::{
    kfold_cv, make_lambda_grid, solution_path, Error, FitConfig, PenaltySpec, SimConfig, simulate_dataset,
};

fn small_sim(seed: u64) -> frailty_glasso::SurvivalDataset {
    let cfg = SimConfig { seed, n_clusters: 20, cluster_size: 5, p: 12, n_covariate_groups: 4, ..Default::default() };
    simulate_dataset(&cfg).unwrap().dataset
}

#[test]
fn fold_counts_are_checked() {
    let data = small_sim(1);
    assert!(matches!(assign_folds(&data, 1, 0), Err(Error::Config(_))));
    assert!(matches!(assign_folds(&data, 21, 0), Err(Error::Config(_))));
    assert!(assign_folds(&data, 20, 0).is_ok());
}

#[test]
fn folds_partition_clusters_and_hold_events() {
    for seed in 0..10 {
        let data = small_sim(seed);
        let k = 5;
        let fold = assign_folds(&data, k, seed).unwrap();
        assert_eq!(fold.len(), data.n_clusters());
        for f in 0..k {
            let members: Vec<usize> = (0..fold.len()).filter(|&c| fold[c] == f).collect();
            assert_eq!(members.len(), 4);
            assert!(members.iter().map(|&c| data.clusters[c].event_count()).sum::<usize>() > 0);
        }
        assert_eq!(fold, assign_folds(&data, k, seed).unwrap());
    }
}

#[test]
fn cv_error_is_the_fold_average_and_minimized() {
    let data = small_sim(3);
    let cfg = FitConfig::default();
    let grid = make_lambda_grid(default_lambda_grid(&data, &cfg).unwrap()[0], 6, 0.1).unwrap();
    let cv = kfold_cv(&data, &PenaltySpec::group_lasso(0.0), &cfg, &grid, 4, 11).unwrap();
    assert_eq!(cv.cve.len(), grid.len());
    assert!(cv.cve.iter().all(|v| v.is_finite()));
    for (l, v) in cv.cve.iter().enumerate() {
        let sum: f64 = cv.fold_scores.iter().map(|s| s[l]).sum();
        assert!((v - sum / data.n_clusters() as f64).abs() < 1e-12);
    }
    let best = cv.cve.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(cv.cve[cv.opt_index], best);
    assert!(cv.cve[..cv.opt_index].iter().all(|v| *v > best));
    assert_eq!(cv.lambda_opt, grid[cv.opt_index]);
}

#[test]
fn test_score_ignores_a_linear_shift() {
    let data = small_sim(4);
    let beta: Vec<f64> = (0..12).map(|k| 0.1 * (k as f64 - 5.0)).collect();
    let a = test_fold_score(&data, &beta, 1.5).unwrap();
    let mut shifted = data.clone();
    for c in &mut shifted.clusters {
        for o in &mut c.observations {
            o.covariates[0] += 3.0;
        }
    }
    let b = test_fold_score(&shifted, &beta, 1.5).unwrap();
    assert!((a - b).abs() < 1e-6 * a.abs(), "{a} vs {b}");
}

#[test]
fn path_starts_empty_and_grows() {
    let data = small_sim(5);
    let cfg = FitConfig::default();
    let grid = default_lambda_grid(&data, &cfg).unwrap();
    let path = solution_path(&data, &PenaltySpec::group_lasso(0.0), &cfg, &grid[..25]).unwrap();
    assert_eq!(path.active_counts[0], 0);
    assert!(path.active_counts[24] >= path.active_counts[0]);
    assert!(path.active_counts[24] > 0);
    assert!(path.errors.iter().all(Option::is_none));
}

#[test]
fn grid_must_decrease() {
    let data = small_sim(6);
    let r = solution_path(&data, &PenaltySpec::group_lasso(0.0), &FitConfig::default(), &[0.1, 0.2]);
    assert!(matches!(r, Err(Error::Config(_))));
}
