//! Evaluation measures: likelihood-ratio pseudo R^2, group selection
//! confusion counts and coefficient estimation error.

use serde::{Deserialize, Serialize};

use crate::data_model::GroupStructure;
use crate::error::{Error, Result};

/// Slack allowed when the fitted log-likelihood falls below the null.
pub const LOGLIK_SLACK: f64 = 1e-8;

/// Cox-Snell pseudo R^2, `1 - exp(2 (l_null - l_fit) / m)`, clamped to `[0, 1)`.
pub fn pseudo_r2(loglik_fit: f64, loglik_null: f64, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::Config("pseudo R^2 needs at least one observation".into()));
    }
    if !loglik_fit.is_finite() || !loglik_null.is_finite() || loglik_fit < loglik_null - LOGLIK_SLACK {
        return Err(Error::InvalidLoglikPair { fit: loglik_fit, null: loglik_null });
    }
    let r2 = -(2.0 * (loglik_null - loglik_fit) / m as f64).exp_m1();
    // `+ 0.0` turns a negative zero into zero
    Ok(r2.clamp(0.0, 1.0 - f64::EPSILON) + 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SelectionConfusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl SelectionConfusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Group-level confusion counts; a group is selected iff its block of
/// `beta_hat` has positive norm. `true_active` holds zero-based group indices.
pub fn selection_metrics(beta_hat: &[f64], true_active: &[usize], groups: &GroupStructure) -> SelectionConfusion {
    let mut c = SelectionConfusion::default();
    for (j, g) in groups.groups().iter().enumerate() {
        let selected = g.iter().any(|&k| beta_hat[k] != 0.0);
        let truth = true_active.contains(&j);
        match (selected, truth) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Euclidean distance between estimated and true coefficients.
pub fn estimation_error(beta_hat: &[f64], beta_true: &[f64]) -> Result<f64> {
    if beta_hat.len() != beta_true.len() {
        return Err(Error::DimensionMismatch { expected: beta_true.len(), found: beta_hat.len() });
    }
    Ok(beta_hat.iter().zip(beta_true).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn r2_examples() {
        assert_eq!(pseudo_r2(-50.0, -50.0, 100).unwrap(), 0.0);
        assert!(pseudo_r2(-50.0, -50.0, 100).unwrap().is_sign_positive());
        let r = pseudo_r2(0.0, -50.0, 100).unwrap();
        assert!((r - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!((r - 0.6321).abs() < 1e-4);
        assert!(matches!(pseudo_r2(-60.0, -50.0, 100), Err(Error::InvalidLoglikPair { .. })));
        // within slack is accepted and clamped to zero
        assert_eq!(pseudo_r2(-50.0 - 1e-10, -50.0, 100).unwrap(), 0.0);
    }

    #[test]
    fn selection_examples() {
        let groups = GroupStructure::contiguous(20, 10).unwrap();
        let truth = [0, 1];
        let zero = vec![0.0; 20];
        assert_eq!(selection_metrics(&zero, &truth, &groups), SelectionConfusion { tp: 0, fp: 0, tn: 8, fn_: 2 });
        let mut exact = zero.clone();
        exact[0] = 1.0;
        exact[3] = -0.2;
        let c = selection_metrics(&exact, &truth, &groups);
        assert_eq!((c.tp, c.fp), (2, 0));
        let all = vec![0.1; 20];
        let c = selection_metrics(&all, &truth, &groups);
        assert_eq!((c.tp, c.fp), (2, 8));
    }

    #[test]
    fn estimation_error_examples() {
        assert_eq!(estimation_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let mut a = vec![0.0; 5];
        a[0] = 3.0;
        a[1] = 4.0;
        assert_eq!(estimation_error(&a, &[0.0; 5]).unwrap(), 5.0);
        assert!(estimation_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn r2_monotone_and_in_range(null in -500.0f64..0.0, gain1 in 0.0f64..200.0, gain2 in 0.0f64..200.0, m in 1usize..500) {
            let (lo, hi) = if gain1 <= gain2 { (gain1, gain2) } else { (gain2, gain1) };
            let r_lo = pseudo_r2(null + lo, null, m).unwrap();
            let r_hi = pseudo_r2(null + hi, null, m).unwrap();
            prop_assert!(r_lo <= r_hi);
            prop_assert!((0.0..1.0).contains(&r_lo) && (0.0..1.0).contains(&r_hi));
        }

        #[test]
        fn confusion_sums_to_k(beta in prop::collection::vec(prop_oneof![Just(0.0), -1.0f64..1.0], 12), t in prop::collection::btree_set(0usize..4, 0..4)) {
            let groups = GroupStructure::contiguous(12, 4).unwrap();
            let truth: Vec<usize> = t.into_iter().collect();
            prop_assert_eq!(selection_metrics(&beta, &truth, &groups).total(), 4);
        }

        #[test]
        fn error_symmetric_triangle(
            a in prop::collection::vec(-3.0f64..3.0, 4),
            b in prop::collection::vec(-3.0f64..3.0, 4),
            c in prop::collection::vec(-3.0f64..3.0, 4),
        ) {
            let ab = estimation_error(&a, &b).unwrap();
            prop_assert!((ab - estimation_error(&b, &a).unwrap()).abs() < 1e-15);
            let ac = estimation_error(&a, &c).unwrap();
            let cb = estimation_error(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }
    }
}
