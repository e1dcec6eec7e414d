//! Clustered right-censored survival data, covariate groups and the
//! step-function baseline hazard.
//!
//! Two independent structures live here and are never conflated:
//! a *cluster* is a set of observations sharing one frailty draw, while a
//! *covariate group* is a block of coefficients penalized together.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: String,
    pub observations: Vec<Observation>,
}

impl Cluster {
    /// Number of uncensored observations in the cluster.
    pub fn event_count(&self) -> usize {
        self.observations.iter().filter(|o| o.event).count()
    }
}

/// Partition of the covariate indices `0..p` into penalized blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStructure {
    groups: Vec<Vec<usize>>,
}

impl GroupStructure {
    /// Builds a partition from zero-based index sets.
    pub fn new(groups: Vec<Vec<usize>>, p: usize) -> Result<Self> {
        let gs = Self { groups };
        let problems = gs.partition_problems(p);
        if problems.is_empty() {
            Ok(gs)
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Builds a partition from one-based index sets, as used in group JSON files.
    pub fn from_one_based(groups: &[Vec<usize>], p: usize) -> Result<Self> {
        let mut zero = Vec::with_capacity(groups.len());
        for g in groups {
            let mut block = Vec::with_capacity(g.len());
            for &idx in g {
                if idx == 0 {
                    return Err(Error::Validation(vec![Violation::GroupPartitionInvalid(
                        "covariate index 0 in one-based group list".into(),
                    )]));
                }
                block.push(idx - 1);
            }
            zero.push(block);
        }
        Self::new(zero, p)
    }

    /// `k` contiguous blocks of (nearly) equal size.
    pub fn contiguous(p: usize, k: usize) -> Result<Self> {
        if k == 0 || k > p {
            return Err(Error::Config(format!("cannot split {p} covariates into {k} groups")));
        }
        let base = p / k;
        let extra = p % k;
        let mut groups = Vec::with_capacity(k);
        let mut start = 0;
        for j in 0..k {
            let len = base + usize::from(j < extra);
            groups.push((start..start + len).collect());
            start += len;
        }
        Self::new(groups, p)
    }

    /// Unvalidated constructor used when assembling a dataset that is
    /// checked afterwards by [`validate_dataset`].
    pub fn new_unchecked(groups: Vec<Vec<usize>>) -> Self {
        Self { groups }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn size(&self, j: usize) -> usize {
        self.groups[j].len()
    }

    pub fn to_one_based(&self) -> Vec<Vec<usize>> {
        self.groups.iter().map(|g| g.iter().map(|i| i + 1).collect()).collect()
    }

    fn partition_problems(&self, p: usize) -> Vec<Violation> {
        let mut problems = Vec::new();
        let mut owner: Vec<Option<usize>> = vec![None; p];
        for (j, g) in self.groups.iter().enumerate() {
            if g.is_empty() {
                problems.push(Violation::GroupPartitionInvalid(format!("group {} is empty", j + 1)));
            }
            for &idx in g {
                if idx >= p {
                    problems.push(Violation::GroupPartitionInvalid(format!(
                        "group {} references covariate {} but p = {p}",
                        j + 1,
                        idx + 1
                    )));
                    continue;
                }
                if let Some(prev) = owner[idx] {
                    problems.push(Violation::GroupPartitionInvalid(format!(
                        "covariate {} appears in groups {} and {}",
                        idx + 1,
                        prev + 1,
                        j + 1
                    )));
                } else {
                    owner[idx] = Some(j);
                }
            }
        }
        let missing: Vec<usize> = (0..p).filter(|&i| owner[i].is_none()).map(|i| i + 1).collect();
        if !missing.is_empty() {
            problems.push(Violation::GroupPartitionInvalid(format!(
                "covariates {missing:?} are not in any group"
            )));
        }
        problems
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    pub clusters: Vec<Cluster>,
    pub p: usize,
    pub groups: GroupStructure,
}

impl SurvivalDataset {
    /// Total number of observations `m`.
    pub fn n_obs(&self) -> usize {
        self.clusters.iter().map(|c| c.observations.len()).sum()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_events(&self) -> usize {
        self.clusters.iter().map(Cluster::event_count).sum()
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.clusters.iter().flat_map(|c| c.observations.iter())
    }

    /// Dataset restricted to the clusters at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> SurvivalDataset {
        SurvivalDataset {
            clusters: indices.iter().map(|&i| self.clusters[i].clone()).collect(),
            p: self.p,
            groups: self.groups.clone(),
        }
    }
}

/// Step-function cumulative baseline hazard with positive jumps at the
/// pooled event times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineHazard {
    pub event_times: Vec<f64>,
    pub jumps: Vec<f64>,
}

impl BaselineHazard {
    pub fn new(event_times: Vec<f64>, jumps: Vec<f64>) -> Result<Self> {
        if event_times.len() != jumps.len() {
            return Err(Error::DimensionMismatch { expected: event_times.len(), found: jumps.len() });
        }
        if event_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("baseline hazard event times must be strictly increasing".into()));
        }
        if jumps.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::Config("baseline hazard jumps must be positive and finite".into()));
        }
        Ok(Self { event_times, jumps })
    }

    /// Jumps all equal to `1/N`.
    pub fn uniform(event_times: Vec<f64>) -> Self {
        let n = event_times.len().max(1) as f64;
        let jumps = vec![1.0 / n; event_times.len()];
        Self { event_times, jumps }
    }

    pub fn len(&self) -> usize {
        self.event_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.event_times.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: Vec<f64>,
    pub alpha: f64,
}

impl ModelParams {
    pub fn new(beta: Vec<f64>, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Config(format!("frailty parameter alpha must be positive, got {alpha}")));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("coefficients must be finite".into()));
        }
        Ok(Self { beta, alpha })
    }

    pub fn zeros(p: usize, alpha: f64) -> Self {
        Self { beta: vec![0.0; p], alpha }
    }
}

/// Checks every dataset invariant and returns the dataset unchanged, or an
/// error listing all violations found.
pub fn validate_dataset(raw: SurvivalDataset) -> Result<SurvivalDataset> {
    let mut problems = Vec::new();
    if raw.n_obs() == 0 {
        problems.push(Violation::NoObservations);
    }
    for c in &raw.clusters {
        if c.observations.is_empty() {
            problems.push(Violation::EmptyCluster { cluster: c.id.clone() });
        }
        for (j, o) in c.observations.iter().enumerate() {
            if !(o.time > 0.0) || !o.time.is_finite() {
                problems.push(Violation::NonPositiveTime { cluster: c.id.clone(), index: j, time: o.time });
            }
            if o.covariates.len() != raw.p {
                problems.push(Violation::DimensionMismatch {
                    cluster: c.id.clone(),
                    index: j,
                    expected: raw.p,
                    found: o.covariates.len(),
                });
            }
        }
    }
    problems.extend(raw.groups.partition_problems(raw.p));

    let mut events: Vec<f64> = raw.observations().filter(|o| o.event).map(|o| o.time).collect();
    events.sort_by(f64::total_cmp);
    let mut last_tie = None;
    for w in events.windows(2) {
        if w[0] == w[1] && last_tie != Some(w[0]) {
            problems.push(Violation::TiedEventTimes { time: w[0] });
            last_tie = Some(w[0]);
        }
    }

    if problems.is_empty() {
        Ok(raw)
    } else {
        Err(Error::Validation(problems))
    }
}

/// Sorted distinct times of all uncensored observations.
pub fn pooled_event_times(data: &SurvivalDataset) -> Result<Vec<f64>> {
    let mut times: Vec<f64> = data.observations().filter(|o| o.event).map(|o| o.time).collect();
    if times.is_empty() {
        return Err(Error::NoEvents);
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    Ok(times)
}

/// Deterministic tie breaking: the k-th member (k = 0, 1, ...) of every set of
/// tied event times is shifted by `k * eps`, with `eps = 1e-9 * median(time)`.
/// Members are ordered by cluster and then by position within the cluster.
pub fn break_ties(mut data: SurvivalDataset) -> SurvivalDataset {
    let mut all: Vec<f64> = data.observations().map(|o| o.time).collect();
    if all.is_empty() {
        return data;
    }
    all.sort_by(f64::total_cmp);
    let mid = all.len() / 2;
    let median = if all.len() % 2 == 1 { all[mid] } else { 0.5 * (all[mid - 1] + all[mid]) };
    let eps = 1e-9 * median.abs().max(f64::MIN_POSITIVE);

    // a shifted time can in principle land on another event; repeat until clean
    for _ in 0..16 {
        let mut seen: std::collections::BTreeMap<u64, usize> = std::collections::BTreeMap::new();
        let mut changed = false;
        for c in data.clusters.iter_mut() {
            for o in c.observations.iter_mut().filter(|o| o.event) {
                let key = o.time.to_bits();
                let k = seen.entry(key).or_insert(0);
                if *k > 0 {
                    o.time += *k as f64 * eps;
                    changed = true;
                }
                *k += 1;
            }
        }
        if !changed {
            break;
        }
    }
    data
}

/// Column-wise centering and scaling applied before fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardization {
    /// Population mean and standard deviation of every covariate. Constant
    /// columns get scale 1.
    pub fn from_data(data: &SurvivalDataset) -> Self {
        let p = data.p;
        let m = data.n_obs().max(1) as f64;
        let mut means = vec![0.0; p];
        for o in data.observations() {
            for (mu, x) in means.iter_mut().zip(&o.covariates) {
                *mu += x;
            }
        }
        means.iter_mut().for_each(|mu| *mu /= m);
        let mut vars = vec![0.0; p];
        for o in data.observations() {
            for ((v, x), mu) in vars.iter_mut().zip(&o.covariates).zip(&means) {
                *v += (x - mu) * (x - mu);
            }
        }
        let scales = vars
            .into_iter()
            .map(|v| {
                let sd = (v / m).sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            })
            .collect();
        Self { means, scales }
    }

    pub fn identity(p: usize) -> Self {
        Self { means: vec![0.0; p], scales: vec![1.0; p] }
    }

    pub fn apply(&self, data: &SurvivalDataset) -> SurvivalDataset {
        let mut out = data.clone();
        for c in out.clusters.iter_mut() {
            for o in c.observations.iter_mut() {
                for ((x, mu), s) in o.covariates.iter_mut().zip(&self.means).zip(&self.scales) {
                    *x = (*x - mu) / s;
                }
            }
        }
        out
    }

    /// Coefficients on the standardized scale to the original scale.
    pub fn beta_to_original(&self, beta_std: &[f64]) -> Vec<f64> {
        beta_std.iter().zip(&self.scales).map(|(b, s)| b / s).collect()
    }

    pub fn beta_to_standardized(&self, beta: &[f64]) -> Vec<f64> {
        beta.iter().zip(&self.scales).map(|(b, s)| b * s).collect()
    }

    /// Offset `c` with `eta_standardized = eta_original - c` for coefficients
    /// given on the original scale.
    pub fn linear_offset(&self, beta_original: &[f64]) -> f64 {
        beta_original.iter().zip(&self.means).map(|(b, mu)| b * mu).sum()
    }

    /// Re-expresses a hazard fitted on standardized covariates relative to
    /// the original covariates.
    pub fn hazard_to_original(&self, hazard: &BaselineHazard, beta_original: &[f64]) -> BaselineHazard {
        let factor = (-self.linear_offset(beta_original)).exp();
        BaselineHazard {
            event_times: hazard.event_times.clone(),
            jumps: hazard.jumps.iter().map(|r| r * factor).collect(),
        }
    }

    pub fn hazard_to_standardized(&self, hazard: &BaselineHazard, beta_original: &[f64]) -> BaselineHazard {
        let factor = self.linear_offset(beta_original).exp();
        BaselineHazard {
            event_times: hazard.event_times.clone(),
            jumps: hazard.jumps.iter().map(|r| r * factor).collect(),
        }
    }
}

/// Flattened, read-only view of a dataset used by the numerical kernels.
///
/// Observations are stored cluster by cluster; covariates column-major so
/// that a covariate group touches contiguous memory.
#[derive(Debug, Clone)]
pub struct Design {
    pub n_obs: usize,
    pub p: usize,
    pub cluster_bounds: Vec<usize>,
    pub cluster_events: Vec<f64>,
    pub time: Vec<f64>,
    pub event: Vec<bool>,
    x: Vec<f64>,
    pub event_times: Vec<f64>,
    /// Number of pooled event times `<=` the observation time.
    pub rank: Vec<usize>,
    /// Position of the observation's own time among the pooled event times.
    pub event_index: Vec<Option<usize>>,
    /// Observations bucketed by `rank`: bucket `r` is
    /// `by_rank[rank_offsets[r]..rank_offsets[r + 1]]`.
    pub by_rank: Vec<usize>,
    pub rank_offsets: Vec<usize>,
    pub groups: GroupStructure,
}

impl Design {
    pub fn new(data: &SurvivalDataset) -> Self {
        let p = data.p;
        let n_obs = data.n_obs();
        let mut cluster_bounds = Vec::with_capacity(data.n_clusters() + 1);
        let mut cluster_events = Vec::with_capacity(data.n_clusters());
        let mut time = Vec::with_capacity(n_obs);
        let mut event = Vec::with_capacity(n_obs);
        let mut x = vec![0.0; n_obs * p];
        cluster_bounds.push(0);
        let mut row = 0;
        for c in &data.clusters {
            cluster_events.push(c.event_count() as f64);
            for o in &c.observations {
                time.push(o.time);
                event.push(o.event);
                for (k, v) in o.covariates.iter().enumerate() {
                    x[k * n_obs + row] = *v;
                }
                row += 1;
            }
            cluster_bounds.push(row);
        }

        let mut event_times: Vec<f64> = time.iter().zip(&event).filter(|(_, &d)| d).map(|(t, _)| *t).collect();
        event_times.sort_by(f64::total_cmp);
        event_times.dedup();

        let rank: Vec<usize> = time.iter().map(|t| event_times.partition_point(|e| e <= t)).collect();
        let event_index = time
            .iter()
            .zip(&event)
            .zip(&rank)
            .map(|((_, &d), &r)| if d { Some(r - 1) } else { None })
            .collect();

        let n_ranks = event_times.len() + 1;
        let mut rank_offsets = vec![0usize; n_ranks + 1];
        for &r in &rank {
            rank_offsets[r + 1] += 1;
        }
        for r in 0..n_ranks {
            rank_offsets[r + 1] += rank_offsets[r];
        }
        let mut fill = rank_offsets.clone();
        let mut by_rank = vec![0usize; n_obs];
        for (i, &r) in rank.iter().enumerate() {
            by_rank[fill[r]] = i;
            fill[r] += 1;
        }

        Self {
            n_obs,
            p,
            cluster_bounds,
            cluster_events,
            time,
            event,
            x,
            event_times,
            rank,
            event_index,
            by_rank,
            rank_offsets,
            groups: data.groups.clone(),
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_events.len()
    }

    pub fn n_events(&self) -> usize {
        self.event_times.len()
    }

    pub fn cluster_range(&self, i: usize) -> std::ops::Range<usize> {
        self.cluster_bounds[i]..self.cluster_bounds[i + 1]
    }

    /// Column `k` of the design matrix.
    pub fn column(&self, k: usize) -> &[f64] {
        &self.x[k * self.n_obs..(k + 1) * self.n_obs]
    }

    /// Linear predictor `X beta`.
    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![0.0; self.n_obs];
        for (k, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (e, x) in eta.iter_mut().zip(self.column(k)) {
                    *e += b * x;
                }
            }
        }
        eta
    }

    /// Observations with `rank == r`, i.e. whose time lies in
    /// `[event_times[r-1], event_times[r])`.
    pub fn rank_bucket(&self, r: usize) -> &[usize] {
        &self.by_rank[self.rank_offsets[r]..self.rank_offsets[r + 1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(time: f64, event: bool, x: &[f64]) -> Observation {
        Observation { time, event, covariates: x.to_vec() }
    }

    fn two_cluster_dataset() -> SurvivalDataset {
        SurvivalDataset {
            clusters: vec![
                Cluster {
                    id: "a".into(),
                    observations: vec![obs(1.0, true, &[0.1, 0.2, 0.3, 0.4]), obs(3.0, false, &[1.0, 0.0, -1.0, 0.5])],
                },
                Cluster { id: "b".into(), observations: vec![obs(2.0, true, &[0.0, 1.0, 0.0, 1.0])] },
            ],
            p: 4,
            groups: GroupStructure::new(vec![vec![0, 1], vec![2, 3]], 4).unwrap(),
        }
    }

    #[test]
    fn valid_dataset_passes_unchanged() {
        let d = two_cluster_dataset();
        let v = validate_dataset(d.clone()).unwrap();
        assert_eq!(v, d);
        // idempotent
        assert_eq!(validate_dataset(v.clone()).unwrap(), v);
    }

    #[test]
    fn tied_events_rejected() {
        let mut d = two_cluster_dataset();
        d.clusters[0].observations[0].time = 1.7;
        d.clusters[1].observations[0].time = 1.7;
        match validate_dataset(d) {
            Err(Error::Validation(v)) => assert_eq!(v, vec![Violation::TiedEventTimes { time: 1.7 }]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn censored_time_may_equal_event_time() {
        let mut d = two_cluster_dataset();
        d.clusters[0].observations[1].time = 2.0;
        assert!(validate_dataset(d).is_ok());
    }

    #[test]
    fn overlapping_groups_rejected() {
        let err = GroupStructure::new(vec![vec![0, 1], vec![1, 2]], 3).unwrap_err();
        assert!(matches!(err, Error::Validation(ref v) if matches!(v[0], Violation::GroupPartitionInvalid(_))));
    }

    #[test]
    fn every_violation_is_listed() {
        let mut d = two_cluster_dataset();
        d.clusters[0].observations[0].time = -1.0;
        d.clusters[1].observations[0].covariates.pop();
        d.clusters.push(Cluster { id: "c".into(), observations: vec![] });
        d.groups = GroupStructure::new_unchecked(vec![vec![0, 1], vec![1, 2]]);
        let Err(Error::Validation(v)) = validate_dataset(d) else { panic!() };
        assert!(v.iter().any(|x| matches!(x, Violation::NonPositiveTime { .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::DimensionMismatch { .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::EmptyCluster { .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::GroupPartitionInvalid(_))));
    }

    #[test]
    fn pooled_times_sorted_and_filtered() {
        let d = SurvivalDataset {
            clusters: vec![Cluster {
                id: "a".into(),
                observations: vec![obs(1.0, true, &[]), obs(3.0, false, &[]), obs(2.0, true, &[])],
            }],
            p: 0,
            groups: GroupStructure::new_unchecked(vec![]),
        };
        assert_eq!(pooled_event_times(&d).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn pooled_times_single_event() {
        let d = SurvivalDataset {
            clusters: vec![Cluster { id: "a".into(), observations: vec![obs(5.0, true, &[1.0])] }],
            p: 1,
            groups: GroupStructure::new(vec![vec![0]], 1).unwrap(),
        };
        assert_eq!(pooled_event_times(&d).unwrap(), vec![5.0]);
    }

    #[test]
    fn no_events_is_an_error() {
        let mut d = two_cluster_dataset();
        for c in d.clusters.iter_mut() {
            for o in c.observations.iter_mut() {
                o.event = false;
            }
        }
        assert!(matches!(pooled_event_times(&d), Err(Error::NoEvents)));
    }

    #[test]
    fn tie_breaking_is_deterministic_and_resolves_ties() {
        let mut d = two_cluster_dataset();
        d.clusters[0].observations[0].time = 1.7;
        d.clusters[1].observations[0].time = 1.7;
        let a = break_ties(d.clone());
        let b = break_ties(d);
        assert_eq!(a, b);
        assert_eq!(a.clusters[0].observations[0].time, 1.7);
        assert!(a.clusters[1].observations[0].time > 1.7);
        assert!(validate_dataset(a).is_ok());
    }

    #[test]
    fn design_ranks_and_buckets() {
        let d = two_cluster_dataset();
        let des = Design::new(&d);
        assert_eq!(des.event_times, vec![1.0, 2.0]);
        assert_eq!(des.rank, vec![1, 2, 2]);
        assert_eq!(des.event_index, vec![Some(0), None, Some(1)]);
        assert_eq!(des.rank_bucket(0), &[] as &[usize]);
        assert_eq!(des.rank_bucket(1), &[0]);
        assert_eq!(des.rank_bucket(2), &[1, 2]);
        assert_eq!(des.column(1), &[0.2, 0.0, 1.0]);
    }

    #[test]
    fn standardization_round_trip() {
        let d = two_cluster_dataset();
        let s = Standardization::from_data(&d);
        let z = s.apply(&d);
        let zs = Standardization::from_data(&z);
        for (m, sc) in zs.means.iter().zip(&zs.scales) {
            assert!(m.abs() < 1e-12);
            assert!((sc - 1.0).abs() < 1e-12);
        }
        let beta = vec![0.3, -0.2, 1.0, 0.0];
        let back = s.beta_to_original(&s.beta_to_standardized(&beta));
        for (a, b) in beta.iter().zip(&back) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
