//! The epsilon-gluing transform of a simulated flow path.
//!
//! Stage 1 is the base path. Stage `i + 1` equals stage `i` before the gluing
//! time `sigma_i`; from `sigma_i` on, every particle `k` in a block of the
//! partition `Pi_i` with least index `j` sits at `z(u_j, t) + (k - j) * eps`.
//! Block leaders are never moved, so every stage value is
//! `x(u_j, t) + (k - j) * eps` for the leader `j` valid at that time, and glued
//! pairs are recognised from the leader map, never from floating-point gaps.

use rand::Rng;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::flows::{FlowError, FlowPath};
use crate::scalar::Scalar;
use crate::seeding::rng_from_seed;
use crate::stats::Estimate;

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error("the coupling needs at least two particles, got {0}")]
    TooFewParticles(usize),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("the coupling needs every grid time; simulate with full-path recording")]
    EndpointsOnly,
    #[error("weights must be non-negative, one per particle ({expected}), and sum to 1")]
    InvalidWeights { expected: usize },
    #[error("no traces to aggregate")]
    EmptyTraces,
    #[error("traces disagree on particle count, epsilon or grid")]
    MismatchedTraces,
    #[error("stage must lie in 1..={max}, got {stage}")]
    StageOutOfRange { stage: usize, max: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Stagewise record of the gluing construction on one path.
#[derive(Debug, Clone)]
pub struct CouplingTrace<T> {
    epsilon: T,
    base: FlowPath<T>,
    /// Stages `2..`, each `n_rows x n` row-major.
    stages: Vec<Vec<T>>,
    /// `sigma[i]` is the row of the `(i + 1)`-th gluing time; length `n - 1`.
    sigma: Vec<Option<usize>>,
    /// Leader of every particle in `Pi_i(sigma_i)`, one entry per finite sigma.
    partitions: Vec<Vec<usize>>,
    /// `(n - 1) x n`; row `i` is `sup_t |z_{i+1} - z_{i+2}|` per particle.
    stage_sup: Vec<Vec<T>>,
}

/// Runs the construction on `path` with gluing distance `epsilon`.
pub fn build_coupling<T: Scalar>(path: FlowPath<T>, epsilon: T) -> Result<CouplingTrace<T>, CouplingError> {
    let n = path.n_particles();
    if n < 2 {
        return Err(CouplingError::TooFewParticles(n));
    }
    if !(epsilon.is_finite() && epsilon > T::zero()) {
        return Err(FlowError::InvalidEpsilon(epsilon.as_f64()).into());
    }
    if !path.is_full() {
        return Err(CouplingError::EndpointsOnly);
    }
    crate::flows::check_gaps_above(path.row(0), epsilon)?;

    let rows = path.n_rows();
    let base = path.positions();
    let mut leaders: Vec<usize> = (0..n).collect();
    let mut stages: Vec<Vec<T>> = Vec::new();
    let mut sigma = vec![None; n - 1];
    let mut partitions = Vec::new();
    let mut stage_sup = vec![vec![T::zero(); n]; n - 1];
    let mut start = 0;

    for i in 0..n - 1 {
        let cur: &[T] = stages.last().map_or(base, |s| s.as_slice());
        let hit = (start..rows).find(|&r| {
            let row = &cur[r * n..(r + 1) * n];
            (1..n).any(|k| leaders[k] == k && row[k] - row[k - 1] <= epsilon)
        });
        let Some(r) = hit else { break };

        let row = &cur[r * n..(r + 1) * n];
        let mut next_leaders = leaders.clone();
        for k in 1..n {
            if leaders[k] != k || row[k] - row[k - 1] <= epsilon {
                next_leaders[k] = next_leaders[k - 1];
            }
        }

        let mut next = Vec::with_capacity(rows * n);
        next.extend_from_slice(&cur[..r * n]);
        for t in r..rows {
            let b = &base[t * n..(t + 1) * n];
            next.extend((0..n).map(|k| {
                let j = next_leaders[k];
                b[j] + T::of_usize(k - j) * epsilon
            }));
        }
        for t in r..rows {
            for k in 0..n {
                let d = (cur[t * n + k] - next[t * n + k]).abs();
                if d > stage_sup[i][k] {
                    stage_sup[i][k] = d;
                }
            }
        }

        sigma[i] = Some(r);
        let all_glued = next_leaders.iter().all(|&j| j == 0);
        leaders = next_leaders.clone();
        partitions.push(next_leaders);
        stages.push(next);
        start = r;
        if all_glued {
            break;
        }
    }

    Ok(CouplingTrace { epsilon, base: path, stages, sigma, partitions, stage_sup })
}

impl<T: Scalar> CouplingTrace<T> {
    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn base_path(&self) -> &FlowPath<T> {
        &self.base
    }

    pub fn n_particles(&self) -> usize {
        self.base.n_particles()
    }

    /// Number of distinct stage processes (`1 +` finite gluing times).
    pub fn n_stages(&self) -> usize {
        1 + self.stages.len()
    }

    /// Row-major values of stage `stage` (1-based). Stages past the last
    /// gluing event coincide with the last one.
    pub fn stage(&self, stage: usize) -> &[T] {
        assert!(stage >= 1, "stages are numbered from 1");
        match stage.min(self.n_stages()) {
            1 => self.base.positions(),
            s => &self.stages[s - 2],
        }
    }

    pub fn stage_row(&self, stage: usize, row: usize) -> &[T] {
        let n = self.n_particles();
        &self.stage(stage)[row * n..(row + 1) * n]
    }

    /// Gluing times as grid rows; `None` marks an infinite time.
    pub fn sigma_rows(&self) -> &[Option<usize>] {
        &self.sigma
    }

    pub fn sigma_times(&self) -> Vec<Option<T>> {
        self.sigma.iter().map(|s| s.map(|r| self.base.row_time(r))).collect()
    }

    /// Leader map of `Pi_i(sigma_i)` for each finite gluing time.
    pub fn partitions(&self) -> &[Vec<usize>] {
        &self.partitions
    }

    /// Block sizes of the final partition, left to right.
    pub fn partition_sizes(&self) -> Vec<usize> {
        let n = self.n_particles();
        match self.partitions.last() {
            None => vec![1; n],
            Some(leaders) => block_sizes(leaders),
        }
    }

    /// `stage_sup_discrepancy[i][k]` for `i = 0..n-1`.
    pub fn stage_sup_discrepancy(&self) -> &[Vec<T>] {
        &self.stage_sup
    }

    pub fn base_endpoints(&self) -> &[T] {
        self.base.final_positions()
    }

    /// Endpoints of the last stage, `z_n(u_k, 1)`.
    pub fn coupled_endpoints(&self) -> &[T] {
        let last = self.base.n_rows() - 1;
        self.stage_row(self.n_stages(), last)
    }
}

fn block_sizes(leaders: &[usize]) -> Vec<usize> {
    let mut sizes: Vec<usize> = Vec::new();
    for (k, &j) in leaders.iter().enumerate() {
        if j == k {
            sizes.push(1);
        } else if let Some(last) = sizes.last_mut() {
            *last += 1;
        }
    }
    sizes
}

/// `sum_k w_k |x(u_k, 1) - z_n(u_k, 1)|` for one trace.
pub fn coupling_cost<T: Scalar>(trace: &CouplingTrace<T>, weights: &[T]) -> Result<T, CouplingError> {
    let n = trace.n_particles();
    let total: T = weights.iter().copied().sum();
    if weights.len() != n
        || weights.iter().any(|w| !(w.is_finite() && *w >= T::zero()))
        || (total - T::one()).abs() > T::mass_tolerance() * T::of_usize(n.max(1))
    {
        return Err(CouplingError::InvalidWeights { expected: n });
    }
    Ok(trace
        .base_endpoints()
        .iter()
        .zip(trace.coupled_endpoints())
        .zip(weights)
        .map(|((x, z), w)| *w * (*x - *z).abs())
        .sum())
}

/// Mean over traces of `sum_k stage_sup_discrepancy[stage - 1][k]`: the
/// expected sup distance between stages `stage` and `stage + 1`.
pub fn lemma3_statistic<T: Scalar>(traces: &[CouplingTrace<T>], stage: usize) -> Result<Estimate, CouplingError> {
    let first = traces.first().ok_or(CouplingError::EmptyTraces)?;
    let n = first.n_particles();
    if stage == 0 || stage > n - 1 {
        return Err(CouplingError::StageOutOfRange { stage, max: n - 1 });
    }
    let consistent = traces.iter().all(|t| {
        t.n_particles() == n
            && t.epsilon() == first.epsilon()
            && t.base.dt() == first.base.dt()
            && t.base.steps() == first.base.steps()
    });
    if !consistent {
        return Err(CouplingError::MismatchedTraces);
    }
    let values: Vec<f64> = traces
        .iter()
        .map(|t| t.stage_sup[stage - 1].iter().map(|v| v.as_f64()).sum())
        .collect();
    Ok(Estimate::from_samples(&values))
}

/// `sum_k stage_sup_discrepancy[i][k]` for every stage `i`.
pub fn stage_sums<T: Scalar>(trace: &CouplingTrace<T>) -> Vec<f64> {
    trace.stage_sup.iter().map(|r| r.iter().map(|v| v.as_f64()).sum()).collect()
}

/// Result of [`hitting_time_bound_check`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HittingCheck {
    pub estimate: Estimate,
    pub bound: f64,
}

/// `4 |c| sqrt(horizon) / sqrt(2 pi)`, the Wald-identity bound on
/// `E(horizon ∧ tau(c))`; at horizon 4 this is `(4 sqrt 2 / sqrt pi) |c|`.
pub fn wald_bound(c: f64, horizon: f64) -> f64 {
    4.0 * c.abs() * horizon.sqrt() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Monte Carlo estimate of `E(horizon ∧ tau)` for the first time `tau` a
/// standard Brownian motion started at 0 reaches `c <= 0`. Crossings inside a
/// step are detected with the bridge probability `exp(-2 a b / dt)`; `tau` is
/// then recorded at the end of that step.
pub fn hitting_time_bound_check(
    c: f64,
    horizon: f64,
    dt: f64,
    replicas: usize,
    seed: u64,
) -> Result<HittingCheck, CouplingError> {
    if !(c <= 0.0 && c.is_finite()) {
        return Err(CouplingError::InvalidArgument(format!("level c must be finite and <= 0, got {c}")));
    }
    if replicas < 1000 {
        return Err(CouplingError::InvalidArgument(format!("need at least 1000 replicas, got {replicas}")));
    }
    let grid = crate::flows::TimeGrid::new(dt, horizon)?;
    let steps = grid.steps();
    let sqrt_dt = dt.sqrt();
    use rayon::prelude::*;
    let samples: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            if c == 0.0 {
                return 0.0;
            }
            let mut rng = rng_from_seed(crate::seeding::derive_seed(seed, r as u64));
            let mut w = 0.0;
            for s in 1..=steps {
                let next = w + sqrt_dt * f64::standard_normal(&mut rng);
                let a = w - c;
                let b = next - c;
                if b <= 0.0 || rng.random::<f64>() < (-2.0 * a * b / dt).exp() {
                    return s as f64 * dt;
                }
                w = next;
            }
            grid.horizon()
        })
        .collect();
    Ok(HittingCheck { estimate: Estimate::from_samples(&samples), bound: wald_bound(c, horizon) })
}

/// A gluing time in a JSON summary: a number, or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaTime {
    Finite(f64),
    Infinite,
}

impl Serialize for SigmaTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SigmaTime::Finite(t) => s.serialize_f64(*t),
            SigmaTime::Infinite => s.serialize_str("inf"),
        }
    }
}

/// Compact description of a trace for export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingSummary {
    pub epsilon: f64,
    pub sigma: Vec<SigmaTime>,
    pub partition_sizes: Vec<usize>,
    pub cost: f64,
}

impl<T: Scalar> CouplingTrace<T> {
    /// Summary with the cost under `weights`.
    pub fn summary(&self, weights: &[T]) -> Result<CouplingSummary, CouplingError> {
        Ok(CouplingSummary {
            epsilon: self.epsilon.as_f64(),
            sigma: self
                .sigma_times()
                .into_iter()
                .map(|s| s.map_or(SigmaTime::Infinite, |t| SigmaTime::Finite(t.as_f64())))
                .collect(),
            partition_sizes: self.partition_sizes(),
            cost: coupling_cost(self, weights)?.as_f64(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{simulate_arratia, simulate_harris, FlowKind, Recording, TimeGrid};
    use crate::kernels::CovarianceKernel;

    fn path(rows: Vec<Vec<f64>>) -> FlowPath<f64> {
        FlowPath::from_rows(FlowKind::Harris, 0.1, rows, 0).unwrap()
    }

    #[test]
    fn no_gluing_keeps_base() {
        let p = path(vec![vec![0.0, 1.0], vec![0.1, 0.9], vec![0.2, 0.95]]);
        let t = build_coupling(p, 0.1).unwrap();
        assert_eq!(t.sigma_rows(), &[None]);
        assert_eq!(t.n_stages(), 1);
        assert_eq!(t.coupled_endpoints(), t.base_endpoints());
        assert!(t.stage_sup_discrepancy()[0].iter().all(|v| *v == 0.0));
        assert_eq!(coupling_cost(&t, &[0.5, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn two_particles_glue_at_first_small_gap() {
        let p = path(vec![vec![0.0, 1.0], vec![0.3, 0.6], vec![0.4, 0.45], vec![0.5, 0.5], vec![0.2, 0.9]]);
        let t = build_coupling(p, 0.1).unwrap();
        assert_eq!(t.sigma_rows(), &[Some(2)]);
        for r in 0..2 {
            assert_eq!(t.stage_row(2, r), t.stage_row(1, r));
        }
        for r in 2..5 {
            let z = t.stage_row(2, r);
            assert_eq!(z[1], z[0] + 0.1);
            assert_eq!(z[0], t.stage_row(1, r)[0]);
        }
        // Particle 2 at the end: base 0.9, coupled 0.3.
        assert!((coupling_cost(&t, &[0.5, 0.5]).unwrap() - 0.3).abs() < 1e-12);
        assert!((t.stage_sup_discrepancy()[0][1] - 0.6).abs() < 1e-12);
        assert_eq!(t.partition_sizes(), vec![2]);
    }

    #[test]
    fn simultaneous_gluing_of_three() {
        let p = path(vec![vec![0.0, 1.0, 2.0], vec![0.5, 0.55, 0.6], vec![0.0, 0.0, 0.0]]);
        let t = build_coupling(p, 0.1).unwrap();
        assert_eq!(t.sigma_rows(), &[Some(1), None]);
        assert_eq!(t.partitions()[0], vec![0, 0, 0]);
        let z = t.stage_row(2, 2);
        assert_eq!(z, &[0.0, 0.1, 0.2]);
        assert_eq!(t.partition_sizes(), vec![3]);
    }

    #[test]
    fn snapping_can_trigger_a_second_event_at_the_same_time() {
        // Gluing 2 onto 1 moves particle 2 right, into range of particle 3.
        let p = path(vec![vec![0.0, 1.0, 2.0], vec![0.0, 0.05, 0.19], vec![0.0, 0.05, 0.19]]);
        let t = build_coupling(p, 0.1).unwrap();
        assert_eq!(t.sigma_rows(), &[Some(1), Some(1)]);
        assert_eq!(t.partitions()[0], vec![0, 0, 2]);
        assert_eq!(t.partitions()[1], vec![0, 0, 0]);
    }

    #[test]
    fn rejects_gaps_not_above_epsilon() {
        let p = path(vec![vec![0.0, 0.1], vec![0.0, 0.1]]);
        assert!(matches!(
            build_coupling(p, 0.1),
            Err(CouplingError::Flow(FlowError::GapNotAboveEpsilon { .. }))
        ));
    }

    #[test]
    fn summary_encodes_infinite_sigma() {
        let p = path(vec![vec![0.0, 1.0], vec![0.0, 1.0]]);
        let t = build_coupling(p, 0.1).unwrap();
        let json = serde_json::to_string(&t.summary(&[0.5, 0.5]).unwrap()).unwrap();
        assert_eq!(json, r#"{"epsilon":0.1,"sigma":["inf"],"partition_sizes":[1,1],"cost":0.0}"#);
    }

    #[test]
    fn simulated_traces_satisfy_structural_invariants() {
        let k = CovarianceKernel::triangle(0.02).unwrap();
        let grid = TimeGrid::new(1e-3, 1.0).unwrap();
        let u = [0.1, 0.2, 0.3, 0.4];
        for seed in 0..30 {
            let base = if seed % 2 == 0 {
                simulate_harris(&k, &u, &grid, seed, Recording::Full).unwrap()
            } else {
                simulate_arratia(&u, &grid, seed, true, Recording::Full).unwrap()
            };
            let eps = 0.01;
            let t = build_coupling(base, eps).unwrap();
            let n = 4;
            let sig = t.sigma_rows();
            for w in sig.windows(2) {
                match (w[0], w[1]) {
                    (None, Some(_)) => panic!("finite sigma after infinite"),
                    (Some(a), Some(b)) => assert!(a <= b),
                    _ => {}
                }
            }
            for (i, s) in sig.iter().enumerate() {
                let Some(s) = *s else { continue };
                for r in 0..s {
                    assert_eq!(t.stage_row(i + 2, r), t.stage_row(i + 1, r));
                }
                let leaders = &t.partitions()[i];
                for r in s..t.base_path().n_rows() {
                    let z = t.stage_row(i + 2, r);
                    for kk in 0..n {
                        let j = leaders[kk];
                        assert_eq!(z[kk], z[j] + (kk - j) as f64 * eps);
                    }
                }
            }
            for w in t.partitions().windows(2) {
                for kk in 0..n {
                    assert!(w[1][kk] <= w[0][kk]);
                    assert_eq!(w[1][kk], w[1][w[0][kk]]);
                }
            }
            for stage in 1..=t.n_stages() {
                for r in 0..t.base_path().n_rows() {
                    assert_eq!(t.stage_row(stage, r)[0], t.base_path().row(r)[0]);
                }
            }
            let cost = coupling_cost(&t, &[0.25; 4]).unwrap();
            let tele: f64 = t.stage_sup_discrepancy().iter().flatten().sum();
            assert!(cost <= tele + 1e-12);
        }
    }

    #[test]
    fn lemma3_statistic_of_untouched_traces_is_zero() {
        let traces: Vec<_> = (0..3)
            .map(|_| build_coupling(path(vec![vec![0.0, 1.0], vec![0.0, 1.0]]), 0.1).unwrap())
            .collect();
        let e = lemma3_statistic(&traces, 1).unwrap();
        assert_eq!(e.mean, 0.0);
        assert!(matches!(lemma3_statistic(&traces, 2), Err(CouplingError::StageOutOfRange { .. })));
        assert!(matches!(lemma3_statistic::<f64>(&[], 1), Err(CouplingError::EmptyTraces)));
    }

    #[test]
    fn hitting_time_edge_cases() {
        let zero = hitting_time_bound_check(0.0, 4.0, 1e-2, 1000, 1).unwrap();
        assert_eq!(zero.estimate.mean, 0.0);
        assert_eq!(zero.bound, 0.0);
        let far = hitting_time_bound_check(-100.0, 4.0, 1e-2, 1000, 1).unwrap();
        assert_eq!(far.estimate.mean, 4.0);
        assert!(far.estimate.mean <= far.bound);
        assert!((wald_bound(-0.05, 4.0) - 0.159577).abs() < 1e-6);
        assert!(hitting_time_bound_check(0.1, 4.0, 1e-2, 1000, 1).is_err());
        assert!(hitting_time_bound_check(-0.1, 4.0, 1e-2, 10, 1).is_err());
    }
}
