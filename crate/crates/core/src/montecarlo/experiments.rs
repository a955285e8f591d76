use std::collections::BTreeMap;

use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentId};
use super::constants;
use super::report::{FitPoint, RateFit, Report};
use super::ExperimentError;
use crate::coupling::{build_coupling, coupling_cost, hitting_time_bound_check, stage_sums};
use crate::flows::{FlowKind, FlowModel, GluedFlowParams, Recording, TimeGrid};
use crate::kernels::KernelSpec;
use crate::seeding::{derive_seed, stream_seed};
use crate::stats::{ks_two_sample, log_log_fit, upper_bound_verdict, Estimate, Verdict};
use crate::transport::{
    discretize, pushforward_indexed, uniform_transport, w1_cost_matrix, w1_real, DiscreteMeasure, MeasureEnsemble,
    Provenance,
};

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report, ExperimentError> {
    match cfg.experiment {
        ExperimentId::Lemma1 => run_lemma1(cfg),
        ExperimentId::Theorem2 => run_theorem2(cfg),
        ExperimentId::Lemma3 => run_lemma3(cfg),
        ExperimentId::Theorem3Bridge => run_theorem3_bridge(cfg),
        ExperimentId::Theorem1Chain => run_theorem1_chain(cfg),
        ExperimentId::WaldHitting => run_wald_hitting(cfg),
    }
}

/// A flow model together with the label that names its seed streams.
struct LabeledModel {
    label: String,
    model: FlowModel<f64>,
}

fn model_for(kind: FlowKind, kernel: &KernelSpec, bridge_correction: bool) -> Result<LabeledModel, ExperimentError> {
    Ok(match kind {
        FlowKind::Harris => {
            LabeledModel { label: format!("harris[{}]", kernel.label()), model: FlowModel::Harris(kernel.build()?) }
        }
        FlowKind::Arratia => LabeledModel {
            label: if bridge_correction { "arratia".into() } else { "arratia[no-bridge]".into() },
            model: FlowModel::Arratia { bridge_correction },
        },
        FlowKind::Glued => {
            let eps = kernel.d_gamma / 2.0;
            LabeledModel {
                label: if bridge_correction { format!("glued[{eps}]") } else { format!("glued[{eps},no-bridge]") },
                model: FlowModel::Glued(GluedFlowParams::new(eps)?.with_bridge_correction(bridge_correction)),
            }
        }
        FlowKind::Identity => LabeledModel { label: "identity".into(), model: FlowModel::Identity },
    })
}

fn grid(cfg: &ExperimentConfig) -> Result<TimeGrid<f64>, ExperimentError> {
    Ok(TimeGrid::new(cfg.dt, cfg.horizon)?)
}

fn point(value: f64, estimate: Estimate, bound: Option<f64>) -> FitPoint {
    let verdict = bound.map_or(Verdict::Info, |b| upper_bound_verdict(&estimate, b));
    FitPoint { value, estimate, bound, verdict }
}

fn info(value: f64, estimate: Estimate) -> FitPoint {
    FitPoint { value, estimate, bound: None, verdict: Verdict::Info }
}

/// `E(x(u, 1) - x(v, 1))^2` over a grid of initial distances, against
/// `C_1 |u - v| + |u - v|^2`.
pub fn run_lemma1(cfg: &ExperimentConfig) -> Result<Report, ExperimentError> {
    let grid = grid(cfg)?;
    let mut fits = Vec::new();
    for &kind in &cfg.flows {
        let lm = model_for(kind, &cfg.kernel, cfg.bridge_correction)?;
        let mut points = Vec::new();
        for &gap in &cfg.gap_grid {
            if !(gap >= 0.0 && gap.is_finite()) {
                return Err(ExperimentError::Config(format!("gaps must be finite and >= 0, got {gap}")));
            }
            let seed = stream_seed(cfg.master_seed, &format!("lemma1/{}/gap={gap}", lm.label));
            let samples = (0..cfg.replicas)
                .into_par_iter()
                .map(|r| {
                    let p = lm.model.simulate(&[0.0, gap], &grid, derive_seed(seed, r as u64), Recording::Endpoints)?;
                    let end = p.final_positions();
                    Ok((end[1] - end[0]).powi(2))
                })
                .collect::<Result<Vec<f64>, ExperimentError>>()?;
            points.push(point(gap, Estimate::from_samples(&samples), Some(constants::lemma1_bound(gap, cfg.horizon))));
        }
        fits.push(RateFit::new(lm.label, "gap", points));
    }
    Ok(Report::new(cfg, fits, Vec::new()))
}

/// Mean over replicas of `W1(lambda, lambda^n)`, with `lambda` the image of
/// the fine proxy of `mu` and `lambda^n` the image of its level-`n`
/// discretization, both carried by one flow started from the union of atoms.
pub fn lambda_discretization(
    cfg: &ExperimentConfig,
    kind: FlowKind,
    kernel: &KernelSpec,
    n: usize,
) -> Result<Estimate, ExperimentError> {
    if cfg.fine_points < 4 * n {
        return Err(ExperimentError::Config(format!(
            "fine_points = {} is below 4n = {} for n = {n}",
            cfg.fine_points,
            4 * n
        )));
    }
    let grid = grid(cfg)?;
    let lm = model_for(kind, kernel, cfg.bridge_correction)?;
    let fine = cfg.mu.fine_proxy(cfg.fine_points)?;
    let coarse = discretize(&cfg.mu, n)?;
    let mut union: Vec<f64> = fine.atoms().iter().chain(coarse.atoms()).copied().collect();
    union.sort_by(f64::total_cmp);
    union.dedup();
    let index_of = |m: &DiscreteMeasure<f64>| -> Vec<usize> {
        m.atoms().iter().map(|a| union.binary_search_by(|p| p.total_cmp(a)).expect("atom in union")).collect()
    };
    let (fine_idx, coarse_idx) = (index_of(&fine), index_of(&coarse));
    let seed = stream_seed(cfg.master_seed, &format!("lambda-discretization/{}/n={n}", lm.label));
    let samples = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let path = lm.model.simulate(&union, &grid, derive_seed(seed, r as u64), Recording::Endpoints)?;
            let end = path.final_positions();
            let img = |idx: &[usize]| idx.iter().map(|&i| end[i]).collect::<Vec<f64>>();
            let lambda = pushforward_indexed(&fine, &img(&fine_idx))?;
            let lambda_n = pushforward_indexed(&coarse, &img(&coarse_idx))?;
            Ok(w1_real(&lambda, &lambda_n))
        })
        .collect::<Result<Vec<f64>, ExperimentError>>()?;
    Ok(Estimate::from_samples(&samples))
}

/// `E W1(lambda, lambda^n)` over a grid of `n`, against `K / sqrt(n)`.
pub fn run_theorem2(cfg: &ExperimentConfig) -> Result<Report, ExperimentError> {
    let mut fits = Vec::new();
    for &kind in &cfg.flows {
        let label = model_for(kind, &cfg.kernel, cfg.bridge_correction)?.label;
        let mut points = Vec::new();
        for &n in &cfg.n_grid {
            if n == 0 {
                return Err(ExperimentError::Config("n_grid entries must be positive".into()));
            }
            let e = lambda_discretization(cfg, kind, &cfg.kernel, n)?;
            points.push(point(n as f64, e, Some(constants::theorem2_bound(n))));
        }
        fits.push(RateFit::new(label, "n", points));
    }
    Ok(Report::new(cfg, fits, Vec::new()))
}

fn initial_atoms(cfg: &ExperimentConfig, n: usize) -> Result<DiscreteMeasure<f64>, ExperimentError> {
    let mu_n = discretize(&cfg.mu, n)?;
    if mu_n.len() < 2 {
        return Err(ExperimentError::Config(format!(
            "the level-{n} discretization of mu has {} atom(s); the coupling needs at least two",
            mu_n.len()
        )));
    }
    Ok(mu_n)
}

/// Per-stage sup discrepancies of the gluing coupling, against the stage-1
/// and later-stage bounds. Harris base flows use support diameter `2 eps`.
pub fn run_lemma3(cfg: &ExperimentConfig) -> Result<Report, ExperimentError> {
    let grid = grid(cfg)?;
    let n = cfg.n;
    let mu_n = initial_atoms(cfg, n)?;
    let u = mu_n.atoms().to_vec();
    let stages = u.len() - 1;
    let mut fits = Vec::new();
    for &kind in &cfg.flows {
        let mut per_stage: Vec<Vec<FitPoint>> = vec![Vec::new(); stages];
        for &eps in &cfg.epsilon_grid {
            let kernel = KernelSpec { family: cfg.kernel.family, d_gamma: 2.0 * eps };
            let lm = model_for(kind, &kernel, cfg.bridge_correction)?;
            let seed = stream_seed(cfg.master_seed, &format!("lemma3/{}/n={n}/eps={eps}", lm.label));
            let sums = (0..cfg.replicas)
                .into_par_iter()
                .map(|r| {
                    let path = lm.model.simulate(&u, &grid, derive_seed(seed, r as u64), Recording::Full)?;
                    Ok(stage_sums(&build_coupling(path, eps)?))
                })
                .collect::<Result<Vec<Vec<f64>>, ExperimentError>>()?;
            for (s, pts) in per_stage.iter_mut().enumerate() {
                let column: Vec<f64> = sums.iter().map(|v| v[s]).collect();
                let bound = constants::lemma3_bound(u.len(), s + 1, eps);
                pts.push(point(eps, Estimate::from_samples(&column), Some(bound)));
            }
        }
        for (s, pts) in per_stage.into_iter().enumerate() {
            fits.push(RateFit::new(format!("{}/stage{}", kind.as_str(), s + 1), "epsilon", pts));
        }
    }
    Ok(Report::new(cfg, fits, Vec::new()))
}

/// Endpoints of one replica: the base flow and, when coupled, the final
/// stage of the gluing construction.
struct ReplicaEnds {
    base: Vec<f64>,
    coupled: Vec<f64>,
    cost: f64,
}

fn simulate_ends(
    model: &FlowModel<f64>,
    u: &[f64],
    weights: &[f64],
    grid: &TimeGrid<f64>,
    count: usize,
    seed: u64,
    epsilon: Option<f64>,
) -> Result<Vec<ReplicaEnds>, ExperimentError> {
    (0..count)
        .into_par_iter()
        .map(|r| {
            let s = derive_seed(seed, r as u64);
            match epsilon {
                Some(eps) => {
                    let path = model.simulate(u, grid, s, Recording::Full)?;
                    let trace = build_coupling(path, eps)?;
                    Ok(ReplicaEnds {
                        base: trace.base_endpoints().to_vec(),
                        coupled: trace.coupled_endpoints().to_vec(),
                        cost: coupling_cost(&trace, weights)?,
                    })
                }
                None => {
                    let path = model.simulate(u, grid, s, Recording::Endpoints)?;
                    let base = path.final_positions().to_vec();
                    Ok(ReplicaEnds { coupled: base.clone(), base, cost: 0.0 })
                }
            }
        })
        .collect()
}

fn ensemble(
    mu_n: &DiscreteMeasure<f64>,
    ends: &[ReplicaEnds],
    provenance: Provenance,
) -> Result<MeasureEnsemble<f64>, ExperimentError> {
    let samples = ends.iter().map(|e| pushforward_indexed(mu_n, &e.base)).collect::<Result<Vec<_>, _>>()?;
    Ok(MeasureEnsemble::new(samples, provenance)?)
}

/// Empirical outer `W1` per block of `m` replicas on each side.
fn block_outer_w1(
    mu_n: &DiscreteMeasure<f64>,
    left: &[ReplicaEnds],
    right: &[ReplicaEnds],
    m: usize,
    blocks: usize,
) -> Result<Estimate, ExperimentError> {
    let mut values = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let a = ensemble(mu_n, &left[b * m..(b + 1) * m], Provenance::Harris)?;
        let c = ensemble(mu_n, &right[b * m..(b + 1) * m], Provenance::Arratia)?;
        let cost = w1_cost_matrix(&a, &c);
        values.push(uniform_transport(&cost, m, m).map_err(crate::transport::TransportError::from)?);
    }
    Ok(Estimate::from_samples(&values))
}

fn check_blocks(cfg: &ExperimentConfig, replicas: usize) -> Result<usize, ExperimentError> {
    let blocks = cfg.ensemble_blocks.min(replicas / cfg.ensemble_size);
    if blocks == 0 {
        return Err(ExperimentError::Config(format!(
            "replicas = {replicas} cannot fill one ensemble of size {}",
            cfg.ensemble_size
        )));
    }
    Ok(blocks)
}

/// Distributional bridge between the coupled Harris and Arratia endpoints,
/// and the empirical outer distance between the two discretized laws.
pub fn run_theorem3_bridge(cfg: &ExperimentConfig) -> Result<Report, ExperimentError> {
    let d = cfg.kernel.d_gamma;
    let n = cfg.n;
    if n == 0 || !(d / 2.0 < 1.0 / n as f64) {
        return Err(ExperimentError::Hypothesis(format!("need d(Gamma)/2 < 1/n, got d(Gamma) = {d}, n = {n}")));
    }
    let grid = grid(cfg)?;
    let mu_n = initial_atoms(cfg, n)?;
    let (u, p) = (mu_n.atoms().to_vec(), mu_n.weights().to_vec());
    let eps = (d > 0.0).then_some(d / 2.0);
    let left = model_for(if d > 0.0 { FlowKind::Harris } else { FlowKind::Arratia }, &cfg.kernel, cfg.bridge_correction)?;
    let right = model_for(FlowKind::Arratia, &cfg.kernel, cfg.bridge_correction)?;
    let left_seed = stream_seed(cfg.master_seed, &format!("theorem3/left/{}/n={n}", left.label));
    let right_seed = stream_seed(cfg.master_seed, &format!("theorem3/right/{}/n={n}", right.label));
    let blocks = check_blocks(cfg, cfg.replicas)?;
    let l = simulate_ends(&left.model, &u, &p, &grid, cfg.replicas, left_seed, eps)?;
    let r = simulate_ends(&right.model, &u, &p, &grid, cfg.replicas, right_seed, eps)?;

    let mut fits = Vec::new();
    if eps.is_some() {
        for k in 0..u.len() {
            let a: Vec<f64> = l.iter().map(|e| e.coupled[k]).collect();
            let b: Vec<f64> = r.iter().map(|e| e.coupled[k]).collect();
            let ks = ks_two_sample(&a, &b, cfg.ks_alpha);
            let verdict = if ks.rejects() { Verdict::Fail } else { Verdict::Pass };
            let est = Estimate { mean: ks.statistic, std_error: 0.0, samples: a.len() };
            fits.push(RateFit::new(
                format!("ks-coordinate-{}", k + 1),
                "d_gamma",
                vec![FitPoint { value: d, estimate: est, bound: Some(ks.critical_value), verdict }],
            ));
        }
        let costs: Vec<f64> = l.iter().map(|e| e.cost).collect();
        fits.push(RateFit::new("coupling-cost", "d_gamma", vec![info(d, Estimate::from_samples(&costs))]));
    }

    let m = cfg.ensemble_size;
    let outer = block_outer_w1(&mu_n, &l, &r, m, blocks)?;
    let floor = if blocks >= 2 {
        let half = blocks / 2;
        let first: Vec<ReplicaEnds> = (0..half)
            .flat_map(|b| r[2 * b * m..(2 * b + 1) * m].iter().map(clone_ends))
            .collect();
        let second: Vec<ReplicaEnds> = (0..half)
            .flat_map(|b| r[(2 * b + 1) * m..(2 * b + 2) * m].iter().map(clone_ends))
            .collect();
        Some(block_outer_w1(&mu_n, &first, &second, m, half)?)
    } else {
        None
    };
    let bound = if d > 0.0 { Some(constants::theorem3_bound(u.len(), d)) } else { floor.map(|f| 2.0 * f.mean) };
    fits.push(RateFit::new("outer-w1", "d_gamma", vec![point(d, outer, bound)]));
    if let Some(f) = floor {
        fits.push(RateFit::new("split-sample-floor", "d_gamma", vec![info(d, f)]));
    }
    Ok(Report::new(cfg, fits, Vec::new()))
}

fn clone_ends(e: &ReplicaEnds) -> ReplicaEnds {
    ReplicaEnds { base: e.base.clone(), coupled: e.coupled.clone(), cost: e.cost }
}

/// The three-term triangle-inequality chain at the optimal level `n_0`.
pub fn run_theorem1_chain(cfg: &ExperimentConfig) -> Result<Report, ExperimentError> {
    for &d in &cfg.d_gamma_grid {
        if !(d > 0.0 && d < 0.01) {
            return Err(ExperimentError::Hypothesis(format!("need 0 < d(Gamma) < 1/100, got {d}")));
        }
        let n0 = constants::optimal_n(d);
        if !(d / 2.0 < 1.0 / n0 as f64) {
            return Err(ExperimentError::Hypothesis(format!("need d(Gamma)/2 < 1/n0, got d(Gamma) = {d}, n0 = {n0}")));
        }
    }
    let grid = grid(cfg)?;
    let m = cfg.ensemble_size;
    let outer_replicas = m * cfg.ensemble_blocks;
    let blocks = check_blocks(cfg, outer_replicas)?;
    let arratia = model_for(FlowKind::Arratia, &cfg.kernel, cfg.bridge_correction)?;
    let mut arratia_terms: BTreeMap<usize, Estimate> = BTreeMap::new();
    let (mut t1s, mut t2s, mut t3s, mut totals) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &d in &cfg.d_gamma_grid {
        let n0 = constants::optimal_n(d);
        let kernel = KernelSpec { family: cfg.kernel.family, d_gamma: d };
        let t1 = lambda_discretization(cfg, FlowKind::Harris, &kernel, n0)?;
        let t3 = match arratia_terms.get(&n0) {
            Some(e) => *e,
            None => {
                let e = lambda_discretization(cfg, FlowKind::Arratia, &cfg.kernel, n0)?;
                arratia_terms.insert(n0, e);
                e
            }
        };
        let mu_n = initial_atoms(cfg, n0)?;
        let harris = model_for(FlowKind::Harris, &kernel, cfg.bridge_correction)?;
        let ls = stream_seed(cfg.master_seed, &format!("chain-outer/{}/n={n0}", harris.label));
        let rs = stream_seed(cfg.master_seed, &format!("chain-outer/{}/n={n0}", arratia.label));
        let l = simulate_ends(&harris.model, mu_n.atoms(), mu_n.weights(), &grid, outer_replicas, ls, None)?;
        let r = simulate_ends(&arratia.model, mu_n.atoms(), mu_n.weights(), &grid, outer_replicas, rs, None)?;
        let t2 = block_outer_w1(&mu_n, &l, &r, m, blocks)?;
        let total = t1.add_independent(&t2).add_independent(&t3);
        t1s.push(info(d, t1));
        t2s.push(info(d, t2));
        t3s.push(info(d, t3));
        totals.push(point(d, total, Some(constants::theorem1_bound(d))));
    }
    let total_fit = RateFit::new("chain-total", "d_gamma", totals);
    let mut notes = Vec::new();
    if let Some(f) = total_fit.fit {
        notes.push(format!(
            "fitted exponent of the chain total in d(Gamma): {:.4} (reference exponent of the upper bound: {:.4})",
            f.slope,
            1.0 / 22.0
        ));
    }
    let xs: Vec<f64> = t2s.iter().map(|p| p.value).collect();
    let ys: Vec<f64> = t2s.iter().map(|p| p.estimate.mean).collect();
    if let Some(f) = log_log_fit(&xs, &ys) {
        notes.push(format!("fitted exponent of the outer term in d(Gamma): {:.4}", f.slope));
    }
    let fits = vec![
        RateFit::new("harris-discretization", "d_gamma", t1s),
        RateFit::new("outer-w1", "d_gamma", t2s),
        RateFit::new("arratia-discretization", "d_gamma", t3s),
        total_fit,
    ];
    Ok(Report::new(cfg, fits, notes))
}

/// `E(horizon ∧ tau(c))` against the Wald-identity bound.
pub fn run_wald_hitting(cfg: &ExperimentConfig) -> Result<Report, ExperimentError> {
    let mut points = Vec::new();
    for &c in &cfg.c_grid {
        let seed = stream_seed(cfg.master_seed, &format!("wald/c={c}"));
        let check = hitting_time_bound_check(c, cfg.horizon, cfg.dt, cfg.replicas, seed)?;
        points.push(point(c, check.estimate, Some(check.bound)));
    }
    Ok(Report::new(cfg, vec![RateFit::new("hitting-time", "c", points)], Vec::new()))
}
