mod common;

use common::{absorbed_second_moment, correlation};
use harris_lab::flows::{FlowModel, GluedFlowParams, Recording, TimeGrid};
use harris_lab::kernels::CovarianceKernel;
use harris_lab::montecarlo::{run_lemma1, ExperimentConfig, ExperimentId};
use harris_lab::seeding::derive_seed;
use harris_lab::stats::{chi_square_variance_band, ks_two_sample, sample_variance};
use proptest::prelude::*;

fn models() -> Vec<FlowModel<f64>> {
    vec![
        FlowModel::Harris(CovarianceKernel::triangle(0.02).unwrap()),
        FlowModel::Arratia { bridge_correction: true },
        FlowModel::Glued(GluedFlowParams::new(0.01).unwrap()),
    ]
}

#[test]
fn single_particle_is_brownian() {
    let grid = TimeGrid::new(0.01, 1.0).unwrap();
    let replicas = 4000;
    let (lo, hi) = chi_square_variance_band(replicas, 1.0, 0.01);
    for (m, model) in models().into_iter().enumerate() {
        let ends: Vec<f64> = (0..replicas)
            .map(|r| model.simulate(&[0.3], &grid, derive_seed(100 + m as u64, r as u64), Recording::Endpoints).unwrap())
            .map(|p| p.final_positions()[0] - 0.3)
            .collect();
        let v = sample_variance(&ends);
        assert!(lo <= v && v <= hi, "{:?}: variance {v} outside [{lo}, {hi}]", model.kind());
    }
}

#[test]
fn distant_harris_particles_move_independently() {
    let grid = TimeGrid::new(1e-3, 0.01).unwrap();
    let model = FlowModel::Harris(CovarianceKernel::triangle(0.02).unwrap());
    let replicas = 4000;
    let (mut dx, mut dy) = (Vec::new(), Vec::new());
    for r in 0..replicas {
        let p = model.simulate(&[0.0, 1.0], &grid, derive_seed(7, r), Recording::Full).unwrap();
        assert!(p.rows().all(|row| row[1] - row[0] > 0.01));
        dx.push(p.final_positions()[0]);
        dy.push(p.final_positions()[1] - 1.0);
    }
    let rho = correlation(&dx, &dy);
    assert!(rho.abs() < 3.0 / (replicas as f64).sqrt(), "rho = {rho}");
}

#[test]
fn coincident_particles_share_their_path() {
    let grid = TimeGrid::new(1e-2, 1.0).unwrap();
    for model in [FlowModel::Harris(CovarianceKernel::triangle(0.02).unwrap()), FlowModel::Arratia { bridge_correction: true }] {
        let p = model.simulate(&[0.5, 0.5], &grid, 3, Recording::Full).unwrap();
        assert!(p.rows().all(|r| r[0] == r[1]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn paths_stay_ordered(seed in any::<u64>(), raw in prop::collection::vec(0.0f64..0.1, 1..8)) {
        let mut pts = raw;
        pts.sort_by(f64::total_cmp);
        let grid = TimeGrid::new(1e-3, 0.05).unwrap();
        for model in [FlowModel::Harris(CovarianceKernel::triangle(0.02).unwrap()), FlowModel::Arratia { bridge_correction: true }] {
            let p = model.simulate(&pts, &grid, seed, Recording::Full).unwrap();
            prop_assert_eq!(p.row(0), &pts[..]);
            for row in p.rows() {
                prop_assert!(row.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }
}

/// First grid index at which `hit` holds for the gap, or `None`.
fn first_hit(model: &FlowModel<f64>, grid: &TimeGrid<f64>, seed: u64, hit: impl Fn(f64) -> bool) -> f64 {
    let p = model.simulate(&[0.0, 1.0], grid, seed, Recording::Full).unwrap();
    (0..p.n_rows()).find(|&r| hit(p.row(r)[1] - p.row(r)[0])).map_or(f64::INFINITY, |r| p.row_time(r))
}

#[test]
fn gluing_time_approaches_coalescence_time() {
    let grid = TimeGrid::new(1e-3, 1.0).unwrap();
    let eps = 1e-3;
    let glued = FlowModel::Glued(GluedFlowParams::new(eps).unwrap());
    let arratia = FlowModel::Arratia { bridge_correction: true };
    let replicas = 10_000;
    let censor = |t: f64| t.min(2.0);
    let g: Vec<f64> =
        (0..replicas).map(|r| censor(first_hit(&glued, &grid, derive_seed(31, r), |gap| gap <= eps * (1.0 + 1e-9)))).collect();
    let a: Vec<f64> = (0..replicas).map(|r| censor(first_hit(&arratia, &grid, derive_seed(32, r), |gap| gap == 0.0))).collect();
    let ks = ks_two_sample(&g, &a, 0.01);
    assert!(ks.statistic < 0.05, "KS distance {}", ks.statistic);
}

#[test]
fn arratia_second_moment_matches_absorbed_diffusion() {
    let cfg = ExperimentConfig::resolve(
        ExperimentId::Lemma1,
        None,
        &["gap_grid=[1.0]".into(), "flows=[\"arratia\"]".into(), "replicas=2000".into()],
    )
    .unwrap();
    let report = run_lemma1(&cfg).unwrap();
    let p = &report.fits[0].points[0];
    let oracle = absorbed_second_moment(1.0, 1.0);
    assert!((p.estimate.mean - oracle).abs() <= 3.0 * p.estimate.std_error, "{} vs {oracle}", p.estimate.mean);
}

#[test]
fn independent_harris_second_moment() {
    let cfg = ExperimentConfig::resolve(
        ExperimentId::Lemma1,
        None,
        &["gap_grid=[1.0]".into(), "flows=[\"harris\"]".into(), "horizon=0.01".into(), "replicas=4000".into()],
    )
    .unwrap();
    let p = run_lemma1(&cfg).unwrap().fits[0].points[0].clone();
    assert!((p.estimate.mean - 1.02).abs() <= 3.0 * p.estimate.std_error, "{}", p.estimate.mean);
}
