//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use harris_lab::transport::DiscreteMeasure;
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::Rng;

/// W1 between two finite measures as a transportation LP.
pub fn lp_w1(a: &DiscreteMeasure<f64>, b: &DiscreteMeasure<f64>) -> f64 {
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Vec<_>> = a
        .atoms()
        .iter()
        .map(|x| b.atoms().iter().map(|y| p.add_var((x - y).abs(), (0.0, f64::INFINITY))).collect())
        .collect();
    for (i, w) in a.weights().iter().enumerate() {
        let row: Vec<_> = vars[i].iter().map(|v| (*v, 1.0)).collect();
        p.add_constraint(&row, ComparisonOp::Eq, *w);
    }
    for (j, w) in b.weights().iter().enumerate() {
        let col: Vec<_> = vars.iter().map(|r| (r[j], 1.0)).collect();
        p.add_constraint(&col, ComparisonOp::Eq, *w);
    }
    p.solve().expect("transport LP is feasible").objective()
}

pub fn random_measure(rng: &mut impl Rng, max_atoms: usize) -> DiscreteMeasure<f64> {
    let k = rng.random_range(1..=max_atoms);
    let atoms: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    DiscreteMeasure::new(atoms, raw.iter().map(|w| w / total).collect()).unwrap()
}

/// Lexicographically first permutation among those of minimal cost, and that
/// cost, by enumeration.
pub fn brute_assignment(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    fn rec(cost: &[f64], n: usize, prefix: &mut Vec<usize>, used: &mut [bool], acc: f64, best: &mut (Vec<usize>, f64)) {
        if prefix.len() == n {
            if acc < best.1 {
                *best = (prefix.clone(), acc);
            }
            return;
        }
        let i = prefix.len();
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                prefix.push(j);
                rec(cost, n, prefix, used, acc + cost[i * n + j], best);
                prefix.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (Vec::new(), f64::INFINITY);
    rec(cost, n, &mut Vec::new(), &mut vec![false; n], 0.0, &mut best);
    best
}

/// Standard normal CDF via the complementary error function.
pub fn phi(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Probability that two independent standard Brownian motions started `gap`
/// apart have met by time `t`.
pub fn coalescence_probability(gap: f64, t: f64) -> f64 {
    2.0 * (1.0 - phi(gap / (2.0 * t).sqrt()))
}

/// `E D(t)^2` for `D` a Brownian motion with variance rate 2 started at
/// `gap > 0` and absorbed at 0, by Simpson integration of the image-method
/// density.
pub fn absorbed_second_moment(gap: f64, t: f64) -> f64 {
    let s = (2.0 * t).sqrt();
    let dens = |y: f64| {
        let g = |z: f64| (-0.5 * (z / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        g(y - gap) - g(y + gap)
    };
    let upper = gap + 12.0 * s;
    let cells = 200_000;
    let h = upper / cells as f64;
    let f = |y: f64| y * y * dens(y);
    let mut sum = f(0.0) + f(upper);
    for i in 1..cells {
        sum += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

/// `E (H ∧ τ)` for `τ` the hitting time of `c < 0` by a standard Brownian
/// motion: `∫_0^H P(τ > t) dt` with `P(τ > t) = 2 Φ(|c| / sqrt t) - 1`,
/// by Simpson's rule on a square-root substitution.
pub fn truncated_hitting_mean(c: f64, horizon: f64) -> f64 {
    if c == 0.0 {
        return 0.0;
    }
    // t = s^2, dt = 2 s ds.
    let f = |s: f64| if s == 0.0 { 0.0 } else { 2.0 * s * (2.0 * phi(c.abs() / s) - 1.0) };
    let upper = horizon.sqrt();
    let cells = 100_000;
    let h = upper / cells as f64;
    let mut sum = f(0.0) + f(upper);
    for i in 1..cells {
        sum += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

/// Sample correlation.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}
