//! Brute-force cross-checks of the exact solvers and kernels, runnable from
//! the installed binary.

use rand::Rng;

use crate::kernels::{gamma_from_phi, CovarianceKernel, SmoothingKernel, DEFAULT_QUAD_POINTS};
use crate::montecarlo::constants::{c1, chain_constant, k_const};
use crate::seeding::rng_from_seed;
use crate::transport::{assignment_solve, uniform_transport, w1_real, DiscreteMeasure};

#[derive(Debug, Clone, PartialEq)]
pub struct SelfTestCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn run_selftest() -> Vec<SelfTestCheck> {
    vec![
        assignment_vs_permutations(),
        assignment_lexicographic_ties(),
        w1_vs_quantiles(),
        rectangular_vs_replication(),
        box_kernel_is_triangle(),
        constants(),
    ]
}

/// All permutations of `0..n` in lexicographic order.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                prefix.push(j);
                rec(prefix, used, out);
                prefix.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

fn perm_cost(cost: &[f64], n: usize, p: &[usize]) -> f64 {
    (0..n).map(|i| cost[i * n + p[i]]).sum()
}

fn assignment_vs_permutations() -> SelfTestCheck {
    let mut rng = rng_from_seed(1);
    let mut worst = 0.0f64;
    for trial in 0..120 {
        let n = 1 + trial % 6;
        let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let best = permutations(n).iter().map(|p| perm_cost(&cost, n, p)).fold(f64::INFINITY, f64::min);
        let got = assignment_solve(&cost, n, n).map(|a| a.total_cost).unwrap_or(f64::NAN);
        worst = worst.max((got - best).abs());
    }
    SelfTestCheck { name: "assignment-brute-force", passed: worst <= 1e-9, detail: format!("max error {worst:e}") }
}

fn assignment_lexicographic_ties() -> SelfTestCheck {
    let mut rng = rng_from_seed(2);
    let mut mismatches = 0;
    for trial in 0..120 {
        let n = 2 + trial % 5;
        let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0..3) as f64).collect();
        let perms = permutations(n);
        let best = perms.iter().map(|p| perm_cost(&cost, n, p)).fold(f64::INFINITY, f64::min);
        let first = perms.into_iter().find(|p| perm_cost(&cost, n, p) == best);
        if assignment_solve(&cost, n, n).ok().map(|a| a.permutation) != first {
            mismatches += 1;
        }
    }
    SelfTestCheck { name: "assignment-lexicographic", passed: mismatches == 0, detail: format!("{mismatches} mismatches") }
}

fn random_measure(rng: &mut impl Rng) -> DiscreteMeasure<f64> {
    let k = rng.random_range(1..=5);
    let atoms: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    DiscreteMeasure::new(atoms, raw.iter().map(|w| w / total).collect()).expect("valid random measure")
}

/// `∫_0^1 |F_a^{-1}(s) - F_b^{-1}(s)| ds` by walking the merged cumulative
/// weight breakpoints.
fn quantile_w1(a: &DiscreteMeasure<f64>, b: &DiscreteMeasure<f64>) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut ca, mut cb) = (a.weights()[0], b.weights()[0]);
    let mut s = 0.0;
    let mut total = 0.0;
    loop {
        let next = ca.min(cb);
        total += (next - s) * (a.atoms()[i] - b.atoms()[j]).abs();
        s = next;
        if ca <= next && i + 1 < a.len() {
            i += 1;
            ca += a.weights()[i];
        } else if cb <= next && j + 1 < b.len() {
            j += 1;
            cb += b.weights()[j];
        } else {
            return total;
        }
    }
}

fn w1_vs_quantiles() -> SelfTestCheck {
    let mut rng = rng_from_seed(3);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let a = random_measure(&mut rng);
        let b = random_measure(&mut rng);
        worst = worst.max((w1_real(&a, &b) - quantile_w1(&a, &b)).abs());
    }
    SelfTestCheck { name: "w1-quantile-route", passed: worst <= 1e-12, detail: format!("max error {worst:e}") }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn rectangular_vs_replication() -> SelfTestCheck {
    let mut rng = rng_from_seed(4);
    let mut worst = 0.0f64;
    for _ in 0..60 {
        let m = rng.random_range(1..=4);
        let k = rng.random_range(1..=4);
        let xs: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let ys: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let cost: Vec<f64> = xs.iter().flat_map(|x| ys.iter().map(move |y| (x - y).abs())).collect();
        let got = uniform_transport(&cost, m, k).unwrap_or(f64::NAN);
        let l = m / gcd(m, k) * k;
        let big: Vec<f64> =
            (0..l * l).map(|p| cost[(p / l) / (l / m) * k + (p % l) / (l / k)]).collect();
        let reference = assignment_solve(&big, l, l).map(|a| a.total_cost / l as f64).unwrap_or(f64::NAN);
        worst = worst.max((got - reference).abs());
    }
    SelfTestCheck { name: "rectangular-transport", passed: worst <= 1e-12, detail: format!("max error {worst:e}") }
}

fn box_kernel_is_triangle() -> SelfTestCheck {
    let d = 0.02;
    let quad = gamma_from_phi(&SmoothingKernel::boxcar(d / 2.0).expect("valid width"), DEFAULT_QUAD_POINTS);
    let exact = CovarianceKernel::triangle(d).expect("valid support");
    let Ok(quad) = quad else {
        return SelfTestCheck { name: "box-kernel-triangle", passed: false, detail: "quadrature failed".into() };
    };
    let worst = (0..1000)
        .map(|i| -0.6 * d + 1.2 * d * i as f64 / 999.0)
        .map(|z| (quad.eval(z) - exact.eval(z)).abs())
        .fold(0.0, f64::max);
    SelfTestCheck { name: "box-kernel-triangle", passed: worst <= 1e-8, detail: format!("max error {worst:e}") }
}

fn constants() -> SelfTestCheck {
    let ok = (c1() - 17.0215).abs() < 1e-4 && (k_const() - 2.95986).abs() < 1e-5 && (chain_constant() - 30.652).abs() < 1e-3;
    SelfTestCheck {
        name: "constants",
        passed: ok,
        detail: format!("C1 = {:.6}, K = {:.6}, C = {:.4}", c1(), k_const(), chain_constant()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_selftest() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn permutations_are_lexicographic() {
        assert_eq!(permutations(3), vec![
            vec![0, 1, 2],
            vec![0, 2, 1],
            vec![1, 0, 2],
            vec![1, 2, 0],
            vec![2, 0, 1],
            vec![2, 1, 0]
        ]);
    }
}
