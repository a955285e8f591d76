//! Closed-form constants and bounds checked by the experiments.

use std::f64::consts::PI;

/// `C_t = 128 t^{3/2} / (3 sqrt(2 pi))`.
pub fn c_t(t: f64) -> f64 {
    128.0 * t.powf(1.5) / (3.0 * (2.0 * PI).sqrt())
}

/// `C_1`, about 17.02.
pub fn c1() -> f64 {
    c_t(1.0)
}

/// Two-point second-moment bound `C_t g + g^2` at time `t`.
pub fn lemma1_bound(gap: f64, t: f64) -> f64 {
    c_t(t) * gap + gap * gap
}

/// `K = sqrt(64 / (3 sqrt(2 pi)) + 1/4)`, about 2.9599.
pub fn k_const() -> f64 {
    (64.0 / (3.0 * (2.0 * PI).sqrt()) + 0.25).sqrt()
}

/// `K / sqrt(n)`.
pub fn theorem2_bound(n: usize) -> f64 {
    k_const() / (n as f64).sqrt()
}

/// `(2 n^3 / 3) sqrt(eps)` for stage 1, `(2 n^4 / 3) sqrt(eps)` afterwards.
pub fn lemma3_bound(n: usize, stage: usize, epsilon: f64) -> f64 {
    let nf = n as f64;
    let power = if stage == 1 { nf.powi(3) } else { nf.powi(4) };
    2.0 * power / 3.0 * epsilon.sqrt()
}

/// `(sqrt 2 n^5 / 3) sqrt(d)`.
pub fn theorem3_bound(n: usize, d_gamma: f64) -> f64 {
    2f64.sqrt() * (n as f64).powi(5) / 3.0 * d_gamma.sqrt()
}

/// `C = 2 K (10^{1/11} + (512/25)^{5/11})`, about 30.65.
pub fn chain_constant() -> f64 {
    2.0 * k_const() * (10f64.powf(1.0 / 11.0) + (512.0f64 / 25.0).powf(5.0 / 11.0))
}

/// `C d^{1/22}`.
pub fn theorem1_bound(d_gamma: f64) -> f64 {
    chain_constant() * d_gamma.powf(1.0 / 22.0)
}

/// `n_0 = floor((1 / (10 sqrt d))^{2/11}) + 1`.
pub fn optimal_n(d_gamma: f64) -> usize {
    (1.0 / (10.0 * d_gamma.sqrt())).powf(2.0 / 11.0).floor() as usize + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((c1() - 17.0215).abs() < 1e-4);
        assert!((k_const() - 2.95986).abs() < 1e-5);
        assert!((chain_constant() - 30.652).abs() < 1e-3);
        assert!((lemma3_bound(4, 1, 0.01) - 4.2667).abs() < 1e-4);
        assert!((lemma3_bound(4, 2, 0.01) - 17.0667).abs() < 1e-4);
        assert!((theorem3_bound(2, 1e-4) - 0.150849).abs() < 1e-6);
        assert!((theorem3_bound(4, 1e-4) - 4.8272).abs() < 1e-4);
        for d in [9e-3, 1e-3, 1e-4] {
            assert_eq!(optimal_n(d), 2);
        }
        assert!((theorem1_bound(1e-4) - 20.167).abs() < 1e-3);
    }
}
