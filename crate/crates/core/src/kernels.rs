//! Covariance functions of Harris flows and the smoothing kernels they are
//! built from.
//!
//! A smoothing kernel `phi` with compact support and unit `L2` norm yields the
//! covariance function `Gamma(z) = ∫ phi(z + q) phi(q) dq`. `Gamma` is
//! symmetric, equals one at zero and vanishes for `|z| > d(Gamma) / 2`, where
//! the support diameter `d(Gamma)` is twice the width of `phi`. The Arratia
//! flow corresponds to the degenerate covariance `1{0}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Allowed deviation of `∫ phi^2` from one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-8;
/// Trapezoid intervals used to normalize and to check normalization.
pub const NORMALIZATION_INTERVALS: usize = 4096;
/// Smallest quadrature accepted by [`gamma_from_phi`].
pub const MIN_QUAD_POINTS: usize = 64;
/// Default quadrature: 512 intervals across `phi`, i.e. 1024 grid cells across
/// the support of `Gamma`.
pub const DEFAULT_QUAD_POINTS: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel width must be positive and finite, got {0}")]
    InvalidWidth(f64),
    #[error("support diameter must be non-negative and finite, got {0}")]
    InvalidSupport(f64),
    #[error("smoothing kernel is not normalized: integral of phi^2 is {0}")]
    Unnormalized(f64),
    #[error("quadrature needs at least {MIN_QUAD_POINTS} points, got {0}")]
    TooFewQuadPoints(usize),
    #[error("sampled kernel needs at least two finite samples with a non-zero value")]
    InvalidSamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothingFamily {
    /// Constant on its support.
    Box,
    /// `exp(-1 / (1 - s^2))` in the rescaled coordinate `s`.
    Bump,
    /// User-supplied shape, linearly interpolated.
    SampledGrid,
}

/// A compactly supported `phi` centred at zero, scaled so that `∫ phi^2 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingKernel<T> {
    family: SmoothingFamily,
    width: T,
    normalization: T,
    samples: Vec<T>,
}

impl<T: Scalar> SmoothingKernel<T> {
    /// `phi = width^{-1/2}` on `[-width/2, width/2]`.
    pub fn boxcar(width: T) -> Result<Self, KernelError> {
        check_width(width)?;
        Ok(Self {
            family: SmoothingFamily::Box,
            width,
            normalization: width.sqrt().recip(),
            samples: Vec::new(),
        })
    }

    /// Smooth bump supported on `[-width/2, width/2]`.
    pub fn bump(width: T) -> Result<Self, KernelError> {
        check_width(width)?;
        let mut k = Self { family: SmoothingFamily::Bump, width, normalization: T::one(), samples: Vec::new() };
        k.normalization = k.l2_norm_sq(NORMALIZATION_INTERVALS).sqrt().recip();
        Ok(k)
    }

    /// Shape given by `samples` at equally spaced nodes spanning
    /// `[-width/2, width/2]`; the result is rescaled to unit `L2` norm.
    pub fn from_samples(width: T, samples: Vec<T>) -> Result<Self, KernelError> {
        check_width(width)?;
        if samples.len() < 2 || samples.iter().any(|s| !s.is_finite()) || samples.iter().all(|s| s.is_zero()) {
            return Err(KernelError::InvalidSamples);
        }
        let mut k = Self { family: SmoothingFamily::SampledGrid, width, normalization: T::one(), samples };
        k.normalization = k.sampled_norm_sq().sqrt().recip();
        Ok(k)
    }

    /// Raw constructor with a caller-chosen scale; used to build deliberately
    /// unnormalized kernels.
    pub fn with_normalization(family: SmoothingFamily, width: T, normalization: T) -> Result<Self, KernelError> {
        check_width(width)?;
        if family == SmoothingFamily::SampledGrid {
            return Err(KernelError::InvalidSamples);
        }
        Ok(Self { family, width, normalization, samples: Vec::new() })
    }

    pub fn family(&self) -> SmoothingFamily {
        self.family
    }

    /// Support diameter `d(phi)`.
    pub fn width(&self) -> T {
        self.width
    }

    pub fn normalization(&self) -> T {
        self.normalization
    }

    /// `phi` in the unit coordinate `s = 2q / width`; zero for `|s| > 1`.
    fn eval_unit(&self, s: T) -> T {
        let a = s.abs();
        if a > T::one() {
            return T::zero();
        }
        let shape = match self.family {
            SmoothingFamily::Box => T::one(),
            SmoothingFamily::Bump => {
                if a >= T::one() {
                    T::zero()
                } else {
                    (-(T::one() - a * a).recip()).exp()
                }
            }
            SmoothingFamily::SampledGrid => {
                let last = self.samples.len() - 1;
                let pos = (s + T::one()) / T::of(2.0) * T::of_usize(last);
                let i = pos.floor().to_usize().unwrap_or(0).min(last);
                if i == last {
                    self.samples[last]
                } else {
                    let f = pos - T::of_usize(i);
                    self.samples[i] + (self.samples[i + 1] - self.samples[i]) * f
                }
            }
        };
        shape * self.normalization
    }

    pub fn eval(&self, q: T) -> T {
        self.eval_unit(q * T::of(2.0) / self.width)
    }

    /// Composite trapezoid value of `∫ phi^2` on `intervals` cells.
    pub fn l2_norm_sq(&self, intervals: usize) -> T {
        let nodes: Vec<T> = (0..=intervals).map(|j| self.eval_unit(unit_node::<T>(j, intervals))).collect();
        let h = self.width / T::of_usize(intervals);
        trapezoid_product(&nodes, &nodes) * h
    }

    /// Exact `∫ phi^2` of the piecewise-linear interpolant.
    fn sampled_norm_sq(&self) -> T {
        let h = self.width / T::of_usize(self.samples.len() - 1);
        let three = T::of(3.0);
        let c = self.normalization * self.normalization;
        self.samples.windows(2).map(|w| h * c * (w[0] * w[0] + w[0] * w[1] + w[1] * w[1]) / three).sum()
    }

    pub fn is_normalized(&self) -> bool {
        let norm_sq = match self.family {
            SmoothingFamily::SampledGrid => self.sampled_norm_sq(),
            _ => self.l2_norm_sq(NORMALIZATION_INTERVALS),
        };
        (norm_sq - T::one()).abs().as_f64() <= NORMALIZATION_TOLERANCE
    }
}

fn check_width<T: Scalar>(width: T) -> Result<(), KernelError> {
    if width.is_finite() && width > T::zero() {
        Ok(())
    } else {
        Err(KernelError::InvalidWidth(width.as_f64()))
    }
}

/// Node `j` of `intervals` uniform cells on `[-1, 1]`; both ends are exact.
fn unit_node<T: Scalar>(j: usize, intervals: usize) -> T {
    T::of_usize(2 * j) / T::of_usize(intervals) - T::one()
}

/// Trapezoid sum `Σ c_j a_j b_j` with half weights at both ends (unit spacing).
fn trapezoid_product<T: Scalar>(a: &[T], b: &[T]) -> T {
    let len = a.len().min(b.len());
    if len < 2 {
        return T::zero();
    }
    let half = T::of(0.5);
    let inner: T = (1..len - 1).map(|j| a[j] * b[j]).sum();
    inner + half * (a[0] * b[0] + a[len - 1] * b[len - 1])
}

/// Representation of a covariance function.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceForm<T> {
    /// `max(0, 1 - |z| / (d/2))`, the covariance of the box kernel.
    Triangle,
    /// Samples of `Gamma` on `z = m * step`, `m = 0..`, mirrored to `z < 0`.
    SampledGrid { step: T, values: Vec<T> },
    /// `1{0}`: the Arratia flow.
    IndicatorAtZero,
}

/// A covariance function `Gamma` with compact support.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceKernel<T> {
    form: CovarianceForm<T>,
    support_diameter: T,
}

impl<T: Scalar> CovarianceKernel<T> {
    pub fn triangle(support_diameter: T) -> Result<Self, KernelError> {
        if !(support_diameter.is_finite() && support_diameter > T::zero()) {
            return Err(KernelError::InvalidSupport(support_diameter.as_f64()));
        }
        Ok(Self { form: CovarianceForm::Triangle, support_diameter })
    }

    pub fn indicator_at_zero() -> Self {
        Self { form: CovarianceForm::IndicatorAtZero, support_diameter: T::zero() }
    }

    pub fn form(&self) -> &CovarianceForm<T> {
        &self.form
    }

    /// `d(Gamma)`.
    pub fn support_diameter(&self) -> T {
        self.support_diameter
    }

    /// Interaction range `d(Gamma) / 2`.
    pub fn half_support(&self) -> T {
        self.support_diameter / T::of(2.0)
    }

    /// `Gamma(z)`. Evaluates `|z|`, so symmetry is exact.
    pub fn eval(&self, z: T) -> T {
        let a = z.abs();
        match &self.form {
            CovarianceForm::IndicatorAtZero => {
                if a.is_zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            CovarianceForm::Triangle => {
                let h = self.half_support();
                if a >= h {
                    T::zero()
                } else {
                    T::one() - a / h
                }
            }
            CovarianceForm::SampledGrid { step, values } => {
                if a >= self.half_support() {
                    return T::zero();
                }
                let pos = a / *step;
                let last = values.len() - 1;
                let i = pos.floor().to_usize().unwrap_or(last).min(last);
                if i == last {
                    values[last]
                } else {
                    let f = pos - T::of_usize(i);
                    values[i] + (values[i + 1] - values[i]) * f
                }
            }
        }
    }

    /// Row-major matrix `[Gamma(v_i - v_j)]`.
    pub fn covariance_matrix(&self, points: &[T]) -> Vec<T> {
        let n = points.len();
        let mut m = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = self.eval(points[i] - points[j]);
            }
        }
        m
    }
}

/// `Gamma(z) = ∫ phi(z + q) phi(q) dq` on a grid aligned with the quadrature
/// nodes of `phi`, so the samples form a discrete autocorrelation and the
/// interpolated kernel stays positive semidefinite.
///
/// `quad_points` is the number of trapezoid cells across the support of
/// `phi`; the resulting grid has `2 * quad_points` cells across the support
/// of `Gamma`.
pub fn gamma_from_phi<T: Scalar>(phi: &SmoothingKernel<T>, quad_points: usize) -> Result<CovarianceKernel<T>, KernelError> {
    if quad_points < MIN_QUAD_POINTS {
        return Err(KernelError::TooFewQuadPoints(quad_points));
    }
    if !phi.is_normalized() {
        return Err(KernelError::Unnormalized(phi.l2_norm_sq(NORMALIZATION_INTERVALS).as_f64()));
    }
    let q = quad_points;
    let nodes: Vec<T> = (0..=q).map(|j| phi.eval_unit(unit_node::<T>(j, q))).collect();
    let h = phi.width() / T::of_usize(q);
    // Only z >= 0 is computed; eval mirrors.
    let mut values: Vec<T> = (0..=q).map(|m| trapezoid_product(&nodes[..=q - m], &nodes[m..]) * h).collect();
    let g0 = values[0];
    for v in &mut values {
        *v = *v / g0;
    }
    values[0] = T::one();
    Ok(CovarianceKernel {
        form: CovarianceForm::SampledGrid { step: h, values },
        support_diameter: phi.width() * T::of(2.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    /// `Gamma` from a box `phi` by quadrature.
    Box,
    /// `Gamma` from a smooth bump `phi` by quadrature.
    Bump,
    /// Closed-form triangle, identical to the box family without quadrature.
    Triangle,
}

/// Kernel description used in configuration files. `d_gamma` is the support
/// diameter of `Gamma`; zero selects the Arratia covariance `1{0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub d_gamma: f64,
}

impl KernelSpec {
    pub fn build<T: Scalar>(&self) -> Result<CovarianceKernel<T>, KernelError> {
        if !(self.d_gamma.is_finite() && self.d_gamma >= 0.0) {
            return Err(KernelError::InvalidSupport(self.d_gamma));
        }
        if self.d_gamma == 0.0 {
            return Ok(CovarianceKernel::indicator_at_zero());
        }
        let width = T::of(self.d_gamma / 2.0);
        match self.family {
            KernelFamily::Triangle => CovarianceKernel::triangle(T::of(self.d_gamma)),
            KernelFamily::Box => gamma_from_phi(&SmoothingKernel::boxcar(width)?, DEFAULT_QUAD_POINTS),
            KernelFamily::Bump => gamma_from_phi(&SmoothingKernel::bump(width)?, DEFAULT_QUAD_POINTS),
        }
    }

    pub fn label(&self) -> String {
        let family = match self.family {
            KernelFamily::Box => "box",
            KernelFamily::Bump => "bump",
            KernelFamily::Triangle => "triangle",
        };
        format!("{family}:{}", self.d_gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn triangle_values() {
        let k = CovarianceKernel::<f64>::triangle(0.02).unwrap();
        assert_eq!(k.eval(0.0), 1.0);
        assert!((k.eval(0.005) - 0.5).abs() < 1e-15);
        assert_eq!(k.eval(0.01), 0.0);
        assert_eq!(k.eval(-0.03), 0.0);
    }

    #[test]
    fn indicator_is_zero_off_origin() {
        let k = CovarianceKernel::<f64>::indicator_at_zero();
        assert_eq!(k.eval(0.0), 1.0);
        assert_eq!(k.eval(1e-9), 0.0);
        assert_eq!(k.support_diameter(), 0.0);
    }

    #[test]
    fn box_convolution_is_triangle() {
        let w = 0.37;
        let phi = SmoothingKernel::boxcar(w).unwrap();
        let gamma = gamma_from_phi(&phi, 256).unwrap();
        assert_eq!(gamma.support_diameter(), 2.0 * w);
        for i in 0..1000 {
            let z = -2.2 * w + 4.4 * w * i as f64 / 999.0;
            let exact = (1.0 - z.abs() / w).max(0.0);
            assert!((gamma.eval(z) - exact).abs() < 1e-8, "z = {z}");
        }
        assert_eq!(gamma.eval(1.5 * w), 0.0);
    }

    #[test]
    fn bump_kernel_normalized_and_gamma_at_zero_is_one() {
        let phi = SmoothingKernel::bump(0.1).unwrap();
        assert!(phi.is_normalized());
        let gamma = gamma_from_phi(&phi, 128).unwrap();
        assert_eq!(gamma.eval(0.0), 1.0);
        assert_eq!(gamma.eval(0.1), 0.0);
        assert!(gamma.eval(0.05) > 0.0 && gamma.eval(0.05) < 1.0);
    }

    #[test]
    fn sampled_shape_normalizes() {
        let phi = SmoothingKernel::from_samples(2.0, vec![0.0, 1.0, 2.0, 1.0, 0.0]).unwrap();
        assert!(phi.is_normalized());
        assert_eq!(phi.eval(1.5), 0.0);
        assert!(gamma_from_phi(&phi, 64).is_ok());
    }

    #[test]
    fn rejects_unnormalized_phi() {
        let phi = SmoothingKernel::with_normalization(SmoothingFamily::Box, 1.0, 2.0).unwrap();
        assert!(matches!(gamma_from_phi(&phi, 128), Err(KernelError::Unnormalized(_))));
    }

    #[test]
    fn rejects_coarse_quadrature() {
        let phi = SmoothingKernel::boxcar(1.0).unwrap();
        assert_eq!(gamma_from_phi(&phi, 63), Err(KernelError::TooFewQuadPoints(63)));
    }

    #[test]
    fn spec_with_zero_diameter_is_arratia() {
        let k: CovarianceKernel<f64> = KernelSpec { family: KernelFamily::Bump, d_gamma: 0.0 }.build().unwrap();
        assert_eq!(k.form(), &CovarianceForm::IndicatorAtZero);
    }

    #[test]
    fn single_precision_triangle() {
        let k = CovarianceKernel::<f32>::triangle(2.0).unwrap();
        assert!((k.eval(0.5) - 0.5).abs() < 1e-7);
    }

    fn kernels() -> Vec<CovarianceKernel<f64>> {
        vec![
            CovarianceKernel::triangle(0.3).unwrap(),
            gamma_from_phi(&SmoothingKernel::boxcar(0.15).unwrap(), 128).unwrap(),
            gamma_from_phi(&SmoothingKernel::bump(0.15).unwrap(), 128).unwrap(),
            CovarianceKernel::indicator_at_zero(),
        ]
    }

    proptest! {
        #[test]
        fn symmetric_and_supported(z in -1.0f64..1.0) {
            for k in kernels() {
                prop_assert_eq!(k.eval(z), k.eval(-z));
                if z.abs() > k.half_support() {
                    prop_assert_eq!(k.eval(z), 0.0);
                }
                prop_assert!(k.eval(z) <= 1.0 + 1e-12 && k.eval(z) >= -1.0);
            }
        }

        #[test]
        fn covariance_matrices_are_psd(points in proptest::collection::vec(-0.3f64..0.3, 2..9)) {
            for k in kernels() {
                let n = points.len();
                let m = nalgebra::DMatrix::from_row_slice(n, n, &k.covariance_matrix(&points));
                let min = m.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
                prop_assert!(min >= -1e-8, "min eigenvalue {}", min);
            }
        }
    }
}
