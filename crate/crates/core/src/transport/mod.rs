//! Discrete measures on the line, discretization of measures on `[0, 1]`,
//! pushforwards along flow endpoints and exact Wasserstein-1 distances.

mod assignment;
mod ensemble;

pub use assignment::{assignment_solve, uniform_transport, Assignment, AssignmentError};
pub use ensemble::{diagonal_cost, w1_ensembles, w1_cost_matrix, MeasureEnsemble, Provenance};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("atoms and weights differ in length ({atoms} vs {weights})")]
    LengthMismatch { atoms: usize, weights: usize },
    #[error("atom {0} is not finite")]
    NonFiniteAtom(usize),
    #[error("weight {0} is negative or not finite")]
    InvalidWeight(usize),
    #[error("weights sum to {0}, expected 1")]
    NotProbability(f64),
    #[error("measure has no atoms of positive weight")]
    Empty,
    #[error("atom {0} lies outside [0, 1]")]
    OutsideUnitInterval(f64),
    #[error("discretization level must be at least 1")]
    ZeroLevel,
    #[error("no endpoint for atom {0}")]
    MissingEndpoint(f64),
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
}

/// Probability measure with finitely many atoms: atoms strictly increasing,
/// weights positive and summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure<T>", bound(deserialize = "T: Scalar"))]
pub struct DiscreteMeasure<T> {
    atoms: Vec<T>,
    weights: Vec<T>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasure<T> {
    atoms: Vec<T>,
    weights: Vec<T>,
}

impl<T: Scalar> TryFrom<RawMeasure<T>> for DiscreteMeasure<T> {
    type Error = TransportError;

    fn try_from(raw: RawMeasure<T>) -> Result<Self, Self::Error> {
        DiscreteMeasure::new(raw.atoms, raw.weights)
    }
}

impl<T: Scalar> DiscreteMeasure<T> {
    /// Sorts the atoms, merges duplicates (summing weights) and drops atoms
    /// of zero weight.
    pub fn new(atoms: Vec<T>, weights: Vec<T>) -> Result<Self, TransportError> {
        if atoms.len() != weights.len() {
            return Err(TransportError::LengthMismatch { atoms: atoms.len(), weights: weights.len() });
        }
        if let Some(i) = atoms.iter().position(|a| !a.is_finite()) {
            return Err(TransportError::NonFiniteAtom(i));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= T::zero())) {
            return Err(TransportError::InvalidWeight(i));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::mass_tolerance() {
            return Err(TransportError::NotProbability(total.as_f64()));
        }
        let mut pairs: Vec<(T, T)> = atoms.into_iter().zip(weights).filter(|(_, w)| *w > T::zero()).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite atoms"));
        Self::from_sorted_pairs(pairs)
    }

    fn from_sorted_pairs(pairs: Vec<(T, T)>) -> Result<Self, TransportError> {
        let mut atoms: Vec<T> = Vec::with_capacity(pairs.len());
        let mut weights: Vec<T> = Vec::with_capacity(pairs.len());
        for (a, w) in pairs {
            if atoms.last() == Some(&a) {
                let last = weights.len() - 1;
                weights[last] = weights[last] + w;
            } else {
                atoms.push(a);
                weights.push(w);
            }
        }
        if atoms.is_empty() {
            return Err(TransportError::Empty);
        }
        Ok(Self { atoms, weights })
    }

    pub fn dirac(x: T) -> Result<Self, TransportError> {
        Self::new(vec![x], vec![T::one()])
    }

    /// Equal weights on `points` (duplicates merged).
    pub fn uniform_on(points: &[T]) -> Result<Self, TransportError> {
        let w = T::one() / T::of_usize(points.len().max(1));
        Self::new(points.to_vec(), vec![w; points.len()])
    }

    pub fn atoms(&self) -> &[T] {
        &self.atoms
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// The measure translated by `c`.
    pub fn shifted(&self, c: T) -> Self {
        Self { atoms: self.atoms.iter().map(|a| *a + c).collect(), weights: self.weights.clone() }
    }
}

/// A probability measure on `[0, 1]` to be discretized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub enum UnitIntervalMeasure<T> {
    /// Lebesgue measure on `[0, 1]`.
    Uniform,
    Dirac { at: T },
    Atoms { measure: DiscreteMeasure<T> },
}

impl<T: Scalar> UnitIntervalMeasure<T> {
    pub fn validate(&self) -> Result<(), TransportError> {
        let check = |x: T| {
            if x < T::zero() || x > T::one() {
                Err(TransportError::OutsideUnitInterval(x.as_f64()))
            } else {
                Ok(())
            }
        };
        match self {
            UnitIntervalMeasure::Uniform => Ok(()),
            UnitIntervalMeasure::Dirac { at } => check(*at),
            UnitIntervalMeasure::Atoms { measure } => measure.atoms().iter().try_for_each(|a| check(*a)),
        }
    }

    /// Stand-in for the measure itself with at most `fineness` atoms: the
    /// level-`fineness` discretization of Lebesgue measure, or the atoms.
    pub fn fine_proxy(&self, fineness: usize) -> Result<DiscreteMeasure<T>, TransportError> {
        match self {
            UnitIntervalMeasure::Uniform => discretize(self, fineness),
            UnitIntervalMeasure::Dirac { at } => {
                self.validate()?;
                DiscreteMeasure::dirac(*at)
            }
            UnitIntervalMeasure::Atoms { measure } => {
                self.validate()?;
                Ok(measure.clone())
            }
        }
    }
}

/// Midpoint of cell `k` (0-based) of the level-`n` grid, `(2k + 1) / (2n)`.
pub fn cell_midpoint<T: Scalar>(k: usize, n: usize) -> T {
    T::of_usize(2 * k + 1) / T::of_usize(2 * n)
}

/// Places the mass of each cell `[(k-1)/n, k/n)` (the last one closed) at its
/// midpoint; cells without mass are dropped.
pub fn discretize<T: Scalar>(mu: &UnitIntervalMeasure<T>, n: usize) -> Result<DiscreteMeasure<T>, TransportError> {
    if n == 0 {
        return Err(TransportError::ZeroLevel);
    }
    mu.validate()?;
    let cell = |x: T| -> usize { (x * T::of_usize(n)).floor().to_usize().unwrap_or(0).min(n - 1) };
    let pairs: Vec<(T, T)> = match mu {
        UnitIntervalMeasure::Uniform => {
            let w = T::one() / T::of_usize(n);
            (0..n).map(|k| (cell_midpoint(k, n), w)).collect()
        }
        UnitIntervalMeasure::Dirac { at } => vec![(cell_midpoint(cell(*at), n), T::one())],
        UnitIntervalMeasure::Atoms { measure } => {
            measure.atoms().iter().zip(measure.weights()).map(|(a, w)| (cell_midpoint(cell(*a), n), *w)).collect()
        }
    };
    DiscreteMeasure::from_sorted_pairs(pairs)
}

/// Image of `mu` under `endpoint`: each atom moves to its endpoint, and atoms
/// landing on the same point merge.
pub fn pushforward<T: Scalar>(
    mu: &DiscreteMeasure<T>,
    endpoint: impl Fn(T) -> Option<T>,
) -> Result<DiscreteMeasure<T>, TransportError> {
    let mut images = Vec::with_capacity(mu.len());
    for &a in mu.atoms() {
        images.push(endpoint(a).ok_or_else(|| TransportError::MissingEndpoint(a.as_f64()))?);
    }
    pushforward_indexed(mu, &images)
}

/// Pushforward with the image of atom `i` given as `images[i]`.
pub fn pushforward_indexed<T: Scalar>(mu: &DiscreteMeasure<T>, images: &[T]) -> Result<DiscreteMeasure<T>, TransportError> {
    if images.len() != mu.len() {
        return Err(TransportError::LengthMismatch { atoms: mu.len(), weights: images.len() });
    }
    if let Some(i) = images.iter().position(|x| !x.is_finite()) {
        return Err(TransportError::NonFiniteAtom(i));
    }
    let mut pairs: Vec<(T, T)> = images.iter().copied().zip(mu.weights().iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite images"));
    DiscreteMeasure::from_sorted_pairs(pairs)
}

/// Exact `W1` on the line: the integral of `|F_a - F_b|` over the merged
/// breakpoints.
pub fn w1_real<T: Scalar>(a: &DiscreteMeasure<T>, b: &DiscreteMeasure<T>) -> T {
    let (xa, wa) = (a.atoms(), a.weights());
    let (xb, wb) = (b.atoms(), b.weights());
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (T::zero(), T::zero());
    let mut prev: Option<T> = None;
    let mut total = T::zero();
    while i < xa.len() || j < xb.len() {
        let x = match (xa.get(i), xb.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        if let Some(p) = prev {
            total = total + (fa - fb).abs() * (x - p);
        }
        if i < xa.len() && xa[i] == x {
            fa = fa + wa[i];
            i += 1;
        }
        if j < xb.len() && xb[j] == x {
            fb = fb + wb[j];
            j += 1;
        }
        prev = Some(x);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(atoms: &[f64], weights: &[f64]) -> DiscreteMeasure<f64> {
        DiscreteMeasure::new(atoms.to_vec(), weights.to_vec()).unwrap()
    }

    #[test]
    fn construction_sorts_and_merges() {
        let mu = m(&[0.5, 0.1, 0.5, 0.3], &[0.25, 0.25, 0.25, 0.25]);
        assert_eq!(mu.atoms(), &[0.1, 0.3, 0.5]);
        assert_eq!(mu.weights(), &[0.25, 0.25, 0.5]);
        let z = m(&[0.0, 1.0], &[0.0, 1.0]);
        assert_eq!(z.atoms(), &[1.0]);
        assert!(matches!(DiscreteMeasure::new(vec![0.0], vec![0.5]), Err(TransportError::NotProbability(_))));
        assert!(matches!(DiscreteMeasure::new(vec![0.0], vec![-1.0]), Err(TransportError::InvalidWeight(0))));
        assert!(matches!(DiscreteMeasure::<f64>::new(vec![], vec![]), Err(TransportError::NotProbability(_))));
    }

    #[test]
    fn json_round_trip_validates() {
        let mu = m(&[0.0, 1.0], &[0.5, 0.5]);
        let s = serde_json::to_string(&mu).unwrap();
        assert_eq!(s, r#"{"atoms":[0.0,1.0],"weights":[0.5,0.5]}"#);
        let back: DiscreteMeasure<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, mu);
        assert!(serde_json::from_str::<DiscreteMeasure<f64>>(r#"{"atoms":[0.0],"weights":[0.7]}"#).is_err());
    }

    #[test]
    fn discretize_examples() {
        let u = discretize::<f64>(&UnitIntervalMeasure::Uniform, 4).unwrap();
        assert_eq!(u.atoms(), &[0.125, 0.375, 0.625, 0.875]);
        assert_eq!(u.weights(), &[0.25; 4]);
        let d1 = discretize(&UnitIntervalMeasure::Dirac { at: 1.0 }, 2).unwrap();
        assert_eq!((d1.atoms(), d1.weights()), (&[0.75][..], &[1.0][..]));
        let d0 = discretize(&UnitIntervalMeasure::Dirac { at: 0.0 }, 1).unwrap();
        assert_eq!(d0.atoms(), &[0.5]);
        assert!(matches!(
            discretize(&UnitIntervalMeasure::Dirac { at: 1.5 }, 2),
            Err(TransportError::OutsideUnitInterval(_))
        ));
        let atoms = UnitIntervalMeasure::Atoms { measure: m(&[0.1, 0.2, 0.9], &[0.2, 0.3, 0.5]) };
        let d = discretize(&atoms, 2).unwrap();
        assert_eq!(d.atoms(), &[0.25, 0.75]);
        assert!((d.weights()[0] - 0.5).abs() < 1e-15);
        let total: f64 = discretize::<f64>(&UnitIntervalMeasure::Uniform, 1000).unwrap().weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pushforward_examples() {
        let mu = m(&[0.125, 0.375], &[0.25, 0.75]);
        assert_eq!(pushforward(&mu, Some).unwrap(), mu);
        let img = pushforward(&mu, |x| Some(if x < 0.2 { 0.2 } else { 0.1 })).unwrap();
        assert_eq!(img.atoms(), &[0.1, 0.2]);
        assert_eq!(img.weights(), &[0.75, 0.25]);
        let half = m(&[0.0, 1.0], &[0.5, 0.5]);
        let merged = pushforward(&half, |_| Some(3.0)).unwrap();
        assert_eq!((merged.atoms(), merged.weights()), (&[3.0][..], &[1.0][..]));
        assert!(matches!(pushforward(&half, |_| None), Err(TransportError::MissingEndpoint(_))));
    }

    #[test]
    fn w1_examples() {
        let a = DiscreteMeasure::dirac(0.3f64).unwrap();
        let b = DiscreteMeasure::dirac(-1.2).unwrap();
        assert!((w1_real(&a, &b) - 1.5).abs() < 1e-15);
        let d0 = DiscreteMeasure::dirac(0.0).unwrap();
        let half = m(&[0.0, 1.0], &[0.5, 0.5]);
        assert_eq!(w1_real(&d0, &half), 0.5);
        assert_eq!(w1_real(&half, &half), 0.0);
        let mu4 = discretize::<f64>(&UnitIntervalMeasure::Uniform, 4).unwrap();
        let fine = discretize::<f64>(&UnitIntervalMeasure::Uniform, 1024).unwrap();
        assert!((w1_real(&mu4, &fine) - 1.0 / 16.0).abs() < 1e-3);
    }

    #[test]
    fn w1_translation_exact_on_dyadic_atoms() {
        let a = m(&[0.25, 0.5, 1.75], &[0.125, 0.5, 0.375]);
        let b = m(&[-0.5, 0.75], &[0.625, 0.375]);
        let d = w1_real(&a, &b);
        for c in [-3.0, 1.0, 1024.0] {
            assert_eq!(w1_real(&a.shifted(c), &b.shifted(c)), d);
        }
    }
}
