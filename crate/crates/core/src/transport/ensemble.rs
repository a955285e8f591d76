//! Samples of random measures and the empirical `W1` between their laws.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{uniform_transport, w1_real, DiscreteMeasure, TransportError};
use crate::flows::FlowKind;
use crate::scalar::Scalar;

/// What produced the measures of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Harris,
    Arratia,
    Glued,
    Identity,
    CoupledStage,
}

impl From<FlowKind> for Provenance {
    fn from(kind: FlowKind) -> Self {
        match kind {
            FlowKind::Harris => Provenance::Harris,
            FlowKind::Arratia => Provenance::Arratia,
            FlowKind::Glued => Provenance::Glued,
            FlowKind::Identity => Provenance::Identity,
        }
    }
}

/// I.i.d. draws of a random discrete measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct MeasureEnsemble<T> {
    samples: Vec<DiscreteMeasure<T>>,
    provenance: Provenance,
}

impl<T: Scalar> MeasureEnsemble<T> {
    pub fn new(samples: Vec<DiscreteMeasure<T>>, provenance: Provenance) -> Result<Self, TransportError> {
        if samples.is_empty() {
            return Err(TransportError::EmptyEnsemble);
        }
        Ok(Self { samples, provenance })
    }

    pub fn samples(&self) -> &[DiscreteMeasure<T>] {
        &self.samples
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Row-major matrix of `w1_real(a_i, b_j)`.
pub fn w1_cost_matrix<T: Scalar>(a: &MeasureEnsemble<T>, b: &MeasureEnsemble<T>) -> Vec<T> {
    let cols = b.len();
    (0..a.len() * cols)
        .into_par_iter()
        .map(|p| w1_real(&a.samples[p / cols], &b.samples[p % cols]))
        .collect()
}

/// Empirical `W1` between the laws sampled by `a` and `b`: optimal transport
/// between the uniform measures on the two samples, with inner cost `W1`.
pub fn w1_ensembles<T: Scalar>(a: &MeasureEnsemble<T>, b: &MeasureEnsemble<T>) -> Result<T, TransportError> {
    let cost = w1_cost_matrix(a, b);
    Ok(uniform_transport(&cost, a.len(), b.len())?)
}

/// Mean of `w1_real(a_i, b_i)`: the cost of pairing samples by index.
pub fn diagonal_cost<T: Scalar>(a: &MeasureEnsemble<T>, b: &MeasureEnsemble<T>) -> T {
    let n = a.len().min(b.len());
    let total: T = (0..n).map(|i| w1_real(&a.samples[i], &b.samples[i])).sum();
    total / T::of_usize(n.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dirac_ensemble(points: &[f64]) -> MeasureEnsemble<f64> {
        MeasureEnsemble::new(points.iter().map(|&p| DiscreteMeasure::dirac(p).unwrap()).collect(), Provenance::Arratia)
            .unwrap()
    }

    #[test]
    fn identical_ensembles_are_at_distance_zero() {
        let a = dirac_ensemble(&[0.1, 0.5, 0.2]);
        assert_eq!(w1_ensembles(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn two_by_two_diracs() {
        let a = dirac_ensemble(&[0.0, 3.0]);
        let b = dirac_ensemble(&[1.0, 2.0]);
        assert_eq!(w1_cost_matrix(&a, &b), vec![1.0, 2.0, 2.0, 1.0]);
        assert_eq!(w1_ensembles(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn singletons_reduce_to_inner_distance() {
        let a = MeasureEnsemble::new(vec![DiscreteMeasure::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap()], Provenance::Harris).unwrap();
        let b = dirac_ensemble(&[0.0]);
        assert_eq!(w1_ensembles(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn solver_never_exceeds_diagonal_pairing() {
        let a = dirac_ensemble(&[0.3, 0.9, 0.1, 0.7]);
        let b = dirac_ensemble(&[0.8, 0.2, 0.6, 0.0]);
        assert!(w1_ensembles(&a, &b).unwrap() <= diagonal_cost(&a, &b));
    }

    #[test]
    fn empty_ensemble_rejected() {
        assert!(matches!(MeasureEnsemble::<f64>::new(vec![], Provenance::Glued), Err(TransportError::EmptyEnsemble)));
    }
}
