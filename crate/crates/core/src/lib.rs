//! Simulation and optimal-transport toolkit for one-dimensional Harris flows,
//! the Arratia flow and the epsilon-gluing coupling between them.

pub mod cli;
pub mod coupling;
pub mod flows;
pub mod kernels;
pub mod montecarlo;
pub mod scalar;
pub mod seeding;
pub mod stats;
pub mod transport;

pub type FlowPathF64 = flows::FlowPath<f64>;
pub type FlowModelF64 = flows::FlowModel<f64>;
pub type TimeGridF64 = flows::TimeGrid<f64>;
pub type CouplingTraceF64 = coupling::CouplingTrace<f64>;
pub type CovarianceKernelF64 = kernels::CovarianceKernel<f64>;
pub type SmoothingKernelF64 = kernels::SmoothingKernel<f64>;
pub type DiscreteMeasureF64 = transport::DiscreteMeasure<f64>;
pub type MeasureEnsembleF64 = transport::MeasureEnsemble<f64>;
pub type UnitIntervalMeasureF64 = transport::UnitIntervalMeasure<f64>;
