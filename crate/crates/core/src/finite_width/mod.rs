//! Explicit finite-width networks in NTK parameterisation, trained by the
//! discretised regularised gradient flow, and width sweeps measuring how far
//! they drift from the infinite-width picture.

mod drift;
mod network;

pub use drift::{
    drift_report, drift_sweep, fit_log_slope, DriftConfig, DriftReport, DriftSweep, WidthRecord,
};
pub use network::{
    FiniteNetwork, JacobianSlices, Snapshot, TrainConfig, TrainProblem, TrainRecord, TrainResult,
};
