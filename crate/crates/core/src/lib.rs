//! Regularised neural-tangent-kernel dynamics.
//!
//! - [`kernels`]: infinite-width NNGP and NTK recursions over a point set.
//! - [`flow`]: the regularised function-space gradient flow and its diagnostics.
//! - [`lsq`]: exact least-squares trajectories via symmetric eigendecomposition.
//! - [`finite_width`]: explicit networks in NTK parameterisation for empirical checks.
//! - [`pacbayes`]: shallow stochastic networks and PAC-Bayes objectives.
//!
//! Data-parallel loops (Gram entries, Monte Carlo chunks, width sweeps) run on
//! rayon when the `parallel` feature is enabled and sequentially otherwise.

pub mod activation;
pub mod error;
pub mod finite_width;
pub mod flow;
pub mod kernels;
pub mod linalg;
pub mod loss;
pub mod lsq;
pub mod ode;
pub mod pacbayes;
pub mod par;
pub mod quadrature;
pub mod rng;

pub use activation::{ActivationKind, ActivationSpec, KernelMode};
pub use error::{Error, Result};
pub use kernels::{GramMatrix, KernelStack, Normalisation, PointSet};
pub use loss::{LossSpec, RegulariserSpec};
pub use quadrature::QuadratureRule;
