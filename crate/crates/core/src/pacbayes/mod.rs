//! Shallow stochastic networks with unit-variance Gaussian weights trained on a
//! PAC-Bayes objective. In the wide limit the mean output is a deterministic
//! network with the Gaussian-convolved activation ψ, and the output variance is
//! the constant σ².

mod bound;
mod convolved;
mod dynamics;
mod shallow;

pub use bound::{kl_term, lambda_from_eta, pac_bound, PacBound};
pub use convolved::{convolve_activation, shallow_ntk, sigma0_squared, ConvolvedActivation};
pub use dynamics::{
    evolve_misclassification, quadratic_closed_form, quadratic_system, spectral_report,
    SpectralReport,
};
pub use shallow::{empirical_q2, Q2Estimate, StochasticShallowNet};
