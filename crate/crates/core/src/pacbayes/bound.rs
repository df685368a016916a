use crate::error::{Error, Result};

/// Value of the PAC-Bayes bound and the η minimising its complexity bracket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacBound {
    pub value: f64,
    /// `η* = √(KL + log(1/δ))`
    pub eta_star: f64,
}

/// `E_Q[L_s] + (η + (KL + log(1/δ))/η) / √(8m)`.
///
/// The bound assumes a loss in [0, 1]. Quadratic-surrogate callers pass a value
/// that dominates the misclassification loss, so the result still bounds the
/// misclassification population loss.
pub fn pac_bound(expected_loss: f64, kl: f64, eta: f64, delta: f64, m: usize) -> Result<PacBound> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::config(format!("eta must be positive, got {eta}")));
    }
    if !(kl.is_finite() && kl >= 0.0) {
        return Err(Error::config(format!(
            "KL must be finite and >= 0, got {kl}"
        )));
    }
    if m == 0 {
        return Err(Error::config("sample size must be positive"));
    }
    if !expected_loss.is_finite() {
        return Err(Error::config("expected loss must be finite"));
    }
    let complexity = kl - delta.ln();
    Ok(PacBound {
        value: expected_loss + (eta + complexity / eta) / (8.0 * m as f64).sqrt(),
        eta_star: complexity.sqrt(),
    })
}

/// `KL(Q | P) = ½‖m(t) − m(0)‖²` for unit-variance Gaussian posterior and prior.
pub fn kl_term(m_now: &[f64], m_init: &[f64]) -> Result<f64> {
    Error::check_dim("posterior means", m_init.len(), m_now.len())?;
    Ok(0.5
        * m_now
            .iter()
            .zip(m_init)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>())
}

/// `λ = 1 / (η √(8m))`, the regularisation strength equivalent to the bound.
pub fn lambda_from_eta(eta: f64, m: usize) -> Result<f64> {
    if !(eta.is_finite() && eta > 0.0) || m == 0 {
        return Err(Error::config("eta must be positive and m >= 1"));
    }
    Ok(1.0 / (eta * (8.0 * m as f64).sqrt()))
}
