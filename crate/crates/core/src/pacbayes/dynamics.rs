use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::flow::{FlowState, FlowSystem, IntegrateConfig, Trajectory};
use crate::loss::{LossSpec, RegulariserSpec};
use crate::lsq::LsqSystem;

use super::bound::lambda_from_eta;

fn check_binary(labels: &DVector<f64>) -> Result<()> {
    if labels.iter().all(|&y| y == 1.0 || y == -1.0) {
        Ok(())
    } else {
        Err(Error::config("PAC-Bayes dynamics need labels in {-1, +1}"))
    }
}

/// Integrates the mean output under the convolved misclassification loss,
/// `∂t M = ⟨Y Θ̄(x, X) e^{−M(X)²/(2σ²)}⟩_s / (σ√(2π)) − λ ΔM` with
/// `λ = 1/(η√(8m))`.
#[allow(clippy::too_many_arguments)]
pub fn evolve_misclassification(
    gram_sample: &DMatrix<f64>,
    gram_cross: &DMatrix<f64>,
    labels: &DVector<f64>,
    m0_sample: &DVector<f64>,
    m0_probe: &DVector<f64>,
    sigma: f64,
    eta: f64,
    config: IntegrateConfig,
) -> Result<Trajectory> {
    check_binary(labels)?;
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::config(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let m = labels.len();
    let lambda = lambda_from_eta(eta, m)?;
    let sys = FlowSystem::new(
        gram_sample.clone(),
        gram_cross.clone(),
        DMatrix::from_row_slice(1, m, labels.as_slice()),
        LossSpec::MisclassificationConvolved { sigma },
        lambda,
        RegulariserSpec::Identity,
    )?;
    let state0 = FlowState::initial(
        DMatrix::from_row_slice(1, m0_sample.len(), m0_sample.as_slice()),
        DMatrix::from_row_slice(1, m0_probe.len(), m0_probe.as_slice()),
    );
    sys.integrate(&state0, config)
}

/// The quadratic-loss mean dynamics `∂t M̃ = −2Θ̃(M̃ − Ỹ) − λΔM̃` as a
/// least-squares system with rate matrix `2V_{λ/2}`.
pub fn quadratic_system(
    theta_tilde: &DMatrix<f64>,
    m0: &DVector<f64>,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<LsqSystem> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::config(format!("lambda must be > 0, got {lambda}")));
    }
    LsqSystem::from_matrix(theta_tilde * 2.0, m0.clone(), y.clone(), lambda)
}

/// `M̃(t) = M̃(0) + (I − e^{−2tV_{λ/2}}) V_{λ/2}^{−1} Θ̃ (Ỹ − M̃(0))`
pub fn quadratic_closed_form(
    theta_tilde: &DMatrix<f64>,
    m0: &DVector<f64>,
    y: &DVector<f64>,
    lambda: f64,
    t: f64,
) -> Result<DVector<f64>> {
    quadratic_system(theta_tilde, m0, y, lambda)?.trajectory_at(t)
}

/// Long-time behaviour of the quadratic-loss dynamics in the eigenbasis of Θ̃.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    /// Eigenvalues of Θ̃, ascending.
    pub theta: Vec<f64>,
    /// `(λ/2)² / (λ/2 + θ_i)²`
    pub alpha: Vec<f64>,
    /// `θ_i / (λ/2 + θ_i)²`
    pub beta: Vec<f64>,
    /// `(1/m) Σ α_i c_i²` with `c` the eigen-coordinates of `M̃(0) − Ỹ`.
    pub l_inf: f64,
    /// `(1/2m) Σ β_i c_i²`
    pub r_inf: f64,
    /// `(1/m)‖M̃(∞) − Ỹ‖²` from the closed-form limit.
    pub l_inf_direct: f64,
    /// `−ΔM̃(∞)·(M̃(∞) − Ỹ) / (λm)`, from the stationarity of the regulariser.
    pub r_inf_direct: f64,
}

pub fn spectral_report(
    theta_tilde: &DMatrix<f64>,
    lambda: f64,
    m0: &DVector<f64>,
    y: &DVector<f64>,
    m: usize,
) -> Result<SpectralReport> {
    let sys = quadratic_system(theta_tilde, m0, y, lambda)?;
    if m == 0 {
        return Err(Error::config("sample size must be positive"));
    }
    let eig = sys.theta_eigen();
    let half = lambda / 2.0;
    // Θ̃′ = 2Θ̃, so halve to recover the spectrum of Θ̃.
    let theta: Vec<f64> = eig.values.iter().map(|v| (v / 2.0).max(0.0)).collect();
    let alpha: Vec<f64> = theta
        .iter()
        .map(|t| half * half / ((half + t) * (half + t)))
        .collect();
    let beta: Vec<f64> = theta
        .iter()
        .map(|t| t / ((half + t) * (half + t)))
        .collect();
    let c = eig.coords(&(m0 - y));
    let mf = m as f64;
    let l_inf = alpha
        .iter()
        .zip(c.iter())
        .map(|(a, c)| a * c * c)
        .sum::<f64>()
        / mf;
    let r_inf = beta
        .iter()
        .zip(c.iter())
        .map(|(b, c)| b * c * c)
        .sum::<f64>()
        / (2.0 * mf);

    let limit = sys.limit_infinity().value;
    let resid = &limit - y;
    let moved = &limit - m0;
    Ok(SpectralReport {
        theta,
        alpha,
        beta,
        l_inf,
        r_inf,
        l_inf_direct: resid.norm_squared() / mf,
        r_inf_direct: -moved.dot(&resid) / (lambda * mf),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_eigenvalue_coefficients() {
        let r = spectral_report(
            &DMatrix::identity(1, 1),
            1.0,
            &DVector::from_element(1, 0.0),
            &DVector::from_element(1, 1.0),
            1,
        )
        .unwrap();
        assert!((r.alpha[0] - 1.0 / 9.0).abs() < 1e-15);
        assert!((r.beta[0] - 4.0 / 9.0).abs() < 1e-15);
        assert!((r.l_inf - r.l_inf_direct).abs() < 1e-15);
        assert!((r.r_inf - r.r_inf_direct).abs() < 1e-15);
    }

    #[test]
    fn closed_form_at_zero_and_infinity() {
        let th = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let m0 = DVector::from_row_slice(&[0.2, -0.1]);
        let y = DVector::from_row_slice(&[1.0, -1.0]);
        assert_eq!(quadratic_closed_form(&th, &m0, &y, 0.4, 0.0).unwrap(), m0);
        let v = &th + DMatrix::identity(2, 2) * 0.2;
        let want = &m0 + v.try_inverse().unwrap() * &th * (&y - &m0);
        let far = quadratic_closed_form(&th, &m0, &y, 0.4, 400.0).unwrap();
        assert!((far - want).amax() < 1e-12);
    }

    #[test]
    fn lambda_must_be_positive() {
        let th = DMatrix::identity(1, 1);
        let v = DVector::zeros(1);
        assert!(quadratic_closed_form(&th, &v, &v, 0.0, 1.0).is_err());
    }

    #[test]
    fn labels_must_be_binary() {
        let g = DMatrix::identity(2, 2);
        let err = evolve_misclassification(
            &g,
            &DMatrix::zeros(0, 2),
            &DVector::from_row_slice(&[1.0, 0.5]),
            &DVector::zeros(2),
            &DVector::zeros(0),
            1.0,
            1.0,
            IntegrateConfig {
                horizon: 1.0,
                step: 0.1,
                method: crate::ode::Method::Rk4,
            },
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
