use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{Error, Result};
use crate::finite_width::{FiniteNetwork, TrainConfig, TrainProblem, TrainResult};
use crate::kernels::PointSet;
use crate::loss::{LossSpec, RegulariserSpec};
use crate::rng::{self, MeanEstimate};

use super::convolved::{sigma0_squared, ConvolvedActivation};

/// One-hidden-layer network with weights `W = m + ζ`, `ζ` i.i.d. N(0, 1).
/// Its mean output is the deterministic network with activation ψ and
/// parameters `m`, stored here as a [`FiniteNetwork`].
#[derive(Debug, Clone)]
pub struct StochasticShallowNet {
    net: FiniteNetwork,
    conv: ConvolvedActivation,
    sigma2: f64,
}

fn check_sphere(x: &[f64]) -> Result<()> {
    let n0 = x.len() as f64;
    let sq: f64 = x.iter().map(|v| v * v).sum();
    if (sq - n0).abs() > 1e-9 * n0 {
        return Err(Error::config(
            "stochastic network inputs must satisfy ||x|| = sqrt(n0)",
        ));
    }
    Ok(())
}

impl StochasticShallowNet {
    /// Means drawn i.i.d. N(0, 1) with the network seeding convention.
    pub fn init(n0: usize, width: usize, conv: ConvolvedActivation, seed: u64) -> Result<Self> {
        let net = FiniteNetwork::init(&[n0, width, 1], conv.as_activation(), seed)?;
        let sigma2 = sigma0_squared(&conv, conv.rule());
        Ok(Self { net, conv, sigma2 })
    }

    pub fn width(&self) -> usize {
        self.net.widths()[1]
    }

    /// Limit output variance σ².
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn convolved(&self) -> &ConvolvedActivation {
        &self.conv
    }

    pub fn mean_network(&self) -> &FiniteNetwork {
        &self.net
    }

    /// First-layer means (n × n0).
    pub fn m1(&self) -> DMatrixView<'_, f64> {
        self.net.weight(1)
    }

    /// Output-layer means (1 × n).
    pub fn m2(&self) -> DMatrixView<'_, f64> {
        self.net.weight(2)
    }

    /// `M²(x)`
    pub fn mean_output(&self, x: &[f64]) -> Result<f64> {
        check_sphere(x)?;
        Ok(self.net.forward(x)?[0])
    }

    /// Finite-width output variance at the current means.
    pub fn q2(&self, x: &[f64]) -> Result<f64> {
        let m2: Vec<f64> = self.m2().iter().copied().collect();
        Ok(empirical_q2(&self.conv, &self.m1().into_owned(), &m2, x, None)?.formula)
    }

    /// Finite-width output variance at the initial means.
    pub fn q2_initial(&self, x: &[f64]) -> Result<f64> {
        let m2: Vec<f64> = self.net.initial_weight(2).iter().copied().collect();
        Ok(empirical_q2(
            &self.conv,
            &self.net.initial_weight(1).into_owned(),
            &m2,
            x,
            None,
        )?
        .formula)
    }

    /// `KL(Q | P) = ½‖m − m(0)‖²`
    pub fn kl(&self) -> f64 {
        self.net.displacement()
    }

    /// Gradient flow on `E[(1 − yF)²] + (λ/2)‖m − m(0)‖²`.
    pub fn train_quadratic(
        &mut self,
        inputs: &PointSet,
        labels: &DVector<f64>,
        lambda: f64,
        config: TrainConfig,
    ) -> Result<TrainResult> {
        for i in 0..inputs.len() {
            check_sphere(inputs.point(i))?;
        }
        let labels = DMatrix::from_row_slice(1, labels.len(), labels.as_slice());
        let loss = LossSpec::QuadraticMargin {
            noise_variance: self.sigma2,
        };
        let reg = RegulariserSpec::Identity;
        let problem = TrainProblem {
            inputs,
            labels: &labels,
            loss: &loss,
            lambda,
            reg: &reg,
        };
        self.net.train(&problem, config)
    }
}

/// Output variance of a finite shallow stochastic network at one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Q2Estimate {
    /// `(1/n) Σ (1 + m2_j²) ξ(M¹_j) − (1/n) Σ m2_j² ψ(M¹_j)²`
    pub formula: f64,
    /// Monte Carlo mean of `(F − M²)²` over weight noise.
    pub monte_carlo: Option<MeanEstimate>,
}

/// Evaluates the finite-width variance formula and, when `mc = Some((samples,
/// seed))`, a Monte Carlo estimate that samples the network directly. On the
/// sphere the first-layer noise enters only through `ζ¹_j·x/√n0 ~ N(0, 1)`,
/// independently across hidden units, so that scalar is drawn directly.
pub fn empirical_q2(
    conv: &ConvolvedActivation,
    m1: &DMatrix<f64>,
    m2: &[f64],
    x: &[f64],
    mc: Option<(usize, u64)>,
) -> Result<Q2Estimate> {
    check_sphere(x)?;
    let n = m1.nrows();
    Error::check_dim("output means", n, m2.len())?;
    Error::check_dim("input dimension", m1.ncols(), x.len())?;
    if n == 0 {
        return Err(Error::config("width must be positive"));
    }
    let pre = m1 * DVector::from_column_slice(x) / (x.len() as f64).sqrt();
    let nf = n as f64;
    let mut first = 0.0;
    let mut second = 0.0;
    for (u, w) in pre.iter().zip(m2) {
        first += (1.0 + w * w) * conv.xi(*u);
        let p = conv.psi(*u);
        second += w * w * p * p;
    }
    let formula = (first - second) / nf;

    let monte_carlo = match mc {
        None => None,
        Some((samples, seed)) => {
            let base = conv.base();
            let mean = pre
                .iter()
                .zip(m2)
                .map(|(u, w)| w * conv.psi(*u))
                .sum::<f64>()
                / nf.sqrt();
            let pre = pre.as_slice();
            let [est] = rng::mc_means::<1, _>(seed, samples, |r| {
                let mut f = 0.0;
                for (u, w) in pre.iter().zip(m2) {
                    let eps = rng::normal(r);
                    let zeta = rng::normal(r);
                    f += (w + zeta) * base.phi(u + eps);
                }
                let d = f / nf.sqrt() - mean;
                [d * d]
            });
            Some(est)
        }
    };
    Ok(Q2Estimate {
        formula,
        monte_carlo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationSpec;
    use crate::pacbayes::convolve_activation;
    use crate::quadrature::QuadratureRule;

    #[test]
    fn identity_variance_formula_by_hand() {
        let conv = convolve_activation(ActivationSpec::identity(), QuadratureRule::default_rule());
        let m1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let x = [1.0, 1.0];
        let u = [1.0 / 2f64.sqrt(), 2.0 / 2f64.sqrt()];
        let m2 = [0.5, -1.0];
        let want = ((1.0 + 0.25) * (1.0 + u[0] * u[0]) + 2.0 * (1.0 + u[1] * u[1])
            - 0.25 * u[0] * u[0]
            - u[1] * u[1])
            / 2.0;
        let got = empirical_q2(&conv, &m1, &m2, &x, None).unwrap().formula;
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn rejects_off_sphere() {
        let conv = convolve_activation(ActivationSpec::identity(), QuadratureRule::default_rule());
        let m1 = DMatrix::zeros(2, 2);
        assert!(empirical_q2(&conv, &m1, &[0.0, 0.0], &[2.0, 0.0], None).is_err());
    }

    #[test]
    fn sigma2_set_at_construction() {
        let conv = convolve_activation(ActivationSpec::identity(), QuadratureRule::default_rule());
        let net = StochasticShallowNet::init(3, 8, conv, 1).unwrap();
        assert!((net.sigma2() - 3.0).abs() < 1e-12);
        assert_eq!(net.kl(), 0.0);
    }
}
