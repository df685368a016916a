//! Closed-form least-squares dynamics in the infinite-width limit.
//!
//! With `Θ̃ = Θ̄/m` and `V_λ = λI + Θ̃` the on-sample outputs obey the linear ODE
//! `∂t F̃ = −Θ̃(F̃ − Ỹ) − λ(F̃ − F̃(0))`, solved exactly in the eigenbasis of Θ̃.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{GramMatrix, Normalisation};
use crate::linalg::{self, SymEigen};
use crate::par;
use crate::quadrature::integrate_adaptive;

/// Eigenvalues of Θ̃ below this fraction of the largest are treated as null.
pub const NULL_TOLERANCE: f64 = 1e-12;

/// Absolute tolerance of the off-sample time integral.
pub const OFF_SAMPLE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct LsqSystem {
    theta_tilde: DMatrix<f64>,
    f0: DVector<f64>,
    y: DVector<f64>,
    lambda: f64,
    eigen: SymEigen,
    /// Eigenvalues of Θ̃ clamped to zero below the null tolerance.
    theta: Vec<f64>,
    /// Eigen-coordinates of `Ỹ − F̃(0)`.
    gap: DVector<f64>,
}

/// `F̃(∞)` together with the eigen-directions that never move (λ = 0 only).
#[derive(Debug, Clone, PartialEq)]
pub struct Limit {
    pub value: DVector<f64>,
    /// Indices (into the ascending spectrum) of null directions frozen at `F̃(0)`.
    pub frozen: Vec<usize>,
}

impl LsqSystem {
    /// `theta_tilde` must carry per-sample normalisation.
    pub fn new(
        theta_tilde: &GramMatrix,
        f0: DVector<f64>,
        y: DVector<f64>,
        lambda: f64,
    ) -> Result<Self> {
        if theta_tilde.normalisation != Normalisation::PerSample {
            return Err(Error::config(
                "least-squares system needs the per-sample Gram Θ̄/m",
            ));
        }
        Self::from_matrix(theta_tilde.values.clone(), f0, y, lambda)
    }

    /// As [`new`](Self::new) with `theta_tilde` already divided by m.
    pub fn from_matrix(
        theta_tilde: DMatrix<f64>,
        f0: DVector<f64>,
        y: DVector<f64>,
        lambda: f64,
    ) -> Result<Self> {
        let m = theta_tilde.nrows();
        Error::check_dim("theta_tilde columns", m, theta_tilde.ncols())?;
        Error::check_dim("initial outputs", m, f0.len())?;
        Error::check_dim("labels", m, y.len())?;
        let finite = theta_tilde
            .iter()
            .chain(f0.iter())
            .chain(y.iter())
            .all(|v| v.is_finite());
        if !finite || !lambda.is_finite() {
            return Err(Error::config("least-squares system has non-finite inputs"));
        }
        if lambda < 0.0 {
            return Err(Error::config(format!("lambda must be >= 0, got {lambda}")));
        }
        GramMatrix {
            values: theta_tilde.clone(),
            normalisation: Normalisation::PerSample,
        }
        .validate()
        .map_err(|e| Error::config(e.to_string()))?;
        let eigen = linalg::sym_eigen(&theta_tilde);
        let top = eigen.values.last().copied().unwrap_or(0.0).max(0.0);
        let theta = eigen
            .values
            .iter()
            .map(|&v| if v <= NULL_TOLERANCE * top { 0.0 } else { v })
            .collect();
        let gap = eigen.coords(&(&y - &f0));
        Ok(Self {
            theta_tilde,
            f0,
            y,
            lambda,
            eigen,
            theta,
            gap,
        })
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn theta_tilde(&self) -> &DMatrix<f64> {
        &self.theta_tilde
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.f0
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.y
    }

    /// Eigenpairs of Θ̃ (ascending), shared with `V_λ`.
    pub fn theta_eigen(&self) -> &SymEigen {
        &self.eigen
    }

    fn combine(&self, coeff: impl Fn(usize) -> f64) -> DVector<f64> {
        let scaled =
            DVector::from_iterator(self.len(), (0..self.len()).map(|i| self.gap[i] * coeff(i)));
        &self.f0 + &self.eigen.vectors * scaled
    }

    /// `F̃(t) = F̃(0) + (I − e^{−tV_λ}) V_λ^{−1} Θ̃ (Ỹ − F̃(0))`
    pub fn trajectory_at(&self, t: f64) -> Result<DVector<f64>> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::config(format!(
                "time must be finite and >= 0, got {t}"
            )));
        }
        Ok(self.combine(|i| {
            let th = self.theta[i];
            if th == 0.0 {
                return 0.0;
            }
            let v = self.lambda + th;
            -th * (-t * v).exp_m1() / v
        }))
    }

    /// `F̃(∞) = (I − V_λ^{−1}Θ̃) F̃(0) + V_λ^{−1}Θ̃ Ỹ`. For λ = 0 the null space
    /// of Θ̃ stays at `F̃(0)` and is listed in [`Limit::frozen`].
    pub fn limit_infinity(&self) -> Limit {
        let frozen = if self.lambda == 0.0 {
            (0..self.len()).filter(|&i| self.theta[i] == 0.0).collect()
        } else {
            Vec::new()
        };
        let value = self.combine(|i| {
            let th = self.theta[i];
            if th == 0.0 {
                0.0
            } else {
                th / (self.lambda + th)
            }
        });
        Limit { value, frozen }
    }

    /// Eigenpairs of `V_λ = λI + Θ̃`, eigenvalues ascending.
    pub fn v_lambda_spectrum(&self) -> SymEigen {
        SymEigen {
            values: self.eigen.values.iter().map(|v| v + self.lambda).collect(),
            vectors: self.eigen.vectors.clone(),
        }
    }

    /// `τ(x; t) = ⟨Θ̄(x, X)(F(X; t) − Y)⟩_s` for a row already divided by m.
    pub fn tau(&self, cross_row: &DVector<f64>, t: f64) -> Result<f64> {
        Ok(cross_row.dot(&(self.trajectory_at(t)? - &self.y)))
    }

    /// Output at an off-sample point by variation of constants,
    /// `F(x; t) = F(x; 0) − ∫₀ᵗ e^{−λ(t−s)} τ(x; s) ds`.
    pub fn off_sample(&self, cross_row: &DVector<f64>, f0_probe: f64, t: f64) -> Result<f64> {
        Error::check_dim("cross kernel row", self.len(), cross_row.len())?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::config(format!(
                "time must be finite and >= 0, got {t}"
            )));
        }
        if !f0_probe.is_finite() || cross_row.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("off-sample inputs must be finite"));
        }
        if t == 0.0 {
            return Ok(f0_probe);
        }
        // τ(s) expanded once in the eigenbasis: Σ_i w_i e_i(s)
        let proj = self.eigen.vectors.tr_mul(cross_row);
        let resid0 = self.eigen.coords(&(&self.f0 - &self.y));
        let lambda = self.lambda;
        let theta = &self.theta;
        let integrand = |s: f64| {
            let decay = (-lambda * (t - s)).exp();
            let tau: f64 = (0..theta.len())
                .map(|i| {
                    let th = theta[i];
                    let v = lambda + th;
                    let keep = if th == 0.0 {
                        1.0
                    } else {
                        1.0 + th * (-s * v).exp_m1() / v
                    };
                    proj[i] * resid0[i] * keep
                })
                .sum();
            decay * tau
        };
        Ok(f0_probe - integrate_adaptive(integrand, 0.0, t, OFF_SAMPLE_TOLERANCE)?)
    }

    /// [`off_sample`](Self::off_sample) for every row of `cross` (p × m, divided by m).
    pub fn off_sample_many(
        &self,
        cross: &DMatrix<f64>,
        f0_probe: &DVector<f64>,
        t: f64,
    ) -> Result<DVector<f64>> {
        Error::check_dim("cross kernel columns", self.len(), cross.ncols())?;
        Error::check_dim("probe initial outputs", cross.nrows(), f0_probe.len())?;
        let rows: Vec<usize> = (0..cross.nrows()).collect();
        let out = par::try_map_slice(&rows, |&r| {
            let row = cross.row(r).transpose();
            self.off_sample(&row, f0_probe[r], t)
        })?;
        Ok(DVector::from_vec(out))
    }
}
