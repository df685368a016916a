use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::activation::{ActivationKind, ActivationSpec, KernelMode};
use crate::error::{Error, Result};
use crate::kernels::{bivariate_expectation, Cov2, GramMatrix, Integrand, PointSet};
use crate::par;
use crate::quadrature::{normal_expectation_piecewise, QuadratureRule};

/// `ψ(u) = E[φ(ζ + u)]`, `ξ(u) = E[φ(ζ + u)²]` and `ψ̇`, with `ζ ~ N(0, 1)`.
///
/// Relu, erf and identity use closed forms for ψ and ψ̇ (and ξ where one
/// exists) when the base activation is in analytic mode; everything else is
/// evaluated by quadrature. `ψ̇(u) = E[ζ φ(ζ + u)]`, which also covers
/// activations with jumps.
#[derive(Clone)]
pub struct ConvolvedActivation {
    inner: Arc<Inner>,
}

struct Inner {
    base: ActivationSpec,
    rule: QuadratureRule,
    closed: bool,
}

impl fmt::Debug for ConvolvedActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConvolvedActivation")
            .field("base", &self.inner.base)
            .field("order", &self.inner.rule.order)
            .field("closed_form", &self.inner.closed)
            .finish()
    }
}

fn std_normal_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u / 2f64.sqrt())
}

fn std_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

pub fn convolve_activation(base: ActivationSpec, rule: &QuadratureRule) -> ConvolvedActivation {
    ConvolvedActivation::new(base, rule)
}

impl ConvolvedActivation {
    pub fn new(base: ActivationSpec, rule: &QuadratureRule) -> Self {
        let closed = base.kernel_mode() == KernelMode::Analytic && base.has_analytic_kernel();
        Self {
            inner: Arc::new(Inner {
                base,
                rule: rule.clone(),
                closed,
            }),
        }
    }

    pub fn base(&self) -> &ActivationSpec {
        &self.inner.base
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.inner.rule
    }

    pub fn uses_closed_form(&self) -> bool {
        self.inner.closed
    }

    /// `E[h(ζ)]` with panels split where `φ(ζ + u)` has kinks.
    fn expect_shifted(&self, u: f64, h: impl Fn(f64) -> f64) -> f64 {
        let base = &self.inner.base;
        if base.breakpoints().is_empty() {
            self.inner.rule.expect(h)
        } else {
            let breaks: Vec<f64> = base.breakpoints().iter().map(|b| b - u).collect();
            normal_expectation_piecewise(h, &breaks)
        }
    }

    pub fn psi_quadrature(&self, u: f64) -> f64 {
        let b = &self.inner.base;
        self.expect_shifted(u, |z| b.phi(z + u))
    }

    pub fn psi_dot_quadrature(&self, u: f64) -> f64 {
        let b = &self.inner.base;
        self.expect_shifted(u, |z| z * b.phi(z + u))
    }

    pub fn xi_quadrature(&self, u: f64) -> f64 {
        let b = &self.inner.base;
        self.expect_shifted(u, |z| {
            let p = b.phi(z + u);
            p * p
        })
    }

    pub fn psi(&self, u: f64) -> f64 {
        if self.inner.closed {
            match self.inner.base.kind() {
                ActivationKind::Identity => return u,
                ActivationKind::Relu => return u * std_normal_cdf(u) + std_normal_pdf(u),
                ActivationKind::Erf => return libm::erf(u / 3f64.sqrt()),
                _ => {}
            }
        }
        self.psi_quadrature(u)
    }

    pub fn psi_dot(&self, u: f64) -> f64 {
        if self.inner.closed {
            match self.inner.base.kind() {
                ActivationKind::Identity => return 1.0,
                ActivationKind::Relu => return std_normal_cdf(u),
                ActivationKind::Erf => return 2.0 / (3.0 * PI).sqrt() * (-u * u / 3.0).exp(),
                _ => {}
            }
        }
        self.psi_dot_quadrature(u)
    }

    pub fn xi(&self, u: f64) -> f64 {
        if self.inner.closed {
            match self.inner.base.kind() {
                ActivationKind::Identity => return 1.0 + u * u,
                ActivationKind::Relu => {
                    return (u * u + 1.0) * std_normal_cdf(u) + u * std_normal_pdf(u)
                }
                _ => {}
            }
        }
        self.xi_quadrature(u)
    }

    /// ψ as a smooth activation, for use as the deterministic mean network.
    pub fn as_activation(&self) -> ActivationSpec {
        let a = self.clone();
        let b = self.clone();
        ActivationSpec::custom(
            format!("convolved-{}", self.inner.base.name()),
            Arc::new(move |u| a.psi(u)),
            Arc::new(move |u| b.psi_dot(u)),
        )
        // |ψ''(u)| = |E[ζ φ̇(ζ + u)]| ≤ γ_φ E|ζ|
        .with_constants(
            self.inner.base.lipschitz,
            self.inner.base.lipschitz.map(|g| g * (2.0 / PI).sqrt()),
        )
    }
}

/// `σ² = 2E[ξ(ζ)] − E[ψ(ζ)²]`, the wide-limit output variance on the sphere.
pub fn sigma0_squared(conv: &ConvolvedActivation, rule: &QuadratureRule) -> f64 {
    let xi = rule.expect(|z| conv.xi(z));
    let psi2 = rule.expect(|z| {
        let p = conv.psi(z);
        p * p
    });
    2.0 * xi - psi2
}

/// `Θ̄(x, x′) = E[ψ(ζ)ψ(ζ′)] + (x·x′/n0) E[ψ̇(ζ)ψ̇(ζ′)]` with unit variances and
/// correlation `x·x′/n0`.
pub fn shallow_ntk(
    pts: &PointSet,
    conv: &ConvolvedActivation,
    rule: &QuadratureRule,
) -> Result<GramMatrix> {
    if !pts.lies_on_sphere() {
        return Err(Error::config(
            "shallow NTK needs inputs on the sphere of radius sqrt(n0)",
        ));
    }
    let n = pts.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let psi = |u: f64| conv.psi(u);
    let psi_dot = |u: f64| conv.psi_dot(u);
    let values = par::try_map_slice(&pairs, |&(i, j)| {
        let c = pts.scaled_dot(i, j);
        let cov = Cov2::new(1.0, 1.0, c.clamp(-1.0, 1.0));
        let s = bivariate_expectation(Integrand::smooth(&psi), Integrand::smooth(&psi), cov, rule)?;
        let d = bivariate_expectation(
            Integrand::smooth(&psi_dot),
            Integrand::smooth(&psi_dot),
            cov,
            rule,
        )?;
        Ok(s + c * d)
    })?;
    let mut out = DMatrix::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(values) {
        out[(i, j)] = v;
        out[(j, i)] = v;
    }
    Ok(GramMatrix::raw(out))
}
