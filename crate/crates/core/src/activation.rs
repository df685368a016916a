use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Relu,
    Erf,
    Tanh,
    Identity,
    Custom,
}

/// How the Gaussian expectations in the kernel recursion are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelMode {
    /// Closed forms (arc-cosine for relu, arcsine for erf, identity).
    Analytic,
    Quadrature,
}

/// An activation together with its derivative and the metadata the kernel and
/// verification code needs.
#[derive(Clone)]
pub struct ActivationSpec {
    kind: ActivationKind,
    name: String,
    custom: Option<(ScalarFn, ScalarFn)>,
    /// Lipschitz constant γ_φ, when known.
    pub lipschitz: Option<f64>,
    /// Bound β_φ on |φ''|, when φ is smooth.
    pub smoothness: Option<f64>,
    kernel_mode: KernelMode,
    /// Points where φ or φ̇ is not smooth. Quadrature splits there.
    breakpoints: Vec<f64>,
}

impl fmt::Debug for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ActivationSpec")
            .field("kind", &self.kind)
            .field("name", &self.name)
            .field("kernel_mode", &self.kernel_mode)
            .field("breakpoints", &self.breakpoints)
            .finish()
    }
}

impl ActivationSpec {
    fn builtin(kind: ActivationKind, lipschitz: f64, smoothness: Option<f64>) -> Self {
        let (name, breakpoints) = match kind {
            ActivationKind::Relu => ("relu", vec![0.0]),
            ActivationKind::Erf => ("erf", vec![]),
            ActivationKind::Tanh => ("tanh", vec![]),
            ActivationKind::Identity => ("identity", vec![]),
            ActivationKind::Custom => unreachable!(),
        };
        let kernel_mode = match kind {
            ActivationKind::Tanh => KernelMode::Quadrature,
            _ => KernelMode::Analytic,
        };
        Self {
            kind,
            name: name.to_string(),
            custom: None,
            lipschitz: Some(lipschitz),
            smoothness,
            kernel_mode,
            breakpoints,
        }
    }

    pub fn relu() -> Self {
        Self::builtin(ActivationKind::Relu, 1.0, None)
    }

    pub fn erf() -> Self {
        // sup |erf''| = (4/√π)·(2e)^{-1/2}
        Self::builtin(
            ActivationKind::Erf,
            2.0 / PI.sqrt(),
            Some(4.0 / PI.sqrt() / (2.0 * std::f64::consts::E).sqrt()),
        )
    }

    pub fn tanh() -> Self {
        Self::builtin(ActivationKind::Tanh, 1.0, Some(4.0 / (3.0 * 3f64.sqrt())))
    }

    pub fn identity() -> Self {
        Self::builtin(ActivationKind::Identity, 1.0, Some(0.0))
    }

    /// A user-supplied activation. Always evaluated by quadrature.
    pub fn custom(name: impl Into<String>, phi: ScalarFn, phi_dot: ScalarFn) -> Self {
        Self {
            kind: ActivationKind::Custom,
            name: name.into(),
            custom: Some((phi, phi_dot)),
            lipschitz: None,
            smoothness: None,
            kernel_mode: KernelMode::Quadrature,
            breakpoints: Vec::new(),
        }
    }

    /// The sign function (sign(0) = +1) with zero derivative almost everywhere.
    pub fn sign() -> Self {
        Self::custom(
            "sign",
            Arc::new(|x| if x >= 0.0 { 1.0 } else { -1.0 }),
            Arc::new(|_| 0.0),
        )
        .with_breakpoints(vec![0.0])
    }

    pub fn with_breakpoints(mut self, breakpoints: Vec<f64>) -> Self {
        self.breakpoints = breakpoints;
        self
    }

    pub fn with_constants(mut self, lipschitz: Option<f64>, smoothness: Option<f64>) -> Self {
        self.lipschitz = lipschitz;
        self.smoothness = smoothness;
        self
    }

    pub fn with_kernel_mode(mut self, mode: KernelMode) -> Result<Self> {
        if mode == KernelMode::Analytic && !self.has_analytic_kernel() {
            return Err(Error::config(format!(
                "analytic kernel mode is not available for activation '{}'",
                self.name
            )));
        }
        self.kernel_mode = mode;
        Ok(self)
    }

    pub fn has_analytic_kernel(&self) -> bool {
        matches!(
            self.kind,
            ActivationKind::Relu | ActivationKind::Erf | ActivationKind::Identity
        )
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kernel_mode(&self) -> KernelMode {
        self.kernel_mode
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Whether the activation is known to be β-smooth.
    pub fn is_smooth(&self) -> bool {
        self.smoothness.is_some()
    }

    #[inline]
    pub fn phi(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::Erf => libm::erf(x),
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Identity => x,
            ActivationKind::Custom => (self.custom.as_ref().unwrap().0)(x),
        }
    }

    #[inline]
    pub fn phi_dot(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Erf => 2.0 / PI.sqrt() * (-x * x).exp(),
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Identity => 1.0,
            ActivationKind::Custom => (self.custom.as_ref().unwrap().1)(x),
        }
    }

    /// Largest scaled central-difference mismatch between `phi_dot` and `phi`,
    /// `|fd − φ̇| / max(|φ̇|, 1)`, over `probes` evenly spaced points in [-5, 5].
    /// Probes within 1e-3 of a breakpoint are skipped.
    pub fn derivative_mismatch(&self, probes: usize) -> f64 {
        let h = 1e-6;
        let mut worst = 0.0f64;
        for i in 0..probes {
            let x = -5.0 + 10.0 * (i as f64 + 0.5) / probes as f64;
            if self.breakpoints.iter().any(|b| (x - b).abs() < 1e-3) {
                continue;
            }
            let fd = (self.phi(x + h) - self.phi(x - h)) / (2.0 * h);
            let d = self.phi_dot(x);
            worst = worst.max((fd - d).abs() / d.abs().max(1.0));
        }
        worst
    }
}

impl FromStr for ActivationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Self::relu()),
            "erf" => Ok(Self::erf()),
            "tanh" => Ok(Self::tanh()),
            "identity" | "linear" => Ok(Self::identity()),
            "sign" => Ok(Self::sign()),
            other => Err(Error::config(format!("unknown activation '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        for act in [
            ActivationSpec::relu(),
            ActivationSpec::erf(),
            ActivationSpec::tanh(),
            ActivationSpec::identity(),
        ] {
            let err = act.derivative_mismatch(100);
            assert!(err <= 1e-5, "{}: {err}", act.name());
        }
    }

    #[test]
    fn analytic_mode_restricted() {
        assert!(ActivationSpec::tanh()
            .with_kernel_mode(KernelMode::Analytic)
            .is_err());
        assert!(ActivationSpec::sign()
            .with_kernel_mode(KernelMode::Analytic)
            .is_err());
        assert!(ActivationSpec::relu()
            .with_kernel_mode(KernelMode::Quadrature)
            .is_ok());
    }

    #[test]
    fn smoothness_flags() {
        assert!(!ActivationSpec::relu().is_smooth());
        assert!(ActivationSpec::erf().is_smooth());
        assert!(ActivationSpec::tanh().is_smooth());
    }

    #[test]
    fn parse_names() {
        assert_eq!(
            "ReLU".parse::<ActivationSpec>().unwrap().kind(),
            ActivationKind::Relu
        );
        assert!("softplus".parse::<ActivationSpec>().is_err());
    }
}
