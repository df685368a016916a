//! Per-sample losses `ℓ̂(F, y)` and regulariser shapes `ρ`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::activation::ScalarFn;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    LeastSquares,
    QuadraticMargin,
    MisclassificationConvolved,
    Custom,
}

pub type LossValueFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type LossGradFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub struct CustomLoss {
    pub name: String,
    pub value: LossValueFn,
    pub grad: LossGradFn,
    pub convex: bool,
}

/// A non-negative loss of the network output `F ∈ R^q` and label `y`.
#[derive(Clone)]
pub enum LossSpec {
    /// `½‖F − y‖²`
    LeastSquares,
    /// Gaussian-convolved `(1 − yF)²`, i.e. `(1 − yM)² + σ²` for binary `y`.
    /// The additive `σ²` does not affect gradients.
    QuadraticMargin {
        noise_variance: f64,
    },
    /// Gaussian-convolved 0-1 loss, `½(1 − erf(yM/(σ√2)))`.
    MisclassificationConvolved {
        sigma: f64,
    },
    Custom(CustomLoss),
}

impl fmt::Debug for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::LeastSquares => write!(f, "LeastSquares"),
            LossSpec::QuadraticMargin { noise_variance } => {
                write!(f, "QuadraticMargin {{ noise_variance: {noise_variance} }}")
            }
            LossSpec::MisclassificationConvolved { sigma } => {
                write!(f, "MisclassificationConvolved {{ sigma: {sigma} }}")
            }
            LossSpec::Custom(c) => write!(f, "Custom({})", c.name),
        }
    }
}

impl LossSpec {
    pub fn kind(&self) -> LossKind {
        match self {
            LossSpec::LeastSquares => LossKind::LeastSquares,
            LossSpec::QuadraticMargin { .. } => LossKind::QuadraticMargin,
            LossSpec::MisclassificationConvolved { .. } => LossKind::MisclassificationConvolved,
            LossSpec::Custom(_) => LossKind::Custom,
        }
    }

    pub fn is_convex(&self) -> bool {
        match self {
            LossSpec::LeastSquares | LossSpec::QuadraticMargin { .. } => true,
            LossSpec::MisclassificationConvolved { .. } => false,
            LossSpec::Custom(c) => c.convex,
        }
    }

    /// Output dimension the loss expects, if fixed.
    pub fn fixed_output_dim(&self) -> Option<usize> {
        match self {
            LossSpec::QuadraticMargin { .. } | LossSpec::MisclassificationConvolved { .. } => {
                Some(1)
            }
            _ => None,
        }
    }

    pub fn value(&self, f: &[f64], y: &[f64]) -> f64 {
        match self {
            LossSpec::LeastSquares => {
                0.5 * f.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            }
            LossSpec::QuadraticMargin { noise_variance } => {
                let r = 1.0 - y[0] * f[0];
                r * r + noise_variance
            }
            LossSpec::MisclassificationConvolved { sigma } => {
                0.5 * libm::erfc(y[0] * f[0] / (sigma * 2f64.sqrt()))
            }
            LossSpec::Custom(c) => (c.value)(f, y),
        }
    }

    /// Writes `∂ℓ̂/∂F` into `out`.
    pub fn grad(&self, f: &[f64], y: &[f64], out: &mut [f64]) {
        match self {
            LossSpec::LeastSquares => {
                for ((o, a), b) in out.iter_mut().zip(f).zip(y) {
                    *o = a - b;
                }
            }
            LossSpec::QuadraticMargin { .. } => {
                out[0] = -2.0 * y[0] * (1.0 - y[0] * f[0]);
            }
            LossSpec::MisclassificationConvolved { sigma } => {
                let u = y[0] * f[0] / sigma;
                out[0] = -y[0] * (-0.5 * u * u).exp() / (sigma * (2.0 * PI).sqrt());
            }
            LossSpec::Custom(c) => (c.grad)(f, y, out),
        }
    }

    /// Largest scaled central-difference mismatch of `grad` over `probes` random
    /// points `F ~ N(0, 4)` with labels drawn uniformly from {±1}.
    pub fn grad_mismatch(&self, q: usize, probes: usize, seed: u64) -> f64 {
        let mut r = rng::stream(seed, 0);
        let h = 1e-6;
        let mut worst = 0.0f64;
        let mut g = vec![0.0; q];
        for _ in 0..probes {
            let f: Vec<f64> = (0..q).map(|_| 2.0 * rng::normal(&mut r)).collect();
            let y: Vec<f64> = (0..q)
                .map(|_| if r.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            self.grad(&f, &y, &mut g);
            for k in 0..q {
                let mut fp = f.clone();
                let mut fm = f.clone();
                fp[k] += h;
                fm[k] -= h;
                let fd = (self.value(&fp, &y) - self.value(&fm, &y)) / (2.0 * h);
                worst = worst.max((fd - g[k]).abs() / g[k].abs().max(1.0));
            }
        }
        worst
    }
}

/// `ρ` in `R(W) = ρ(½‖W − W(0)‖²_F)`.
#[derive(Clone)]
pub enum RegulariserSpec {
    Identity,
    Custom {
        name: String,
        rho: ScalarFn,
        rho_prime: ScalarFn,
    },
}

impl fmt::Debug for RegulariserSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RegulariserSpec({})", self.name())
    }
}

impl RegulariserSpec {
    /// `ρ(d) = log(1 + d)`.
    pub fn log1p() -> Self {
        RegulariserSpec::Custom {
            name: "log1p".into(),
            rho: Arc::new(|d: f64| d.ln_1p()),
            rho_prime: Arc::new(|d: f64| 1.0 / (1.0 + d)),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            RegulariserSpec::Identity => "identity",
            RegulariserSpec::Custom { name, .. } => name,
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, RegulariserSpec::Identity)
    }

    #[inline]
    pub fn rho(&self, d: f64) -> f64 {
        match self {
            RegulariserSpec::Identity => d,
            RegulariserSpec::Custom { rho, .. } => rho(d),
        }
    }

    #[inline]
    pub fn rho_prime(&self, d: f64) -> f64 {
        match self {
            RegulariserSpec::Identity => 1.0,
            RegulariserSpec::Custom { rho_prime, .. } => rho_prime(d),
        }
    }

    /// Checks `ρ(0) = 0`, strict increase on a probe grid and the derivative.
    pub fn validate(&self) -> Result<()> {
        if self.rho(0.0) != 0.0 {
            return Err(Error::config(format!(
                "regulariser '{}': rho(0) != 0",
                self.name()
            )));
        }
        let h = 1e-6;
        for i in 0..100 {
            let d = 10.0 * i as f64 / 100.0;
            if self.rho(d + h) <= self.rho(d) {
                return Err(Error::config(format!(
                    "regulariser '{}' is not strictly increasing at {d}",
                    self.name()
                )));
            }
            let lo = (d - h).max(0.0);
            let fd = (self.rho(d + h) - self.rho(lo)) / (d + h - lo);
            let exact = self.rho_prime(d);
            let tol = if d == 0.0 { 1e-4 } else { 1e-5 };
            if (fd - exact).abs() > tol * exact.abs().max(1.0) {
                return Err(Error::config(format!(
                    "regulariser '{}': rho' mismatch at {d}: {exact} vs {fd}",
                    self.name()
                )));
            }
        }
        Ok(())
    }
}
