//! `regntk.config/v1`: one TOML file per run.

use std::fmt;
use std::path::{Path, PathBuf};

use regntk::ode::Method;
use regntk::{ActivationSpec, KernelMode, LossSpec, RegulariserSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SCHEMA: &str = "regntk.config/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Kernel,
    Flow,
    Lsq,
    Finite,
    Pacbayes,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Experiment::Kernel => "kernel",
            Experiment::Flow => "flow",
            Experiment::Lsq => "lsq",
            Experiment::Finite => "finite",
            Experiment::Pacbayes => "pacbayes",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    LeastSquares,
    QuadraticMargin,
    Misclassification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegName {
    Identity,
    Log1p,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelModeName {
    Analytic,
    Quadrature,
}

/// Initial function-space outputs for the kernel-level experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialOutputs {
    Zero,
    /// A draw from the Gaussian-process limit, seeded by `seed`.
    Gp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Labels {
    Scalar(Vec<f64>),
    Vector(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Labels>,
    /// CSV file, one row per sample, label in the last column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub has_header: bool,
    /// Off-sample points evaluated alongside the sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<Vec<Vec<f64>>>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
    #[serde(default)]
    pub format: Format,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,

    #[serde(default = "default_activation")]
    pub activation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_mode: Option<KernelModeName>,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_loss")]
    pub loss: LossName,
    /// Noise scale of the misclassification loss.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default = "default_reg")]
    pub regulariser: RegName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, rename = "T", skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<MethodName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialOutputs>,
    /// Evaluation times of the closed-form solutions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub include_limit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    /// Seeds averaged over in the finite-width sweep; defaults to `[seed]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_samples: Option<usize>,

    pub dataset: DatasetConfig,
}

fn default_order() -> usize {
    64
}
fn default_activation() -> String {
    "erf".into()
}
fn default_depth() -> usize {
    2
}
fn default_loss() -> LossName {
    LossName::LeastSquares
}
fn default_reg() -> RegName {
    RegName::Identity
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(p), Some(dir)) = (cfg.dataset.path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Canonical TOML used for the echo and the config hash.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn experiment(&self) -> Experiment {
        self.experiment.expect("validated")
    }

    /// Checks every field the selected experiment reads and rejects fields it
    /// would silently ignore.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.schema != SCHEMA {
            return bad(format!(
                "unsupported schema '{}', expected '{SCHEMA}'",
                self.schema
            ));
        }
        let Some(exp) = self.experiment else {
            return bad("no experiment selected".into());
        };
        if self.quadrature_order == 0 || self.quadrature_order > 512 {
            return bad(format!(
                "quadrature_order must lie in 1..=512, got {}",
                self.quadrature_order
            ));
        }
        self.activation_spec()?;
        if self.depth == 0 {
            return bad("depth must be >= 1".into());
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("T", self.horizon),
            ("step", self.step),
            ("sigma", self.sigma),
        ] {
            if let Some(v) = v {
                if !v.is_finite() || v < 0.0 {
                    return bad(format!("{name} must be finite and >= 0, got {v}"));
                }
            }
        }
        if let Some(s) = self.step {
            if s == 0.0 {
                return bad("step must be > 0".into());
            }
        }
        if let Some(ts) = &self.times {
            if ts.iter().any(|t| !t.is_finite() || *t < 0.0) {
                return bad("times must be finite and >= 0".into());
            }
        }
        let needs = |name: &str, present: bool| -> CliResult<()> {
            if present {
                Ok(())
            } else {
                Err(CliError::Config(format!(
                    "experiment '{exp}' needs '{name}'"
                )))
            }
        };
        let forbids = |name: &str, present: bool| -> CliResult<()> {
            if present {
                Err(CliError::Config(format!(
                    "experiment '{exp}' does not use '{name}'"
                )))
            } else {
                Ok(())
            }
        };
        match exp {
            Experiment::Kernel => {
                forbids("lambda", self.lambda.is_some())?;
                forbids("seeds", self.seeds.is_some())?;
                forbids("T", self.horizon.is_some())?;
                forbids("widths", self.widths.is_some())?;
            }
            Experiment::Flow => {
                needs("lambda", self.lambda.is_some())?;
                needs("T", self.horizon.is_some())?;
                forbids("widths", self.widths.is_some())?;
                forbids("times", self.times.is_some())?;
            }
            Experiment::Lsq => {
                needs("lambda", self.lambda.is_some())?;
                needs("times", self.times.is_some() || self.include_limit)?;
                if self.loss != LossName::LeastSquares {
                    return bad("experiment 'lsq' is least squares only".into());
                }
                forbids("widths", self.widths.is_some())?;
                forbids("regulariser = log1p", self.regulariser != RegName::Identity)?;
            }
            Experiment::Finite => {
                needs("lambda", self.lambda.is_some())?;
                needs("T", self.horizon.is_some())?;
                needs("widths", self.widths.is_some())?;
                if self.depth < 2 {
                    return bad("experiment 'finite' needs depth >= 2".into());
                }
                forbids("dataset.probes", self.dataset.probes.is_some())?;
                if self.seeds.as_ref().is_some_and(Vec::is_empty) {
                    return bad("seeds must not be empty".into());
                }
            }
            Experiment::Pacbayes => {
                needs("eta", self.eta.is_some())?;
                needs("delta", self.delta.is_some())?;
                needs("T", self.horizon.is_some())?;
                forbids("lambda (set eta instead)", self.lambda.is_some())?;
                forbids("depth other than 2", self.depth != 2)?;
                if let Some(e) = self.eta {
                    if !(e.is_finite() && e > 0.0) {
                        return bad(format!("eta must be positive, got {e}"));
                    }
                }
                if let Some(d) = self.delta {
                    if !(d > 0.0 && d < 1.0) {
                        return bad(format!("delta must lie in (0, 1), got {d}"));
                    }
                }
            }
        }
        if self.loss == LossName::Misclassification {
            needs("sigma", self.sigma.is_some_and(|s| s > 0.0))?;
        }
        let d = &self.dataset;
        match (&d.points, &d.path) {
            (Some(_), Some(_)) => {
                return bad("dataset: give either points or path, not both".into())
            }
            (None, None) => return bad("dataset: points or path required".into()),
            (Some(_), None) if d.labels.is_none() => {
                return bad("dataset: inline points need labels".into())
            }
            (None, Some(_)) if d.labels.is_some() => {
                return bad("dataset: labels come from the last CSV column".into())
            }
            _ => {}
        }
        Ok(())
    }

    pub fn activation_spec(&self) -> CliResult<ActivationSpec> {
        let act: ActivationSpec = self.activation.parse().map_err(CliError::from)?;
        match self.kernel_mode {
            None => Ok(act),
            Some(KernelModeName::Analytic) => Ok(act.with_kernel_mode(KernelMode::Analytic)?),
            Some(KernelModeName::Quadrature) => Ok(act.with_kernel_mode(KernelMode::Quadrature)?),
        }
    }

    pub fn loss_spec(&self) -> LossSpec {
        match self.loss {
            LossName::LeastSquares => LossSpec::LeastSquares,
            LossName::QuadraticMargin => LossSpec::QuadraticMargin {
                noise_variance: self.sigma.map_or(0.0, |s| s * s),
            },
            LossName::Misclassification => LossSpec::MisclassificationConvolved {
                sigma: self.sigma.unwrap_or(1.0),
            },
        }
    }

    pub fn reg_spec(&self) -> RegulariserSpec {
        match self.regulariser {
            RegName::Identity => RegulariserSpec::Identity,
            RegName::Log1p => RegulariserSpec::log1p(),
        }
    }

    pub fn method_or(&self, default: Method) -> Method {
        match self.method {
            Some(MethodName::Euler) => Method::Euler,
            Some(MethodName::Rk4) => Method::Rk4,
            None => default,
        }
    }
}
