//! Regularised kernel gradient flow in function space.
//!
//! State is the network output on the training inputs and on extra probe
//! inputs, plus the weight displacement `D = ½‖ΔW‖²_F`, which closes the system
//! for a general regulariser `λρ(D)`:
//!
//! ```text
//! ∂t F_k(x) = −⟨Θ̄(x, X) ∂ℓ̂/∂F_k⟩_s − λρ′(D) ΔF_k(x)
//! ∂t D      = −Σ_k ⟨ΔF_k ∂ℓ̂/∂F_k⟩_s − 2λρ′(D) D
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView};

use crate::activation::ActivationSpec;
use crate::error::{Error, Result};
use crate::kernels::{kernel_stack, PointSet};
use crate::linalg;
use crate::loss::{LossSpec, RegulariserSpec};
use crate::ode::{uniform_grid, Method, Stepper};
use crate::quadrature::QuadratureRule;

/// Outputs at one instant. Columns index points, rows index output components.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    /// q × m
    pub f_sample: DMatrix<f64>,
    /// q × p
    pub f_probe: DMatrix<f64>,
    pub f0_sample: Arc<DMatrix<f64>>,
    pub f0_probe: Arc<DMatrix<f64>>,
    pub d: f64,
}

impl FlowState {
    pub fn initial(f0_sample: DMatrix<f64>, f0_probe: DMatrix<f64>) -> Self {
        Self {
            t: 0.0,
            f_sample: f0_sample.clone(),
            f_probe: f0_probe.clone(),
            f0_sample: Arc::new(f0_sample),
            f0_probe: Arc::new(f0_probe),
            d: 0.0,
        }
    }

    pub fn outputs(&self) -> usize {
        self.f_sample.nrows()
    }

    pub fn delta_sample(&self) -> DMatrix<f64> {
        &self.f_sample - &*self.f0_sample
    }

    pub fn delta_probe(&self) -> DMatrix<f64> {
        &self.f_probe - &*self.f0_probe
    }
}

/// Everything the right-hand side needs besides the state.
#[derive(Debug, Clone)]
pub struct FlowSystem {
    /// Raw Θ̄ over the sample (m × m); empirical averages divide by m internally.
    pub gram_sample: DMatrix<f64>,
    /// Θ̄(probe, sample) (p × m).
    pub gram_cross: DMatrix<f64>,
    /// q × m
    pub labels: DMatrix<f64>,
    pub loss: LossSpec,
    pub lambda: f64,
    pub reg: RegulariserSpec,
}

/// Time derivatives returned by [`FlowSystem::rhs`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDerivative {
    pub f_sample: DMatrix<f64>,
    pub f_probe: DMatrix<f64>,
    pub d: f64,
}

/// `(L_s, R, C_s)` and their time derivatives at one recorded time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    pub ls: f64,
    pub r: f64,
    pub cs: f64,
    pub d_ls: f64,
    pub d_r: f64,
    pub d_cs: f64,
}

/// Closed-form objective rates for `ρ = id`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveRates {
    pub d_ls: f64,
    pub d_r: f64,
    pub d_cs: f64,
    /// `⟨Θ̄(X, X′) ∇ℓ·∇ℓ′⟩_{s⊗s}`
    pub kernel_term: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateConfig {
    pub horizon: f64,
    pub step: f64,
    pub method: Method,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<FlowState>,
    pub lambda: f64,
    pub step: f64,
    pub method: Method,
    pub observables: Vec<Observables>,
    pub convex_loss: bool,
    pub identity_regulariser: bool,
}

impl Trajectory {
    pub fn last(&self) -> &FlowState {
        self.states.last().unwrap()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(|s| s.t)
    }
}

impl FlowSystem {
    pub fn new(
        gram_sample: DMatrix<f64>,
        gram_cross: DMatrix<f64>,
        labels: DMatrix<f64>,
        loss: LossSpec,
        lambda: f64,
        reg: RegulariserSpec,
    ) -> Result<Self> {
        let m = gram_sample.nrows();
        if m == 0 {
            return Err(Error::config("flow needs at least one training point"));
        }
        Error::check_dim("gram_sample columns", m, gram_sample.ncols())?;
        Error::check_dim("gram_cross columns", m, gram_cross.ncols())?;
        Error::check_dim("label columns", m, labels.ncols())?;
        if let Some(q) = loss.fixed_output_dim() {
            Error::check_dim("label rows for this loss", q, labels.nrows())?;
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::config(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(Self {
            gram_sample,
            gram_cross,
            labels,
            loss,
            lambda,
            reg,
        })
    }

    /// Builds the sample and cross Grams from the depth-`depth` NTK.
    #[allow(clippy::too_many_arguments)]
    pub fn from_points(
        samples: &PointSet,
        probes: Option<&PointSet>,
        depth: usize,
        act: &ActivationSpec,
        rule: &QuadratureRule,
        labels: DMatrix<f64>,
        loss: LossSpec,
        lambda: f64,
        reg: RegulariserSpec,
    ) -> Result<Self> {
        let m = samples.len();
        let all = match probes {
            Some(p) => samples.concat(p)?,
            None => samples.clone(),
        };
        let ks = kernel_stack(&all, depth, act, rule)?;
        let theta = &ks.ntk().values;
        let p = all.len() - m;
        let gram_sample = theta.view((0, 0), (m, m)).into_owned();
        let gram_cross = theta.view((m, 0), (p, m)).into_owned();
        Self::new(gram_sample, gram_cross, labels, loss, lambda, reg)
    }

    pub fn samples(&self) -> usize {
        self.gram_sample.nrows()
    }

    pub fn probes(&self) -> usize {
        self.gram_cross.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.labels.nrows()
    }

    fn check_state(&self, state: &FlowState) -> Result<()> {
        let (q, m, p) = (self.outputs(), self.samples(), self.probes());
        Error::check_dim("state output rows", q, state.f_sample.nrows())?;
        Error::check_dim("state sample columns", m, state.f_sample.ncols())?;
        Error::check_dim("state probe columns", p, state.f_probe.ncols())?;
        Error::check_dim("state probe rows", q, state.f_probe.nrows())?;
        Error::check_dim("initial sample columns", m, state.f0_sample.ncols())?;
        Error::check_dim("initial probe columns", p, state.f0_probe.ncols())?;
        Ok(())
    }

    /// `∂ℓ̂/∂F` at every training point (q × m).
    pub fn loss_gradients(&self, f_sample: &DMatrixView<'_, f64>) -> DMatrix<f64> {
        let (q, m) = (self.outputs(), self.samples());
        let mut g = DMatrix::zeros(q, m);
        let mut buf = vec![0.0; q];
        for j in 0..m {
            let f: Vec<f64> = f_sample.column(j).iter().copied().collect();
            let y: Vec<f64> = self.labels.column(j).iter().copied().collect();
            self.loss.grad(&f, &y, &mut buf);
            g.column_mut(j).copy_from_slice(&buf);
        }
        g
    }

    pub fn empirical_loss(&self, f_sample: &DMatrixView<'_, f64>) -> f64 {
        let m = self.samples();
        (0..m)
            .map(|j| {
                let f: Vec<f64> = f_sample.column(j).iter().copied().collect();
                let y: Vec<f64> = self.labels.column(j).iter().copied().collect();
                self.loss.value(&f, &y)
            })
            .sum::<f64>()
            / m as f64
    }

    /// Time derivatives of `(F_sample, F_probe, D)`.
    pub fn rhs(&self, state: &FlowState) -> Result<FlowDerivative> {
        self.check_state(state)?;
        let y = self.pack(state);
        let mut dy = vec![0.0; y.len()];
        self.rhs_flat(&y, &state.f0_sample, &state.f0_probe, &mut dy);
        Ok(self.unpack_derivative(&dy))
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.outputs(), self.samples(), self.probes())
    }

    fn pack(&self, state: &FlowState) -> Vec<f64> {
        let mut y = Vec::with_capacity(state.f_sample.len() + state.f_probe.len() + 1);
        y.extend_from_slice(state.f_sample.as_slice());
        y.extend_from_slice(state.f_probe.as_slice());
        y.push(state.d);
        y
    }

    fn unpack_derivative(&self, dy: &[f64]) -> FlowDerivative {
        let (q, m, p) = self.dims();
        FlowDerivative {
            f_sample: DMatrix::from_column_slice(q, m, &dy[..q * m]),
            f_probe: DMatrix::from_column_slice(q, p, &dy[q * m..q * (m + p)]),
            d: dy[q * (m + p)],
        }
    }

    fn rhs_flat(&self, y: &[f64], f0s: &DMatrix<f64>, f0p: &DMatrix<f64>, dy: &mut [f64]) {
        let (q, m, p) = self.dims();
        let fs = DMatrixView::from_slice(&y[..q * m], q, m);
        let fp = DMatrixView::from_slice(&y[q * m..q * (m + p)], q, p);
        let d = y[q * (m + p)];
        let g = self.loss_gradients(&fs);
        let inv_m = 1.0 / m as f64;
        let decay = self.lambda * self.reg.rho_prime(d);

        let delta_s = fs - f0s;
        let drive_s = &g * &self.gram_sample;
        let ds = -(drive_s * inv_m) - &delta_s * decay;
        dy[..q * m].copy_from_slice(ds.as_slice());

        if p > 0 {
            let delta_p = fp - f0p;
            let drive_p = &g * self.gram_cross.transpose();
            let dp = -(drive_p * inv_m) - delta_p * decay;
            dy[q * m..q * (m + p)].copy_from_slice(dp.as_slice());
        }
        dy[q * (m + p)] = -delta_s.dot(&g) * inv_m - 2.0 * decay * d;
    }

    /// Observables evaluated from the right-hand side (valid for any ρ).
    pub fn observables(&self, state: &FlowState) -> Result<Observables> {
        let ls = self.empirical_loss(&state.f_sample.as_view());
        let r = self.reg.rho(state.d);
        let der = self.rhs(state)?;
        let g = self.loss_gradients(&state.f_sample.as_view());
        let d_ls = g.dot(&der.f_sample) / self.samples() as f64;
        let d_r = self.reg.rho_prime(state.d) * der.d;
        Ok(Observables {
            ls,
            r,
            cs: ls + self.lambda * r,
            d_ls,
            d_r,
            d_cs: d_ls + self.lambda * d_r,
        })
    }

    /// Closed-form rates of `L_s`, `R` and `C_s` for `ρ = id`, including the
    /// double empirical average `⟨Θ̄ ∇ℓ·∇ℓ′⟩_{s⊗s}`.
    pub fn objective_rates(&self, state: &FlowState) -> Result<ObjectiveRates> {
        if !self.reg.is_identity() {
            return Err(Error::Unsupported(
                "objective-rate identities require the identity regulariser".into(),
            ));
        }
        self.check_state(state)?;
        let m = self.samples() as f64;
        let g = self.loss_gradients(&state.f_sample.as_view());
        // Σ_ij Θ̄_ij g_i·g_j
        let gram_g = g.transpose() * &g;
        let kernel_term = self.gram_sample.component_mul(&gram_g).sum() / (m * m);
        let grad_dot_delta = g.dot(&state.delta_sample()) / m;
        let r = state.d;
        let lam = self.lambda;
        Ok(ObjectiveRates {
            d_ls: -kernel_term - lam * grad_dot_delta,
            d_r: -grad_dot_delta - 2.0 * lam * r,
            d_cs: -kernel_term - 2.0 * lam * grad_dot_delta - 2.0 * lam * lam * r,
            kernel_term,
        })
    }

    /// `10⁻³ / (λ + ρ(Θ̃))`, the default step for the linear least-squares stiffness.
    pub fn default_step(&self) -> f64 {
        let eig = linalg::sym_eigen(&(&self.gram_sample / self.samples() as f64));
        let radius = eig.values.last().copied().unwrap_or(0.0).max(0.0);
        let scale = self.lambda + radius;
        if scale > 0.0 {
            1e-3 / scale
        } else {
            1e-3
        }
    }

    /// Fixed-step integration, recording the state and observables at every step.
    pub fn integrate(&self, state0: &FlowState, config: IntegrateConfig) -> Result<Trajectory> {
        self.integrate_strided(state0, config, 1)
    }

    /// As [`integrate`](Self::integrate) but records every `stride`-th step
    /// (the final state is always recorded).
    pub fn integrate_strided(
        &self,
        state0: &FlowState,
        config: IntegrateConfig,
        stride: usize,
    ) -> Result<Trajectory> {
        self.check_state(state0)?;
        if state0.d < 0.0 {
            return Err(Error::config("initial D must be non-negative"));
        }
        let stride = stride.max(1);
        let (steps, h) = uniform_grid(config.horizon, config.step)?;
        let mut y = self.pack(state0);
        let f0s = state0.f0_sample.clone();
        let f0p = state0.f0_probe.clone();
        let mut stepper = Stepper::new(config.method, y.len());
        let mut states = vec![state0.clone()];
        let mut observables = vec![self.observables(state0)?];
        let (q, m, p) = self.dims();
        let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| self.rhs_flat(y, &f0s, &f0p, dy);
        for i in 0..steps {
            let t = state0.t + i as f64 * h;
            stepper.step(t, &mut y, h, &mut rhs);
            let t_next = state0.t + (i + 1) as f64 * h;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    t: t_next,
                    width: None,
                });
            }
            if (i + 1) % stride == 0 || i + 1 == steps {
                let state = FlowState {
                    t: t_next,
                    f_sample: DMatrix::from_column_slice(q, m, &y[..q * m]),
                    f_probe: DMatrix::from_column_slice(q, p, &y[q * m..q * (m + p)]),
                    f0_sample: f0s.clone(),
                    f0_probe: f0p.clone(),
                    d: y[q * (m + p)].max(0.0),
                };
                observables.push(self.observables(&state)?);
                states.push(state);
            }
        }
        Ok(Trajectory {
            states,
            lambda: self.lambda,
            step: h * stride as f64,
            method: config.method,
            observables,
            convex_loss: self.loss.is_convex(),
            identity_regulariser: self.reg.is_identity(),
        })
    }

    /// Endpoint only, without recording a trajectory.
    pub fn endpoint(&self, state0: &FlowState, config: IntegrateConfig) -> Result<FlowState> {
        let traj = self.integrate_strided(state0, config, usize::MAX)?;
        Ok(traj.states.into_iter().last().unwrap())
    }

    /// Integrates at `step` and `step/2` and reports the endpoint discrepancy.
    pub fn step_halving(&self, state0: &FlowState, config: IntegrateConfig) -> Result<StepHalving> {
        let coarse = self.endpoint(state0, config)?;
        let fine = self.endpoint(
            state0,
            IntegrateConfig {
                step: config.step / 2.0,
                ..config
            },
        )?;
        Ok(StepHalving {
            coarse_step: config.step,
            endpoint_difference: endpoint_distance(&coarse, &fine),
        })
    }

    /// Observed convergence order from the endpoint differences at `h`, `h/2`, `h/4`.
    pub fn observed_order(&self, state0: &FlowState, config: IntegrateConfig) -> Result<f64> {
        let a = self.step_halving(state0, config)?;
        let b = self.step_halving(
            state0,
            IntegrateConfig {
                step: config.step / 2.0,
                ..config
            },
        )?;
        Ok((a.endpoint_difference / b.endpoint_difference).log2())
    }
}

/// Result of the step-halving self-check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepHalving {
    pub coarse_step: f64,
    /// Max-abs difference of `(F_sample, F_probe, D)` between the two runs.
    pub endpoint_difference: f64,
}

fn endpoint_distance(a: &FlowState, b: &FlowState) -> f64 {
    let ds = (&a.f_sample - &b.f_sample).amax();
    let dp = if a.f_probe.is_empty() {
        0.0
    } else {
        (&a.f_probe - &b.f_probe).amax()
    };
    ds.max(dp).max((a.d - b.d).abs())
}

/// `(1 − e^{−λt}) / (2 − e^{−λt})`, increasing from 0 towards ½.
pub fn bound_factor(lambda: f64, t: f64) -> f64 {
    let e = (-lambda * t).exp_m1();
    -e / (1.0 - e)
}

/// One row of [`regulariser_bound_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub t: f64,
    /// `λR(t)`
    pub lhs: f64,
    /// `factor(t)·(L_s(0) − L_s(t))`
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Evaluates `λR(t) ≤ (1 − e^{−λt})/(2 − e^{−λt})·(L_s(0) − L_s(t))` at every
/// recorded time, with `R = D` for the identity regulariser. Violations are
/// reported in the rows, not as errors.
pub fn regulariser_bound_check(traj: &Trajectory) -> Result<Vec<BoundCheck>> {
    if !traj.convex_loss {
        return Err(Error::Unsupported(
            "regulariser bound needs a convex loss".into(),
        ));
    }
    if !traj.identity_regulariser {
        return Err(Error::Unsupported(
            "regulariser bound needs the identity regulariser".into(),
        ));
    }
    if traj.lambda <= 0.0 {
        return Err(Error::Unsupported(
            "regulariser bound needs lambda > 0".into(),
        ));
    }
    let l0 = traj.observables[0].ls;
    Ok(traj
        .states
        .iter()
        .zip(&traj.observables)
        .map(|(s, o)| {
            let lhs = traj.lambda * s.d;
            let rhs = bound_factor(traj.lambda, s.t) * (l0 - o.ls);
            let slack = rhs - lhs;
            BoundCheck {
                t: s.t,
                lhs,
                rhs,
                slack,
                holds: slack >= 0.0,
            }
        })
        .collect())
}
