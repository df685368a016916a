use std::sync::Arc;

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::activation::ActivationSpec;
use crate::error::{Error, Result};
use crate::kernels::PointSet;
use crate::loss::{LossSpec, RegulariserSpec};
use crate::ode::{uniform_grid, Method, Stepper};
use crate::rng;

/// Fully-connected network `U¹ = W¹x/√n₀`, `U^{l+1} = W^{l+1}φ(U^l)/√n_l`,
/// `F = U^L`, without biases. Weights of layer `l` are stored column-major in
/// one flat parameter vector.
#[derive(Debug, Clone)]
pub struct FiniteNetwork {
    arch: Arch,
    act: ActivationSpec,
    params: Vec<f64>,
    params0: Arc<Vec<f64>>,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Arch {
    widths: Vec<usize>,
    /// `offsets[l-1]..offsets[l]` holds `W^l`.
    offsets: Vec<usize>,
}

impl Arch {
    fn new(widths: &[usize]) -> Self {
        let mut offsets = vec![0];
        for w in widths.windows(2) {
            offsets.push(offsets.last().unwrap() + w[0] * w[1]);
        }
        Self {
            widths: widths.to_vec(),
            offsets,
        }
    }

    fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    fn weight<'a>(&self, params: &'a [f64], l: usize) -> DMatrixView<'a, f64> {
        DMatrixView::from_slice(
            &params[self.offsets[l - 1]..self.offsets[l]],
            self.widths[l],
            self.widths[l - 1],
        )
    }

    /// Pre-activations `U^l` (n_l × m) and scaled layer inputs `a^{l−1}/√n_{l−1}`.
    fn forward(&self, params: &[f64], act: &ActivationSpec, x: &DMatrix<f64>) -> Cache {
        let depth = self.depth();
        let mut pre = Vec::with_capacity(depth);
        let mut inputs = Vec::with_capacity(depth);
        let mut a = x / (self.widths[0] as f64).sqrt();
        for l in 1..=depth {
            let u = self.weight(params, l) * &a;
            let next = u.map(|v| act.phi(v)) / (self.widths[l] as f64).sqrt();
            inputs.push(a);
            a = next;
            pre.push(u);
        }
        Cache { pre, inputs }
    }

    /// `∂C_s/∂W` for the whole sample, written into `out`.
    fn objective_gradient(
        &self,
        params: &[f64],
        params0: &[f64],
        act: &ActivationSpec,
        problem: &TrainProblem<'_>,
        x: &DMatrix<f64>,
        out: &mut [f64],
    ) {
        let depth = self.depth();
        let m = x.ncols();
        let cache = self.forward(params, act, x);
        let f = &cache.pre[depth - 1];
        let q = f.nrows();
        let mut back = DMatrix::zeros(q, m);
        let mut g = vec![0.0; q];
        for j in 0..m {
            let fj: Vec<f64> = f.column(j).iter().copied().collect();
            let yj: Vec<f64> = problem.labels.column(j).iter().copied().collect();
            problem.loss.grad(&fj, &yj, &mut g);
            back.column_mut(j).copy_from_slice(&g);
        }
        back /= m as f64;
        for l in (1..=depth).rev() {
            let grad = &back * cache.inputs[l - 1].transpose();
            out[self.offsets[l - 1]..self.offsets[l]].copy_from_slice(grad.as_slice());
            if l > 1 {
                let mut next =
                    self.weight(params, l).tr_mul(&back) / (self.widths[l - 1] as f64).sqrt();
                next.component_mul_assign(&cache.pre[l - 2].map(|v| act.phi_dot(v)));
                back = next;
            }
        }
        let d = half_sq_distance(params, params0);
        let decay = problem.lambda * problem.reg.rho_prime(d);
        if decay != 0.0 {
            for ((o, p), p0) in out.iter_mut().zip(params).zip(params0) {
                *o += decay * (p - p0);
            }
        }
    }
}

struct Cache {
    pre: Vec<DMatrix<f64>>,
    inputs: Vec<DMatrix<f64>>,
}

fn half_sq_distance(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
}

fn input_matrix(pts: &PointSet) -> DMatrix<f64> {
    DMatrix::from_fn(pts.dim(), pts.len(), |i, j| pts.point(j)[i])
}

/// Output Jacobian of one input, in rank-one form per layer:
/// `ψ^{L;l}_{k;ij} = back[l−1][(k, i)] · input[l−1][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianSlices {
    /// `∂U^L/∂U^l`, q × n_l.
    pub back: Vec<DMatrix<f64>>,
    /// `a^{l−1}/√n_{l−1}` with `a⁰ = x`.
    pub input: Vec<DVector<f64>>,
}

impl JacobianSlices {
    pub fn psi(&self, layer: usize, k: usize, i: usize, j: usize) -> f64 {
        self.back[layer - 1][(k, i)] * self.input[layer - 1][j]
    }

    /// `Σ_l ψ_k · ψ′_{k′}` against another input's slices (q × q).
    pub fn theta(&self, other: &JacobianSlices) -> DMatrix<f64> {
        let q = self.back[0].nrows();
        let mut out = DMatrix::zeros(q, q);
        for (l, (b, a)) in self.back.iter().zip(&self.input).enumerate() {
            let s = a.dot(&other.input[l]);
            out += (b * other.back[l].transpose()) * s;
        }
        out
    }
}

/// Weight-space problem the network is trained on.
#[derive(Debug, Clone, Copy)]
pub struct TrainProblem<'a> {
    pub inputs: &'a PointSet,
    /// q × m
    pub labels: &'a DMatrix<f64>,
    pub loss: &'a LossSpec,
    pub lambda: f64,
    pub reg: &'a RegulariserSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub horizon: f64,
    pub step: f64,
    pub method: Method,
    /// Record observables every this many steps (the last step is always recorded).
    pub record_every: usize,
}

impl TrainConfig {
    pub fn euler(horizon: f64, step: f64) -> Self {
        Self {
            horizon,
            step,
            method: Method::Euler,
            record_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub t: f64,
    pub d: f64,
    pub ls: f64,
    pub r: f64,
    pub cs: f64,
}

/// Outputs on the training inputs at a recorded time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    /// q × m
    pub outputs: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub records: Vec<TrainRecord>,
    pub snapshots: Vec<Snapshot>,
}

impl FiniteNetwork {
    /// I.i.d. N(0, 1) weights; layer `l` is drawn from stream `l` of `seed`
    /// in column-major order.
    pub fn init(widths: &[usize], act: ActivationSpec, seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::config(
                "a network needs an input and an output width",
            ));
        }
        if widths.contains(&0) {
            return Err(Error::config("all widths must be >= 1"));
        }
        let arch = Arch::new(widths);
        let mut params = Vec::with_capacity(*arch.offsets.last().unwrap());
        for l in 1..=arch.depth() {
            let mut r = rng::stream(seed, l as u64);
            let len = arch.offsets[l] - arch.offsets[l - 1];
            params.extend((0..len).map(|_| rng::normal(&mut r)));
        }
        Ok(Self {
            params0: Arc::new(params.clone()),
            params,
            arch,
            act,
            seed,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.arch.widths
    }

    pub fn depth(&self) -> usize {
        self.arch.depth()
    }

    pub fn outputs_dim(&self) -> usize {
        *self.arch.widths.last().unwrap()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn activation(&self) -> &ActivationSpec {
        &self.act
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn initial_params(&self) -> &[f64] {
        &self.params0
    }

    pub fn weight(&self, l: usize) -> DMatrixView<'_, f64> {
        self.arch.weight(&self.params, l)
    }

    pub fn initial_weight(&self, l: usize) -> DMatrixView<'_, f64> {
        self.arch.weight(&self.params0, l)
    }

    /// Mutable access to the flat parameters (column-major per layer).
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `½ Σ_l ‖W^l − W^l(0)‖²_F`
    pub fn displacement(&self) -> f64 {
        half_sq_distance(&self.params, &self.params0)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        Error::check_dim("network input", self.arch.widths[0], x.len())
    }

    pub fn forward(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_input(x)?;
        let xm = DMatrix::from_column_slice(x.len(), 1, x);
        let cache = self.arch.forward(&self.params, &self.act, &xm);
        Ok(cache.pre.last().unwrap().column(0).into_owned())
    }

    /// Outputs on every point (q × m).
    pub fn forward_points(&self, pts: &PointSet) -> Result<DMatrix<f64>> {
        self.check_input(pts.point(0))?;
        let cache = self
            .arch
            .forward(&self.params, &self.act, &input_matrix(pts));
        Ok(cache.pre.into_iter().last().unwrap())
    }

    /// Pre-activations `U¹ … U^L` at `x`.
    pub fn preactivations(&self, x: &[f64]) -> Result<Vec<DVector<f64>>> {
        self.check_input(x)?;
        let xm = DMatrix::from_column_slice(x.len(), 1, x);
        let cache = self.arch.forward(&self.params, &self.act, &xm);
        Ok(cache
            .pre
            .into_iter()
            .map(|u| u.column(0).into_owned())
            .collect())
    }

    /// Same as [`preactivations`](Self::preactivations) at the initial weights.
    pub fn initial_preactivations(&self, x: &[f64]) -> Result<Vec<DVector<f64>>> {
        self.check_input(x)?;
        let xm = DMatrix::from_column_slice(x.len(), 1, x);
        let cache = self.arch.forward(&self.params0, &self.act, &xm);
        Ok(cache
            .pre
            .into_iter()
            .map(|u| u.column(0).into_owned())
            .collect())
    }

    /// Reverse-mode Jacobian of the output with respect to every weight.
    pub fn jacobian(&self, x: &[f64]) -> Result<JacobianSlices> {
        self.check_input(x)?;
        let xm = DMatrix::from_column_slice(x.len(), 1, x);
        let cache = self.arch.forward(&self.params, &self.act, &xm);
        let depth = self.depth();
        let q = self.outputs_dim();
        let mut back = vec![DMatrix::zeros(0, 0); depth];
        back[depth - 1] = DMatrix::identity(q, q);
        for l in (1..depth).rev() {
            let mut b = &back[l] * self.weight(l + 1) / (self.arch.widths[l] as f64).sqrt();
            let slope = cache.pre[l - 1].column(0).map(|v| self.act.phi_dot(v));
            for (mut col, s) in b.column_iter_mut().zip(slope.iter()) {
                col *= *s;
            }
            back[l - 1] = b;
        }
        let input = cache
            .inputs
            .into_iter()
            .map(|a| a.column(0).into_owned())
            .collect();
        Ok(JacobianSlices { back, input })
    }

    /// Empirical NTK `Θ^L_{kk′}(x, x′)` (q × q).
    pub fn empirical_theta(&self, x: &[f64], x2: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.jacobian(x)?.theta(&self.jacobian(x2)?))
    }

    /// Stacked empirical NTK over a point set; entry `(i·q + k, j·q + k′)`.
    pub fn empirical_gram(&self, pts: &PointSet) -> Result<DMatrix<f64>> {
        let jac: Vec<JacobianSlices> = (0..pts.len())
            .map(|i| self.jacobian(pts.point(i)))
            .collect::<Result<_>>()?;
        Ok(stacked_gram(&jac))
    }

    /// `Ξ^L_k(x) = Σ_l ψ^{L;l}_k(x) · ΔW^l` with the current Jacobian.
    pub fn xi(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.xi_from(&self.jacobian(x)?))
    }

    pub(crate) fn xi_from(&self, jac: &JacobianSlices) -> DVector<f64> {
        let mut out = DVector::zeros(self.outputs_dim());
        for l in 1..=self.depth() {
            let dw = self.weight(l) - self.initial_weight(l);
            out += &jac.back[l - 1] * (dw * &jac.input[l - 1]);
        }
        out
    }

    /// Empirical loss, regulariser and objective at the current weights.
    pub fn objective(&self, problem: &TrainProblem<'_>) -> Result<TrainRecord> {
        let f = self.forward_points(problem.inputs)?;
        Ok(self.record(0.0, &f, problem))
    }

    fn record(&self, t: f64, f: &DMatrix<f64>, problem: &TrainProblem<'_>) -> TrainRecord {
        let m = f.ncols();
        let ls = (0..m)
            .map(|j| {
                let fj: Vec<f64> = f.column(j).iter().copied().collect();
                let yj: Vec<f64> = problem.labels.column(j).iter().copied().collect();
                problem.loss.value(&fj, &yj)
            })
            .sum::<f64>()
            / m as f64;
        let d = self.displacement();
        let r = problem.reg.rho(d);
        TrainRecord {
            t,
            d,
            ls,
            r,
            cs: ls + problem.lambda * r,
        }
    }

    fn check_problem(&self, problem: &TrainProblem<'_>) -> Result<()> {
        if problem.inputs.is_empty() {
            return Err(Error::config("training needs at least one point"));
        }
        self.check_input(problem.inputs.point(0))?;
        Error::check_dim("label rows", self.outputs_dim(), problem.labels.nrows())?;
        Error::check_dim(
            "label columns",
            problem.inputs.len(),
            problem.labels.ncols(),
        )?;
        if !(problem.lambda.is_finite() && problem.lambda >= 0.0) {
            return Err(Error::config("lambda must be finite and >= 0"));
        }
        Ok(())
    }

    /// Gradient flow `∂t W = −∇L_s − λρ′(D)ΔW` with a fixed-step integrator.
    pub fn train(
        &mut self,
        problem: &TrainProblem<'_>,
        config: TrainConfig,
    ) -> Result<TrainResult> {
        self.train_observed(problem, config, |_, _| Ok(()))
    }

    /// As [`train`](Self::train), calling `observe(t, net)` at every recorded time
    /// (including t = 0).
    pub fn train_observed(
        &mut self,
        problem: &TrainProblem<'_>,
        config: TrainConfig,
        mut observe: impl FnMut(f64, &FiniteNetwork) -> Result<()>,
    ) -> Result<TrainResult> {
        self.check_problem(problem)?;
        if !self.act.is_smooth() {
            log::warn!(
                "training with non-smooth activation `{}`: the finite-width theory assumes a smooth activation",
                self.act.name()
            );
        }
        let (steps, h) = uniform_grid(config.horizon, config.step)?;
        if h * (problem.lambda + 1.0) >= 1.0 {
            log::warn!("step {h} may be unstable for lambda {}", problem.lambda);
        }
        let every = config.record_every.max(1);
        let x = input_matrix(problem.inputs);
        let mut records = Vec::new();
        let mut snapshots = Vec::new();

        let mut take =
            |net: &FiniteNetwork, t: f64, records: &mut Vec<TrainRecord>| -> Result<()> {
                let f = net
                    .arch
                    .forward(&net.params, &net.act, &x)
                    .pre
                    .pop()
                    .unwrap();
                records.push(net.record(t, &f, problem));
                snapshots.push(Snapshot { t, outputs: f });
                observe(t, net)
            };
        take(self, 0.0, &mut records)?;

        let mut stepper = Stepper::new(config.method, self.params.len());
        for i in 0..steps {
            {
                let arch = &self.arch;
                let act = &self.act;
                let p0: &[f64] = &self.params0;
                let mut rhs = |_t: f64, w: &[f64], dw: &mut [f64]| {
                    arch.objective_gradient(w, p0, act, problem, &x, dw);
                    for v in dw.iter_mut() {
                        *v = -*v;
                    }
                };
                stepper.step(i as f64 * h, &mut self.params, h, &mut rhs);
            }
            let t = (i + 1) as f64 * h;
            if self.params.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    t,
                    width: self.arch.widths[1..self.depth()].iter().copied().max(),
                });
            }
            if (i + 1) % every == 0 || i + 1 == steps {
                take(self, t, &mut records)?;
            }
        }
        Ok(TrainResult { records, snapshots })
    }
}

pub(crate) fn stacked_gram(jac: &[JacobianSlices]) -> DMatrix<f64> {
    let m = jac.len();
    let q = jac[0].back[0].nrows();
    let mut g = DMatrix::zeros(m * q, m * q);
    for i in 0..m {
        for j in i..m {
            let block = jac[i].theta(&jac[j]);
            g.view_mut((i * q, j * q), (q, q)).copy_from(&block);
            g.view_mut((j * q, i * q), (q, q))
                .copy_from(&block.transpose());
        }
    }
    g
}
