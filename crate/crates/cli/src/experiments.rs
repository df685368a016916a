use nalgebra::{DMatrix, DVector};
use regntk::finite_width::{drift_sweep, DriftConfig, TrainConfig};
use regntk::flow::{regulariser_bound_check, FlowState, FlowSystem, IntegrateConfig};
use regntk::kernels::kernel_stack;
use regntk::linalg::cholesky_jittered;
use regntk::lsq::LsqSystem;
use regntk::ode::Method;
use regntk::pacbayes::{
    convolve_activation, empirical_q2, evolve_misclassification, lambda_from_eta, pac_bound,
    quadratic_closed_form, shallow_ntk, sigma0_squared, spectral_report, StochasticShallowNet,
};
use regntk::quadrature::{gauss_hermite_rule, QuadratureRule};
use regntk::{rng, PointSet};

use crate::config::{Experiment, InitialOutputs, LossName, RegName, RunConfig};
use crate::dataset::Dataset;
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Table};

/// Runtime switches that are not part of the config file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub no_normalise: bool,
}

pub fn execute(config: &RunConfig, opts: RunOptions) -> CliResult<Table> {
    config.validate()?;
    let rule = gauss_hermite_rule(config.quadrature_order)?;
    let data = Dataset::load(&config.dataset)?;
    match config.experiment() {
        Experiment::Kernel => kernel(config, &data, &rule),
        Experiment::Flow => flow(config, &data, &rule),
        Experiment::Lsq => lsq(config, &data, &rule),
        Experiment::Finite => finite(config, &data, &rule),
        Experiment::Pacbayes => {
            if opts.no_normalise {
                return Err(CliError::Config(
                    "--no-normalise is not allowed for pacbayes: inputs must lie on the sphere"
                        .into(),
                ));
            }
            pacbayes(config, data.sphere_normalised()?, &rule)
        }
    }
}

fn all_points(data: &Dataset) -> CliResult<PointSet> {
    Ok(match &data.probes {
        Some(p) => data.samples.concat(p)?,
        None => data.samples.clone(),
    })
}

/// q draws (rows) from N(0, cov), or zeros.
fn initial_outputs(kind: InitialOutputs, cov: &DMatrix<f64>, q: usize, seed: u64) -> DMatrix<f64> {
    let n = cov.nrows();
    match kind {
        InitialOutputs::Zero => DMatrix::zeros(q, n),
        InitialOutputs::Gp => {
            let l = cholesky_jittered(cov);
            let mut r = rng::stream(seed, 0);
            let z = DMatrix::from_fn(q, n, |_, _| rng::normal(&mut r));
            z * l.transpose()
        }
    }
}

fn output_names(prefix: &str, q: usize, n: usize) -> Vec<String> {
    (0..n)
        .flat_map(|i| {
            (0..q).map(move |k| {
                if q == 1 {
                    format!("{prefix}_{i}")
                } else {
                    format!("{prefix}_{i}_{k}")
                }
            })
        })
        .collect()
}

fn kernel(config: &RunConfig, data: &Dataset, rule: &QuadratureRule) -> CliResult<Table> {
    let pts = all_points(data)?;
    let stack = kernel_stack(&pts, config.depth, &config.activation_spec()?, rule)?;
    let mut table = Table::new(["layer", "i", "j", "sigma", "theta"]);
    for l in 0..stack.depth {
        for i in 0..pts.len() {
            for j in i..pts.len() {
                table.push(vec![
                    (l + 1).into(),
                    i.into(),
                    j.into(),
                    stack.sigma[l].get(i, j).into(),
                    stack.theta[l].get(i, j).into(),
                ]);
            }
        }
    }
    Ok(table)
}

fn flow(config: &RunConfig, data: &Dataset, rule: &QuadratureRule) -> CliResult<Table> {
    let pts = all_points(data)?;
    let (m, p, q) = (data.len(), data.probe_count(), data.outputs());
    let stack = kernel_stack(&pts, config.depth, &config.activation_spec()?, rule)?;
    let theta = &stack.theta[config.depth - 1].values;
    let system = FlowSystem::new(
        theta.view((0, 0), (m, m)).into_owned(),
        theta.view((m, 0), (p, m)).into_owned(),
        data.labels.clone(),
        config.loss_spec(),
        config.lambda.unwrap(),
        config.reg_spec(),
    )?;
    let f0 = initial_outputs(
        config.initial.unwrap_or(InitialOutputs::Gp),
        &stack.sigma[config.depth - 1].values,
        q,
        config.seed,
    );
    let state0 = FlowState::initial(f0.columns(0, m).into_owned(), f0.columns(m, p).into_owned());
    let icfg = IntegrateConfig {
        horizon: config.horizon.unwrap(),
        step: config.step.unwrap_or_else(|| system.default_step()),
        method: config.method_or(Method::Rk4),
    };
    let steps = (icfg.horizon / icfg.step).round() as usize;
    let stride = config.record_every.unwrap_or((steps / 500).max(1));
    let traj = system.integrate_strided(&state0, icfg, stride)?;
    let bound = regulariser_bound_check(&traj).ok();

    let mut cols: Vec<String> = [
        "t",
        "D",
        "L_s",
        "R",
        "C_s",
        "dCs_identity",
        "dCs_fd",
        "bound_slack",
    ]
    .map(String::from)
    .to_vec();
    cols.extend(output_names("F", q, m));
    cols.extend(output_names("P", q, p));
    let mut table = Table::new(cols);
    let obs = &traj.observables;
    for (i, s) in traj.states.iter().enumerate() {
        let identity = system.objective_rates(s).ok().map(|r| r.d_cs);
        let fd = (i > 0 && i + 1 < obs.len()).then(|| {
            (obs[i + 1].cs - obs[i - 1].cs) / (traj.states[i + 1].t - traj.states[i - 1].t)
        });
        let mut row: Vec<Cell> = vec![
            s.t.into(),
            s.d.into(),
            obs[i].ls.into(),
            obs[i].r.into(),
            obs[i].cs.into(),
            identity.into(),
            fd.into(),
            bound.as_ref().map(|b| b[i].slack).into(),
        ];
        row.extend(s.f_sample.iter().map(|&v| Cell::from(v)));
        row.extend(s.f_probe.iter().map(|&v| Cell::from(v)));
        table.push(row);
    }
    Ok(table)
}

fn lsq(config: &RunConfig, data: &Dataset, rule: &QuadratureRule) -> CliResult<Table> {
    if data.outputs() != 1 {
        return Err(CliError::Config(
            "experiment 'lsq' needs scalar labels".into(),
        ));
    }
    let pts = all_points(data)?;
    let (m, p) = (data.len(), data.probe_count());
    let stack = kernel_stack(&pts, config.depth, &config.activation_spec()?, rule)?;
    let theta = &stack.theta[config.depth - 1].values / m as f64;
    let f0 = initial_outputs(
        config.initial.unwrap_or(InitialOutputs::Gp),
        &stack.sigma[config.depth - 1].values,
        1,
        config.seed,
    );
    let f0 = f0.row(0).transpose();
    let sys = LsqSystem::from_matrix(
        theta.view((0, 0), (m, m)).into_owned(),
        f0.rows(0, m).into_owned(),
        data.labels.row(0).transpose(),
        config.lambda.unwrap(),
    )?;
    let cross = theta.view((m, 0), (p, m)).into_owned();
    let f0_probe: DVector<f64> = f0.rows(m, p).into_owned();

    let mut cols: Vec<String> = vec!["t".into(), "limit".into()];
    cols.extend(output_names("F", 1, m));
    cols.extend(output_names("P", 1, p));
    let mut table = Table::new(cols);
    for &t in config.times.as_deref().unwrap_or(&[]) {
        let f = sys.trajectory_at(t)?;
        let probes = if p > 0 {
            sys.off_sample_many(&cross, &f0_probe, t)?
        } else {
            DVector::zeros(0)
        };
        let mut row: Vec<Cell> = vec![t.into(), 0usize.into()];
        row.extend(f.iter().chain(probes.iter()).map(|&v| Cell::from(v)));
        table.push(row);
    }
    if config.include_limit {
        let lim = sys.limit_infinity();
        let mut row: Vec<Cell> = vec![f64::INFINITY.into(), 1usize.into()];
        row.extend(lim.value.iter().map(|&v| Cell::from(v)));
        row.extend((0..p).map(|_| Cell::Empty));
        table.push(row);
    }
    Ok(table)
}

/// `sup_t ‖F_net(t) − F_lsq(t)‖_∞ / sup_t ‖F_lsq(t)‖_∞` against the closed-form
/// least-squares solution driven by the limiting kernel, one system per output.
pub fn lsq_trace_gap(
    theta_tilde: &DMatrix<f64>,
    labels: &DMatrix<f64>,
    lambda: f64,
    trace: &[regntk::finite_width::Snapshot],
) -> CliResult<f64> {
    let f0 = &trace[0].outputs;
    let mut gap = 0.0f64;
    let mut scale = 0.0f64;
    for k in 0..labels.nrows() {
        let sys = LsqSystem::from_matrix(
            theta_tilde.clone(),
            f0.row(k).transpose(),
            labels.row(k).transpose(),
            lambda,
        )?;
        for snap in trace {
            let want = sys.trajectory_at(snap.t)?;
            gap = gap.max((snap.outputs.row(k).transpose() - &want).amax());
            scale = scale.max(want.amax());
        }
    }
    Ok(gap / scale)
}

fn finite(config: &RunConfig, data: &Dataset, rule: &QuadratureRule) -> CliResult<Table> {
    let horizon = config.horizon.unwrap();
    let step = config.step.unwrap_or(1e-3);
    let steps = (horizon / step).round() as usize;
    let lambda = config.lambda.unwrap();
    let act = config.activation_spec()?;
    let drift = DriftConfig {
        widths: config.widths.clone().unwrap(),
        depth: config.depth,
        inputs: data.samples.clone(),
        labels: data.labels.clone(),
        activation: act.clone(),
        loss: config.loss_spec(),
        lambda,
        reg: config.reg_spec(),
        train: TrainConfig {
            horizon,
            step,
            method: config.method_or(Method::Euler),
            record_every: config.record_every.unwrap_or((steps / 100).max(1)),
        },
        seed: config.seed,
    };
    let seeds = config.seeds.clone().unwrap_or_else(|| vec![config.seed]);
    let sweep = drift_sweep(&drift, &seeds)?;
    let linear = config.loss == LossName::LeastSquares && config.regulariser == RegName::Identity;
    let theta_tilde = if linear {
        let stack = kernel_stack(&data.samples, config.depth, &act, rule)?;
        Some(&stack.theta[config.depth - 1].values / data.len() as f64)
    } else {
        None
    };
    let mut table = Table::new([
        "width",
        "seeds",
        "theta_drift",
        "xi_gap",
        "d_final",
        "lsq_gap",
        "theta_slope",
        "xi_slope",
    ]);
    for (i, &width) in sweep.widths.iter().enumerate() {
        // worst seed
        let gap = match &theta_tilde {
            Some(th) => {
                let mut worst = 0.0f64;
                for report in &sweep.reports {
                    worst = worst.max(lsq_trace_gap(
                        th,
                        &data.labels,
                        lambda,
                        &report.records[i].trace,
                    )?);
                }
                Some(worst)
            }
            None => None,
        };
        table.push(vec![
            width.into(),
            seeds.len().into(),
            sweep.theta_drift[i].into(),
            sweep.xi_gap[i].into(),
            sweep.d_final[i].into(),
            gap.into(),
            sweep.theta_slope.into(),
            sweep.xi_slope.into(),
        ]);
    }
    Ok(table)
}

fn pacbayes(config: &RunConfig, data: Dataset, rule: &QuadratureRule) -> CliResult<Table> {
    if data.outputs() != 1 || data.labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(CliError::Config(
            "experiment 'pacbayes' needs labels in {-1, +1}".into(),
        ));
    }
    let (m, p) = (data.len(), data.probe_count());
    let pts = all_points(&data)?;
    let eta = config.eta.unwrap();
    let delta = config.delta.unwrap();
    let horizon = config.horizon.unwrap();
    let lambda = lambda_from_eta(eta, m)?;
    let conv = convolve_activation(config.activation_spec()?, rule);
    let sigma2 = sigma0_squared(&conv, rule);
    let gram = shallow_ntk(&pts, &conv, rule)?.values;
    let nngp = kernel_stack(&pts, 2, &conv.as_activation(), rule)?.sigma[1]
        .values
        .clone();
    let m0 = initial_outputs(
        config.initial.unwrap_or(InitialOutputs::Gp),
        &nngp,
        1,
        config.seed,
    );
    let m0_sample: DVector<f64> = m0.row(0).columns(0, m).transpose();
    let m0_probe: DVector<f64> = m0.row(0).columns(m, p).transpose();
    let y: DVector<f64> = data.labels.row(0).transpose();
    let theta_tilde = gram.view((0, 0), (m, m)) / m as f64;

    let mut table = Table::new(["quantity", "t", "index", "value"]);
    let scalar = |table: &mut Table, name: &str, t: Option<f64>, index: Option<usize>, v: f64| {
        table.push(vec![
            name.into(),
            t.into(),
            index.map_or(Cell::Empty, Cell::from),
            v.into(),
        ]);
    };
    scalar(&mut table, "sigma2", None, None, sigma2);
    scalar(&mut table, "lambda", None, None, lambda);

    let spec = spectral_report(&theta_tilde, lambda, &m0_sample, &y, m)?;
    for (i, ((th, a), b)) in spec
        .theta
        .iter()
        .zip(&spec.alpha)
        .zip(&spec.beta)
        .enumerate()
    {
        scalar(&mut table, "theta", None, Some(i), *th);
        scalar(&mut table, "alpha", None, Some(i), *a);
        scalar(&mut table, "beta", None, Some(i), *b);
    }
    scalar(&mut table, "l_inf", None, None, spec.l_inf);
    scalar(&mut table, "r_inf", None, None, spec.r_inf);

    let times: Vec<f64> = match &config.times {
        Some(ts) => ts.clone(),
        None => (0..=10).map(|i| horizon * i as f64 / 10.0).collect(),
    };
    for &t in &times {
        let mt = quadratic_closed_form(&theta_tilde, &m0_sample, &y, lambda, t)?;
        let loss = mt
            .iter()
            .zip(y.iter())
            .map(|(m, y)| (1.0 - y * m).powi(2))
            .sum::<f64>()
            / m as f64
            + sigma2;
        scalar(&mut table, "quadratic_loss", Some(t), None, loss);
    }

    let step = config.step.unwrap_or(1e-3);
    let traj = evolve_misclassification(
        &gram.view((0, 0), (m, m)).into_owned(),
        &gram.view((m, 0), (p, m)).into_owned(),
        &y,
        &m0_sample,
        &m0_probe,
        sigma2.sqrt(),
        eta,
        IntegrateConfig {
            horizon,
            step,
            method: config.method_or(Method::Rk4),
        },
    )?;
    let every = config
        .record_every
        .unwrap_or((traj.states.len() / 100).max(1));
    for (i, (s, o)) in traj.states.iter().zip(&traj.observables).enumerate() {
        if i % every != 0 && i + 1 != traj.states.len() {
            continue;
        }
        let bound = pac_bound(o.ls, s.d, eta, delta, m)?;
        scalar(&mut table, "misclassification_loss", Some(s.t), None, o.ls);
        scalar(&mut table, "kl", Some(s.t), None, s.d);
        scalar(&mut table, "bound", Some(s.t), None, bound.value);
    }

    for &n in config.widths.as_deref().unwrap_or(&[]) {
        let mut net = StochasticShallowNet::init(data.samples.dim(), n, conv.clone(), config.seed)?;
        let x = data.samples.point(0);
        if let Some(samples) = config.mc_samples {
            let m2: Vec<f64> = net.m2().iter().copied().collect();
            let q = empirical_q2(
                &conv,
                &net.m1().into_owned(),
                &m2,
                x,
                Some((samples, config.seed)),
            )?;
            scalar(&mut table, "q2_formula", None, Some(n), q.formula);
            let mc = q.monte_carlo.unwrap();
            scalar(&mut table, "q2_monte_carlo", None, Some(n), mc.mean);
            scalar(
                &mut table,
                "q2_monte_carlo_stderr",
                None,
                Some(n),
                mc.std_err,
            );
        }
        let train = TrainConfig {
            horizon,
            step: config.step.unwrap_or(1e-2),
            method: config.method_or(Method::Rk4),
            record_every: usize::MAX,
        };
        net.train_quadratic(&data.samples, &y, lambda, train)?;
        let mut drift = 0.0f64;
        for i in 0..m {
            let x = data.samples.point(i);
            drift = drift.max((net.q2(x)? - net.q2_initial(x)?).abs());
        }
        scalar(&mut table, "q2_drift", None, Some(n), drift);
        scalar(&mut table, "kl_trained", None, Some(n), net.kl());
    }
    Ok(table)
}
